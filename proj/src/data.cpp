#include "demorph/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "demorph/csv.hpp"
#include "demorph/error.hpp"
#include "demorph/random.hpp"

namespace demorph::data {

namespace {

constexpr const char* kModule = "data";

Error data_error(const std::string& message) { return Error(ErrorCategory::data, kModule, message); }

}  // namespace

std::string to_string(Label label) { return label == Label::morphed ? "morphed" : "non_morphed"; }

Label parse_label(const std::string& text) {
  if (text == "morphed") return Label::morphed;
  if (text == "non_morphed") return Label::non_morphed;
  throw data_error("unknown label '" + text + "' (expected morphed or non_morphed)");
}

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path) {
  const auto table = csv::read(path, kModule);
  csv::expect_header(table, kManifestHeader, path, kModule);
  const auto dir = path.parent_path();
  auto resolve = [&](const std::string& field, const csv::Row& row) {
    std::filesystem::path p = dir / field;
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorCategory::io, kModule, "row " + std::to_string(row.line) + ": cannot resolve path " + p.string());
    }
    return p.lexically_normal();
  };

  std::vector<SampleRecord> records;
  records.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const auto& f = row.fields;
    if (f.size() != kManifestHeader.size()) {
      throw data_error("row " + std::to_string(row.line) + ": expected " + std::to_string(kManifestHeader.size()) +
                       " fields, got " + std::to_string(f.size()));
    }
    SampleRecord r;
    try {
      r.label = parse_label(f[3]);
    } catch (const Error& e) {
      throw data_error("row " + std::to_string(row.line) + ": " + e.what());
    }
    if (f[0].empty()) throw data_error("row " + std::to_string(row.line) + ": input_path is empty");
    r.input_path = resolve(f[0], row);
    r.subject1_id = f[4];
    r.subject2_id = f[5];
    if (r.label == Label::non_morphed) {
      r.gt1_path = f[1].empty() ? r.input_path : resolve(f[1], row);
      r.gt2_path = f[2].empty() ? r.gt1_path : resolve(f[2], row);
      if (r.subject2_id.empty()) r.subject2_id = r.subject1_id;
    } else {
      if (f[1].empty() || f[2].empty()) {
        throw data_error("row " + std::to_string(row.line) + ": morphed rows need both ground-truth paths");
      }
      r.gt1_path = resolve(f[1], row);
      r.gt2_path = resolve(f[2], row);
      if (r.subject1_id == r.subject2_id) {
        throw data_error("row " + std::to_string(row.line) + ": morphed rows need two distinct subjects");
      }
    }
    if (r.subject1_id.empty()) throw data_error("row " + std::to_string(row.line) + ": subject1_id is empty");
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::vector<SampleRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::io, kModule, "cannot write " + path.string());
  for (std::size_t i = 0; i < kManifestHeader.size(); ++i) out << (i ? "," : "") << kManifestHeader[i];
  out << '\n';
  const auto base = std::filesystem::absolute(path).parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return std::filesystem::absolute(p).lexically_normal().lexically_relative(base).generic_string();
  };
  for (const auto& r : records) {
    out << rel(r.input_path) << ',' << rel(r.gt1_path) << ',' << rel(r.gt2_path) << ',' << to_string(r.label) << ','
        << r.subject1_id << ',' << r.subject2_id << '\n';
  }
}

SplitResult subject_disjoint_split(const std::vector<SampleRecord>& records, const SplitSpec& spec) {
  std::set<std::string> subject_set;
  for (const auto& r : records) {
    if (r.subject1_id.empty()) throw data_error("every record needs a subject id");
    subject_set.insert(r.subject1_id);
    if (!r.subject2_id.empty()) subject_set.insert(r.subject2_id);
  }
  if (subject_set.size() < 2) {
    throw data_error("cannot split fewer than 2 subjects (found " + std::to_string(subject_set.size()) + ")");
  }
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorCategory::config, kModule, "train_fraction must lie strictly between 0 and 1");
  }

  std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
  SplitMix64 rng(spec.seed);
  rng.shuffle(subjects);
  const auto n = static_cast<long>(subjects.size());
  const long n_train = std::clamp(std::lround(spec.train_fraction * static_cast<double>(n)), 1L, n - 1);
  const std::set<std::string> train_pool(subjects.begin(), subjects.begin() + n_train);

  SplitResult result;
  result.train_subjects.assign(train_pool.begin(), train_pool.end());
  for (auto it = subjects.begin() + n_train; it != subjects.end(); ++it) result.test_subjects.push_back(*it);
  std::sort(result.test_subjects.begin(), result.test_subjects.end());

  for (const auto& r : records) {
    const bool in1 = train_pool.count(r.subject1_id) > 0;
    const bool in2 = r.subject2_id.empty() || train_pool.count(r.subject2_id) > 0;
    if (in1 && in2) {
      if (r.label == Label::non_morphed && !spec.non_morphed_in_train) {
        ++result.excluded;
      } else {
        result.train.push_back(r);
      }
    } else {
      if (in1 || in2) ++result.straddling;
      result.test.push_back(r);
    }
  }
  return result;
}

std::string split_summary(const SplitResult& split) {
  auto describe = [](const std::vector<SampleRecord>& rows, Label label) {
    std::set<std::string> subjects;
    std::size_t images = 0;
    for (const auto& r : rows) {
      if (r.label != label) continue;
      ++images;
      subjects.insert(r.subject1_id);
      subjects.insert(r.subject2_id);
    }
    return std::pair{subjects.size(), images};
  };
  std::ostringstream out;
  out << "split,label,subjects,images\n";
  for (const auto& [name, rows] : {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
    for (Label label : {Label::morphed, Label::non_morphed}) {
      const auto [subjects, images] = describe(*rows, label);
      out << name << ',' << to_string(label) << ',' << subjects << ',' << images << '\n';
    }
  }
  out << "train_pool_subjects: " << split.train_subjects.size() << '\n';
  out << "test_pool_subjects: " << split.test_subjects.size() << '\n';
  out << "straddling_morphs_in_test: " << split.straddling << '\n';
  out << "excluded_non_morphed: " << split.excluded << '\n';
  return out.str();
}

void write_split(const SplitResult& split, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_manifest(split.train, out_dir / "train.csv");
  write_manifest(split.test, out_dir / "test.csv");
  std::ofstream summary(out_dir / "summary.txt");
  summary << split_summary(split);
}

std::optional<CropBox> center_square_crop(const Image& image) {
  const int side = std::min(image.width(), image.height());
  return CropBox{(image.width() - side) / 2, (image.height() - side) / 2, side, side};
}

Image crop(const Image& image, const CropBox& box) {
  if (box.width <= 0 || box.height <= 0 || box.x < 0 || box.y < 0 || box.x + box.width > image.width() ||
      box.y + box.height > image.height()) {
    throw Error(ErrorCategory::config, kModule,
                "crop box (" + std::to_string(box.x) + "," + std::to_string(box.y) + "," + std::to_string(box.width) +
                    "," + std::to_string(box.height) + ") does not fit the image");
  }
  if (box.x == 0 && box.y == 0 && box.width == image.width() && box.height == image.height()) return image;
  Image out(box.height, box.width);
  for (int y = 0; y < box.height; ++y) {
    for (int x = 0; x < box.width; ++x) {
      for (int c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = image.at(box.y + y, box.x + x, c);
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height() == height && image.width() == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const auto fy = static_cast<float>((y + 0.5) * sy - 0.5);
    for (int x = 0; x < width; ++x) {
      const auto fx = static_cast<float>((x + 0.5) * sx - 0.5);
      for (int c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = image.sample(fx, fy, c);
    }
  }
  out.clamp01();
  return out;
}

Image preprocess(const Image& image, int height, int width, const std::optional<CropBox>& box, const CropHook& hook) {
  if (height <= 0 || width <= 0) throw Error(ErrorCategory::config, kModule, "target size must be positive");
  std::optional<CropBox> region = box;
  if (!region && hook) region = hook(image);
  Image cropped = region ? crop(image, *region) : image;
  Image out = resize_bilinear(cropped, height, width);
  out.clamp01();
  return out;
}

std::filesystem::path cache_dir_from_env() {
  const char* value = std::getenv("DEMORPH_LAB_CACHE");
  return value ? std::filesystem::path(value) : std::filesystem::path();
}

namespace {

std::filesystem::path cache_entry(const std::filesystem::path& path, const LoaderOptions& options) {
  std::error_code ec;
  const auto abs = std::filesystem::absolute(path, ec).lexically_normal().string();
  const auto stamp = std::filesystem::last_write_time(path, ec).time_since_epoch().count();
  const auto size = std::filesystem::file_size(path, ec);
  std::ostringstream key;
  key << abs << '|' << stamp << '|' << size << '|' << options.image_size;
  std::ostringstream name;
  name << std::hex << std::hash<std::string>{}(key.str()) << ".f32";
  return options.cache_dir / name.str();
}

}  // namespace

Image load_preprocessed(const std::filesystem::path& path, const LoaderOptions& options) {
  const int side = options.image_size;
  if (!options.cache_dir.empty()) {
    const auto entry = cache_entry(path, options);
    std::ifstream in(entry, std::ios::binary);
    if (in) {
      Image cached(side, side);
      in.read(reinterpret_cast<char*>(cached.data().data()),
              static_cast<std::streamsize>(cached.size() * sizeof(float)));
      if (in.gcount() == static_cast<std::streamsize>(cached.size() * sizeof(float))) return cached;
    }
  }
  Image img = preprocess(read_image(path), side, side, std::nullopt, options.crop_hook);
  if (!options.cache_dir.empty()) {
    std::filesystem::create_directories(options.cache_dir);
    std::ofstream out(cache_entry(path, options), std::ios::binary);
    out.write(reinterpret_cast<const char*>(img.data().data()), static_cast<std::streamsize>(img.size() * sizeof(float)));
  }
  return img;
}

std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t& rng_state) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    SplitMix64 rng(rng_state);
    rng.shuffle(order);
    rng_state = rng.state();
  }
  return order;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorCategory::config, kModule, "batch size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  }
  return batches;
}

Batch load_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& indices,
                 const LoaderOptions& options) {
  Batch batch;
  for (std::size_t idx : indices) {
    const auto& r = records.at(idx);
    batch.inputs.push_back(load_preprocessed(r.input_path, options));
    batch.gt1.push_back(r.gt1_path == r.input_path ? batch.inputs.back() : load_preprocessed(r.gt1_path, options));
    batch.gt2.push_back(r.gt2_path == r.gt1_path ? batch.gt1.back() : load_preprocessed(r.gt2_path, options));
    batch.labels.push_back(r.label);
    batch.indices.push_back(idx);
  }
  return batch;
}

}  // namespace demorph::data
