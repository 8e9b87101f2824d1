#include "demorph/morph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "demorph/csv.hpp"
#include "demorph/error.hpp"

namespace demorph {

namespace {

constexpr double kDegenerateArea = 1e-9;

Error structural(const std::string& message) { return Error(ErrorCategory::structural, "morph_synthesis", message); }

double orient(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

}  // namespace

std::array<Point2, 8> frame_anchors(ImageSize size) {
  const double w = size.width;
  const double h = size.height;
  return {Point2{0, 0},     Point2{w / 2, 0}, Point2{w, 0},     Point2{w, h / 2},
          Point2{w, h},     Point2{w / 2, h}, Point2{0, h},     Point2{0, h / 2}};
}

LandmarkSet::LandmarkSet(std::vector<Point2> facial, std::vector<Point2> anchors)
    : facial_(std::move(facial)), anchors_(std::move(anchors)) {
  if (!anchors_.empty() && anchors_.size() != 8) {
    throw structural("frame anchor block must hold 0 or 8 points, got " + std::to_string(anchors_.size()));
  }
}

LandmarkSet LandmarkSet::with_frame(std::vector<Point2> facial, ImageSize size) {
  for (std::size_t i = 0; i < facial.size(); ++i) {
    const auto& p = facial[i];
    if (!(p.x >= 0.0 && p.x < size.width && p.y >= 0.0 && p.y < size.height)) {
      throw structural("landmark " + std::to_string(i) + " (" + csv::format_double(p.x) + ", " +
                       csv::format_double(p.y) + ") lies outside the " + std::to_string(size.width) + "x" +
                       std::to_string(size.height) + " image");
    }
  }
  const auto anchors = frame_anchors(size);
  return LandmarkSet(std::move(facial), std::vector<Point2>(anchors.begin(), anchors.end()));
}

std::vector<Point2> LandmarkSet::points() const {
  std::vector<Point2> all = facial_;
  all.insert(all.end(), anchors_.begin(), anchors_.end());
  return all;
}

MorphParams MorphParams::clamped() const {
  return {std::clamp(warp_fraction, 0.0, 1.0), std::clamp(blend_alpha, 0.0, 1.0)};
}

LandmarkSet average_landmarks(const LandmarkSet& l1, const LandmarkSet& l2, double warp_fraction) {
  if (l1.facial().size() != l2.facial().size() || l1.anchors().size() != l2.anchors().size()) {
    throw structural("landmark sets differ in point count (" + std::to_string(l1.size()) + " vs " +
                     std::to_string(l2.size()) + ")");
  }
  if (l1.anchors() != l2.anchors()) {
    throw structural("landmark sets were built for different image sizes");
  }
  std::vector<Point2> mixed(l1.facial().size());
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const auto& a = l1.facial()[i];
    const auto& b = l2.facial()[i];
    mixed[i] = {(1.0 - warp_fraction) * a.x + warp_fraction * b.x, (1.0 - warp_fraction) * a.y + warp_fraction * b.y};
  }
  return LandmarkSet(std::move(mixed), l1.anchors());
}

double triangle_area(const Point2& a, const Point2& b, const Point2& c) { return 0.5 * std::abs(orient(a, b, c)); }

Image warp_to_landmarks(const Image& image, const LandmarkSet& src, const LandmarkSet& dst,
                        const TriangleMesh& mesh, WarpReport* report) {
  if (src.size() != dst.size()) {
    throw structural("source and destination landmark counts differ");
  }
  const int n = static_cast<int>(src.size());
  const int width = image.width();
  const int height = image.height();
  Image out(height, width);
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(width) * height, 0);

  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int idx : tri) {
      if (idx < 0 || idx >= n) throw structural("mesh index " + std::to_string(idx) + " out of range");
    }
    const Point2 d0 = dst[tri[0]], d1 = dst[tri[1]], d2 = dst[tri[2]];
    const Point2 s0 = src[tri[0]], s1 = src[tri[1]], s2 = src[tri[2]];
    const double det = orient(d0, d1, d2);
    if (std::abs(det) * 0.5 < kDegenerateArea) {
      if (report) {
        ++report->skipped_triangles;
        report->warnings.push_back("skipped degenerate destination triangle " + std::to_string(t));
      }
      std::clog << "warning: skipped degenerate destination triangle " << t << '\n';
      continue;
    }
    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min({d0.x, d1.x, d2.x}))));
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(std::max({d0.x, d1.x, d2.x}))));
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min({d0.y, d1.y, d2.y}))));
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(std::max({d0.y, d1.y, d2.y}))));
    constexpr double kEdgeSlack = 1e-9;
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        auto& mark = covered[static_cast<std::size_t>(y) * width + x];
        if (mark) continue;
        const Point2 p{static_cast<double>(x), static_cast<double>(y)};
        const double b0 = orient(d1, d2, p) / det;
        const double b1 = orient(d2, d0, p) / det;
        const double b2 = 1.0 - b0 - b1;
        if (b0 < -kEdgeSlack || b1 < -kEdgeSlack || b2 < -kEdgeSlack) continue;
        const double sx = b0 * s0.x + b1 * s1.x + b2 * s2.x;
        const double sy = b0 * s0.y + b1 * s1.y + b2 * s2.y;
        for (int c = 0; c < Image::kChannels; ++c) {
          out.at(y, x, c) = image.sample(static_cast<float>(sx), static_cast<float>(sy), c);
        }
        mark = 1;
      }
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (covered[static_cast<std::size_t>(y) * width + x]) continue;
      for (int c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = image.at(y, x, c);
    }
  }
  out.clamp01();
  return out;
}

Image blend(const Image& a, const Image& b, double alpha) {
  if (!a.same_shape(b)) {
    throw structural("cannot blend " + std::to_string(a.width()) + "x" + std::to_string(a.height()) + " with " +
                     std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCategory::config, "morph_synthesis", "blend alpha must lie in [0, 1]");
  }
  const auto wa = static_cast<float>(1.0 - alpha);
  const auto wb = static_cast<float>(alpha);
  Image out = a;
  auto dst = out.data();
  const auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = wa * dst[i] + wb * src[i];
  return out;
}

MorphRecord create_morph(std::shared_ptr<const Image> i1, std::shared_ptr<const Image> i2, const LandmarkSet& l1,
                         const LandmarkSet& l2, const MorphParams& params, std::array<std::string, 2> subject_ids,
                         WarpReport* report) {
  if (!i1 || !i2) throw structural("morph sources must not be null");
  if (!i1->same_shape(*i2)) throw structural("morph sources differ in size");
  const MorphParams p = params.clamped();
  const ImageSize size{i1->height(), i1->width()};

  LandmarkSet target = average_landmarks(l1, l2, p.warp_fraction);
  const TriangleMesh mesh = triangulate(target, size);
  const Image w1 = warp_to_landmarks(*i1, l1, target, mesh, report);
  const Image w2 = warp_to_landmarks(*i2, l2, target, mesh, report);

  MorphRecord record;
  record.morph = blend(w1, w2, p.blend_alpha);
  record.source1 = std::move(i1);
  record.source2 = std::move(i2);
  record.params = p;
  record.subject_ids = std::move(subject_ids);
  record.landmarks = std::move(target);
  return record;
}

std::vector<Point2> read_landmark_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "morph_synthesis", "cannot open landmark file " + path.string());
  std::vector<Point2> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = csv::trim(line);
    if (text.empty() || text.front() == '#') continue;
    std::istringstream fields(text);
    Point2 p;
    std::string extra;
    if (!(fields >> p.x >> p.y) || (fields >> extra)) {
      throw Error(ErrorCategory::data, "morph_synthesis",
                  path.string() + ":" + std::to_string(line_no) + ": expected 'x y'");
    }
    points.push_back(p);
  }
  return points;
}

void write_landmark_sidecar(const std::vector<Point2>& points, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::io, "morph_synthesis", "cannot write " + path.string());
  out.precision(9);
  for (const auto& p : points) out << p.x << ' ' << p.y << '\n';
}

std::filesystem::path sidecar_path_for(const std::filesystem::path& image_path) {
  auto p = image_path;
  p.replace_extension(".txt");
  return p;
}

namespace {
const std::vector<std::string> kMorphManifestHeader = {"morph_path",  "source1_path",  "source2_path", "subject1_id",
                                                       "subject2_id", "warp_fraction", "blend_alpha"};
}

void write_morph_manifest(const std::vector<MorphManifestRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::io, "morph_synthesis", "cannot write " + path.string());
  for (std::size_t i = 0; i < kMorphManifestHeader.size(); ++i) out << (i ? "," : "") << kMorphManifestHeader[i];
  out << '\n';
  for (const auto& r : rows) {
    out << r.morph_path << ',' << r.source1_path << ',' << r.source2_path << ',' << r.subject1_id << ','
        << r.subject2_id << ',' << csv::format_double(r.warp_fraction) << ',' << csv::format_double(r.blend_alpha)
        << '\n';
  }
}

std::vector<MorphManifestRow> read_morph_manifest(const std::filesystem::path& path) {
  const auto table = csv::read(path, "morph_synthesis");
  csv::expect_header(table, kMorphManifestHeader, path, "morph_synthesis");
  std::vector<MorphManifestRow> rows;
  for (const auto& row : table.rows) {
    if (row.fields.size() != kMorphManifestHeader.size()) {
      throw Error(ErrorCategory::data, "morph_synthesis", "row " + std::to_string(row.line) + ": wrong field count");
    }
    const auto& f = row.fields;
    rows.push_back({f[0], f[1], f[2], f[3], f[4], csv::parse_double(f[5], row, "warp_fraction", "morph_synthesis"),
                    csv::parse_double(f[6], row, "blend_alpha", "morph_synthesis")});
  }
  return rows;
}

std::vector<MorphPair> read_pair_manifest(const std::filesystem::path& path, const MorphParams& defaults) {
  const auto table = csv::read(path, "morph_synthesis");
  const std::vector<std::string> base = {"source1_path", "source2_path", "subject1_id", "subject2_id"};
  csv::expect_header(table, base, path, "morph_synthesis", /*allow_extra=*/true);
  const bool has_params = table.header.size() >= 6 && table.header[4] == "warp_fraction" &&
                          table.header[5] == "blend_alpha";
  if (table.header.size() != base.size() && !has_params) {
    throw Error(ErrorCategory::data, "morph_synthesis",
                "pair manifest extra columns must be warp_fraction,blend_alpha in " + path.string());
  }
  const auto dir = path.parent_path();
  std::vector<MorphPair> pairs;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size()) {
      throw Error(ErrorCategory::data, "morph_synthesis", "row " + std::to_string(row.line) + ": wrong field count");
    }
    MorphPair pair;
    pair.source1 = dir / row.fields[0];
    pair.source2 = dir / row.fields[1];
    pair.subject1_id = row.fields[2];
    pair.subject2_id = row.fields[3];
    pair.params = defaults;
    if (has_params) {
      pair.params.warp_fraction = csv::parse_double(row.fields[4], row, "warp_fraction", "morph_synthesis");
      pair.params.blend_alpha = csv::parse_double(row.fields[5], row, "blend_alpha", "morph_synthesis");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<MorphManifestRow> generate_morphs(const std::vector<MorphPair>& pairs,
                                              const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<MorphManifestRow> rows;
  std::ofstream samples(out_dir / "samples.csv");
  samples << "input_path,gt1_path,gt2_path,label,subject1_id,subject2_id\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pair = pairs[i];
    auto i1 = std::make_shared<const Image>(read_image(pair.source1));
    auto i2 = std::make_shared<const Image>(read_image(pair.source2));
    const ImageSize size{i1->height(), i1->width()};
    const auto l1 = LandmarkSet::with_frame(read_landmark_sidecar(sidecar_path_for(pair.source1)), size);
    const auto l2 = LandmarkSet::with_frame(read_landmark_sidecar(sidecar_path_for(pair.source2)), size);
    const auto record = create_morph(i1, i2, l1, l2, pair.params, {pair.subject1_id, pair.subject2_id});

    std::ostringstream name;
    name << "morph_" << std::setw(4) << std::setfill('0') << i << ".png";
    write_image(record.morph, out_dir / name.str());
    const auto abs1 = std::filesystem::absolute(pair.source1).lexically_normal().string();
    const auto abs2 = std::filesystem::absolute(pair.source2).lexically_normal().string();
    rows.push_back({name.str(), abs1, abs2, pair.subject1_id, pair.subject2_id, record.params.warp_fraction,
                    record.params.blend_alpha});
    samples << name.str() << ',' << abs1 << ',' << abs2 << ",morphed," << pair.subject1_id << ','
            << pair.subject2_id << '\n';
  }
  write_morph_manifest(rows, out_dir / "morphs.csv");
  return rows;
}

}  // namespace demorph
