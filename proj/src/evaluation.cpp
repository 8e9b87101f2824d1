#include "demorph/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "demorph/csv.hpp"
#include "demorph/error.hpp"

namespace demorph::eval {

namespace {

constexpr const char* kModule = "evaluation";

torch::Tensor embed_all(nets::Comparator& comparator, const std::vector<Image>& images) {
  constexpr std::size_t kChunk = 32;
  std::vector<torch::Tensor> parts;
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(begin),
                                   images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), begin + kChunk)));
    parts.push_back(comparator->embed(nets::stack_images(chunk)));
  }
  return torch::cat(parts);
}

double similarity(const torch::Tensor& ea, const torch::Tensor& eb) {
  return nets::similarity_from_distance(nets::cosine_distance(ea, eb).item<double>());
}

std::string fixed(double v, int precision = 6) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(precision);
  out << v;
  return out.str();
}

std::optional<TmrResult> safe_tmr(const std::vector<double>& genuine, const std::vector<double>& impostor,
                                  double fmr) {
  if (genuine.empty() || impostor.empty()) return std::nullopt;
  return tmr_at_fmr(genuine, impostor, fmr);
}

}  // namespace

std::filesystem::path impostor_path_for(const std::filesystem::path& score_path) {
  return score_path.parent_path() / "impostor_scores.csv";
}

void write_score_table(const ScoreTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::io, kModule, "cannot write " + path.string());
  for (std::size_t i = 0; i < kScoreHeader.size(); ++i) out << (i ? "," : "") << kScoreHeader[i];
  out << '\n';
  for (const auto& r : table.rows) {
    out << r.sample_id << ',' << data::to_string(r.label) << ',' << csv::format_double(r.d_o1_x) << ','
        << csv::format_double(r.d_o2_x) << ',' << csv::format_double(r.avg_d) << ','
        << csv::format_double(r.s_id1_o1) << ',' << csv::format_double(r.s_id2_o2) << ','
        << csv::format_double(r.s_id1_o2) << ',' << csv::format_double(r.s_id2_o1) << '\n';
  }
  std::ofstream imp(impostor_path_for(path));
  if (!imp) throw Error(ErrorCategory::io, kModule, "cannot write " + impostor_path_for(path).string());
  for (std::size_t i = 0; i < kImpostorHeader.size(); ++i) imp << (i ? "," : "") << kImpostorHeader[i];
  imp << '\n';
  for (const auto& s : table.impostors) {
    imp << s.sample_id << ',' << data::to_string(s.label) << ',' << s.output << ',' << s.subject_id << ','
        << csv::format_double(s.score) << '\n';
  }
}

ScoreTable read_score_table(const std::filesystem::path& path) {
  const auto t = csv::read(path, kModule);
  csv::expect_header(t, kScoreHeader, path, kModule);
  ScoreTable table;
  for (const auto& row : t.rows) {
    if (row.fields.size() != kScoreHeader.size()) {
      throw Error(ErrorCategory::data, kModule,
                  path.string() + ":" + std::to_string(row.line) + ": expected " +
                      std::to_string(kScoreHeader.size()) + " fields");
    }
    auto num = [&](std::size_t i) { return csv::parse_double(row.fields[i], row, kScoreHeader[i], kModule); };
    ScoreRow r;
    r.sample_id = row.fields[0];
    r.label = data::parse_label(row.fields[1]);
    r.d_o1_x = num(2);
    r.d_o2_x = num(3);
    r.avg_d = num(4);
    r.s_id1_o1 = num(5);
    r.s_id2_o2 = num(6);
    r.s_id1_o2 = num(7);
    r.s_id2_o1 = num(8);
    table.rows.push_back(r);
  }
  const auto imp_path = impostor_path_for(path);
  if (std::filesystem::exists(imp_path)) {
    const auto it = csv::read(imp_path, kModule);
    csv::expect_header(it, kImpostorHeader, imp_path, kModule);
    for (const auto& row : it.rows) {
      if (row.fields.size() != kImpostorHeader.size()) {
        throw Error(ErrorCategory::data, kModule, imp_path.string() + ":" + std::to_string(row.line) + ": bad row");
      }
      ImpostorScore s;
      s.sample_id = row.fields[0];
      s.label = data::parse_label(row.fields[1]);
      s.output = static_cast<int>(csv::parse_double(row.fields[2], row, "output", kModule));
      s.subject_id = row.fields[3];
      s.score = csv::parse_double(row.fields[4], row, "score", kModule);
      table.impostors.push_back(s);
    }
  }
  return table;
}

ScoreTable score_demorph_outputs(const std::vector<EvaluationSample>& samples, nets::Comparator& comparator) {
  torch::NoGradGuard no_grad;
  comparator->eval();
  ScoreTable table;
  if (samples.empty()) return table;

  // Ground-truth images: the duplicate convention stands the input in for both
  // identities of a non-morphed row.
  std::vector<Image> inputs, outs1, outs2, gts1, gts2;
  for (const auto& s : samples) {
    const bool morphed = s.label == data::Label::morphed;
    if (morphed && (s.gt1.empty() || s.gt2.empty())) {
      throw Error(ErrorCategory::data, kModule, "morphed sample " + s.sample_id + " has no ground truth");
    }
    inputs.push_back(s.input);
    outs1.push_back(s.result.o1);
    outs2.push_back(s.result.o2);
    gts1.push_back(s.gt1.empty() ? s.input : s.gt1);
    gts2.push_back(s.gt2.empty() ? (s.gt1.empty() ? s.input : s.gt1) : s.gt2);
  }
  const auto ex = embed_all(comparator, inputs);
  const auto e1 = embed_all(comparator, outs1);
  const auto e2 = embed_all(comparator, outs2);
  const auto g1 = embed_all(comparator, gts1);
  const auto g2 = embed_all(comparator, gts2);
  const auto d1 = nets::cosine_distance(e1, ex);
  const auto d2 = nets::cosine_distance(e2, ex);

  // One reference embedding per subject: the first ground truth seen for it.
  std::map<std::string, torch::Tensor> reference;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!s.subject1_id.empty()) reference.emplace(s.subject1_id, g1[static_cast<int64_t>(i)]);
    if (!s.subject2_id.empty()) reference.emplace(s.subject2_id, g2[static_cast<int64_t>(i)]);
  }

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto k = static_cast<int64_t>(i);
    ScoreRow r;
    r.sample_id = s.sample_id;
    r.label = s.label;
    r.d_o1_x = d1[k].item<double>();
    r.d_o2_x = d2[k].item<double>();
    r.avg_d = (r.d_o1_x + r.d_o2_x) / 2.0;
    r.s_id1_o1 = similarity(g1[k], e1[k]);
    r.s_id2_o2 = similarity(g2[k], e2[k]);
    r.s_id1_o2 = similarity(g1[k], e2[k]);
    r.s_id2_o1 = similarity(g2[k], e1[k]);
    table.rows.push_back(r);

    for (const auto& [subject, emb] : reference) {
      if (subject == s.subject1_id || subject == s.subject2_id) continue;
      table.impostors.push_back({s.sample_id, s.label, 1, subject, similarity(emb, e1[k])});
      table.impostors.push_back({s.sample_id, s.label, 2, subject, similarity(emb, e2[k])});
    }
  }
  return table;
}

std::vector<EvaluationSample> demorph_manifest(training::LoadedModel& model,
                                               const std::vector<data::SampleRecord>& records,
                                               const data::LoaderOptions& options) {
  std::vector<EvaluationSample> out;
  for (const auto& r : records) {
    EvaluationSample s;
    s.sample_id = r.input_path.stem().string();
    s.label = r.label;
    s.input = data::load_preprocessed(r.input_path, options);
    s.result = training::demorph(model, s.input);
    if (r.label == data::Label::morphed) {
      s.gt1 = data::load_preprocessed(r.gt1_path, options);
      s.gt2 = data::load_preprocessed(r.gt2_path, options);
    }
    s.subject1_id = r.subject1_id;
    s.subject2_id = r.subject2_id;
    out.push_back(std::move(s));
  }
  return out;
}

double mean(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCategory::numeric, kModule, "mean of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double unbiased_variance(const std::vector<double>& values) {
  if (values.size() < 2) throw Error(ErrorCategory::numeric, kModule, "variance needs at least 2 samples");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return ss / static_cast<double>(values.size() - 1);
}

double dprime(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCategory::numeric, kModule, "d-prime needs at least 2 samples per distribution");
  }
  const double pooled = (unbiased_variance(a) + unbiased_variance(b)) / 2.0;
  if (!(pooled > 0.0)) throw Error(ErrorCategory::numeric, kModule, "d-prime undefined: zero combined variance");
  return std::abs(mean(a) - mean(b)) / std::sqrt(pooled);
}

PairAssignment crossroad_pair_assignment(double s11, double s22, double s12, double s21) {
  if (s11 + s22 >= s12 + s21) return {{1, 1}, {2, 2}, Pairing::direct};
  return {{1, 2}, {2, 1}, Pairing::swapped};
}

TmrResult tmr_at_fmr(const std::vector<double>& genuine, const std::vector<double>& impostor, double fmr) {
  if (genuine.empty() || impostor.empty()) {
    throw Error(ErrorCategory::numeric, kModule, "TMR needs non-empty genuine and impostor lists");
  }
  if (!(fmr >= 0.0)) throw Error(ErrorCategory::config, kModule, "fmr must be nonnegative");
  std::vector<double> imp(impostor);
  std::sort(imp.begin(), imp.end(), std::greater<>());
  const std::size_t n = imp.size();
  // Largest number of impostors that may be accepted.
  const auto allowed = static_cast<std::size_t>(std::floor(fmr * static_cast<double>(n) + 1e-9));
  TmrResult r;
  if (allowed >= n) {
    r.threshold = std::min(imp.back(), *std::min_element(genuine.begin(), genuine.end()));
  } else {
    r.threshold = std::nextafter(imp[allowed], std::numeric_limits<double>::infinity());
  }
  const auto hits = std::count_if(genuine.begin(), genuine.end(), [&](double g) { return g >= r.threshold; });
  r.tmr = static_cast<double>(hits) / static_cast<double>(genuine.size());
  return r;
}

MetricsReport compute_metrics(const ScoreTable& table, double fmr) {
  MetricsReport m;
  m.fmr = fmr;
  std::vector<double> avg_m, avg_n;
  std::vector<double> gen1_m, gen2_m, gen1_n, gen2_n;
  for (const auto& r : table.rows) {
    const auto a = crossroad_pair_assignment(r.s_id1_o1, r.s_id2_o2, r.s_id1_o2, r.s_id2_o1);
    const bool direct = a.decision == Pairing::direct;
    const double first = direct ? r.s_id1_o1 : r.s_id1_o2;
    const double second = direct ? r.s_id2_o2 : r.s_id2_o1;
    if (r.label == data::Label::morphed) {
      ++m.morphed_count;
      avg_m.push_back(r.avg_d);
      gen1_m.push_back(first);
      gen2_m.push_back(second);
      direct ? ++m.direct_count : ++m.swapped_count;
    } else {
      ++m.non_morphed_count;
      avg_n.push_back(r.avg_d);
      gen1_n.push_back(first);
      gen2_n.push_back(second);
    }
  }
  try {
    m.dprime = dprime(avg_m, avg_n);
  } catch (const Error& e) {
    m.dprime_note = e.what();
  }
  std::vector<double> imp_m, imp_n;
  for (const auto& s : table.impostors) (s.label == data::Label::morphed ? imp_m : imp_n).push_back(s.score);
  m.morphed = {gen1_m.size(), imp_m.size(), safe_tmr(gen1_m, imp_m, fmr), safe_tmr(gen2_m, imp_m, fmr)};
  m.non_morphed = {gen1_n.size(), imp_n.size(), safe_tmr(gen1_n, imp_n, fmr), safe_tmr(gen2_n, imp_n, fmr)};
  return m;
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  out << "samples morphed=" << morphed_count << " non_morphed=" << non_morphed_count << '\n';
  if (dprime) {
    out << "d_prime " << fixed(*dprime) << '\n';
  } else {
    out << "d_prime undefined (" << dprime_note << ")\n";
  }
  out << "fmr " << fixed(fmr) << '\n';
  out << "morphed_pairing direct=" << direct_count << " swapped=" << swapped_count << '\n';
  auto section = [&](const char* label, const SubjectTmr& s) {
    const std::pair<const char*, const std::optional<TmrResult>*> parts[] = {{"subject1", &s.first},
                                                                               {"subject2", &s.second}};
    for (const auto& [name, result] : parts) {
      out << label << ' ' << name;
      if (*result) {
        out << " tmr=" << fixed((*result)->tmr) << " threshold=" << fixed((*result)->threshold);
      } else {
        out << " tmr=n/a threshold=n/a";
      }
      out << " genuine=" << s.genuine_count << " impostor=" << s.impostor_count << '\n';
    }
  };
  section("morphed", morphed);
  section("non_morphed", non_morphed);
  return out.str();
}

}  // namespace demorph::eval
