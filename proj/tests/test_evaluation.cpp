#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "demorph/error.hpp"
#include "demorph/evaluation.hpp"
#include "support.hpp"

using namespace demorph;
using namespace demorph::eval;

namespace {

ErrorCategory category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected an error");
  return ErrorCategory::structural;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Independent sort-and-count: scan candidate thresholds in ascending order and
// keep the first whose impostor acceptance rate is within fmr.
TmrResult tmr_oracle(std::vector<double> genuine, std::vector<double> impostor, double fmr) {
  std::vector<double> candidates;
  const double lowest = std::min(*std::min_element(genuine.begin(), genuine.end()),
                                 *std::min_element(impostor.begin(), impostor.end()));
  candidates.push_back(lowest);
  for (double v : impostor) candidates.push_back(std::nextafter(v, std::numeric_limits<double>::infinity()));
  std::sort(candidates.begin(), candidates.end());
  for (double t : candidates) {
    std::size_t accepted = 0;
    for (double v : impostor) accepted += v >= t;
    if (static_cast<double>(accepted) <= fmr * static_cast<double>(impostor.size()) + 1e-9) {
      std::size_t hits = 0;
      for (double g : genuine) hits += g >= t;
      return {static_cast<double>(hits) / static_cast<double>(genuine.size()), t};
    }
  }
  return {0.0, std::numeric_limits<double>::infinity()};
}

training::DemorphResult result_of(const Image& o1, const Image& o2) {
  training::DemorphResult r;
  r.o1 = o1;
  r.o2 = o2;
  return r;
}

nets::Comparator small_comparator() {
  torch::manual_seed(21);
  nets::Comparator cmp(nets::ComparatorSpec{3, 16, 8});
  nets::freeze(*cmp);
  return cmp;
}

}  // namespace

TEST_CASE("outputs equal to the input score zero distance") {
  auto cmp = small_comparator();
  const auto set = support::make_morph_set(2, 32, 1);
  std::vector<EvaluationSample> samples;
  for (int i = 0; i < 2; ++i) {
    samples.push_back({"s" + std::to_string(i), data::Label::morphed, set.morphs[i],
                       result_of(set.morphs[i], set.morphs[i]), set.gt1[i], set.gt2[i], set.subject1[i],
                       set.subject2[i]});
  }
  const auto table = score_demorph_outputs(samples, cmp);
  REQUIRE(table.rows.size() == 2);
  for (const auto& r : table.rows) {
    CHECK(r.d_o1_x <= 1e-6);
    CHECK(r.d_o2_x <= 1e-6);
    CHECK(r.avg_d <= 1e-6);
  }
}

TEST_CASE("score table rows match an independent recomputation") {
  auto cmp = small_comparator();
  const auto set = support::make_morph_set(3, 32, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  auto noise = [&] {
    Image img(32, 32);
    for (auto& v : img.data()) v = u(rng);
    return img;
  };
  std::vector<EvaluationSample> samples;
  for (int i = 0; i < 3; ++i) {
    samples.push_back({"m" + std::to_string(i), data::Label::morphed, set.morphs[i], result_of(noise(), noise()),
                       set.gt1[i], set.gt2[i], set.subject1[i], set.subject2[i]});
  }
  samples.push_back({"b0", data::Label::non_morphed, set.gt1[0], result_of(noise(), noise()), {}, {}, set.subject1[0],
                     set.subject1[0]});
  const auto table = score_demorph_outputs(samples, cmp);
  CHECK(table.rows.size() == samples.size());

  torch::NoGradGuard guard;
  auto embed = [&](const Image& img) { return cmp->embed(nets::to_tensor(img).unsqueeze(0)).to(torch::kFloat64)[0]; };
  auto dist = [&](const Image& a, const Image& b) { return 1.0 - (embed(a) * embed(b)).sum().item<double>(); };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& r = table.rows[i];
    CHECK(r.sample_id == s.sample_id);
    CHECK(r.avg_d == (r.d_o1_x + r.d_o2_x) / 2.0);
    CHECK(r.d_o1_x == doctest::Approx(dist(s.result.o1, s.input)).epsilon(1e-5));
    CHECK(r.d_o2_x == doctest::Approx(dist(s.result.o2, s.input)).epsilon(1e-5));
    const Image& g1 = s.gt1.empty() ? s.input : s.gt1;
    const Image& g2 = s.gt2.empty() ? g1 : s.gt2;
    CHECK(r.s_id1_o2 == doctest::Approx(1.0 - dist(g1, s.result.o2) / 2.0).epsilon(1e-5));
    CHECK(r.s_id2_o1 == doctest::Approx(1.0 - dist(g2, s.result.o1) / 2.0).epsilon(1e-5));
  }

  // 6 subjects: every sample is scored against the subjects it does not contain, for both outputs.
  std::size_t expected_impostors = 0;
  for (const auto& s : samples) expected_impostors += 2 * (6 - (s.subject1_id == s.subject2_id ? 1 : 2));
  CHECK(table.impostors.size() == expected_impostors);
  for (const auto& imp : table.impostors) {
    const auto& s = *std::find_if(samples.begin(), samples.end(), [&](const auto& x) { return x.sample_id == imp.sample_id; });
    CHECK(imp.subject_id != s.subject1_id);
    CHECK(imp.subject_id != s.subject2_id);
    CHECK((imp.output == 1 || imp.output == 2));
  }

  samples[0].gt2 = Image();
  CHECK(category_of([&] { score_demorph_outputs(samples, cmp); }) == ErrorCategory::data);
}

TEST_CASE("score tables round-trip through delimited text") {
  support::TempDir dir("scores");
  ScoreTable table;
  table.rows.push_back({"a", data::Label::morphed, 0.25, 0.5, 0.375, 0.9, 0.8, 0.1, 0.2});
  table.rows.push_back({"b", data::Label::non_morphed, 0.125, 0.0625, 0.09375, 0.7, 0.6, 0.65, 0.55});
  table.impostors.push_back({"a", data::Label::morphed, 2, "s7", 0.3});
  write_score_table(table, dir / "scores.csv");
  CHECK(std::filesystem::exists(impostor_path_for(dir / "scores.csv")));
  const auto header = slurp(dir / "scores.csv").substr(0, slurp(dir / "scores.csv").find('\n'));
  CHECK(header == "sample_id,label,d_o1_x,d_o2_x,avg_d,s_id1_o1,s_id2_o2,s_id1_o2,s_id2_o1");
  const auto back = read_score_table(dir / "scores.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].avg_d == 0.09375);
  CHECK(back.rows[1].label == data::Label::non_morphed);
  REQUIRE(back.impostors.size() == 1);
  CHECK(back.impostors[0].subject_id == "s7");
  CHECK(back.impostors[0].output == 2);
  std::ofstream(dir / "bad.csv") << "sample_id,label\n";
  CHECK(category_of([&] { read_score_table(dir / "bad.csv"); }) == ErrorCategory::data);
}

TEST_CASE("d-prime of two unit normals 4.25 apart") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n0(0.0, 1.0), n1(4.25, 1.0);
  std::vector<double> a(100000), b(100000);
  for (auto& v : a) v = n0(rng);
  for (auto& v : b) v = n1(rng);
  CHECK(std::abs(dprime(a, b) - 4.25) <= 0.02);
}

TEST_CASE("d-prime edge cases and invariances") {
  CHECK(dprime({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(category_of([] { dprime({0, 0}, {1, 1}); }) == ErrorCategory::numeric);
  CHECK(category_of([] { dprime({0}, {1, 2}); }) == ErrorCategory::numeric);
  // Hand-computed: means 2 and 5, unbiased variances 1 and 1.
  CHECK(dprime({1, 2, 3}, {4, 5, 6}) == doctest::Approx(3.0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(2 + trial % 7), b(3 + trial % 5);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng) + 1;
    CHECK(dprime(a, b) == dprime(b, a));
    const double c = 0.1 + std::abs(u(rng));
    auto sa = a, sb = b;
    for (auto& v : sa) v *= c;
    for (auto& v : sb) v *= c;
    CHECK(std::abs(dprime(sa, sb) - dprime(a, b)) <= 1e-9);
  }
}

TEST_CASE("pair assignment examples and brute force") {
  CHECK(crossroad_pair_assignment(0.9, 0.8, 0.1, 0.2).decision == Pairing::direct);
  const auto s = crossroad_pair_assignment(0.1, 0.2, 0.9, 0.8);
  CHECK(s.decision == Pairing::swapped);
  CHECK(s.first.identity == 1);
  CHECK(s.first.output == 2);
  CHECK(s.second.output == 1);
  CHECK(crossroad_pair_assignment(0.5, 0.5, 0.5, 0.5).decision == Pairing::direct);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 10000; ++trial) {
    const double s11 = u(rng), s22 = u(rng), s12 = u(rng), s21 = u(rng);
    const auto a = crossroad_pair_assignment(s11, s22, s12, s21);
    const double direct = s11 + s22, swapped = s12 + s21;
    CHECK(a.decision == (swapped > direct ? Pairing::swapped : Pairing::direct));
    CHECK(a.first.identity != a.second.identity);
    CHECK(a.first.output != a.second.output);
    const double c = u(rng) * 10 - 5;
    CHECK(crossroad_pair_assignment(s11 + c, s22 + c, s12 + c, s21 + c).decision ==
          crossroad_pair_assignment(s11, s22, s12, s21).decision);
  }
}

TEST_CASE("TMR at FMR examples") {
  const auto perfect = tmr_at_fmr(std::vector<double>(10, 1.0), std::vector<double>(10, 0.0), 0.1);
  CHECK(perfect.tmr == 1.0);
  std::vector<double> same(1000);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : same) v = u(rng);
  const auto chance = tmr_at_fmr(same, same, 0.1);
  CHECK(std::abs(chance.tmr - 0.1) <= 1.0 / 1000);
  CHECK(category_of([] { tmr_at_fmr({}, {0.5}, 0.1); }) == ErrorCategory::numeric);
  CHECK(category_of([] { tmr_at_fmr({0.5}, {}, 0.1); }) == ErrorCategory::numeric);
}

TEST_CASE("TMR matches a sort-and-count oracle on 1000 scores") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> gen(0.7, 0.1), imp(0.4, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> g(1000), im(1000);
    for (auto& v : g) v = gen(rng);
    for (auto& v : im) v = std::round(imp(rng) * 200) / 200;  // introduce ties
    for (double fmr : {0.0, 0.001, 0.01, 0.1, 0.5, 1.0}) {
      const auto got = tmr_at_fmr(g, im, fmr);
      const auto want = tmr_oracle(g, im, fmr);
      CHECK(got.tmr == want.tmr);
      CHECK(got.threshold == want.threshold);
    }
  }
}

TEST_CASE("TMR is monotone in FMR") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> g(300), im(200);
  for (auto& v : g) v = u(rng);
  for (auto& v : im) v = u(rng) * 0.8;
  double last = 2.0;
  for (double fmr = 1.0; fmr >= 0.0; fmr -= 0.01) {
    const double t = tmr_at_fmr(g, im, std::max(fmr, 0.0)).tmr;
    CHECK(t <= last);
    last = t;
  }
}

TEST_CASE("metrics report couples identities per row and counts pairings") {
  ScoreTable table;
  table.rows.push_back({"m0", data::Label::morphed, 0.4, 0.5, 0.45, 0.9, 0.8, 0.1, 0.2});
  table.rows.push_back({"m1", data::Label::morphed, 0.6, 0.7, 0.65, 0.1, 0.2, 0.9, 0.7});
  table.rows.push_back({"n0", data::Label::non_morphed, 0.1, 0.2, 0.15, 0.9, 0.9, 0.9, 0.9});
  table.rows.push_back({"n1", data::Label::non_morphed, 0.2, 0.1, 0.2, 0.95, 0.9, 0.9, 0.9});
  for (double s : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.85, 0.95}) {
    table.impostors.push_back({"m0", data::Label::morphed, 1, "x", s});
  }
  const auto m = compute_metrics(table, 0.1);
  CHECK(m.morphed_count == 2);
  CHECK(m.non_morphed_count == 2);
  CHECK(m.direct_count == 1);
  CHECK(m.swapped_count == 1);
  REQUIRE(m.dprime.has_value());
  CHECK(*m.dprime == doctest::Approx(dprime({0.45, 0.65}, {0.15, 0.2})));
  REQUIRE(m.morphed.first.has_value());
  // Genuine first-coupling scores {0.9, 0.9}; one impostor (0.95) may pass.
  CHECK(m.morphed.first->tmr == 1.0);
  CHECK(m.morphed.second->tmr == 0.0);  // {0.8, 0.7} against threshold just above 0.85
  CHECK(!m.non_morphed.first.has_value());
  const auto text = m.to_text();
  CHECK(text.find("samples morphed=2 non_morphed=2") != std::string::npos);
  CHECK(text.find("morphed_pairing direct=1 swapped=1") != std::string::npos);
  CHECK(text.find("non_morphed subject1 tmr=n/a") != std::string::npos);

  ScoreTable flat;
  flat.rows.push_back({"m0", data::Label::morphed, 0.5, 0.5, 0.5, 0, 0, 0, 0});
  const auto undefined = compute_metrics(flat, 0.1);
  CHECK(!undefined.dprime.has_value());
  CHECK(undefined.to_text().find("d_prime undefined") != std::string::npos);
}

TEST_CASE("histograms: three deterministic files for a two-row table") {
  support::TempDir dir("hist");
  ScoreTable table;
  table.rows.push_back({"m0", data::Label::morphed, 0.4, 0.5, 0.45, 0.9, 0.8, 0.1, 0.2});
  table.rows.push_back({"n0", data::Label::non_morphed, 0.1, 0.2, 0.15, 0.9, 0.9, 0.9, 0.9});
  const auto files = emit_histograms(table, dir / "a");
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "morphed_hist.png");
  CHECK(files[1].filename() == "non_morphed_hist.png");
  CHECK(files[2].filename() == "avg_overlay.png");
  const auto again = emit_histograms(table, dir / "b");
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::filesystem::file_size(files[i]) > 0);
    CHECK(slurp(files[i]) == slurp(again[i]));
  }
  CHECK(read_image(files[2]).width() > 0);
  CHECK(category_of([&] { emit_histograms(ScoreTable{}, dir / "c"); }) == ErrorCategory::data);
}
