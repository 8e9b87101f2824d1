#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "demorph/data.hpp"
#include "demorph/losses.hpp"
#include "demorph/networks.hpp"
#include "demorph/training.hpp"

namespace demorph::eval {

using losses::Pairing;

struct ScoreRow {
  std::string sample_id;
  data::Label label = data::Label::morphed;
  double d_o1_x = 0.0;
  double d_o2_x = 0.0;
  double avg_d = 0.0;
  // Similarities of the ground-truth identities to the outputs.
  double s_id1_o1 = 0.0;
  double s_id2_o2 = 0.0;
  double s_id1_o2 = 0.0;
  double s_id2_o1 = 0.0;
};

// Similarity of one output to the ground truth of a subject that is not part
// of the sample.
struct ImpostorScore {
  std::string sample_id;
  data::Label label = data::Label::morphed;
  int output = 1;
  std::string subject_id;
  double score = 0.0;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;
  std::vector<ImpostorScore> impostors;
};

inline const std::vector<std::string> kScoreHeader = {"sample_id", "label",    "d_o1_x",   "d_o2_x",  "avg_d",
                                                      "s_id1_o1",  "s_id2_o2", "s_id1_o2", "s_id2_o1"};
inline const std::vector<std::string> kImpostorHeader = {"sample_id", "label", "output", "subject_id", "score"};

void write_score_table(const ScoreTable& table, const std::filesystem::path& path);
// Reads the score rows and, when present, the impostor file next to them.
ScoreTable read_score_table(const std::filesystem::path& path);
std::filesystem::path impostor_path_for(const std::filesystem::path& score_path);

struct EvaluationSample {
  std::string sample_id;
  data::Label label = data::Label::morphed;
  Image input;
  training::DemorphResult result;
  Image gt1;  // empty for non-morphed rows (the input stands in)
  Image gt2;
  std::string subject1_id;
  std::string subject2_id;
};

ScoreTable score_demorph_outputs(const std::vector<EvaluationSample>& samples, nets::Comparator& comparator);

// Loads every manifest row at model resolution and de-morphs it.
std::vector<EvaluationSample> demorph_manifest(training::LoadedModel& model,
                                               const std::vector<data::SampleRecord>& records,
                                               const data::LoaderOptions& options);

double mean(const std::vector<double>& values);
double unbiased_variance(const std::vector<double>& values);
double dprime(const std::vector<double>& a, const std::vector<double>& b);

struct Coupling {
  int identity = 1;
  int output = 1;
};

struct PairAssignment {
  Coupling first;   // coupling of identity 1
  Coupling second;  // coupling of identity 2
  Pairing decision = Pairing::direct;
};

PairAssignment crossroad_pair_assignment(double s11, double s22, double s12, double s21);

struct TmrResult {
  double tmr = 0.0;
  double threshold = 0.0;
};

// Threshold is the smallest value whose impostor acceptance rate is <= fmr.
TmrResult tmr_at_fmr(const std::vector<double>& genuine, const std::vector<double>& impostor, double fmr);

struct SubjectTmr {
  std::size_t genuine_count = 0;
  std::size_t impostor_count = 0;
  std::optional<TmrResult> first;
  std::optional<TmrResult> second;
};

struct MetricsReport {
  double fmr = 0.1;
  std::size_t morphed_count = 0;
  std::size_t non_morphed_count = 0;
  std::optional<double> dprime;
  std::string dprime_note;  // reason when d-prime is undefined
  SubjectTmr morphed;
  SubjectTmr non_morphed;
  std::size_t direct_count = 0;
  std::size_t swapped_count = 0;

  std::string to_text() const;
};

MetricsReport compute_metrics(const ScoreTable& table, double fmr);

// Writes {label}_hist.{ext} for each label and avg_overlay.{ext}.
std::vector<std::filesystem::path> emit_histograms(const ScoreTable& table, const std::filesystem::path& out_dir,
                                                   const std::string& ext = "png");

}  // namespace demorph::eval
