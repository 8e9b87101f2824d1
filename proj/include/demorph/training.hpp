#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "demorph/data.hpp"
#include "demorph/losses.hpp"
#include "demorph/networks.hpp"

namespace demorph::training {

struct ComparatorSetup {
  std::string mode = "pretrain";  // "pretrain", "random" or "file"
  std::filesystem::path path;     // module archive for mode "file"
  int identities = 32;            // synthetic identities for mode "pretrain"
  int captures = 4;               // renders per identity
  nets::ComparatorTraining training;
};

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int batch_size = 8;
  int image_size = 256;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool shuffle = true;
  int checkpoint_every = 25;
  losses::LossWeights weights;
  bool beta_b_auto_scale = false;
  nets::NetworkSpec networks;
  ComparatorSetup comparator;
  std::filesystem::path train_manifest;
  std::filesystem::path out_dir;  // log and checkpoints; empty keeps everything in memory

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are a config error.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Stable 64-bit FNV-1a hash of the config snapshot, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

// Switches libtorch to seeded, single-threaded, deterministic kernels.
void enable_deterministic_mode(std::uint64_t seed);

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual data::Batch load(const std::vector<std::size_t>& indices) const = 0;
};

class ManifestSource : public SampleSource {
 public:
  ManifestSource(std::vector<data::SampleRecord> records, data::LoaderOptions options);

  std::size_t size() const override { return records_.size(); }
  data::Batch load(const std::vector<std::size_t>& indices) const override;
  const std::vector<data::SampleRecord>& records() const noexcept { return records_; }

 private:
  std::vector<data::SampleRecord> records_;
  data::LoaderOptions options_;
};

class MemorySource : public SampleSource {
 public:
  void add(Image input, Image gt1, Image gt2, data::Label label);

  std::size_t size() const override { return inputs_.size(); }
  data::Batch load(const std::vector<std::size_t>& indices) const override;

 private:
  std::vector<Image> inputs_, gt1_, gt2_;
  std::vector<data::Label> labels_;
};

nets::Comparator prepare_comparator(const TrainConfig& config);

struct StepResult {
  losses::LossBreakdown breakdown;
  std::int64_t swapped = 0;  // samples whose reconstruction pairing was swapped
  double critic_d_loss = 0.0;
  double markovian_d_loss = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  std::size_t steps = 0;
  double l_r = 0.0, l_c = 0.0, l_b = 0.0, l_m = 0.0, total = 0.0;  // means over steps
};

enum class Phase { discriminators_updated, generator_updated };

class Trainer;
using PhaseObserver = std::function<void(Phase, Trainer&)>;

/// Owns all networks and optimizer state. Epochs are 0-indexed: the schedule
/// and the log see the index of the epoch being run.
class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const SampleSource> source);

  // Restores networks, optimizers, counters and RNG state. `epochs` replaces
  // the stored target epoch count and `out_dir` the stored output directory.
  static Trainer resume(const std::filesystem::path& checkpoint, std::shared_ptr<const SampleSource> source,
                        std::optional<int> epochs = std::nullopt,
                        std::optional<std::filesystem::path> out_dir = std::nullopt);

  StepResult step(const data::Batch& batch);
  EpochSummary run_epoch();
  // Runs until the configured epoch count, checkpointing on cadence and at the end.
  std::vector<EpochSummary> run();

  void save_checkpoint(const std::filesystem::path& path) const;
  std::filesystem::path checkpoint_path_for(int completed_epochs) const;

  nets::Networks& networks() noexcept { return nets_; }
  const TrainConfig& config() const noexcept { return config_; }
  int epoch() const noexcept { return epoch_; }  // completed epochs
  std::int64_t step_index() const noexcept { return step_; }
  std::uint64_t rng_state() const noexcept { return rng_state_; }
  std::optional<double> beta_b_effective() const noexcept { return beta_b_effective_; }
  const std::vector<EpochSummary>& history() const noexcept { return history_; }
  void set_observer(PhaseObserver observer) { observer_ = std::move(observer); }

 private:
  struct Uninitialised {};
  Trainer(Uninitialised, TrainConfig config, std::shared_ptr<const SampleSource> source);
  void build_optimizers();

  TrainConfig config_;
  std::shared_ptr<const SampleSource> source_;
  nets::Networks nets_;
  std::unique_ptr<torch::optim::Adam> opt_generator_, opt_critic_, opt_patch1_, opt_patch2_;
  int epoch_ = 0;
  std::int64_t step_ = 0;
  std::uint64_t rng_state_ = 0;
  std::optional<double> beta_b_effective_;
  std::vector<EpochSummary> history_;
  std::unique_ptr<losses::LossLog> log_;
  PhaseObserver observer_;
};

struct LoadedModel {
  TrainConfig config;
  nets::Networks nets;
  int epoch = 0;
};

LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Unordered output pair for one input plus comparator distances.
struct DemorphResult {
  Image o1;
  Image o2;
  double d_o1_x = 0.0;
  double d_o2_x = 0.0;
  double d_o1_o2 = 0.0;
};

// x must already be at model resolution.
DemorphResult demorph(nets::Networks& nets, const Image& x);
DemorphResult demorph(LoadedModel& model, const Image& x);

}  // namespace demorph::training
