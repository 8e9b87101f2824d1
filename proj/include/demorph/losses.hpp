#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>

#include <torch/torch.h>

#include "demorph/error.hpp"

namespace demorph::losses {

enum class Pairing { direct, swapped };

std::string to_string(Pairing pairing);
Pairing parse_pairing(const std::string& text);

// Scorers return raw logits; sigmoid is applied inside the BCE terms.
using PairScorer = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;       // [B]
using PatchScorer = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;      // [B, 1, h, w]
using DistanceFn = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;       // [B]

/// Result of a min-over-pairings loss. `swapped` marks samples where the
/// swapped pairing was strictly better; ties stay direct.
struct CrossRoad {
  torch::Tensor value;       // scalar, batch mean of per_sample
  torch::Tensor per_sample;  // [B]
  torch::Tensor swapped;     // [B] bool

  Pairing majority() const;
  std::int64_t swapped_count() const;
};

CrossRoad crossroad_reconstruction_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                                        const torch::Tensor& o2);

CrossRoad crossroad_biometric_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                                   const torch::Tensor& o2, const DistanceFn& distance);

torch::Tensor mixture(const torch::Tensor& i1, const torch::Tensor& i2, double weight);

struct AdversarialLoss {
  torch::Tensor d_loss;
  torch::Tensor g_loss;
};

// Discriminator terms see detached outputs; the generator term does not.
torch::Tensor critic_d_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                            const torch::Tensor& o2, const PairScorer& critic, double mixture_weight);
torch::Tensor critic_g_loss(const torch::Tensor& o1, const torch::Tensor& o2, const PairScorer& critic);

AdversarialLoss decomposition_critic_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                                          const torch::Tensor& o2, const PairScorer& critic, double mixture_weight);

// o1/o2 must already be routed so that o_k is judged against i_k.
torch::Tensor markovian_d_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                               const torch::Tensor& o2, const torch::Tensor& condition, const PatchScorer& d_m1,
                               const PatchScorer& d_m2);
torch::Tensor markovian_g_loss(const torch::Tensor& o1, const torch::Tensor& o2, const torch::Tensor& condition,
                               const PatchScorer& d_m1, const PatchScorer& d_m2);

AdversarialLoss markovian_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                               const torch::Tensor& o2, const torch::Tensor& condition, const PatchScorer& d_m1,
                               const PatchScorer& d_m2);

// Reorders outputs per sample so that swapped samples exchange o1 and o2.
std::pair<torch::Tensor, torch::Tensor> route_outputs(const torch::Tensor& o1, const torch::Tensor& o2,
                                                      const torch::Tensor& swapped);

struct Betas {
  double c = 0.0;
  double b = 0.0;
  double m = 0.0;
};

struct LossWeights {
  double beta_c = 0.001;
  double beta_b = 1e12;
  double beta_m = 0.001;
  int warmup_epochs = 10;  // beta_c and beta_m are zero before this (0-indexed) epoch
  std::function<Betas(int epoch, const LossWeights&)> schedule;  // overrides the default schedule when set

  Betas at(int epoch) const;
  void validate() const;
};

struct LossParts {
  double l_r = 0.0;
  double l_c = 0.0;
  double l_b = 0.0;
  double l_m = 0.0;
  Pairing pairing = Pairing::direct;
};

struct LossBreakdown {
  double l_r = 0.0;
  double l_c = 0.0;
  double l_b = 0.0;
  double l_m = 0.0;
  double total = 0.0;
  Pairing pairing = Pairing::direct;
  Betas betas;
};

void check_finite(double value, const char* component);

// Weighted composition; works for doubles and scalar tensors alike. Zero
// weights drop their term entirely.
template <class T>
T compose_total(const T& l_r, const T& l_c, const T& l_b, const T& l_m, const Betas& betas) {
  T total = l_r;
  if (betas.c != 0.0) total = total + betas.c * l_c;
  if (betas.b != 0.0) total = total + betas.b * l_b;
  if (betas.m != 0.0) total = total + betas.m * l_m;
  return total;
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights, int epoch);

/// Appends per-step breakdowns to a delimited log. The header is written only
/// when the file is new or empty.
class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& path);

  void append(int epoch, std::int64_t step, const LossBreakdown& row);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline const char* kLossLogHeader = "epoch,step,L_R,L_C,L_B,L_M,total,pairing";

}  // namespace demorph::losses
