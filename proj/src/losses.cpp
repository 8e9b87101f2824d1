#include "demorph/losses.hpp"

#include "demorph/csv.hpp"

namespace demorph::losses {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kModule = "losses";

void check_quad(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1, const torch::Tensor& o2) {
  if (i1.sizes() != i2.sizes() || i1.sizes() != o1.sizes() || i1.sizes() != o2.sizes()) {
    throw Error(ErrorCategory::structural, kModule, "cross-road inputs must share dims");
  }
  if (i1.dim() < 2) throw Error(ErrorCategory::structural, kModule, "expected batched image tensors");
}

// Mean absolute error per sample over all non-batch dims.
torch::Tensor mae(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().flatten(1).mean(1); }

CrossRoad pick(const torch::Tensor& direct, const torch::Tensor& swapped) {
  CrossRoad out;
  out.swapped = swapped < direct;
  out.per_sample = torch::where(out.swapped, swapped, direct);
  out.value = out.per_sample.mean();
  return out;
}

torch::Tensor bce(const torch::Tensor& logits, double target) {
  return F::binary_cross_entropy_with_logits(logits, torch::full_like(logits, target));
}

}  // namespace

std::string to_string(Pairing pairing) { return pairing == Pairing::direct ? "direct" : "swapped"; }

Pairing parse_pairing(const std::string& text) {
  if (text == "direct") return Pairing::direct;
  if (text == "swapped") return Pairing::swapped;
  throw Error(ErrorCategory::data, kModule, "unknown pairing '" + text + "'");
}

Pairing CrossRoad::majority() const {
  const auto n = swapped.numel();
  return 2 * swapped_count() > n ? Pairing::swapped : Pairing::direct;
}

std::int64_t CrossRoad::swapped_count() const { return swapped.sum().item<std::int64_t>(); }

CrossRoad crossroad_reconstruction_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                                        const torch::Tensor& o2) {
  check_quad(i1, i2, o1, o2);
  return pick(mae(i1, o1) + mae(i2, o2), mae(i1, o2) + mae(i2, o1));
}

CrossRoad crossroad_biometric_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                                   const torch::Tensor& o2, const DistanceFn& distance) {
  check_quad(i1, i2, o1, o2);
  return pick(distance(i1, o1) + distance(i2, o2), distance(i1, o2) + distance(i2, o1));
}

torch::Tensor mixture(const torch::Tensor& i1, const torch::Tensor& i2, double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw Error(ErrorCategory::config, kModule, "mixture weight must lie in [0, 1]");
  }
  if (weight == 1.0) return i1.clone();
  if (weight == 0.0) return i2.clone();
  return weight * i1 + (1.0 - weight) * i2;
}

torch::Tensor critic_d_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                            const torch::Tensor& o2, const PairScorer& critic, double mixture_weight) {
  check_quad(i1, i2, o1, o2);
  const auto m = mixture(i1, i2, mixture_weight);
  return bce(critic(i1, i2), 1.0) + bce(critic(o1.detach(), o2.detach()), 0.0) + bce(critic(m, m), 0.0);
}

torch::Tensor critic_g_loss(const torch::Tensor& o1, const torch::Tensor& o2, const PairScorer& critic) {
  return bce(critic(o1, o2), 1.0);
}

AdversarialLoss decomposition_critic_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                                          const torch::Tensor& o2, const PairScorer& critic, double mixture_weight) {
  return {critic_d_loss(i1, i2, o1, o2, critic, mixture_weight), critic_g_loss(o1, o2, critic)};
}

torch::Tensor markovian_d_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                               const torch::Tensor& o2, const torch::Tensor& condition, const PatchScorer& d_m1,
                               const PatchScorer& d_m2) {
  check_quad(i1, i2, o1, o2);
  return bce(d_m1(i1, condition), 1.0) + bce(d_m1(o1.detach(), condition), 0.0) + bce(d_m2(i2, condition), 1.0) +
         bce(d_m2(o2.detach(), condition), 0.0);
}

torch::Tensor markovian_g_loss(const torch::Tensor& o1, const torch::Tensor& o2, const torch::Tensor& condition,
                               const PatchScorer& d_m1, const PatchScorer& d_m2) {
  return bce(d_m1(o1, condition), 1.0) + bce(d_m2(o2, condition), 1.0);
}

AdversarialLoss markovian_loss(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& o1,
                               const torch::Tensor& o2, const torch::Tensor& condition, const PatchScorer& d_m1,
                               const PatchScorer& d_m2) {
  return {markovian_d_loss(i1, i2, o1, o2, condition, d_m1, d_m2), markovian_g_loss(o1, o2, condition, d_m1, d_m2)};
}

std::pair<torch::Tensor, torch::Tensor> route_outputs(const torch::Tensor& o1, const torch::Tensor& o2,
                                                      const torch::Tensor& swapped) {
  std::vector<int64_t> shape(static_cast<std::size_t>(o1.dim()), 1);
  shape[0] = o1.size(0);
  const auto mask = swapped.to(torch::kBool).reshape(shape);
  return {torch::where(mask, o2, o1), torch::where(mask, o1, o2)};
}

Betas LossWeights::at(int epoch) const {
  if (schedule) return schedule(epoch, *this);
  if (epoch < warmup_epochs) return {0.0, beta_b, 0.0};
  return {beta_c, beta_b, beta_m};
}

void LossWeights::validate() const {
  if (beta_c < 0.0 || beta_b < 0.0 || beta_m < 0.0) {
    throw Error(ErrorCategory::config, kModule, "loss weights must be nonnegative");
  }
  if (warmup_epochs < 0) throw Error(ErrorCategory::config, kModule, "warmup_epochs must be nonnegative");
}

void check_finite(double value, const char* component) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCategory::numeric, kModule, std::string("non-finite ") + component + " loss");
  }
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights, int epoch) {
  check_finite(parts.l_r, "L_R");
  check_finite(parts.l_c, "L_C");
  check_finite(parts.l_b, "L_B");
  check_finite(parts.l_m, "L_M");
  const Betas betas = weights.at(epoch);
  if (betas.c < 0.0 || betas.b < 0.0 || betas.m < 0.0) {
    throw Error(ErrorCategory::config, kModule, "scheduled loss weights must be nonnegative");
  }
  LossBreakdown out{parts.l_r, parts.l_c, parts.l_b, parts.l_m, 0.0, parts.pairing, betas};
  out.total = compose_total(parts.l_r, parts.l_c, parts.l_b, parts.l_m, betas);
  check_finite(out.total, "total");
  return out;
}

LossLog::LossLog(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw Error(ErrorCategory::io, kModule, "cannot open loss log " + path.string());
  if (fresh) out_ << kLossLogHeader << '\n';
}

void LossLog::append(int epoch, std::int64_t step, const LossBreakdown& row) {
  out_ << epoch << ',' << step << ',' << csv::format_double(row.l_r) << ',' << csv::format_double(row.l_c) << ','
       << csv::format_double(row.l_b) << ',' << csv::format_double(row.l_m) << ','
       << csv::format_double(row.total) << ',' << to_string(row.pairing) << '\n';
  out_.flush();
}

}  // namespace demorph::losses
