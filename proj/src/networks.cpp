#include "demorph/networks.hpp"

#include <algorithm>
#include <cstring>

#include "demorph/error.hpp"
#include "demorph/random.hpp"

namespace demorph::nets {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kModule = "networks";

void init_conv_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters(/*recurse=*/true)) {
    if (p.value().dim() == 4 && p.key().find("weight") != std::string::npos) {
      p.value().normal_(0.0, 0.02);
    } else if (p.value().dim() == 1 && p.key().find("bias") != std::string::npos) {
      p.value().zero_();
    }
  }
}

torch::nn::Conv2d conv(int in, int out, int kernel, int stride, int padding, bool bias = true) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

torch::nn::InstanceNorm2d instance_norm(int channels) {
  return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels).affine(true));
}

torch::nn::LeakyReLU leaky() { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); }

void check_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw Error(ErrorCategory::structural, kModule, "image pair shapes differ");
  }
  if (a.dim() != 4) throw Error(ErrorCategory::structural, kModule, "expected [B, C, H, W] tensors");
}

}  // namespace

torch::Tensor to_tensor(const Image& image) {
  auto t = torch::empty({image.height(), image.width(), Image::kChannels}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), image.data().data(), image.size() * sizeof(float));
  return t.permute({2, 0, 1}).contiguous();
}

torch::Tensor stack_images(const std::vector<Image>& images) {
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) parts.push_back(to_tensor(img));
  return torch::stack(parts);
}

Image to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != Image::kChannels) {
    throw Error(ErrorCategory::structural, kModule, "expected a [3, H, W] tensor");
  }
  auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image out(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)));
  std::memcpy(out.data().data(), hwc.data_ptr<float>(), out.size() * sizeof(float));
  return out;
}

GeneratorImpl::GeneratorImpl(GeneratorSpec spec) : spec_(spec) {
  if (spec_.depth < 1 || spec_.base_width < 1) {
    throw Error(ErrorCategory::config, kModule, "generator depth and base width must be positive");
  }
  if (spec_.image_size > 0 && spec_.image_size % (1 << spec_.depth) != 0) {
    throw Error(ErrorCategory::config, kModule,
                "image size " + std::to_string(spec_.image_size) + " is not divisible by 2^" +
                    std::to_string(spec_.depth));
  }
  std::vector<int> widths;
  for (int i = 0; i < spec_.depth; ++i) widths.push_back(spec_.base_width * std::min(1 << i, 8));

  down_ = register_module("down", torch::nn::ModuleList());
  int in = spec_.in_channels;
  for (int i = 0; i < spec_.depth; ++i) {
    torch::nn::Sequential block;
    block->push_back(conv(in, widths[i], 4, 2, 1));
    // No normalisation on the outermost level or on the bottleneck.
    if (i > 0 && i + 1 < spec_.depth) block->push_back(instance_norm(widths[i]));
    block->push_back(leaky());
    down_->push_back(block);
    in = widths[i];
  }

  up_ = register_module("up", torch::nn::ModuleList());
  for (int i = spec_.depth - 1; i >= 1; --i) {
    const int from = (i == spec_.depth - 1) ? widths[i] : 2 * widths[i];
    torch::nn::Sequential block;
    block->push_back(torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(from, widths[i - 1], 4).stride(2).padding(1)));
    block->push_back(instance_norm(widths[i - 1]));
    block->push_back(torch::nn::ReLU());
    up_->push_back(block);
  }
  const int last_from = spec_.depth == 1 ? widths[0] : 2 * widths[0];
  last_up_ = register_module(
      "last_up", torch::nn::ConvTranspose2d(
                     torch::nn::ConvTranspose2dOptions(last_from, spec_.base_width, 4).stride(2).padding(1)));
  // Full-resolution head sees the decoder features and the input itself.
  head_ = register_module("head", conv(spec_.base_width + spec_.in_channels, spec_.out_channels, 3, 1, 1));
  init_conv_weights(*this);
}

void GeneratorImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    throw Error(ErrorCategory::structural, kModule,
                "generator expects [B, " + std::to_string(spec_.in_channels) + ", H, W] input");
  }
  const int64_t unit = int64_t{1} << spec_.depth;
  if (x.size(2) % unit != 0 || x.size(3) % unit != 0) {
    throw Error(ErrorCategory::config, kModule,
                "input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) + " is not divisible by 2^" +
                    std::to_string(spec_.depth));
  }
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  check_input(x);
  std::vector<torch::Tensor> skips;
  torch::Tensor h = x;
  for (const auto& block : *down_) {
    h = block->as<torch::nn::Sequential>()->forward(h);
    skips.push_back(h);
  }
  for (std::size_t k = 0; k < up_->size(); ++k) {
    h = up_[k]->as<torch::nn::Sequential>()->forward(h);
    h = torch::cat({h, skips[skips.size() - 2 - k]}, 1);
  }
  h = torch::relu(last_up_->forward(h));
  return torch::sigmoid(head_->forward(torch::cat({h, x}, 1)));
}

std::pair<torch::Tensor, torch::Tensor> GeneratorImpl::decompose(const torch::Tensor& x) {
  const auto out = forward(x);
  const int64_t half = spec_.out_channels / 2;
  return {out.slice(1, 0, half), out.slice(1, half, spec_.out_channels)};
}

DecompositionCriticImpl::DecompositionCriticImpl(int base_width, int image_channels) {
  const int w = base_width;
  body_ = register_module("body", torch::nn::Sequential(conv(2 * image_channels, w, 4, 2, 1), leaky(),
                                                        conv(w, 2 * w, 4, 2, 1), instance_norm(2 * w), leaky(),
                                                        conv(2 * w, 4 * w, 4, 2, 1), instance_norm(4 * w), leaky(),
                                                        conv(4 * w, 1, 3, 1, 1)));
  init_conv_weights(*this);
}

torch::Tensor DecompositionCriticImpl::logits(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b);
  return body_->forward(torch::cat({a, b}, 1)).mean({1, 2, 3});
}

torch::Tensor DecompositionCriticImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  return torch::sigmoid(logits(a, b));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int base_width, int image_channels) {
  const int w = base_width;
  body_ = register_module("body", torch::nn::Sequential(conv(2 * image_channels, w, 4, 2, 1), leaky(),
                                                        conv(w, 2 * w, 4, 2, 1), instance_norm(2 * w), leaky(),
                                                        conv(2 * w, 1, 4, 1, 1)));
  init_conv_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::logits(const torch::Tensor& candidate, const torch::Tensor& condition) {
  check_pair(candidate, condition);
  return body_->forward(torch::cat({candidate, condition}, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& candidate, const torch::Tensor& condition) {
  return torch::sigmoid(logits(candidate, condition));
}

ComparatorImpl::ComparatorImpl(ComparatorSpec spec) : spec_(spec) {
  const int w = spec_.width;
  features_ = register_module(
      "features", torch::nn::Sequential(conv(spec_.in_channels, w, 3, 2, 1), torch::nn::SiLU(),
                                        conv(w, 2 * w, 3, 2, 1), torch::nn::SiLU(), conv(2 * w, 4 * w, 3, 2, 1),
                                        torch::nn::SiLU(), torch::nn::AdaptiveAvgPool2d(4), torch::nn::Flatten()));
  project_ = register_module("project", torch::nn::Linear(4 * w * 16, spec_.embedding_dim));
}

torch::Tensor ComparatorImpl::embed(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    throw Error(ErrorCategory::structural, kModule, "comparator expects [B, C, H, W] input");
  }
  const auto e = project_->forward(features_->forward((x - 0.5) * 2.0));
  return F::normalize(e, F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

torch::Tensor ComparatorImpl::distance(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b);
  return cosine_distance(embed(a), embed(b));
}

torch::Tensor cosine_distance(const torch::Tensor& ea, const torch::Tensor& eb) {
  if (ea.sizes() != eb.sizes()) throw Error(ErrorCategory::structural, kModule, "embedding shapes differ");
  return (1.0 - (ea * eb).sum(-1)).clamp(0.0, 2.0);
}

void set_requires_grad(torch::nn::Module& module, bool enabled) {
  for (auto& p : module.parameters(/*recurse=*/true)) p.set_requires_grad(enabled);
}

void freeze(torch::nn::Module& module) {
  set_requires_grad(module, false);
  module.eval();
}

double train_comparator(Comparator& comparator, const std::vector<Image>& images, const std::vector<int>& identities,
                        const ComparatorTraining& options) {
  if (images.size() != identities.size() || images.empty()) {
    throw Error(ErrorCategory::structural, kModule, "comparator training needs one identity label per image");
  }
  const int classes = *std::max_element(identities.begin(), identities.end()) + 1;
  const auto all = stack_images(images);
  const auto labels = torch::tensor(std::vector<int64_t>(identities.begin(), identities.end()), torch::kInt64);

  set_requires_grad(*comparator, true);
  comparator->train();
  auto prototypes = torch::randn({classes, comparator->spec().embedding_dim}) * 0.1;
  prototypes.set_requires_grad(true);
  std::vector<torch::Tensor> params = comparator->parameters();
  params.push_back(prototypes);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(options.learning_rate));

  SplitMix64 rng(options.seed);
  const auto n = static_cast<std::uint64_t>(images.size());
  double last = 0.0;
  for (int step = 0; step < options.steps; ++step) {
    std::vector<int64_t> pick;
    for (int k = 0; k < options.batch_size; ++k) pick.push_back(static_cast<int64_t>(rng.below(n)));
    const auto idx = torch::tensor(pick, torch::kInt64);
    const auto x = all.index_select(0, idx);
    // Light photometric jitter so the embedding keys on structure, not exact pixels.
    const auto jitter = 1.0 + 0.1 * (torch::rand({x.size(0), 1, 1, 1}) - 0.5);
    const auto emb = comparator->embed((x * jitter).clamp(0.0, 1.0));
    const auto w = F::normalize(prototypes, F::NormalizeFuncOptions().p(2).dim(1));
    const auto loss = F::cross_entropy(options.scale * emb.matmul(w.t()), labels.index_select(0, idx));
    opt.zero_grad();
    loss.backward();
    opt.step();
    last = loss.item<double>();
  }
  freeze(*comparator);
  return last;
}

Networks build_networks(const NetworkSpec& spec) {
  Networks n;
  n.generator = Generator(spec.generator);
  n.critic = DecompositionCritic(spec.critic_width, spec.generator.in_channels);
  n.patch1 = PatchDiscriminator(spec.patch_width, spec.generator.in_channels);
  n.patch2 = PatchDiscriminator(spec.patch_width, spec.generator.in_channels);
  n.comparator = Comparator(spec.comparator);
  freeze(*n.comparator);
  return n;
}

double parameter_checksum(const torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  double sum = 0.0;
  for (const auto& p : module.parameters(/*recurse=*/true)) sum += p.to(torch::kFloat64).abs().sum().item<double>();
  return sum;
}

}  // namespace demorph::nets
