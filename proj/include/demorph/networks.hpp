#pragma once

#include <utility>
#include <vector>

#include <torch/torch.h>

#include "demorph/image.hpp"

namespace demorph::nets {

// [3, H, W] float tensor from an interleaved image, and back.
torch::Tensor to_tensor(const Image& image);
torch::Tensor stack_images(const std::vector<Image>& images);
Image to_image(const torch::Tensor& chw);

struct GeneratorSpec {
  int in_channels = 3;
  int out_channels = 6;  // two stacked RGB decompositions
  int depth = 5;
  int base_width = 64;
  int image_size = 0;  // when set, checked for divisibility at construction
};

// U-Net encoder-decoder. Output channels are squashed to (0, 1) by a sigmoid
// and split into the two decomposed images.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorSpec spec = {});

  torch::Tensor forward(const torch::Tensor& x);
  std::pair<torch::Tensor, torch::Tensor> decompose(const torch::Tensor& x);

  const GeneratorSpec& spec() const noexcept { return spec_; }
  void check_input(const torch::Tensor& x) const;

 private:
  GeneratorSpec spec_;
  torch::nn::ModuleList down_;
  torch::nn::ModuleList up_;
  torch::nn::ConvTranspose2d last_up_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

// Four-layer fully convolutional critic over a channel-concatenated image
// pair; patch logits are averaged into a single score per pair.
class DecompositionCriticImpl : public torch::nn::Module {
 public:
  explicit DecompositionCriticImpl(int base_width = 64, int image_channels = 3);

  torch::Tensor logits(const torch::Tensor& a, const torch::Tensor& b);  // [B]
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);  // sigmoid of logits

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DecompositionCritic);

// Three-layer Markovian discriminator: candidate image concatenated with the
// conditioning image, one logit per receptive-field patch.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(int base_width = 64, int image_channels = 3);

  torch::Tensor logits(const torch::Tensor& candidate, const torch::Tensor& condition);  // [B, 1, h, w]
  torch::Tensor forward(const torch::Tensor& candidate, const torch::Tensor& condition);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct ComparatorSpec {
  int in_channels = 3;
  int embedding_dim = 128;
  int width = 16;
};

/// Differentiable face embedding with cosine distance. Smooth activations
/// keep the distance differentiable everywhere with respect to both images.
class ComparatorImpl : public torch::nn::Module {
 public:
  explicit ComparatorImpl(ComparatorSpec spec = {});

  torch::Tensor embed(const torch::Tensor& x);                           // [B, D], unit L2 norm
  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b);  // [B], in [0, 2]

  const ComparatorSpec& spec() const noexcept { return spec_; }

 private:
  ComparatorSpec spec_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(Comparator);

// 1 - <a, b> for row-wise unit embeddings, clamped to [0, 2] against rounding.
torch::Tensor cosine_distance(const torch::Tensor& ea, const torch::Tensor& eb);

// Maps a cosine distance in [0, 2] to a similarity in [0, 1].
inline double similarity_from_distance(double distance) { return 1.0 - distance / 2.0; }

struct ComparatorTraining {
  int steps = 200;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double scale = 16.0;  // logit scale of the normalised softmax
  std::uint64_t seed = 0;
};

// Briefly fits the comparator as a normalised-softmax identity classifier so
// that cosine distance separates identities. Returns the final training loss.
double train_comparator(Comparator& comparator, const std::vector<Image>& images, const std::vector<int>& identities,
                        const ComparatorTraining& options);

void freeze(torch::nn::Module& module);
void set_requires_grad(torch::nn::Module& module, bool enabled);

struct NetworkSpec {
  GeneratorSpec generator;
  int critic_width = 64;
  int patch_width = 64;
  ComparatorSpec comparator;
};

struct Networks {
  Generator generator{nullptr};
  DecompositionCritic critic{nullptr};
  PatchDiscriminator patch1{nullptr};
  PatchDiscriminator patch2{nullptr};
  Comparator comparator{nullptr};
};

Networks build_networks(const NetworkSpec& spec);

// Sum of all parameter values in double precision; used to detect updates.
double parameter_checksum(const torch::nn::Module& module);

}  // namespace demorph::nets
