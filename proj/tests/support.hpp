#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "demorph/morph.hpp"
#include "demorph/synthetic.hpp"
#include "demorph/training.hpp"

namespace support {

namespace fs = std::filesystem;

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("demorph_" + tag + "_" + std::to_string(rd()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

struct SyntheticMorphSet {
  std::vector<demorph::Image> morphs, gt1, gt2;
  std::vector<std::string> subject1, subject2;
};

// count morphs from 2 * count distinct procedural identities, morphing
// identity 2k with 2k + 1 at the midpoint.
inline SyntheticMorphSet make_morph_set(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticMorphSet set;
  for (int k = 0; k < count; ++k) {
    const auto a = demorph::render_face(demorph::random_identity(rng), size);
    const auto b = demorph::render_face(demorph::random_identity(rng), size);
    auto ia = std::make_shared<const demorph::Image>(a.image);
    auto ib = std::make_shared<const demorph::Image>(b.image);
    const auto m = demorph::create_morph(ia, ib, a.landmarks, b.landmarks, {});
    set.morphs.push_back(m.morph);
    set.gt1.push_back(a.image);
    set.gt2.push_back(b.image);
    set.subject1.push_back("s" + std::to_string(2 * k));
    set.subject2.push_back("s" + std::to_string(2 * k + 1));
  }
  return set;
}

inline std::shared_ptr<demorph::training::MemorySource> memory_source(const SyntheticMorphSet& set) {
  auto source = std::make_shared<demorph::training::MemorySource>();
  for (std::size_t i = 0; i < set.morphs.size(); ++i) {
    source->add(set.morphs[i], set.gt1[i], set.gt2[i], demorph::data::Label::morphed);
  }
  return source;
}

// Small networks for 64x64 tests.
inline demorph::training::TrainConfig small_config(int image_size = 64) {
  demorph::training::TrainConfig c;
  c.image_size = image_size;
  c.networks.generator.depth = 4;
  c.networks.generator.base_width = 32;
  c.networks.critic_width = 32;
  c.networks.patch_width = 32;
  c.networks.comparator.width = 8;
  c.networks.comparator.embedding_dim = 32;
  c.comparator.mode = "random";
  c.batch_size = 2;
  c.epochs = 1;
  c.deterministic = true;
  c.seed = 7;
  return c;
}

}  // namespace support
