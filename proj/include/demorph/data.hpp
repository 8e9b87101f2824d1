#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "demorph/image.hpp"

namespace demorph::data {

enum class Label { morphed, non_morphed };

std::string to_string(Label label);
Label parse_label(const std::string& text);

/// One dataset row. Non-morphed rows follow the duplicate convention:
/// both ground-truth paths equal the input path.
struct SampleRecord {
  std::filesystem::path input_path;
  std::filesystem::path gt1_path;
  std::filesystem::path gt2_path;
  Label label = Label::morphed;
  std::string subject1_id;
  std::string subject2_id;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

inline const std::vector<std::string> kManifestHeader = {"input_path", "gt1_path",    "gt2_path",
                                                         "label",      "subject1_id", "subject2_id"};

// Paths are resolved relative to the manifest's directory and must exist.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<SampleRecord>& records, const std::filesystem::path& path);

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  bool non_morphed_in_train = false;
};

struct SplitResult {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  std::vector<std::string> train_subjects;  // the subject pool, sorted
  std::vector<std::string> test_subjects;
  std::size_t straddling = 0;  // morphs sent to test because one subject is in the train pool
  std::size_t excluded = 0;    // non-morphed train-pool rows dropped by the training protocol
};

// Partitions subjects (not rows) into train/test pools. A row joins train only
// when all of its subjects are in the train pool; everything else goes to test.
SplitResult subject_disjoint_split(const std::vector<SampleRecord>& records, const SplitSpec& spec);

// Per-partition counts in the layout of a dataset specification table.
std::string split_summary(const SplitResult& split);

void write_split(const SplitResult& split, const std::filesystem::path& out_dir);

struct CropBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

// Face-crop hook: returns the face region for an image, or nothing to keep the full frame.
using CropHook = std::function<std::optional<CropBox>(const Image&)>;

// Largest centred square; a no-op on square inputs.
std::optional<CropBox> center_square_crop(const Image& image);

Image crop(const Image& image, const CropBox& box);
Image resize_bilinear(const Image& image, int height, int width);

// Crop (explicit box wins over the hook) then resize to the target size.
Image preprocess(const Image& image, int height, int width, const std::optional<CropBox>& box = std::nullopt,
                 const CropHook& hook = {});

/// Stacked batch tensors live in the networks layer; at the data layer a batch
/// is just the decoded, preprocessed images in a fixed order.
struct Batch {
  std::vector<Image> inputs;
  std::vector<Image> gt1;
  std::vector<Image> gt2;
  std::vector<Label> labels;
  std::vector<std::size_t> indices;  // positions in the record list

  std::size_t size() const noexcept { return inputs.size(); }
};

struct LoaderOptions {
  int image_size = 256;
  CropHook crop_hook = center_square_crop;
  // Directory for cached preprocessed images; empty disables caching.
  std::filesystem::path cache_dir;
};

// Reads the DEMORPH_LAB_CACHE environment variable (empty when unset).
std::filesystem::path cache_dir_from_env();

Image load_preprocessed(const std::filesystem::path& path, const LoaderOptions& options);

// Sample order for one epoch: a Fisher-Yates permutation driven by `rng_state`
// (advanced in place), or identity order when shuffle is false.
std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t& rng_state);

Batch load_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& indices,
                 const LoaderOptions& options);

// Splits an ordering into consecutive batches of at most batch_size indices.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size);

}  // namespace demorph::data
