#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scnn/common.hpp"
#include "scnn/tensor.hpp"

namespace scnn {

struct Sample {
  Tensor<float> image;  // [1, channels, height, width], values nominally [0,1]
  int label = 0;
  std::string id;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  std::vector<float> channel_means;

  std::size_t num_classes() const { return class_names.size(); }
};

// Stratified k-fold assignment, keyed by sample id.
struct FoldSplit {
  int k = 0;
  std::map<std::string, int> assignment;
};

// Desk-scale class-conditional scene generator. Classes differ in stripe
// orientation/frequency and blob count; every class has identical
// per-channel global means by construction, so per-pixel statistics alone
// cannot separate them.
struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t samples_per_class = 20;
  double noise_level = 0.05;
  std::uint64_t seed = 1;
  // Shifts the class-parameter table; disjoint offsets give disjoint classes
  // (used for source vs target domains in transfer experiments).
  std::size_t class_offset = 0;
};

// --- image containers ---

// Binary PPM (P6) / PGM (P5), 8-bit, values scaled to [0,1] on read.
Tensor<float> read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Tensor<float>& image);

// Raw float container: 16-byte header (magic "RAWF", then channels, height,
// width as little-endian u32), followed by channels*height*width
// little-endian 32-bit floats in CHW row-major order. Bit-exact.
Tensor<float> read_rawf(const std::filesystem::path& path);
void write_rawf(const std::filesystem::path& path, const Tensor<float>& image);

// Dispatches on file contents (magic bytes). Returns [1,C,H,W].
Tensor<float> read_image(const std::filesystem::path& path);

// --- dataset operations ---

// Loads <root>/<class_name>/<files>. Class index is the lexicographic rank
// of the subdirectory name; samples are ordered by (class, filename).
LabeledDataset load_dataset(const std::filesystem::path& root);

LabeledDataset generate_synthetic(const SyntheticSpec& spec);

// Writes a dataset to the standard class-subdirectory layout (.rawf files).
void write_dataset(const LabeledDataset& ds, const std::filesystem::path& root);

// Per-channel means over the given samples (all samples when empty).
std::vector<float> compute_channel_means(
    const LabeledDataset& ds, const std::vector<std::size_t>& indices = {});

LabeledDataset subset(const LabeledDataset& ds,
                      const std::vector<std::size_t>& indices);

// Training-path augmentation: mirror with probability 0.5 (vertical flips
// only when allow_vflip), then a uniformly placed square crop of side
// round(crop_ratio * side). No resize; networks are built for the cropped
// size.
Tensor<float> augment(const Tensor<float>& image, Prng& rng, double crop_ratio,
                      bool allow_vflip = false);

// Eval-path counterpart: deterministic center crop, no mirror.
Tensor<float> center_crop(const Tensor<float>& image, std::size_t side);

// Subtracts per-channel means (computed from training folds only).
Tensor<float> preprocess(const Tensor<float>& image,
                         const std::vector<float>& channel_means);

// Per-class seeded shuffle, then round-robin assignment to folds.
FoldSplit make_folds(const LabeledDataset& ds, int k, std::uint64_t seed);

// Fold persistence: CSV lines "sample_id,fold".
void save_folds(const std::filesystem::path& path, const FoldSplit& folds);
FoldSplit load_folds(const std::filesystem::path& path);

// Sample indices inside / outside the given fold.
std::vector<std::size_t> fold_indices(const LabeledDataset& ds,
                                      const FoldSplit& folds, int fold,
                                      bool in_fold);

}  // namespace scnn
