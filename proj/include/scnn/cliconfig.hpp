#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scnn/architectures.hpp"
#include "scnn/data.hpp"
#include "scnn/training.hpp"

namespace scnn {

// Sectioned key=value experiment configuration. Unknown sections or keys are
// hard errors; every run writes its resolved configuration next to its
// outputs.
struct ExperimentConfig {
  // [run]
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  int jobs = 1;
  // [data]
  std::filesystem::path dataset_root;
  int k_folds = 5;
  bool augment = false;
  double crop_ratio = 0.875;
  bool vflip = false;
  // [model]
  std::string architecture = "mini_caffenet";
  double width_scale = 1.0;
  std::size_t fc1_units = 256;
  std::size_t fc2_units = 128;
  std::size_t stem_channels = 16;
  std::string inception = "8,4,8,2,4,4;16,8,16,4,8,8";
  bool use_aux = true;
  // [train]
  std::string modality = "from_scratch";  // comma list allowed for crossval
  std::size_t iterations = 1000;
  double base_lr = 0.01;
  std::size_t batch = 32;
  double momentum = 0.9;
  std::size_t eval_every = 0;
};

ExperimentConfig parse_experiment_config(const std::filesystem::path& path);

// Serializes the config (plus any extra resolved lines, e.g. effective
// per-layer multipliers) in the same INI format.
std::string render_experiment_config(
    const ExperimentConfig& cfg,
    const std::vector<std::pair<std::string, std::string>>& resolved_extras =
        {});

std::vector<InceptionSpec> parse_inception_specs(const std::string& text);

TrainingConfig to_training_config(const ExperimentConfig& cfg);

// Builds the configured architecture for the given input geometry.
NetworkGraph<float> build_architecture(const ExperimentConfig& cfg,
                                       Shape4 input, std::size_t num_classes,
                                       std::uint64_t seed);

// Applies SCNN_OUTPUT_ROOT to relative output directories.
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

}  // namespace scnn
