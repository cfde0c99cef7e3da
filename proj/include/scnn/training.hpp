#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scnn/autodiff.hpp"
#include "scnn/data.hpp"
#include "scnn/graph.hpp"

namespace scnn {

enum class Modality { from_scratch, fine_tuning, feature_vector };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct TrainingConfig {
  Modality modality = Modality::from_scratch;
  std::size_t iterations = 1000;
  double base_lr = 0.01;
  std::map<std::string, double> lr_multipliers;  // layer name -> multiplier
  std::set<std::string> frozen;                  // layer names
  double momentum = 0.9;
  std::size_t batch_size = 32;
  bool augment = false;
  double crop_ratio = 0.875;
  bool allow_vflip = false;
  std::uint64_t seed = 1;
  // single step decay: lr *= decay_factor once past decay_at * iterations
  double decay_factor = 0.1;
  double decay_at = 0.75;
  std::size_t eval_every = 0;  // 0 disables periodic train-accuracy probes

  double multiplier(const std::string& layer) const {
    auto it = lr_multipliers.find(layer);
    return it == lr_multipliers.end() ? 1.0 : it->second;
  }
};

struct TrainRecord {
  std::vector<double> losses;  // one entry per iteration
  std::vector<double> lrs;
  struct EvalPoint {
    std::size_t iteration;
    double train_accuracy;
  };
  std::vector<EvalPoint> eval_points;
  std::vector<double> wall_ms_per_100;
};

void write_record_csv(const std::filesystem::path& path,
                      const TrainRecord& record);

// Resolves the per-layer multipliers and freeze set for a modality:
// from_scratch trains everything uniformly; fine_tuning trains everything
// with the first layer at one tenth of the base rate; feature_vector trains
// only the final fully-connected layer.
TrainingConfig configure_modality(const NetworkGraph<float>& net, Modality m,
                                  double base_lr);

using Velocity = std::map<std::string, Tensor<float>>;

// One SGD+momentum update: v <- momentum*v - lr*multiplier*g; p <- p + v.
// Frozen parameters stay bit-identical.
void sgd_step(NetworkGraph<float>& net, const GradientSet<float>& grads,
              Velocity& velocity, const TrainingConfig& config, double lr);

// Runs `iterations` minibatch updates on the dataset. Batches are drawn by
// seeded shuffling with wraparound; per-sample augmentation RNG derives from
// (seed, sample index, iteration). Aborts with nonfinite-loss on divergence.
TrainRecord train(NetworkGraph<float>& net, const LabeledDataset& ds,
                  const TrainingConfig& config);

struct AdaptResult {
  NetworkGraph<float> net;         // adapted to the target task
  NetworkGraph<float> pretrained;  // source-task checkpoint
  TrainRecord source_record;
  TrainRecord target_record;
};

// Full transfer pipeline: train on source from scratch, swap the head for
// the target class count, resolve the modality protocol, train on target.
AdaptResult pretrain_then_adapt(NetworkGraph<float> net,
                                const LabeledDataset& source,
                                const LabeledDataset& target,
                                Modality modality,
                                const TrainingConfig& source_config,
                                const TrainingConfig& target_config);

// Side of the images the network actually sees under this config.
std::size_t effective_input_side(const LabeledDataset& ds,
                                 const TrainingConfig& config);

}  // namespace scnn
