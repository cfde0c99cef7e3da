#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scnn/data.hpp"
#include "scnn/graph.hpp"
#include "scnn/training.hpp"

namespace scnn {

struct MetricsReport {
  double overall_accuracy = 0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  struct Miss {
    std::string id;
    int true_class;
    int predicted;
  };
  std::vector<Miss> errors;
};

// Argmax-of-main-head evaluation over the given sample indices (ties break
// to the lowest class index). `channel_means` must come from the training
// folds. Images larger than the net's input are center-cropped.
MetricsReport evaluate(const NetworkGraph<float>& net, const LabeledDataset& ds,
                       const std::vector<std::size_t>& sample_indices,
                       const std::vector<float>& channel_means);

struct CrossValResult {
  std::vector<MetricsReport> fold_reports;
  double mean_accuracy = 0;
  double stddev_accuracy = 0;
};

// k-fold protocol: for fold i, train a fresh net (seeded seed+i) on all
// other folds and test on fold i. `make_net` receives the per-fold seed and
// returns the initial net (fresh init, or a freshly adapted pretrained net).
CrossValResult cross_validate(
    const std::function<NetworkGraph<float>(std::uint64_t)>& make_net,
    const LabeledDataset& ds, int k, const TrainingConfig& config,
    std::vector<TrainRecord>* records = nullptr);

struct SummaryRow {
  std::string architecture;
  std::string modality;
  std::size_t iterations;
  double accuracy;  // fraction in [0,1]
};

// Aligned plain-text accuracy table, one row per (architecture, modality).
std::string render_summary_table(const std::vector<SummaryRow>& rows);

// CSV "class,accuracy" rows, one per class.
std::string render_per_class_csv(const MetricsReport& report,
                                 const std::vector<std::string>& class_names);

// Misclassification listing, one "id,true,predicted" line per error.
std::string render_error_listing(const MetricsReport& report,
                                 const std::vector<std::string>& class_names);

}  // namespace scnn
