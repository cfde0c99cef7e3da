#include "scnn/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "scnn/autodiff.hpp"

namespace scnn {

MetricsReport evaluate(const NetworkGraph<float>& net, const LabeledDataset& ds,
                       const std::vector<std::size_t>& sample_indices,
                       const std::vector<float>& channel_means) {
  std::size_t classes = ds.num_classes();
  {
    const Node<float>& head = net.node(net.main_head());
    auto hp = head.layer->hyperparams();
    for (auto& [k, v] : hp)
      if (k == "out_units" && std::stoul(v) != classes)
        throw Error(ErrorCode::shape_mismatch,
                    "evaluate: net has " + v + " outputs, dataset has " +
                        std::to_string(classes) + " classes");
  }
  MetricsReport report;
  report.confusion.assign(classes, std::vector<std::size_t>(classes, 0));

  std::size_t net_side =
      net.input_shape().size() == 4 ? net.input_shape()[2] : 0;
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < sample_indices.size(); start += chunk) {
    std::size_t stop = std::min(sample_indices.size(), start + chunk);
    std::size_t b = stop - start;
    // assemble an eval batch: center crop to the net input, mean-subtract
    const Sample& first = ds.samples.at(sample_indices[start]);
    std::size_t side = net_side ? net_side : first.image.shape4().height;
    std::size_t channels = first.image.shape4().channels;
    Tensor<float> batch({b, channels, side, side});
    std::size_t elems = channels * side * side;
    for (std::size_t i = 0; i < b; ++i) {
      const Sample& s = ds.samples.at(sample_indices[start + i]);
      Tensor<float> img = s.image;
      if (img.shape4().height != side || img.shape4().width != side)
        img = center_crop(img, side);
      img = preprocess(img, channel_means);
      std::copy(img.data(), img.data() + elems, batch.data() + i * elems);
    }
    ForwardResult<float> fr = forward(net, batch, Mode::eval);
    const Tensor<float>& logits = fr.head_logits[0];
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits[i * classes + c] > logits[i * classes + best]) best = c;
      const Sample& s = ds.samples.at(sample_indices[start + i]);
      report.confusion[s.label][best] += 1;
      if (static_cast<int>(best) != s.label)
        report.errors.push_back({s.id, s.label, static_cast<int>(best)});
    }
  }

  std::size_t total = 0, correct = 0;
  report.per_class_accuracy.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < classes; ++p) row += report.confusion[c][p];
    total += row;
    correct += report.confusion[c][c];
    report.per_class_accuracy[c] =
        row ? static_cast<double>(report.confusion[c][c]) /
                  static_cast<double>(row)
            : 0.0;
  }
  report.overall_accuracy =
      total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return report;
}

CrossValResult cross_validate(
    const std::function<NetworkGraph<float>(std::uint64_t)>& make_net,
    const LabeledDataset& ds, int k, const TrainingConfig& config,
    std::vector<TrainRecord>* records) {
  FoldSplit folds = make_folds(ds, k, config.seed);
  CrossValResult result;
  for (int fold = 0; fold < k; ++fold) {
    std::vector<std::size_t> train_idx = fold_indices(ds, folds, fold, false);
    std::vector<std::size_t> test_idx = fold_indices(ds, folds, fold, true);
    LabeledDataset train_ds = subset(ds, train_idx);

    TrainingConfig fold_cfg = config;
    fold_cfg.seed = config.seed + static_cast<std::uint64_t>(fold);
    NetworkGraph<float> net = make_net(fold_cfg.seed);
    TrainRecord record = train(net, train_ds, fold_cfg);
    if (records) records->push_back(std::move(record));
    result.fold_reports.push_back(
        evaluate(net, ds, test_idx, train_ds.channel_means));
  }
  double mean = 0;
  for (const MetricsReport& r : result.fold_reports)
    mean += r.overall_accuracy;
  mean /= static_cast<double>(k);
  double var = 0;
  for (const MetricsReport& r : result.fold_reports)
    var += (r.overall_accuracy - mean) * (r.overall_accuracy - mean);
  result.mean_accuracy = mean;
  result.stddev_accuracy = std::sqrt(var / static_cast<double>(k));
  return result;
}

std::string render_summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "CNN" << std::setw(16) << "Design"
     << std::right << std::setw(12) << "Iterations" << std::setw(12)
     << "Accuracy" << "\n";
  os << std::string(56, '-') << "\n";
  for (const SummaryRow& r : rows) {
    os << std::left << std::setw(16) << r.architecture << std::setw(16)
       << r.modality << std::right << std::setw(12) << r.iterations
       << std::setw(11) << std::fixed << std::setprecision(2)
       << r.accuracy * 100.0 << "%\n";
  }
  return os.str();
}

std::string render_per_class_csv(const MetricsReport& report,
                                 const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "class,accuracy\n";
  for (std::size_t c = 0; c < report.per_class_accuracy.size(); ++c) {
    os << (c < class_names.size() ? class_names[c] : std::to_string(c)) << ","
       << std::fixed << std::setprecision(4) << report.per_class_accuracy[c]
       << "\n";
  }
  return os.str();
}

std::string render_error_listing(const MetricsReport& report,
                                 const std::vector<std::string>& class_names) {
  auto name = [&](int c) {
    return static_cast<std::size_t>(c) < class_names.size()
               ? class_names[c]
               : std::to_string(c);
  };
  std::ostringstream os;
  os << "id,true,predicted\n";
  for (const MetricsReport::Miss& m : report.errors)
    os << m.id << "," << name(m.true_class) << "," << name(m.predicted)
       << "\n";
  return os.str();
}

}  // namespace scnn
