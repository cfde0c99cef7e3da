#include "scnn/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "scnn/architectures.hpp"

namespace scnn {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::from_scratch: return "from_scratch";
    case Modality::fine_tuning: return "fine_tuning";
    case Modality::feature_vector: return "feature_vector";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "from_scratch") return Modality::from_scratch;
  if (s == "fine_tuning") return Modality::fine_tuning;
  if (s == "feature_vector") return Modality::feature_vector;
  throw Error(ErrorCode::bad_config, "unknown modality '" + s + "'");
}

TrainingConfig configure_modality(const NetworkGraph<float>& net, Modality m,
                                  double base_lr) {
  TrainingConfig cfg;
  cfg.modality = m;
  cfg.base_lr = base_lr;
  std::vector<std::string> param_layers;
  for (const Node<float>& n : net.nodes())
    if (!n.layer->clone()->parameters().empty()) param_layers.push_back(n.name);
  if (param_layers.empty()) return cfg;
  const std::string& first = param_layers.front();
  const std::string head = net.node(net.main_head()).name;
  switch (m) {
    case Modality::from_scratch:
      for (const auto& name : param_layers) cfg.lr_multipliers[name] = 1.0;
      break;
    case Modality::fine_tuning:
      for (const auto& name : param_layers) cfg.lr_multipliers[name] = 1.0;
      cfg.lr_multipliers[first] = 0.1;
      break;
    case Modality::feature_vector:
      for (const auto& name : param_layers) {
        bool is_head = name == head;
        for (auto& [id, w] : net.aux_heads())
          if (net.node(id).name == name) is_head = true;
        if (is_head) {
          cfg.lr_multipliers[name] = 1.0;
        } else {
          cfg.lr_multipliers[name] = 0.0;
          cfg.frozen.insert(name);
        }
      }
      break;
  }
  return cfg;
}

void sgd_step(NetworkGraph<float>& net, const GradientSet<float>& grads,
              Velocity& velocity, const TrainingConfig& config, double lr) {
  for (std::size_t id = 0; id < net.node_count(); ++id) {
    Node<float>& n = net.node(static_cast<int>(id));
    if (config.frozen.count(n.name)) continue;
    float mult = static_cast<float>(config.multiplier(n.name));
    for (ParamRef<float> p : n.layer->parameters()) {
      std::string key = n.name + "." + p.field;
      auto git = grads.find(key);
      if (git == grads.end()) continue;
      auto [vit, inserted] =
          velocity.try_emplace(key, Tensor<float>(p.value->shape()));
      Tensor<float>& v = vit->second;
      const Tensor<float>& g = git->second;
      float step = static_cast<float>(lr) * mult;
      float mom = static_cast<float>(config.momentum);
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = mom * v[i] - step * g[i];
        (*p.value)[i] += v[i];
      }
    }
  }
}

std::size_t effective_input_side(const LabeledDataset& ds,
                                 const TrainingConfig& config) {
  if (ds.samples.empty())
    throw Error(ErrorCode::bad_data, "empty dataset");
  std::size_t side = ds.samples[0].image.shape4().height;
  if (!config.augment) return side;
  auto cropped = static_cast<std::size_t>(
      std::lround(config.crop_ratio * static_cast<double>(side)));
  return std::max<std::size_t>(1, std::min(cropped, side));
}

namespace {

// Assembles a preprocessed batch tensor plus labels for the given sample
// indices. Augmentation RNG is a pure function of (seed, sample, iteration).
std::pair<Tensor<float>, std::vector<int>> make_batch(
    const LabeledDataset& ds, const std::vector<std::size_t>& picks,
    const TrainingConfig& config, std::size_t iteration, std::size_t side) {
  std::size_t channels = ds.samples[0].image.shape4().channels;
  Tensor<float> batch({picks.size(), channels, side, side});
  std::vector<int> labels(picks.size());
  std::size_t sample_elems = channels * side * side;
  for (std::size_t b = 0; b < picks.size(); ++b) {
    const Sample& s = ds.samples[picks[b]];
    Tensor<float> img = s.image;
    if (config.augment) {
      Prng rng(config.seed, derive_stream(0xa06u, picks[b], iteration));
      img = augment(img, rng, config.crop_ratio, config.allow_vflip);
    }
    if (img.shape4().height != side || img.shape4().width != side)
      img = center_crop(img, side);
    img = preprocess(img, ds.channel_means);
    std::copy(img.data(), img.data() + sample_elems,
              batch.data() + b * sample_elems);
    labels[b] = s.label;
  }
  return {std::move(batch), std::move(labels)};
}

double train_accuracy_probe(const NetworkGraph<float>& net,
                            const LabeledDataset& ds,
                            const TrainingConfig& config, std::size_t side) {
  std::size_t correct = 0;
  std::size_t chunk = 64;
  TrainingConfig eval_cfg = config;
  eval_cfg.augment = false;
  for (std::size_t start = 0; start < ds.samples.size(); start += chunk) {
    std::vector<std::size_t> picks;
    for (std::size_t i = start;
         i < std::min(ds.samples.size(), start + chunk); ++i)
      picks.push_back(i);
    auto [batch, labels] = make_batch(ds, picks, eval_cfg, 0, side);
    ForwardResult<float> fr = forward(net, batch, Mode::eval);
    const Tensor<float>& logits = fr.head_logits[0];
    std::size_t classes = logits.shape()[1];
    for (std::size_t b = 0; b < picks.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits[b * classes + c] > logits[b * classes + best]) best = c;
      if (static_cast<int>(best) == labels[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
}

}  // namespace

TrainRecord train(NetworkGraph<float>& net, const LabeledDataset& ds,
                  const TrainingConfig& config) {
  if (ds.samples.empty())
    throw Error(ErrorCode::bad_data, "train: dataset is empty");
  for (const Sample& s : ds.samples)
    if (s.label < 0 ||
        static_cast<std::size_t>(s.label) >= ds.num_classes())
      throw Error(ErrorCode::label_out_of_range,
                  "train: label out of range for sample " + s.id);
  if (config.iterations == 0 || config.batch_size == 0)
    throw Error(ErrorCode::bad_config, "train: iterations and batch_size must be positive");

  std::size_t side = effective_input_side(ds, config);
  TrainRecord record;
  record.losses.reserve(config.iterations);
  Velocity velocity;

  std::vector<std::size_t> order(ds.samples.size());
  std::size_t cursor = order.size();  // forces a shuffle before first batch
  std::size_t epoch = 0;
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t decay_from = static_cast<std::size_t>(
      std::ceil(config.decay_at * static_cast<double>(config.iterations)));
  auto t0 = std::chrono::steady_clock::now();

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::size_t> picks;
    picks.reserve(config.batch_size);
    while (picks.size() < config.batch_size) {
      if (cursor >= order.size()) {
        Prng rng(config.seed, derive_stream(0x0d3u, epoch++));
        for (std::size_t i = order.size() - 1; i > 0; --i)
          std::swap(order[i], order[rng.next_below(i + 1)]);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }

    auto [batch, labels] = make_batch(ds, picks, config, it, side);
    double lr = config.base_lr * (it >= decay_from ? config.decay_factor : 1.0);
    float loss = 0;
    GradientSet<float> grads =
        loss_gradients(net, batch, labels, Mode::train, config.seed, it,
                       config.frozen, &loss);
    if (!std::isfinite(loss))
      throw Error(ErrorCode::nonfinite_loss,
                  "train: nonfinite loss at iteration " + std::to_string(it));
    sgd_step(net, grads, velocity, config, lr);
    record.losses.push_back(loss);
    record.lrs.push_back(lr);

    if ((it + 1) % 100 == 0) {
      auto t1 = std::chrono::steady_clock::now();
      record.wall_ms_per_100.push_back(
          std::chrono::duration<double, std::milli>(t1 - t0).count());
      t0 = t1;
    }
    if (config.eval_every && (it + 1) % config.eval_every == 0)
      record.eval_points.push_back(
          {it + 1, train_accuracy_probe(net, ds, config, side)});
  }
  return record;
}

AdaptResult pretrain_then_adapt(NetworkGraph<float> net,
                                const LabeledDataset& source,
                                const LabeledDataset& target,
                                Modality modality,
                                const TrainingConfig& source_config,
                                const TrainingConfig& target_config) {
  if (modality == Modality::from_scratch)
    throw Error(ErrorCode::bad_config,
                "pretrain_then_adapt: modality must be fine_tuning or "
                "feature_vector");
  AdaptResult r;
  r.source_record = train(net, source, source_config);
  r.pretrained = net;

  NetworkGraph<float> adapted =
      replace_head(net, target.num_classes(), target_config.seed);
  TrainingConfig cfg = target_config;
  TrainingConfig protocol =
      configure_modality(adapted, modality, target_config.base_lr);
  cfg.modality = modality;
  cfg.lr_multipliers = protocol.lr_multipliers;
  cfg.frozen = protocol.frozen;
  r.target_record = train(adapted, target, cfg);
  r.net = std::move(adapted);
  return r;
}

void write_record_csv(const std::filesystem::path& path,
                      const TrainRecord& record) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  f << "iteration,loss,lr,accuracy\n";
  std::size_t eval_idx = 0;
  for (std::size_t i = 0; i < record.losses.size(); ++i) {
    f << (i + 1) << "," << record.losses[i] << "," << record.lrs[i] << ",";
    if (eval_idx < record.eval_points.size() &&
        record.eval_points[eval_idx].iteration == i + 1)
      f << record.eval_points[eval_idx++].train_accuracy;
    f << "\n";
  }
}

}  // namespace scnn
