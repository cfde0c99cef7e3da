#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "scnn/autodiff.hpp"
#include "scnn/graph.hpp"
#include "scnn/layers.hpp"

namespace scnn {

// Branch channel counts of one inception module. The 1x1 reductions sit in
// front of the 3x3 and 5x5 convolutions; the four branch outputs are
// concatenated along channels.
struct InceptionSpec {
  std::size_t b1x1 = 8;
  std::size_t reduce3 = 4;
  std::size_t b3x3 = 8;
  std::size_t reduce5 = 2;
  std::size_t b5x5 = 4;
  std::size_t pool_proj = 4;

  std::size_t output_channels() const {
    return b1x1 + b3x3 + b5x5 + pool_proj;
  }
};

namespace detail {

// Uniform in +-sqrt(6/(fan_in+fan_out)); biases/thresholds stay 0.
template <typename T>
void glorot_init(Tensor<T>& weights, std::size_t fan_in, std::size_t fan_out,
                 std::uint64_t seed, std::uint64_t stream) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Prng rng(seed, stream);
  for (std::size_t i = 0; i < weights.size(); ++i)
    weights[i] = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
std::shared_ptr<ConvLayer<T>> make_conv(std::size_t filters,
                                        std::size_t in_channels, std::size_t k,
                                        std::size_t stride, std::size_t pad,
                                        std::uint64_t seed,
                                        std::uint64_t stream) {
  auto conv = std::make_shared<ConvLayer<T>>(filters, in_channels, k, k,
                                             stride, pad);
  glorot_init(conv->weights(), in_channels * k * k, filters * k * k, seed,
              stream);
  return conv;
}

template <typename T>
std::shared_ptr<DenseLayer<T>> make_dense(std::size_t out_units,
                                          std::size_t in_units, Activation act,
                                          std::uint64_t seed,
                                          std::uint64_t stream) {
  auto fc = std::make_shared<DenseLayer<T>>(out_units, in_units, act);
  glorot_init(fc->weights(), in_units, out_units, seed, stream);
  return fc;
}

inline std::size_t scaled_width(std::size_t base, double width_scale) {
  auto w = static_cast<std::size_t>(std::lround(base * width_scale));
  return w == 0 ? 1 : w;
}

}  // namespace detail

// Five conv layers, each immediately followed by a max pool, then three
// fully-connected layers. All convs are 3x3 stride 1 pad 1 with ReLU; LRN
// follows the first two pools (placement is an assumption, see docs).
// Dropout 0.5 follows the first two FC layers.
template <typename T>
NetworkGraph<T> build_mini_caffenet(Shape4 input, std::size_t num_classes,
                                    double width_scale, std::uint64_t seed = 1,
                                    std::size_t fc1_units = 256,
                                    std::size_t fc2_units = 128) {
  if (width_scale <= 0)
    throw Error(ErrorCode::bad_config, "mini_caffenet: width_scale must be > 0");
  static const std::size_t kBaseChannels[5] = {16, 32, 48, 48, 32};
  NetworkGraph<T> net({input.batch, input.channels, input.height, input.width});
  std::size_t h = input.height, w = input.width;
  std::size_t channels = input.channels;
  int prev = kGraphInput;
  std::uint64_t stream = 0;
  for (int stage = 1; stage <= 5; ++stage) {
    std::size_t filters =
        detail::scaled_width(kBaseChannels[stage - 1], width_scale);
    std::string tag = std::to_string(stage);
    prev = net.add("conv" + tag,
                   detail::make_conv<T>(filters, channels, 3, 1, 1, seed,
                                        ++stream),
                   {prev});
    prev = net.add("relu" + tag, std::make_shared<ReluLayer<T>>(), {prev});
    if (h < 2 || w < 2)
      throw Error(ErrorCode::spatial_underflow,
                  "mini_caffenet: pool" + tag + " input is " +
                      std::to_string(h) + "x" + std::to_string(w));
    prev = net.add("pool" + tag,
                   std::make_shared<PoolLayer<T>>(PoolKind::max, 2, 2), {prev});
    h = (h - 2) / 2 + 1;
    w = (w - 2) / 2 + 1;
    if (stage <= 2)
      prev = net.add("norm" + tag,
                     std::make_shared<LrnLayer<T>>(5, T(1e-4), T(0.75), T(1)),
                     {prev});
    channels = filters;
  }
  prev = net.add("flatten", std::make_shared<FlattenLayer<T>>(), {prev});
  std::size_t features = channels * h * w;
  prev = net.add("fc1",
                 detail::make_dense<T>(fc1_units, features, Activation::relu,
                                       seed, ++stream),
                 {prev});
  prev = net.add("drop1", std::make_shared<DropoutLayer<T>>(T(0.5)), {prev});
  prev = net.add("fc2",
                 detail::make_dense<T>(fc2_units, fc1_units, Activation::relu,
                                       seed, ++stream),
                 {prev});
  prev = net.add("drop2", std::make_shared<DropoutLayer<T>>(T(0.5)), {prev});
  prev = net.add("fc3",
                 detail::make_dense<T>(num_classes, fc2_units,
                                       Activation::identity, seed, ++stream),
                 {prev});
  net.set_main_head(prev);
  return net;
}

// Conv stem, a chain of inception modules with interleaved 2x2 max pools, a
// global average pool and one FC head. With use_aux, one auxiliary
// classifier (avg-pool -> 1x1 conv -> FC) hangs off the middle module with
// loss weight 0.3.
template <typename T>
NetworkGraph<T> build_mini_googlenet(Shape4 input, std::size_t num_classes,
                                     const std::vector<InceptionSpec>& specs,
                                     bool use_aux, std::uint64_t seed = 1,
                                     std::size_t stem_channels = 16) {
  if (specs.size() < 2)
    throw Error(ErrorCode::bad_config,
                "mini_googlenet: need at least 2 inception specs");
  NetworkGraph<T> net({input.batch, input.channels, input.height, input.width});
  std::uint64_t stream = 100;
  std::size_t h = input.height, w = input.width;

  int prev = net.add("stem_conv",
                     detail::make_conv<T>(stem_channels, input.channels, 3, 1,
                                          1, seed, ++stream),
                     {kGraphInput});
  prev = net.add("stem_relu", std::make_shared<ReluLayer<T>>(), {prev});
  if (h < 2 || w < 2)
    throw Error(ErrorCode::spatial_underflow, "mini_googlenet: stem pool");
  prev = net.add("stem_pool",
                 std::make_shared<PoolLayer<T>>(PoolKind::max, 2, 2), {prev});
  h = (h - 2) / 2 + 1;
  w = (w - 2) / 2 + 1;

  std::size_t channels = stem_channels;
  std::size_t aux_after = (specs.size() - 1) / 2;  // middle module
  int aux_source = -1;
  std::size_t aux_source_channels = 0, aux_h = 0, aux_w = 0;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    const InceptionSpec& sp = specs[m];
    std::string tag = "inc" + std::to_string(m + 1);
    auto conv_node = [&](const std::string& name, std::size_t filters,
                         std::size_t in_ch, std::size_t k, std::size_t pad,
                         int from) {
      int c = net.add(name,
                      detail::make_conv<T>(filters, in_ch, k, 1, pad, seed,
                                           ++stream),
                      {from});
      return net.add(name + "_relu", std::make_shared<ReluLayer<T>>(), {c});
    };
    int b1 = conv_node(tag + "_1x1", sp.b1x1, channels, 1, 0, prev);
    int r3 = conv_node(tag + "_reduce3", sp.reduce3, channels, 1, 0, prev);
    int b3 = conv_node(tag + "_3x3", sp.b3x3, sp.reduce3, 3, 1, r3);
    int r5 = conv_node(tag + "_reduce5", sp.reduce5, channels, 1, 0, prev);
    int b5 = conv_node(tag + "_5x5", sp.b5x5, sp.reduce5, 5, 2, r5);
    int bp = net.add(tag + "_pool",
                     std::make_shared<PoolLayer<T>>(PoolKind::max, 3, 1, 1),
                     {prev});
    int pp = conv_node(tag + "_proj", sp.pool_proj, channels, 1, 0, bp);
    prev = net.add(tag + "_concat", std::make_shared<ConcatLayer<T>>(),
                   {b1, b3, b5, pp});
    channels = sp.output_channels();
    if (use_aux && m == aux_after) {
      aux_source = prev;
      aux_source_channels = channels;
      aux_h = h;
      aux_w = w;
    }
    if (m + 1 < specs.size()) {
      if (h < 2 || w < 2)
        throw Error(ErrorCode::spatial_underflow,
                    "mini_googlenet: pool after " + tag);
      prev = net.add(tag + "_down",
                     std::make_shared<PoolLayer<T>>(PoolKind::max, 2, 2),
                     {prev});
      h = (h - 2) / 2 + 1;
      w = (w - 2) / 2 + 1;
    }
  }

  prev = net.add("global_pool",
                 std::make_shared<PoolLayer<T>>(PoolKind::avg, std::min(h, w),
                                                1, 0),
                 {prev});
  prev = net.add("head_flatten", std::make_shared<FlattenLayer<T>>(), {prev});
  prev = net.add("fc_head",
                 detail::make_dense<T>(num_classes, channels,
                                       Activation::identity, seed, ++stream),
                 {prev});
  net.set_main_head(prev);

  if (use_aux) {
    std::size_t pool_win = std::min<std::size_t>(2, std::min(aux_h, aux_w));
    int a = net.add("aux_pool",
                    std::make_shared<PoolLayer<T>>(PoolKind::avg, pool_win,
                                                   pool_win),
                    {aux_source});
    std::size_t ah = (aux_h - pool_win) / pool_win + 1;
    std::size_t aw = (aux_w - pool_win) / pool_win + 1;
    a = net.add("aux_conv",
                detail::make_conv<T>(16, aux_source_channels, 1, 1, 0, seed,
                                     ++stream),
                {a});
    a = net.add("aux_relu", std::make_shared<ReluLayer<T>>(), {a});
    a = net.add("aux_flatten", std::make_shared<FlattenLayer<T>>(), {a});
    a = net.add("aux_fc",
                detail::make_dense<T>(num_classes, 16 * ah * aw,
                                      Activation::identity, seed, ++stream),
                {a});
    net.add_aux_head(a, 0.3);
  }
  return net;
}

// Replaces every classification head with a freshly initialized FC sized to
// the new class count. All other parameters are bit-identical to the input.
template <typename T>
NetworkGraph<T> replace_head(const NetworkGraph<T>& net,
                             std::size_t new_num_classes, std::uint64_t seed) {
  NetworkGraph<T> out = net;
  std::vector<int> heads = out.heads();
  for (std::size_t h = 0; h < heads.size(); ++h) {
    Node<T>& node = out.node(heads[h]);
    auto* dense = dynamic_cast<DenseLayer<T>*>(node.layer.get());
    if (!dense)
      throw Error(ErrorCode::head_not_dense,
                  "replace_head: head '" + node.name +
                      "' is not a fully-connected layer");
    node.layer = detail::make_dense<T>(new_num_classes, dense->in_units(),
                                       dense->activation(), seed,
                                       derive_stream(0x6ead5u, h));
  }
  return out;
}

// Activation feeding the main head's final FC, flattened per sample; the
// "feature vector" descriptor used by the feature_vector modality. Runs in
// eval mode.
template <typename T>
Tensor<T> penultimate_features(const NetworkGraph<T>& net,
                               const Tensor<T>& x) {
  ForwardResult<T> fr = forward(net, x, Mode::eval);
  const Node<T>& head = net.node(net.main_head());
  const Tensor<T>& feat = fr.tape.output_of(head.inputs.at(0));
  std::size_t batch = feat.shape()[0];
  return feat.reshape({batch, batch ? feat.size() / batch : 0});
}

}  // namespace scnn
