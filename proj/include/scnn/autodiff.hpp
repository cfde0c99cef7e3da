#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scnn/graph.hpp"
#include "scnn/layers.hpp"

namespace scnn {

// Gradients keyed by layer-qualified parameter name ("node.field").
template <typename T>
using GradientSet = std::map<std::string, Tensor<T>>;

// Records one forward pass: every node's cache (including its output), so
// backward can replay the graph in reverse. One tape per forward call; tapes
// are never shared between threads.
template <typename T>
struct Tape {
  const NetworkGraph<T>* net = nullptr;
  Tensor<T> input;
  std::vector<NodeCache<T>> caches;

  const Tensor<T>& output_of(int id) const {
    return id == kGraphInput ? input : caches.at(id).output;
  }
};

template <typename T>
struct ForwardResult {
  std::vector<Tensor<T>> head_logits;  // main head first, then auxiliaries
  Tape<T> tape;
};

template <typename T>
ForwardResult<T> forward(const NetworkGraph<T>& net, const Tensor<T>& input,
                         Mode mode, std::uint64_t seed = 0,
                         std::uint64_t iteration = 0) {
  if (!net.input_shape().empty()) {
    auto expect = net.input_shape();
    auto got = input.shape();
    // batch extent is free; remaining axes must match the declared shape
    bool ok = got.size() == expect.size();
    for (std::size_t a = 1; ok && a < got.size(); ++a)
      ok = got[a] == expect[a];
    if (!ok)
      throw Error(ErrorCode::shape_mismatch,
                  "forward: input shape " + input.shape_str() +
                      " does not match network input");
  }
  ForwardResult<T> r;
  r.tape.net = &net;
  r.tape.input = input;
  r.tape.caches.resize(net.node_count());
  for (std::size_t id = 0; id < net.node_count(); ++id) {
    const Node<T>& n = net.node(static_cast<int>(id));
    Inputs<T> ins;
    ins.reserve(n.inputs.size());
    for (int in : n.inputs) ins.push_back(&r.tape.output_of(in));
    LayerCtx ctx{mode, seed, iteration, static_cast<int>(id)};
    try {
      r.tape.caches[id].output = n.layer->forward(ins, ctx, r.tape.caches[id]);
    } catch (const Error& e) {
      throw Error(e.code(), "at node '" + n.name + "': " + e.what());
    }
  }
  for (int h : net.heads()) r.head_logits.push_back(r.tape.output_of(h));
  return r;
}

// Reverse pass. One upstream gradient per head (main first). Frozen layers
// contribute no parameter gradients but still propagate input gradients.
template <typename T>
GradientSet<T> backward(const Tape<T>& tape,
                        const std::vector<Tensor<T>>& loss_grads,
                        const std::set<std::string>& frozen = {}) {
  if (!tape.net || tape.caches.size() != tape.net->node_count())
    throw Error(ErrorCode::missing_tape, "backward: no forward tape");
  const NetworkGraph<T>& net = *tape.net;
  std::vector<int> heads = net.heads();
  if (loss_grads.size() != heads.size())
    throw Error(ErrorCode::shape_mismatch,
                "backward: expected one upstream gradient per head");

  std::vector<Tensor<T>> node_grads(net.node_count());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    Tensor<T>& g = node_grads[heads[h]];
    if (g.empty())
      g = loss_grads[h];
    else
      g += loss_grads[h];
  }

  GradientSet<T> grads;
  for (int id = static_cast<int>(net.node_count()) - 1; id >= 0; --id) {
    if (node_grads[id].empty()) continue;
    const Node<T>& n = net.node(id);
    Inputs<T> ins;
    for (int in : n.inputs) ins.push_back(&tape.output_of(in));
    bool is_frozen = frozen.count(n.name) > 0;
    ParamGrads<T> pg;
    std::vector<Tensor<T>> input_grads = n.layer->backward(
        ins, tape.caches[id], node_grads[id], is_frozen ? nullptr : &pg);
    for (auto& [field, g] : pg) grads[n.name + "." + field] = std::move(g);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      int in = n.inputs[k];
      if (in == kGraphInput) continue;
      if (node_grads[in].empty())
        node_grads[in] = std::move(input_grads[k]);
      else
        node_grads[in] += input_grads[k];
    }
  }
  return grads;
}

// Scalar training loss: main-head cross-entropy plus weighted auxiliary
// cross-entropies.
template <typename T>
T graph_loss(const std::vector<Tensor<T>>& head_logits,
             const std::vector<int>& labels, const NetworkGraph<T>& net) {
  T loss = softmax_xent(head_logits[0], labels).mean_loss;
  for (std::size_t h = 0; h < net.aux_heads().size(); ++h)
    loss += static_cast<T>(net.aux_heads()[h].second) *
            softmax_xent(head_logits[h + 1], labels).mean_loss;
  return loss;
}

// Analytic gradients of graph_loss for every unfrozen parameter.
template <typename T>
GradientSet<T> loss_gradients(const NetworkGraph<T>& net,
                              const Tensor<T>& input,
                              const std::vector<int>& labels, Mode mode,
                              std::uint64_t seed, std::uint64_t iteration,
                              const std::set<std::string>& frozen, T* loss_out,
                              Tape<T>* tape_out = nullptr) {
  ForwardResult<T> fr = forward(net, input, mode, seed, iteration);
  std::vector<Tensor<T>> loss_grads;
  T loss = T(0);
  {
    auto sm = softmax_xent(fr.head_logits[0], labels);
    loss += sm.mean_loss;
    loss_grads.push_back(std::move(sm.grad_logits));
  }
  for (std::size_t h = 0; h < net.aux_heads().size(); ++h) {
    T w = static_cast<T>(net.aux_heads()[h].second);
    auto sm = softmax_xent(fr.head_logits[h + 1], labels);
    loss += w * sm.mean_loss;
    sm.grad_logits.scale(w);
    loss_grads.push_back(std::move(sm.grad_logits));
  }
  if (loss_out) *loss_out = loss;
  GradientSet<T> g = backward(fr.tape, loss_grads, frozen);
  if (tape_out) *tape_out = std::move(fr.tape);
  return g;
}

// Shifts conv biases / dense thresholds so no pre-ReLU activation sits
// within `margin` of 0, keeping finite differences off the kink. Mutates the
// net; call before check_gradients.
template <typename T>
void avoid_relu_kinks(NetworkGraph<T>& net, const Tensor<T>& input,
                      T margin = T(1e-3), int max_rounds = 50) {
  for (int round = 0; round < max_rounds; ++round) {
    ForwardResult<T> fr = forward(net, input, Mode::eval);
    bool clean = true;
    for (std::size_t id = 0; id < net.node_count(); ++id) {
      Node<T>& n = net.node(static_cast<int>(id));
      // pre-activations at risk: inputs of relu nodes fed by conv, and the
      // pre-phi sums inside relu-activated dense layers
      if (n.layer->kind() == "relu") {
        int producer = n.inputs[0];
        if (producer == kGraphInput) continue;
        Node<T>& pn = net.node(producer);
        auto* conv = dynamic_cast<ConvLayer<T>*>(pn.layer.get());
        if (!conv) continue;
        const Tensor<T>& pre = fr.tape.output_of(producer);
        Shape4 s = pre.shape4();
        std::size_t plane = s.height * s.width;
        for (std::size_t f = 0; f < s.channels; ++f) {
          bool hit = false;
          for (std::size_t b = 0; b < s.batch && !hit; ++b)
            for (std::size_t p = 0; p < plane; ++p)
              if (std::abs(pre.data()[(b * s.channels + f) * plane + p]) <
                  margin) {
                hit = true;
                break;
              }
          if (hit) {
            conv->biases()[f] += T(3) * margin;
            clean = false;
          }
        }
      } else if (auto* dense = dynamic_cast<DenseLayer<T>*>(n.layer.get());
                 dense && dense->activation() == Activation::relu) {
        // y == 0 only when pre <= 0; a pre-activation in (-margin, margin)
        // shows up as an output in [0, margin)
        const Tensor<T>& y = fr.tape.output_of(static_cast<int>(id));
        std::size_t batch = y.shape()[0];
        std::size_t units = y.shape()[1];
        // recompute pre-activation from output is lossy below 0; nudge any
        // unit whose output lies in [0, margin)
        for (std::size_t j = 0; j < units; ++j) {
          bool hit = false;
          for (std::size_t b = 0; b < batch; ++b) {
            T v = y.data()[b * units + j];
            if (v >= T(0) && v < margin) {
              hit = true;
              break;
            }
          }
          if (hit) {
            dense->thresholds()[j] -= T(3) * margin;  // raises pre-activation
            clean = false;
          }
        }
      }
    }
    if (clean) return;
  }
}

// Central finite differences of graph_loss vs analytic backward(); returns
// the max over parameters of |analytic - numeric| / max(|a|, |n|, 1e-12).
// Intended for 64-bit nets in eval mode (dropout disabled).
template <typename T>
T check_gradients(NetworkGraph<T>& net, const Tensor<T>& input,
                  const std::vector<int>& labels, T epsilon = T(1e-5)) {
  T loss;
  GradientSet<T> analytic =
      loss_gradients(net, input, labels, Mode::eval, 0, 0, {}, &loss);
  T max_rel = T(0);
  for (auto& [name, param] : net.parameters()) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < param->size(); ++i) {
      T saved = (*param)[i];
      (*param)[i] = saved + epsilon;
      T lp = graph_loss(forward(net, input, Mode::eval).head_logits, labels,
                        net);
      (*param)[i] = saved - epsilon;
      T lm = graph_loss(forward(net, input, Mode::eval).head_logits, labels,
                        net);
      (*param)[i] = saved;
      T numeric = (lp - lm) / (T(2) * epsilon);
      T a = it == analytic.end() ? T(0) : it->second[i];
      T rel = std::abs(a - numeric) /
              std::max({std::abs(a), std::abs(numeric), T(1e-12)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace scnn
