#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scnn/layers.hpp"
#include "scnn/tensor.hpp"

namespace scnn {

// Graph-input sentinel for a node's input list.
inline constexpr int kGraphInput = -1;

template <typename T>
struct Node {
  std::string name;
  std::shared_ptr<Layer<T>> layer;
  std::vector<int> inputs;  // node ids, or kGraphInput
};

// Ordered DAG of named layer nodes. Nodes may only reference earlier nodes,
// so the stored order is always topological. Structure is immutable after
// construction; parameter tensors are mutated only by the training loop.
template <typename T>
class NetworkGraph {
 public:
  NetworkGraph() = default;

  explicit NetworkGraph(std::vector<std::size_t> input_shape)
      : input_shape_(std::move(input_shape)) {}

  NetworkGraph(const NetworkGraph& other)
      : input_shape_(other.input_shape_),
        main_head_(other.main_head_),
        aux_heads_(other.aux_heads_) {
    nodes_.reserve(other.nodes_.size());
    for (const Node<T>& n : other.nodes_)
      nodes_.push_back({n.name, n.layer->clone(), n.inputs});
  }
  NetworkGraph& operator=(const NetworkGraph& other) {
    if (this != &other) {
      NetworkGraph copy(other);
      *this = std::move(copy);
    }
    return *this;
  }
  NetworkGraph(NetworkGraph&&) = default;
  NetworkGraph& operator=(NetworkGraph&&) = default;

  int add(std::string name, std::shared_ptr<Layer<T>> layer,
          std::vector<int> inputs) {
    int id = static_cast<int>(nodes_.size());
    for (int in : inputs)
      if (in != kGraphInput && (in < 0 || in >= id))
        throw Error(ErrorCode::internal,
                    "graph: node '" + name + "' references invalid input");
    for (const Node<T>& n : nodes_)
      if (n.name == name)
        throw Error(ErrorCode::internal,
                    "graph: duplicate node name '" + name + "'");
    nodes_.push_back({std::move(name), std::move(layer), std::move(inputs)});
    return id;
  }

  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  std::size_t node_count() const { return nodes_.size(); }
  const Node<T>& node(int id) const { return nodes_.at(id); }
  Node<T>& node(int id) { return nodes_.at(id); }
  const std::vector<Node<T>>& nodes() const { return nodes_; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  void set_main_head(int id) { main_head_ = id; }
  int main_head() const { return main_head_; }

  void add_aux_head(int id, double loss_weight) {
    aux_heads_.push_back({id, loss_weight});
  }
  const std::vector<std::pair<int, double>>& aux_heads() const {
    return aux_heads_;
  }
  std::vector<std::pair<int, double>>& aux_heads() { return aux_heads_; }

  // Head node ids, main head first.
  std::vector<int> heads() const {
    std::vector<int> h{main_head_};
    for (auto& [id, w] : aux_heads_) h.push_back(id);
    return h;
  }

  // Layer-qualified parameter references in graph-topological order, field
  // order within a node.
  std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (Node<T>& n : nodes_)
      for (ParamRef<T> p : n.layer->parameters())
        out.push_back({n.name + "." + p.field, p.value});
    return out;
  }

 private:
  std::vector<std::size_t> input_shape_;
  std::vector<Node<T>> nodes_;
  int main_head_ = -1;
  std::vector<std::pair<int, double>> aux_heads_;
};

using GraphF = NetworkGraph<float>;
using GraphD = NetworkGraph<double>;

}  // namespace scnn
