#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rta/errors.hpp"

namespace rta {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(std::vector<int> shape);
  static Tensor scalar(double v);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) {
    return data[static_cast<std::size_t>(i) * cols() + j];
  }
  double at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * cols() + j];
  }
};

// Parameter-name -> gradient tensor. Parameters off the loss subgraph map
// to explicit zero tensors.
using GradientMap = std::map<std::string, Tensor>;

// Attributes for primitives that need more than their tensor inputs.
struct OpAttrs {
  std::vector<int> ints;      // token ids, targets, labels, reshape dims
  std::vector<double> reals;  // weights; (old, ref, adv) for the GRPO loss
  int heads = 0;
  double scale = 1.0;
  double eps = 0.0;
  double beta = 0.0;
};

// Define-by-run tape. Nodes are appended in topological order; a fresh tape
// is built per forward pass. Parameter leaves hold pointers to externally
// owned tensors, so registering a model costs nothing.
class Tape {
 public:
  // Leaf referencing external storage; the pointee must outlive the tape.
  int leaf(const Tensor* external, bool requires_grad);
  // Leaf owning its value (inputs, constants).
  int leaf(Tensor value, bool requires_grad = false);

  // Generic entry point; prim is one of the documented primitive ids.
  int apply(std::string_view prim, std::span<const int> inputs,
            const OpAttrs& attrs = {});

  // Typed builders (same semantics as apply with the matching id).
  int add(int a, int b);
  int mul(int a, int b);
  int matmul(int a, int b);
  int embedding_gather(int table, std::span<const int> ids);
  int transpose(int a);
  int reshape(int a, std::vector<int> shape);
  int concat(int a, int b);  // axis 0
  int causal_attention(int q, int k, int v, int heads);
  int layer_norm(int x, int gain, int bias);
  int gelu(int x);
  int softmax_cross_entropy(int logits, std::span<const int> targets);
  int sigmoid(int x);
  int log_(int x);
  int exp_(int x);
  int reduce_sum(int x);
  int reduce_mean(int x);
  int scalar_scale(int x, double s);
  // Internal extras used by the model and losses.
  int gather_rows(int x, std::span<const int> rows);
  int weighted_bce_logits(int z, std::span<const int> labels,
                          std::span<const double> weights);
  int grpo_token_loss(int logp, std::span<const double> logp_old,
                      std::span<const double> logp_ref,
                      std::span<const double> advantage, double eps,
                      double beta);

  const Tensor& val(int id) const;
  double scalar_val(int id) const;

  // Reverse-mode sweep from a scalar loss. params maps parameter name to
  // the leaf id registered for it; unreachable parameters get zeros.
  GradientMap backward(int loss, const std::map<std::string, int>& params);

  std::size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  enum class Prim : std::uint8_t {
    Leaf,
    Add,
    Mul,
    MatMul,
    EmbeddingGather,
    Transpose,
    Reshape,
    Concat,
    CausalAttention,
    LayerNorm,
    Gelu,
    SoftmaxCrossEntropy,
    Sigmoid,
    Log,
    Exp,
    ReduceSum,
    ReduceMean,
    ScalarScale,
    GatherRows,
    WeightedBceLogits,
    GrpoTokenLoss,
  };

  struct Node {
    Prim op = Prim::Leaf;
    std::vector<int> in;
    const Tensor* ext = nullptr;
    Tensor own;
    Tensor saved;  // activation cache needed by backward
    OpAttrs attrs;
    bool needs_grad = false;

    const Tensor& v() const { return ext ? *ext : own; }
  };

  int push(Node n);
  const Node& node(int id) const;
  void check_id(int id) const;
  void backward_node(int id, const Tensor& g, std::vector<Tensor>& grads);
  static void accumulate(Tensor& dst, const Tensor& src);

  std::vector<Node> nodes_;
};

// Builds a scalar loss from parameter leaves on a caller-provided tape.
using LossBuilder =
    std::function<int(Tape&, const std::map<std::string, int>&)>;

// Max over all parameter entries of the relative error between reverse-mode
// and central finite-difference gradients.
double grad_check(const LossBuilder& build,
                  std::map<std::string, Tensor>& params, double step);

}  // namespace rta
