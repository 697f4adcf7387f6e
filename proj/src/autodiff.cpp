#include "rta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rta/kernels.hpp"

namespace rta {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

void check_finite(const char* prim, const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw Error(std::string(prim) + ": non-finite value in forward result");
    }
  }
}

[[noreturn]] void shape_fail(const char* prim, const Tensor& a,
                             const Tensor& b) {
  throw ShapeError(std::string(prim) + ": shape mismatch " + shape_str(a) +
                   " vs " + shape_str(b));
}

double stable_softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  std::int64_t n = 1;
  for (int x : shape) n *= x;
  if (n != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor: shape/data length mismatch");
  }
}

Tensor Tensor::zeros(std::vector<int> shape) {
  std::int64_t n = 1;
  for (int x : shape) {
    if (x <= 0) throw ShapeError("tensor: non-positive dimension");
    n *= x;
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {1};
  t.data = {v};
  return t;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(int id) const {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)];
}

void Tape::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw Error("tape: node id " + std::to_string(id) + " not on tape");
  }
}

int Tape::leaf(const Tensor* external, bool requires_grad) {
  Node n;
  n.ext = external;
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

int Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.own = std::move(value);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

const Tensor& Tape::val(int id) const { return node(id).v(); }

double Tape::scalar_val(int id) const {
  const Tensor& t = val(id);
  if (t.size() != 1) throw ShapeError("scalar_val: tensor is not a scalar");
  return t.data[0];
}

void Tape::clear() { nodes_.clear(); }

int Tape::add(int a, int b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  Node n;
  n.op = Prim::Add;
  n.in = {a, b};
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  if (x.same_shape(y)) {
    n.own = x;
    for (std::int64_t i = 0; i < y.size(); ++i) n.own.data[i] += y.data[i];
  } else if (y.size() == 1) {
    n.own = x;
    for (double& v : n.own.data) v += y.data[0];
  } else if (x.shape.size() == 2 && y.shape.size() == 1 &&
             y.shape[0] == x.shape[1]) {
    // Row broadcast: [L,d] + [d].
    n.own = x;
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) n.own.at(i, j) += y.at(j);
  } else {
    shape_fail("add", x, y);
  }
  check_finite("add", n.own);
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  Node n;
  n.op = Prim::Mul;
  n.in = {a, b};
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  if (x.same_shape(y)) {
    n.own = x;
    for (std::int64_t i = 0; i < y.size(); ++i) n.own.data[i] *= y.data[i];
  } else if (y.size() == 1) {
    n.own = x;
    for (double& v : n.own.data) v *= y.data[0];
  } else if (x.size() == 1) {
    n.own = y;
    for (double& v : n.own.data) v *= x.data[0];
  } else {
    shape_fail("multiply", x, y);
  }
  check_finite("multiply", n.own);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.shape.size() != 2 || y.shape.size() != 2 || x.shape[1] != y.shape[0]) {
    shape_fail("matmul", x, y);
  }
  Node n;
  n.op = Prim::MatMul;
  n.in = {a, b};
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.own = Tensor::zeros({x.shape[0], y.shape[1]});
  kernels::matmul(x.data.data(), y.data.data(), n.own.data.data(), x.shape[0],
                  x.shape[1], y.shape[1]);
  check_finite("matmul", n.own);
  return push(std::move(n));
}

int Tape::embedding_gather(int table, std::span<const int> ids) {
  const Tensor& t = val(table);
  if (t.shape.size() != 2) {
    throw ShapeError("embedding-gather: table must be 2-D, got " +
                     shape_str(t));
  }
  const int v = t.shape[0];
  const int d = t.shape[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ShapeError("embedding-gather: id " + std::to_string(id) +
                       " out of range for table rows " + std::to_string(v));
    }
  }
  Node n;
  n.op = Prim::EmbeddingGather;
  n.in = {table};
  n.needs_grad = node(table).needs_grad;
  n.attrs.ints.assign(ids.begin(), ids.end());
  n.own = Tensor::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(t.data.begin() + static_cast<std::size_t>(ids[i]) * d, d,
                n.own.data.begin() + i * d);
  }
  return push(std::move(n));
}

int Tape::transpose(int a) {
  const Tensor& x = val(a);
  if (x.shape.size() != 2) {
    throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(x));
  }
  Node n;
  n.op = Prim::Transpose;
  n.in = {a};
  n.needs_grad = node(a).needs_grad;
  n.own = Tensor::zeros({x.shape[1], x.shape[0]});
  for (int i = 0; i < x.shape[0]; ++i)
    for (int j = 0; j < x.shape[1]; ++j) n.own.at(j, i) = x.at(i, j);
  return push(std::move(n));
}

int Tape::reshape(int a, std::vector<int> shape) {
  const Tensor& x = val(a);
  std::int64_t n64 = 1;
  for (int s : shape) n64 *= s;
  if (n64 != x.size()) {
    throw ShapeError("reshape: element count mismatch for " + shape_str(x));
  }
  Node n;
  n.op = Prim::Reshape;
  n.in = {a};
  n.needs_grad = node(a).needs_grad;
  n.own = x;
  n.own.shape = std::move(shape);
  return push(std::move(n));
}

int Tape::concat(int a, int b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  const bool ok_1d = x.shape.size() == 1 && y.shape.size() == 1;
  const bool ok_2d =
      x.shape.size() == 2 && y.shape.size() == 2 && x.shape[1] == y.shape[1];
  if (!ok_1d && !ok_2d) shape_fail("concat", x, y);
  Node n;
  n.op = Prim::Concat;
  n.in = {a, b};
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.own.shape = x.shape;
  n.own.shape[0] += y.shape[0];
  n.own.data = x.data;
  n.own.data.insert(n.own.data.end(), y.data.begin(), y.data.end());
  return push(std::move(n));
}

int Tape::causal_attention(int q, int k, int v, int heads) {
  const Tensor& Q = val(q);
  const Tensor& K = val(k);
  const Tensor& V = val(v);
  if (Q.shape.size() != 2 || !Q.same_shape(K) || !Q.same_shape(V)) {
    shape_fail("causal-masked-softmax-attention", Q, K);
  }
  const int L = Q.shape[0];
  const int d = Q.shape[1];
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError(
        "causal-masked-softmax-attention: head count " +
        std::to_string(heads) + " does not divide width " + std::to_string(d));
  }
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Node n;
  n.op = Prim::CausalAttention;
  n.in = {q, k, v};
  n.needs_grad =
      node(q).needs_grad || node(k).needs_grad || node(v).needs_grad;
  n.attrs.heads = heads;
  n.own = Tensor::zeros({L, d});
  n.saved = Tensor::zeros({heads, L, L});  // softmax probabilities

  std::vector<double> scores(static_cast<std::size_t>(L));
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    double* probs = n.saved.data.data() + static_cast<std::size_t>(h) * L * L;
    for (int i = 0; i < L; ++i) {
      double mx = -1e300;
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += Q.at(i, off + c) * K.at(j, off + c);
        s *= scale;
        scores[static_cast<std::size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (int j = 0; j <= i; ++j) {
        const double e = std::exp(scores[static_cast<std::size_t>(j)] - mx);
        probs[static_cast<std::size_t>(i) * L + j] = e;
        z += e;
      }
      for (int j = 0; j <= i; ++j) {
        const double p = probs[static_cast<std::size_t>(i) * L + j] / z;
        probs[static_cast<std::size_t>(i) * L + j] = p;
        for (int c = 0; c < dh; ++c) {
          n.own.at(i, off + c) += p * V.at(j, off + c);
        }
      }
    }
  }
  check_finite("causal-masked-softmax-attention", n.own);
  return push(std::move(n));
}

int Tape::layer_norm(int x, int gain, int bias) {
  const Tensor& X = val(x);
  const Tensor& G = val(gain);
  const Tensor& B = val(bias);
  if (X.shape.size() != 2 || G.shape.size() != 1 || !G.same_shape(B) ||
      G.shape[0] != X.shape[1]) {
    shape_fail("layer-normalize", X, G);
  }
  const int L = X.shape[0];
  const int d = X.shape[1];
  Node n;
  n.op = Prim::LayerNorm;
  n.in = {x, gain, bias};
  n.needs_grad =
      node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
  n.own = Tensor::zeros({L, d});
  n.saved = Tensor::zeros({L, 2});  // mean, rstd per row
  for (int i = 0; i < L; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += X.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = X.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    n.saved.at(i, 0) = mean;
    n.saved.at(i, 1) = rstd;
    for (int j = 0; j < d; ++j) {
      n.own.at(i, j) = (X.at(i, j) - mean) * rstd * G.at(j) + B.at(j);
    }
  }
  check_finite("layer-normalize", n.own);
  return push(std::move(n));
}

int Tape::gelu(int x) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::Gelu;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  n.own = X;
  for (double& v : n.own.data) {
    v = v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return push(std::move(n));
}

int Tape::softmax_cross_entropy(int logits, std::span<const int> targets) {
  const Tensor& X = val(logits);
  if (X.shape.size() != 2 ||
      static_cast<int>(targets.size()) != X.shape[0]) {
    throw ShapeError("softmax-cross-entropy: logits " + shape_str(X) +
                     " vs " + std::to_string(targets.size()) + " targets");
  }
  const int L = X.shape[0];
  const int V = X.shape[1];
  for (int t : targets) {
    if (t < 0 || t >= V) {
      throw ShapeError("softmax-cross-entropy: target " + std::to_string(t) +
                       " out of range");
    }
  }
  Node n;
  n.op = Prim::SoftmaxCrossEntropy;
  n.in = {logits};
  n.needs_grad = node(logits).needs_grad;
  n.attrs.ints.assign(targets.begin(), targets.end());
  n.own = Tensor::zeros({L});
  n.saved = Tensor::zeros({L, V});  // softmax probabilities
  for (int i = 0; i < L; ++i) {
    double mx = X.at(i, 0);
    for (int j = 1; j < V; ++j) mx = std::max(mx, X.at(i, j));
    double z = 0.0;
    for (int j = 0; j < V; ++j) {
      const double e = std::exp(X.at(i, j) - mx);
      n.saved.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < V; ++j) n.saved.at(i, j) /= z;
    // NLL via log-sum-exp, no division by tiny probabilities.
    n.own.at(i) = std::log(z) + mx - X.at(i, targets[i]);
  }
  check_finite("softmax-cross-entropy", n.own);
  return push(std::move(n));
}

int Tape::sigmoid(int x) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::Sigmoid;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  n.own = X;
  for (double& v : n.own.data) v = sigmoid_d(v);
  return push(std::move(n));
}

int Tape::log_(int x) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::Log;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  n.own = X;
  for (double& v : n.own.data) {
    if (v <= 0.0) throw Error("log: non-positive input");
    v = std::log(v);
  }
  return push(std::move(n));
}

int Tape::exp_(int x) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::Exp;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  n.own = X;
  for (double& v : n.own.data) v = std::exp(v);
  check_finite("exp", n.own);
  return push(std::move(n));
}

int Tape::reduce_sum(int x) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::ReduceSum;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  double s = 0.0;
  for (double v : X.data) s += v;
  n.own = Tensor::scalar(s);
  check_finite("reduce-sum", n.own);
  return push(std::move(n));
}

int Tape::reduce_mean(int x) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::ReduceMean;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  double s = 0.0;
  for (double v : X.data) s += v;
  n.own = Tensor::scalar(s / static_cast<double>(X.size()));
  check_finite("reduce-mean", n.own);
  return push(std::move(n));
}

int Tape::scalar_scale(int x, double s) {
  const Tensor& X = val(x);
  Node n;
  n.op = Prim::ScalarScale;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  n.attrs.scale = s;
  n.own = X;
  for (double& v : n.own.data) v *= s;
  check_finite("scalar-scale", n.own);
  return push(std::move(n));
}

int Tape::gather_rows(int x, std::span<const int> rows) {
  const Tensor& X = val(x);
  if (X.shape.size() != 2) {
    throw ShapeError("gather-rows: expected 2-D tensor, got " + shape_str(X));
  }
  for (int r : rows) {
    if (r < 0 || r >= X.shape[0]) {
      throw ShapeError("gather-rows: row " + std::to_string(r) +
                       " out of range");
    }
  }
  Node n;
  n.op = Prim::GatherRows;
  n.in = {x};
  n.needs_grad = node(x).needs_grad;
  n.attrs.ints.assign(rows.begin(), rows.end());
  const int d = X.shape[1];
  n.own = Tensor::zeros({static_cast<int>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(X.data.begin() + static_cast<std::size_t>(rows[i]) * d, d,
                n.own.data.begin() + i * d);
  }
  return push(std::move(n));
}

int Tape::weighted_bce_logits(int z, std::span<const int> labels,
                              std::span<const double> weights) {
  const Tensor& Z = val(z);
  if (Z.size() != static_cast<std::int64_t>(labels.size()) ||
      labels.size() != weights.size()) {
    throw ShapeError("weighted-bce-logits: size mismatch");
  }
  Node n;
  n.op = Prim::WeightedBceLogits;
  n.in = {z};
  n.needs_grad = node(z).needs_grad;
  n.attrs.ints.assign(labels.begin(), labels.end());
  n.attrs.reals.assign(weights.begin(), weights.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double zi = Z.data[i];
    loss += weights[i] * (stable_softplus(zi) - labels[i] * zi);
  }
  n.own = Tensor::scalar(loss);
  check_finite("weighted-bce-logits", n.own);
  return push(std::move(n));
}

int Tape::grpo_token_loss(int logp, std::span<const double> logp_old,
                          std::span<const double> logp_ref,
                          std::span<const double> advantage, double eps,
                          double beta) {
  const Tensor& P = val(logp);
  const std::size_t n_tok = static_cast<std::size_t>(P.size());
  if (logp_old.size() != n_tok || logp_ref.size() != n_tok ||
      advantage.size() != n_tok) {
    throw ShapeError("grpo-token-loss: size mismatch");
  }
  Node n;
  n.op = Prim::GrpoTokenLoss;
  n.in = {logp};
  n.needs_grad = node(logp).needs_grad;
  n.attrs.reals.reserve(3 * n_tok);
  n.attrs.reals.assign(logp_old.begin(), logp_old.end());
  n.attrs.reals.insert(n.attrs.reals.end(), logp_ref.begin(), logp_ref.end());
  n.attrs.reals.insert(n.attrs.reals.end(), advantage.begin(),
                       advantage.end());
  n.attrs.eps = eps;
  n.attrs.beta = beta;
  double loss = 0.0;
  for (std::size_t i = 0; i < n_tok; ++i) {
    const double r = std::exp(P.data[i] - logp_old[i]);
    const double a = advantage[i];
    const double u = r * a;
    const double cl = std::clamp(r, 1.0 - eps, 1.0 + eps) * a;
    const double kl_ratio = std::exp(logp_ref[i] - P.data[i]);
    const double kl = kl_ratio - (logp_ref[i] - P.data[i]) - 1.0;
    loss += -std::min(u, cl) + beta * kl;
  }
  n.own = Tensor::scalar(loss / static_cast<double>(n_tok));
  check_finite("grpo-token-loss", n.own);
  return push(std::move(n));
}

int Tape::apply(std::string_view prim, std::span<const int> inputs,
                const OpAttrs& attrs) {
  auto need = [&](std::size_t k) {
    if (inputs.size() != k) {
      throw ShapeError(std::string(prim) + ": expected " + std::to_string(k) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  };
  if (prim == "add") {
    need(2);
    return add(inputs[0], inputs[1]);
  }
  if (prim == "multiply") {
    need(2);
    return mul(inputs[0], inputs[1]);
  }
  if (prim == "matmul") {
    need(2);
    return matmul(inputs[0], inputs[1]);
  }
  if (prim == "embedding-gather") {
    need(1);
    return embedding_gather(inputs[0], attrs.ints);
  }
  if (prim == "transpose") {
    need(1);
    return transpose(inputs[0]);
  }
  if (prim == "reshape") {
    need(1);
    return reshape(inputs[0], attrs.ints);
  }
  if (prim == "concat") {
    need(2);
    return concat(inputs[0], inputs[1]);
  }
  if (prim == "causal-masked-softmax-attention") {
    need(3);
    return causal_attention(inputs[0], inputs[1], inputs[2], attrs.heads);
  }
  if (prim == "layer-normalize") {
    need(3);
    return layer_norm(inputs[0], inputs[1], inputs[2]);
  }
  if (prim == "gelu") {
    need(1);
    return gelu(inputs[0]);
  }
  if (prim == "softmax-cross-entropy") {
    need(1);
    return softmax_cross_entropy(inputs[0], attrs.ints);
  }
  if (prim == "sigmoid") {
    need(1);
    return sigmoid(inputs[0]);
  }
  if (prim == "log") {
    need(1);
    return log_(inputs[0]);
  }
  if (prim == "exp") {
    need(1);
    return exp_(inputs[0]);
  }
  if (prim == "reduce-sum") {
    need(1);
    return reduce_sum(inputs[0]);
  }
  if (prim == "reduce-mean") {
    need(1);
    return reduce_mean(inputs[0]);
  }
  if (prim == "scalar-scale") {
    need(1);
    return scalar_scale(inputs[0], attrs.scale);
  }
  if (prim == "gather-rows") {
    need(1);
    return gather_rows(inputs[0], attrs.ints);
  }
  throw Error("unknown primitive: " + std::string(prim));
}

void Tape::accumulate(Tensor& dst, const Tensor& src) {
  if (dst.data.empty()) {
    dst = src;
    return;
  }
  kernels::add_inplace(dst.data.data(), src.data.data(), src.data.size());
}

void Tape::backward_node(int id, const Tensor& g, std::vector<Tensor>& grads) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  auto want = [&](int in_id) {
    return nodes_[static_cast<std::size_t>(in_id)].needs_grad;
  };
  auto acc = [&](int in_id, const Tensor& d) {
    accumulate(grads[static_cast<std::size_t>(in_id)], d);
  };

  switch (n.op) {
    case Prim::Leaf:
      break;
    case Prim::Add: {
      const Tensor& x = val(n.in[0]);
      const Tensor& y = val(n.in[1]);
      if (want(n.in[0])) acc(n.in[0], g);
      if (want(n.in[1])) {
        if (x.same_shape(y)) {
          acc(n.in[1], g);
        } else if (y.size() == 1) {
          double s = 0.0;
          for (double v : g.data) s += v;
          acc(n.in[1], Tensor::scalar(s));
        } else {  // row broadcast
          Tensor d = Tensor::zeros(y.shape);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) d.at(j) += g.at(i, j);
          acc(n.in[1], d);
        }
      }
      break;
    }
    case Prim::Mul: {
      const Tensor& x = val(n.in[0]);
      const Tensor& y = val(n.in[1]);
      if (x.same_shape(y)) {
        if (want(n.in[0])) {
          Tensor d = g;
          for (std::int64_t i = 0; i < d.size(); ++i) d.data[i] *= y.data[i];
          acc(n.in[0], d);
        }
        if (want(n.in[1])) {
          Tensor d = g;
          for (std::int64_t i = 0; i < d.size(); ++i) d.data[i] *= x.data[i];
          acc(n.in[1], d);
        }
      } else if (y.size() == 1) {
        if (want(n.in[0])) {
          Tensor d = g;
          for (double& v : d.data) v *= y.data[0];
          acc(n.in[0], d);
        }
        if (want(n.in[1])) {
          double s = 0.0;
          for (std::int64_t i = 0; i < g.size(); ++i)
            s += g.data[i] * x.data[i];
          acc(n.in[1], Tensor::scalar(s));
        }
      } else {  // x scalar
        if (want(n.in[1])) {
          Tensor d = g;
          for (double& v : d.data) v *= x.data[0];
          acc(n.in[1], d);
        }
        if (want(n.in[0])) {
          double s = 0.0;
          for (std::int64_t i = 0; i < g.size(); ++i)
            s += g.data[i] * y.data[i];
          acc(n.in[0], Tensor::scalar(s));
        }
      }
      break;
    }
    case Prim::MatMul: {
      const Tensor& x = val(n.in[0]);
      const Tensor& y = val(n.in[1]);
      const int m = x.shape[0], k = x.shape[1], c = y.shape[1];
      if (want(n.in[0])) {
        Tensor d = Tensor::zeros(x.shape);
        kernels::matmul_nt(g.data.data(), y.data.data(), d.data.data(), m, c,
                           k);
        acc(n.in[0], d);
      }
      if (want(n.in[1])) {
        Tensor d = Tensor::zeros(y.shape);
        kernels::matmul_tn(x.data.data(), g.data.data(), d.data.data(), m, k,
                           c);
        acc(n.in[1], d);
      }
      break;
    }
    case Prim::EmbeddingGather: {
      if (!want(n.in[0])) break;
      const Tensor& t = val(n.in[0]);
      Tensor d = Tensor::zeros(t.shape);
      const int cols = t.shape[1];
      for (std::size_t i = 0; i < n.attrs.ints.size(); ++i) {
        const int row = n.attrs.ints[i];
        for (int j = 0; j < cols; ++j) {
          d.at(row, j) += g.data[i * static_cast<std::size_t>(cols) + j];
        }
      }
      acc(n.in[0], d);
      break;
    }
    case Prim::Transpose: {
      if (!want(n.in[0])) break;
      Tensor d = Tensor::zeros(val(n.in[0]).shape);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) d.at(j, i) = g.at(i, j);
      acc(n.in[0], d);
      break;
    }
    case Prim::Reshape: {
      if (!want(n.in[0])) break;
      Tensor d = g;
      d.shape = val(n.in[0]).shape;
      acc(n.in[0], d);
      break;
    }
    case Prim::Concat: {
      const Tensor& x = val(n.in[0]);
      const std::size_t nx = x.data.size();
      if (want(n.in[0])) {
        Tensor d = x;
        std::copy_n(g.data.begin(), nx, d.data.begin());
        acc(n.in[0], d);
      }
      if (want(n.in[1])) {
        const Tensor& y = val(n.in[1]);
        Tensor d = y;
        std::copy_n(g.data.begin() + nx, y.data.size(), d.data.begin());
        acc(n.in[1], d);
      }
      break;
    }
    case Prim::CausalAttention: {
      const Tensor& Q = val(n.in[0]);
      const Tensor& K = val(n.in[1]);
      const Tensor& V = val(n.in[2]);
      const int L = Q.shape[0];
      const int d = Q.shape[1];
      const int heads = n.attrs.heads;
      const int dh = d / heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor dQ = Tensor::zeros(Q.shape);
      Tensor dK = Tensor::zeros(K.shape);
      Tensor dV = Tensor::zeros(V.shape);
      std::vector<double> dP(static_cast<std::size_t>(L));
      for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        const double* probs =
            n.saved.data.data() + static_cast<std::size_t>(h) * L * L;
        for (int i = 0; i < L; ++i) {
          const double* pi = probs + static_cast<std::size_t>(i) * L;
          double row_dot = 0.0;
          for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int c = 0; c < dh; ++c) s += g.at(i, off + c) * V.at(j, off + c);
            dP[static_cast<std::size_t>(j)] = s;
            row_dot += s * pi[j];
          }
          for (int j = 0; j <= i; ++j) {
            const double ds =
                pi[j] * (dP[static_cast<std::size_t>(j)] - row_dot) * scale;
            for (int c = 0; c < dh; ++c) {
              dQ.at(i, off + c) += ds * K.at(j, off + c);
              dK.at(j, off + c) += ds * Q.at(i, off + c);
              dV.at(j, off + c) += pi[j] * g.at(i, off + c);
            }
          }
        }
      }
      if (want(n.in[0])) acc(n.in[0], dQ);
      if (want(n.in[1])) acc(n.in[1], dK);
      if (want(n.in[2])) acc(n.in[2], dV);
      break;
    }
    case Prim::LayerNorm: {
      const Tensor& X = val(n.in[0]);
      const Tensor& G = val(n.in[1]);
      const int L = X.shape[0];
      const int d = X.shape[1];
      Tensor dX = Tensor::zeros(X.shape);
      Tensor dG = Tensor::zeros(G.shape);
      Tensor dB = Tensor::zeros(G.shape);
      for (int i = 0; i < L; ++i) {
        const double mean = n.saved.at(i, 0);
        const double rstd = n.saved.at(i, 1);
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double xh = (X.at(i, j) - mean) * rstd;
          const double dxh = g.at(i, j) * G.at(j);
          dG.at(j) += g.at(i, j) * xh;
          dB.at(j) += g.at(i, j);
          m1 += dxh;
          m2 += dxh * xh;
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
          const double xh = (X.at(i, j) - mean) * rstd;
          const double dxh = g.at(i, j) * G.at(j);
          dX.at(i, j) = rstd * (dxh - m1 - xh * m2);
        }
      }
      if (want(n.in[0])) acc(n.in[0], dX);
      if (want(n.in[1])) acc(n.in[1], dG);
      if (want(n.in[2])) acc(n.in[2], dB);
      break;
    }
    case Prim::Gelu: {
      if (!want(n.in[0])) break;
      const Tensor& X = val(n.in[0]);
      Tensor d = g;
      for (std::int64_t i = 0; i < d.size(); ++i) {
        const double x = X.data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        d.data[i] *= cdf + x * pdf;
      }
      acc(n.in[0], d);
      break;
    }
    case Prim::SoftmaxCrossEntropy: {
      if (!want(n.in[0])) break;
      const Tensor& X = val(n.in[0]);
      const int L = X.shape[0];
      const int V = X.shape[1];
      Tensor d = Tensor::zeros(X.shape);
      for (int i = 0; i < L; ++i) {
        const double gi = g.at(i);
        for (int j = 0; j < V; ++j) d.at(i, j) = gi * n.saved.at(i, j);
        d.at(i, n.attrs.ints[static_cast<std::size_t>(i)]) -= gi;
      }
      acc(n.in[0], d);
      break;
    }
    case Prim::Sigmoid: {
      if (!want(n.in[0])) break;
      Tensor d = g;
      for (std::int64_t i = 0; i < d.size(); ++i) {
        const double s = n.own.data[i];
        d.data[i] *= s * (1.0 - s);
      }
      acc(n.in[0], d);
      break;
    }
    case Prim::Log: {
      if (!want(n.in[0])) break;
      const Tensor& X = val(n.in[0]);
      Tensor d = g;
      for (std::int64_t i = 0; i < d.size(); ++i) d.data[i] /= X.data[i];
      acc(n.in[0], d);
      break;
    }
    case Prim::Exp: {
      if (!want(n.in[0])) break;
      Tensor d = g;
      for (std::int64_t i = 0; i < d.size(); ++i) d.data[i] *= n.own.data[i];
      acc(n.in[0], d);
      break;
    }
    case Prim::ReduceSum: {
      if (!want(n.in[0])) break;
      const Tensor& X = val(n.in[0]);
      Tensor d = X;
      for (double& v : d.data) v = g.data[0];
      acc(n.in[0], d);
      break;
    }
    case Prim::ReduceMean: {
      if (!want(n.in[0])) break;
      const Tensor& X = val(n.in[0]);
      Tensor d = X;
      const double gv = g.data[0] / static_cast<double>(X.size());
      for (double& v : d.data) v = gv;
      acc(n.in[0], d);
      break;
    }
    case Prim::ScalarScale: {
      if (!want(n.in[0])) break;
      Tensor d = g;
      for (double& v : d.data) v *= n.attrs.scale;
      acc(n.in[0], d);
      break;
    }
    case Prim::GatherRows: {
      if (!want(n.in[0])) break;
      const Tensor& X = val(n.in[0]);
      Tensor d = Tensor::zeros(X.shape);
      const int cols = X.shape[1];
      for (std::size_t i = 0; i < n.attrs.ints.size(); ++i) {
        const int row = n.attrs.ints[i];
        for (int j = 0; j < cols; ++j) {
          d.at(row, j) += g.data[i * static_cast<std::size_t>(cols) + j];
        }
      }
      acc(n.in[0], d);
      break;
    }
    case Prim::WeightedBceLogits: {
      if (!want(n.in[0])) break;
      const Tensor& Z = val(n.in[0]);
      Tensor d = Z;
      for (std::int64_t i = 0; i < d.size(); ++i) {
        d.data[i] = g.data[0] * n.attrs.reals[static_cast<std::size_t>(i)] *
                    (sigmoid_d(Z.data[i]) - n.attrs.ints[static_cast<std::size_t>(i)]);
      }
      acc(n.in[0], d);
      break;
    }
    case Prim::GrpoTokenLoss: {
      if (!want(n.in[0])) break;
      const Tensor& P = val(n.in[0]);
      const std::size_t n_tok = static_cast<std::size_t>(P.size());
      const double* old_lp = n.attrs.reals.data();
      const double* ref_lp = old_lp + n_tok;
      const double* adv = ref_lp + n_tok;
      const double eps = n.attrs.eps;
      const double beta = n.attrs.beta;
      Tensor d = P;
      for (std::size_t i = 0; i < n_tok; ++i) {
        const double r = std::exp(P.data[i] - old_lp[i]);
        const double a = adv[i];
        const double u = r * a;
        const double cl = std::clamp(r, 1.0 - eps, 1.0 + eps) * a;
        const double ds = (u <= cl) ? r * a : 0.0;
        const double dkl = 1.0 - std::exp(ref_lp[i] - P.data[i]);
        d.data[i] = g.data[0] * (-ds + beta * dkl) /
                    static_cast<double>(n_tok);
      }
      acc(n.in[0], d);
      break;
    }
  }
}

GradientMap Tape::backward(int loss, const std::map<std::string, int>& params) {
  if (loss < 0 || loss >= static_cast<int>(nodes_.size())) {
    throw Error("backward: loss has no tape node (detached)");
  }
  const Tensor& lv = val(loss);
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(lv));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss)] = Tensor::scalar(1.0);
  for (int id = loss; id >= 0; --id) {
    if (grads[static_cast<std::size_t>(id)].data.empty()) continue;
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) continue;
    backward_node(id, grads[static_cast<std::size_t>(id)], grads);
  }
  GradientMap out;
  for (const auto& [name, id] : params) {
    check_id(id);
    Tensor& gp = grads[static_cast<std::size_t>(id)];
    if (gp.data.empty()) {
      out[name] = Tensor::zeros(val(id).shape);
    } else {
      out[name] = std::move(gp);
    }
  }
  return out;
}

double grad_check(const LossBuilder& build,
                  std::map<std::string, Tensor>& params, double step) {
  if (step <= 0.0) throw ConfigError("grad_check: step must be positive");

  GradientMap analytic;
  {
    Tape t;
    std::map<std::string, int> leaves;
    for (auto& [name, tensor] : params) leaves[name] = t.leaf(&tensor, true);
    const int loss = build(t, leaves);
    analytic = t.backward(loss, leaves);
  }

  auto loss_at = [&]() {
    Tape t;
    std::map<std::string, int> leaves;
    for (auto& [name, tensor] : params) leaves[name] = t.leaf(&tensor, true);
    return t.scalar_val(build(t, leaves));
  };

  double max_rel = 0.0;
  for (auto& [name, tensor] : params) {
    const Tensor& ga = analytic.at(name);
    for (std::int64_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor.data[static_cast<std::size_t>(i)];
      tensor.data[static_cast<std::size_t>(i)] = orig + step;
      const double up = loss_at();
      tensor.data[static_cast<std::size_t>(i)] = orig - step;
      const double dn = loss_at();
      tensor.data[static_cast<std::size_t>(i)] = orig;
      const double num = (up - dn) / (2.0 * step);
      const double ana = ga.data[static_cast<std::size_t>(i)];
      // The denominator floor keeps finite-difference roundoff on
      // near-zero gradient entries from masquerading as relative error;
      // entries with |gradient| above the floor are compared strictly.
      const double rel = std::abs(ana - num) /
                         std::max({std::abs(ana), std::abs(num), 1e-6});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace rta
