#include "rta/model.hpp"

#include <cstring>

#include "rta/rng.hpp"

namespace rta {

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("ModelConfig.vocab_size must be positive");
  if (d_model <= 0) throw ConfigError("ModelConfig.d_model must be positive");
  if (n_layers <= 0) throw ConfigError("ModelConfig.n_layers must be positive");
  if (n_heads <= 0) throw ConfigError("ModelConfig.n_heads must be positive");
  if (max_context <= 0) throw ConfigError("ModelConfig.max_context must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("ModelConfig.d_model (" + std::to_string(d_model) +
                      ") not divisible by n_heads (" + std::to_string(n_heads) +
                      ")");
  }
}

std::string role_name(ParamRole r) {
  switch (r) {
    case ParamRole::Theta: return "theta";
    case ParamRole::ThetaOld: return "theta_old";
    case ParamRole::Ref: return "ref";
    case ParamRole::Confidence: return "confidence";
  }
  return "theta";
}

ParamRole role_from_name(const std::string& s) {
  if (s == "theta") return ParamRole::Theta;
  if (s == "theta_old") return ParamRole::ThetaOld;
  if (s == "ref") return ParamRole::Ref;
  if (s == "confidence") return ParamRole::Confidence;
  throw ConfigError("unknown parameter role: " + s);
}

const Tensor& ModelParams::t(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("missing parameter tensor: " + name);
  return it->second;
}

Tensor& ModelParams::t(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("missing parameter tensor: " + name);
  return it->second;
}

namespace {

Tensor gaussian_tensor(std::vector<int> shape, Rng& rng, double std_dev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.gaussian() * std_dev;
  return t;
}

Tensor ones_tensor(std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = 1.0;
  return t;
}

}  // namespace

ModelParams init_policy(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.role = ParamRole::Theta;
  Rng rng(Rng::mix(config.seed, 0x6d6f64656cULL));
  const int d = config.d_model;
  const int hidden = 4 * d;

  p.tensors["tok_emb"] = gaussian_tensor({config.vocab_size, d}, rng, 0.02);
  p.tensors["pos_emb"] = gaussian_tensor({config.max_context, d}, rng, 0.02);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    p.tensors[pre + "ln1.g"] = ones_tensor({d});
    p.tensors[pre + "ln1.b"] = Tensor::zeros({d});
    p.tensors[pre + "attn.wq"] = gaussian_tensor({d, d}, rng, 0.02);
    p.tensors[pre + "attn.wk"] = gaussian_tensor({d, d}, rng, 0.02);
    p.tensors[pre + "attn.wv"] = gaussian_tensor({d, d}, rng, 0.02);
    p.tensors[pre + "attn.wo"] = gaussian_tensor({d, d}, rng, 0.02);
    p.tensors[pre + "ln2.g"] = ones_tensor({d});
    p.tensors[pre + "ln2.b"] = Tensor::zeros({d});
    p.tensors[pre + "mlp.w1"] = gaussian_tensor({d, hidden}, rng, 0.02);
    p.tensors[pre + "mlp.b1"] = Tensor::zeros({hidden});
    p.tensors[pre + "mlp.w2"] = gaussian_tensor({hidden, d}, rng, 0.02);
    p.tensors[pre + "mlp.b2"] = Tensor::zeros({d});
  }
  p.tensors["lnf.g"] = ones_tensor({d});
  p.tensors["lnf.b"] = Tensor::zeros({d});
  p.tensors["head.w"] = gaussian_tensor({d, config.vocab_size}, rng, 0.02);
  p.tensors["head.b"] = Tensor::zeros({config.vocab_size});
  return p;
}

std::int64_t param_count(const ModelConfig& c) {
  const std::int64_t d = c.d_model;
  const std::int64_t hidden = 4 * d;
  std::int64_t n = 0;
  n += static_cast<std::int64_t>(c.vocab_size) * d;  // tok_emb
  n += static_cast<std::int64_t>(c.max_context) * d; // pos_emb
  n += c.n_layers * (2 * d              // ln1
                     + 4 * d * d        // attention projections
                     + 2 * d            // ln2
                     + d * hidden + hidden + hidden * d + d);  // mlp
  n += 2 * d;                                        // lnf
  n += d * c.vocab_size + c.vocab_size;              // head
  return n;
}

std::map<std::string, int> bind_params(Tape& tape, const ModelParams& params,
                                       bool with_grad) {
  std::map<std::string, int> leaves;
  for (const auto& [name, tensor] : params.tensors) {
    leaves[name] = tape.leaf(&tensor, with_grad);
  }
  return leaves;
}

namespace {

void check_tokens(const ModelConfig& c, std::span<const int> tokens) {
  if (tokens.empty()) throw Error("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_context) {
    throw Error("context-overflow: " + std::to_string(tokens.size()) +
                " tokens exceed max_context " + std::to_string(c.max_context));
  }
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw Error("token-out-of-range: " + std::to_string(t));
    }
  }
}

}  // namespace

int build_hidden(Tape& tape, const ModelParams& params,
                 const std::map<std::string, int>& leaves,
                 std::span<const int> tokens) {
  const ModelConfig& c = params.config;
  check_tokens(c, tokens);
  const int L = static_cast<int>(tokens.size());
  auto id = [&](const std::string& name) { return leaves.at(name); };

  std::vector<int> positions(tokens.size());
  for (int i = 0; i < L; ++i) positions[static_cast<std::size_t>(i)] = i;

  int x = tape.add(tape.embedding_gather(id("tok_emb"), tokens),
                   tape.embedding_gather(id("pos_emb"), positions));
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    const int h1 = tape.layer_norm(x, id(pre + "ln1.g"), id(pre + "ln1.b"));
    const int q = tape.matmul(h1, id(pre + "attn.wq"));
    const int k = tape.matmul(h1, id(pre + "attn.wk"));
    const int v = tape.matmul(h1, id(pre + "attn.wv"));
    const int att = tape.causal_attention(q, k, v, c.n_heads);
    x = tape.add(x, tape.matmul(att, id(pre + "attn.wo")));
    const int h2 = tape.layer_norm(x, id(pre + "ln2.g"), id(pre + "ln2.b"));
    const int m1 =
        tape.add(tape.matmul(h2, id(pre + "mlp.w1")), id(pre + "mlp.b1"));
    const int m2 =
        tape.add(tape.matmul(tape.gelu(m1), id(pre + "mlp.w2")),
                 id(pre + "mlp.b2"));
    x = tape.add(x, m2);
  }
  return tape.layer_norm(x, id("lnf.g"), id("lnf.b"));
}

int build_logits(Tape& tape, const ModelParams& params,
                 const std::map<std::string, int>& leaves,
                 std::span<const int> tokens) {
  const int h = build_hidden(tape, params, leaves, tokens);
  return tape.add(tape.matmul(h, leaves.at("head.w")), leaves.at("head.b"));
}

Tensor logits(const ModelParams& params, std::span<const int> tokens) {
  Tape tape;
  auto leaves = bind_params(tape, params, false);
  return tape.val(build_logits(tape, params, leaves, tokens));
}

std::vector<double> last_logits(const ModelParams& params,
                                std::span<const int> tokens) {
  Tape tape;
  auto leaves = bind_params(tape, params, false);
  const int h = build_hidden(tape, params, leaves, tokens);
  const int last = static_cast<int>(tokens.size()) - 1;
  const int row = tape.gather_rows(h, std::span<const int>(&last, 1));
  const int out =
      tape.add(tape.matmul(row, leaves.at("head.w")), leaves.at("head.b"));
  return tape.val(out).data;
}

SeqLogProb sequence_log_prob(const ModelParams& params,
                             std::span<const int> context,
                             std::span<const int> continuation) {
  SeqLogProb out;
  if (continuation.empty()) return out;
  std::vector<int> all(context.begin(), context.end());
  all.insert(all.end(), continuation.begin(), continuation.end());
  if (static_cast<int>(all.size()) > params.config.max_context) {
    throw Error("context-overflow: " + std::to_string(all.size()) +
                " tokens exceed max_context " +
                std::to_string(params.config.max_context));
  }

  Tape tape;
  auto leaves = bind_params(tape, params, false);
  // Rows predicting the continuation: the last context row and all but the
  // final continuation row.
  std::vector<int> feed(all.begin(), all.end() - 1);
  if (feed.empty()) throw Error("sequence_log_prob: empty context");
  const int lg = build_logits(tape, params, leaves, feed);
  std::vector<int> rows(continuation.size());
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    rows[j] = static_cast<int>(context.size() + j) - 1;
  }
  const int picked = tape.gather_rows(lg, rows);
  const int nll = tape.softmax_cross_entropy(picked, continuation);
  const Tensor& v = tape.val(nll);
  out.per_token.resize(continuation.size());
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    out.per_token[j] = -v.data[j];
    out.total += out.per_token[j];
  }
  return out;
}

ModelParams clone_frozen(const ModelParams& params, ParamRole role) {
  if (params.role != ParamRole::Theta) {
    throw Error("clone_frozen: wrong source role " + role_name(params.role));
  }
  if (role != ParamRole::ThetaOld && role != ParamRole::Ref) {
    throw Error("clone_frozen: target role must be theta_old or ref");
  }
  ModelParams copy = params;
  copy.role = role;
  return copy;
}

std::uint64_t params_checksum(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, tensor] : params.tensors) {
    mix_bytes(name.data(), name.size());
    mix_bytes(tensor.data.data(), tensor.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace rta
