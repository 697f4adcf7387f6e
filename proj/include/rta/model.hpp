#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rta/autodiff.hpp"

namespace rta {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int max_context = 256;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamRole { Theta, ThetaOld, Ref, Confidence };

std::string role_name(ParamRole r);
ParamRole role_from_name(const std::string& s);

// Named parameter tensors for one model copy.
struct ModelParams {
  ModelConfig config;
  ParamRole role = ParamRole::Theta;
  std::map<std::string, Tensor> tensors;

  const Tensor& t(const std::string& name) const;
  Tensor& t(const std::string& name);
};

// Deterministic initialization: N(0, 0.02) for weight matrices and
// embeddings, zeros for biases and normalization offsets, ones for gains.
ModelParams init_policy(const ModelConfig& config);

std::int64_t param_count(const ModelConfig& config);

// Registers every tensor of params as a leaf on the tape. with_grad marks
// them trainable; frozen copies are bound with with_grad=false.
std::map<std::string, int> bind_params(Tape& tape, const ModelParams& params,
                                       bool with_grad);

// Final-layer-norm hidden states [len, d]; shared by the language head and
// the confidence head.
int build_hidden(Tape& tape, const ModelParams& params,
                 const std::map<std::string, int>& leaves,
                 std::span<const int> tokens);

// Logit rows [len, vocab]; row i depends only on tokens 0..i.
int build_logits(Tape& tape, const ModelParams& params,
                 const std::map<std::string, int>& leaves,
                 std::span<const int> tokens);

// Convenience forward without gradient bookkeeping.
Tensor logits(const ModelParams& params, std::span<const int> tokens);

// Logits for the last position only; the sampling hot path.
std::vector<double> last_logits(const ModelParams& params,
                                std::span<const int> tokens);

struct SeqLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

// Sum and per-token log-probabilities of continuation given context.
SeqLogProb sequence_log_prob(const ModelParams& params,
                             std::span<const int> context,
                             std::span<const int> continuation);

// Deep copy with a frozen role tag; source must be the training policy.
ModelParams clone_frozen(const ModelParams& params, ParamRole role);

// FNV-1a over all parameter bytes, for immutability checks.
std::uint64_t params_checksum(const ModelParams& params);

}  // namespace rta
