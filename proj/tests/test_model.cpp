#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rta/checkpoint.hpp"
#include "rta/model.hpp"
#include "rta/task.hpp"

using namespace rta;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = Vocabulary::size();
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_context = 64;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("param_count matches the registered tensors") {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_policy(c);
  std::int64_t total = 0;
  for (const auto& [name, t] : p.tensors) total += t.size();
  CHECK(total == param_count(c));
}

TEST_CASE("initialization is deterministic with a pinned checksum") {
  const ModelParams p1 = init_policy(tiny_config());
  const ModelParams p2 = init_policy(tiny_config());
  CHECK(params_checksum(p1) == params_checksum(p2));
  // Golden value; a change here means the init stream or parameter set
  // changed and every seeded run in the repo shifts with it.
  CHECK(params_checksum(p1) == 0x9eac90d4a1d9c16fULL);
}

TEST_CASE("logit rows depend only on the prefix") {
  const ModelParams p = init_policy(tiny_config());
  const std::vector<int> a{1, 5, 9, 3, 7};
  std::vector<int> b = a;
  b[4] = 2;  // change only the last token
  const Tensor la = logits(p, a);
  const Tensor lb = logits(p, b);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < la.cols(); ++j) CHECK(la.at(i, j) == lb.at(i, j));
  }
  const std::vector<double> ll = last_logits(p, a);
  for (int j = 0; j < la.cols(); ++j) CHECK(ll[static_cast<std::size_t>(j)] == la.at(4, j));
}

TEST_CASE("zeroed head gives uniform next-token distributions") {
  ModelParams p = init_policy(tiny_config());
  for (double& v : p.t("head.w").data) v = 0.0;
  for (double& v : p.t("head.b").data) v = 0.0;
  const std::vector<int> ctx{1, 4, 6};
  const std::vector<int> cont{2, 8, 3, 5};
  const SeqLogProb lp = sequence_log_prob(p, ctx, cont);
  const double expect = -std::log(static_cast<double>(p.config.vocab_size));
  REQUIRE(lp.per_token.size() == cont.size());
  for (double v : lp.per_token) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  CHECK(lp.total ==
        doctest::Approx(expect * static_cast<double>(cont.size())).epsilon(1e-12));
}

TEST_CASE("sequence log-prob equals the chain product of conditionals") {
  const ModelParams p = init_policy(tiny_config());
  const std::vector<int> ctx{1, 10, 20, 11};
  const std::vector<int> cont{4, 12, 5};
  const SeqLogProb lp = sequence_log_prob(p, ctx, cont);

  double manual = 0.0;
  std::vector<int> prefix = ctx;
  for (int t : cont) {
    const Tensor lg = logits(p, prefix);
    const int last = lg.rows() - 1;
    double mx = lg.at(last, 0);
    for (int j = 1; j < lg.cols(); ++j) mx = std::max(mx, lg.at(last, j));
    double z = 0.0;
    for (int j = 0; j < lg.cols(); ++j) z += std::exp(lg.at(last, j) - mx);
    manual += lg.at(last, t) - mx - std::log(z);
    prefix.push_back(t);
  }
  CHECK(std::abs(lp.total - manual) < 1e-10);

  const SeqLogProb empty = sequence_log_prob(p, ctx, {});
  CHECK(empty.total == 0.0);
  CHECK(empty.per_token.empty());
}

TEST_CASE("clone_frozen isolates storage and gates on role") {
  ModelParams theta = init_policy(tiny_config());
  const ModelParams ref = clone_frozen(theta, ParamRole::Ref);
  const std::uint64_t before = params_checksum(ref);
  theta.t("tok_emb").data[0] += 1.0;
  CHECK(params_checksum(ref) == before);
  CHECK(ref.role == ParamRole::Ref);
  CHECK_THROWS_AS(clone_frozen(ref, ParamRole::ThetaOld), Error);
}

TEST_CASE("checkpoint round-trip preserves everything") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "rta_ckpt_test";
  fs::remove_all(dir);
  const ModelParams p = init_policy(tiny_config());
  save_checkpoint(dir.string(), p);
  const ModelParams q = load_checkpoint(dir.string());
  CHECK(q.config == p.config);
  CHECK(q.role == p.role);
  CHECK(params_checksum(q) == params_checksum(p));
  REQUIRE(q.tensors.size() == p.tensors.size());
  for (const auto& [name, t] : p.tensors) {
    CHECK(q.t(name).shape == t.shape);
    CHECK(q.t(name).data == t.data);
  }
  // Same bytes on disk for the same parameters.
  const std::string sum1 = file_checksum((dir / "payload.bin").string());
  save_checkpoint(dir.string(), q);
  CHECK(file_checksum((dir / "payload.bin").string()) == sum1);
  fs::remove_all(dir);
}

TEST_CASE("model config validation") {
  ModelConfig c = tiny_config();
  c.d_model = 15;  // not divisible by heads
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.vocab_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
