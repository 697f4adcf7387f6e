#include <doctest.h>

#include <cmath>

#include "rta/confidence.hpp"
#include "rta/model.hpp"
#include "rta/task.hpp"

using namespace rta;

namespace {

ModelParams tiny_ref(std::uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = Vocabulary::size();
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_context = 64;
  c.seed = seed;
  return init_policy(c);
}

const std::vector<int> kQuestion{tok::BOS, tok::digit(3), tok::PLUS,
                                 tok::digit(4), tok::QUESTION_END};

// Separable probe: "correct" steps carry digit 9 in the think segment,
// "incorrect" ones digit 1.
LabeledExample probe_example(bool correct, int filler) {
  LabeledExample e;
  e.question_tokens = kQuestion;
  e.step_tokens = {tok::THINK_OPEN, tok::digit(correct ? 9 : 1),
                   tok::digit(filler), tok::THINK_CLOSE, tok::ANS_OPEN,
                   tok::digit(7), tok::ANS_CLOSE};
  e.correct = correct;
  return e;
}

}  // namespace

TEST_CASE("confidence init drops the language head and adds the scorer head") {
  const ModelParams ref = tiny_ref();
  const ConfidenceParams conf = init_confidence(ref, 9);
  CHECK(conf.model.role == ParamRole::Confidence);
  CHECK(conf.model.tensors.count("head.w") == 0);
  CHECK(conf.model.tensors.count("head.b") == 0);
  REQUIRE(conf.model.tensors.count("conf_head.w") == 1);
  CHECK(conf.model.t("conf_head.w").shape ==
        std::vector<int>{ref.config.d_model, 1});
  // Backbone copied verbatim.
  CHECK(conf.model.t("tok_emb").data == ref.t("tok_emb").data);
}

TEST_CASE("zeroed scorer head emits exactly 0.5") {
  ConfidenceParams conf = init_confidence(tiny_ref(), 9);
  for (double& v : conf.model.t("conf_head.w").data) v = 0.0;
  conf.model.t("conf_head.b").data[0] = 0.0;
  const LabeledExample e = probe_example(true, 2);
  CHECK(score(conf, e.question_tokens, e.step_tokens) == 0.5);
}

TEST_CASE("scores stay inside (0,1)") {
  const ConfidenceParams conf = init_confidence(tiny_ref(), 9);
  for (int filler = 0; filler < 10; ++filler) {
    const LabeledExample e = probe_example(filler % 2 == 0, filler);
    const double s = score(conf, e.question_tokens, e.step_tokens);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("fresh balanced set starts near ln 2 loss") {
  ConfidenceParams conf = init_confidence(tiny_ref(), 9);
  for (double& v : conf.model.t("conf_head.w").data) v = 0.0;
  std::vector<LabeledExample> examples;
  for (int i = 0; i < 8; ++i) examples.push_back(probe_example(i % 2 == 0, i));
  CHECK(bce_loss(conf, examples) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("class weighting averages the class means") {
  std::vector<LabeledExample> pool;
  pool.push_back(probe_example(true, 0));
  pool.push_back(probe_example(false, 1));
  pool.push_back(probe_example(false, 2));
  pool.push_back(probe_example(false, 3));
  std::vector<const LabeledExample*> ptrs;
  for (const auto& e : pool) ptrs.push_back(&e);
  const BceBatch batch = make_bce_batch(ptrs);
  REQUIRE(batch.weights.size() == 4);
  // Positive class: one member, weight 0.5/1; negatives: 0.5/3 each.
  CHECK(batch.weights[0] == doctest::Approx(0.5));
  for (int i = 1; i < 4; ++i) {
    CHECK(batch.weights[static_cast<std::size_t>(i)] ==
          doctest::Approx(0.5 / 3.0));
  }
  double sum = 0.0;
  for (double w : batch.weights) sum += w;
  CHECK(sum == doctest::Approx(1.0));

  // Single-class batch: plain mean.
  const BceBatch mono = make_bce_batch({ptrs[1], ptrs[2]});
  CHECK(mono.weights[0] == doctest::Approx(0.5));
  CHECK(mono.weights[1] == doctest::Approx(0.5));
}

TEST_CASE("confidence loss gradient matches finite differences") {
  ConfidenceParams conf = init_confidence(tiny_ref(), 9);
  std::vector<LabeledExample> examples;
  for (int i = 0; i < 4; ++i) examples.push_back(probe_example(i % 2 == 0, i));
  std::vector<const LabeledExample*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  const BceBatch batch = make_bce_batch(ptrs);

  std::map<std::string, Tensor> params = conf.model.tensors;
  const double rel = grad_check(
      [&](Tape& t, const std::map<std::string, int>& leaves) {
        std::vector<int> logit_ids;
        for (const LabeledExample* e : batch.examples) {
          logit_ids.push_back(build_confidence_logit(
              t, conf, leaves, e->question_tokens, e->step_tokens));
        }
        int z = logit_ids[0];
        for (std::size_t i = 1; i < logit_ids.size(); ++i) {
          z = t.concat(z, logit_ids[i]);
        }
        return t.weighted_bce_logits(z, batch.labels, batch.weights);
      },
      // Smaller step than the primitive checks: the deep composite graph
      // pairs O(1) curvature with tiny gradients, so a coarse step leaves
      // visible truncation error.
      params, 5e-5);
  CHECK(rel < 1e-4);
}

TEST_CASE("pretraining separates a token-marked probe set") {
  ConfidenceParams conf = init_confidence(tiny_ref(), 9);
  std::vector<LabeledExample> train_set, held_out;
  for (int i = 0; i < 24; ++i) {
    (i % 3 == 0 ? held_out : train_set).push_back(probe_example(i % 2 == 0, i % 10));
  }
  PretrainSchedule schedule;
  schedule.learning_rate_start = 1e-2;
  schedule.learning_rate_end = 1e-3;
  schedule.epochs = 30;
  schedule.batch_size = 8;
  schedule.seed = 4;
  const std::vector<double> losses = pretrain(conf, train_set, schedule);
  REQUIRE(losses.size() == static_cast<std::size_t>(schedule.epochs) + 1);
  CHECK(losses.back() < losses.front());
  CHECK(losses.back() < 0.2);
  for (const LabeledExample& e : held_out) {
    const double s = score(conf, e.question_tokens, e.step_tokens);
    CHECK((e.correct ? s > 0.5 : s < 0.5));
  }
}

TEST_CASE("online_update: empty batch is a no-op, labels pull scores apart") {
  ConfidenceParams conf = init_confidence(tiny_ref(), 9);
  AdamW opt;
  const std::uint64_t before = params_checksum(conf.model);
  online_update(conf, {}, 12, 1e-3, opt);
  CHECK(params_checksum(conf.model) == before);

  std::vector<LabeledExample> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(probe_example(i % 2 == 0, i));
  const LabeledExample pos = probe_example(true, 7);
  const LabeledExample neg = probe_example(false, 7);
  for (int round = 0; round < 8; ++round) {
    online_update(conf, batch, 12, 1e-3, opt);
  }
  CHECK(score(conf, pos.question_tokens, pos.step_tokens) >
        score(conf, neg.question_tokens, neg.step_tokens));
}

TEST_CASE("pretrain schedule validation") {
  PretrainSchedule s;
  s.learning_rate_end = 2e-5;  // above the start
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.n_per_task = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
