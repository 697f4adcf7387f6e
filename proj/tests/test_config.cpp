#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rta/config.hpp"
#include "rta/errors.hpp"
#include "rta/task.hpp"

using namespace rta;

namespace {

std::string write_temp(const std::string& body) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "rta_config_test.cfg";
  std::ofstream out(path, std::ios::trunc);
  out << body;
  return path.string();
}

}  // namespace

TEST_CASE("defaults carry the published hyperparameters") {
  TrainConfig c;
  CHECK(c.grpo.epsilon == 0.2);
  CHECK(c.grpo.beta == 0.04);
  CHECK(c.grpo.mu == 12);
  CHECK(c.grpo.group_size == 12);
  CHECK(c.grpo.depth == 4);
  CHECK(c.grpo.learning_rate == 1e-6);
  CHECK(c.reward.tau == 0.55);
  CHECK(c.sampling.temperature == 1.0);
  CHECK(c.sampling.top_p == 0.95);
  CHECK(c.sampling.top_k == 50);
  CHECK(c.sampling.repetition_penalty == 1.05);
  CHECK(c.grpo.std_guard == 1e-8);
}

TEST_CASE("parse, resolve, and round-trip") {
  const std::string path = write_temp(
      "# comment\n"
      "model.d_model = 24\n"
      "grpo.iterations=50\n"
      "reward.increase=off\n"
      "run.seed=123\n"
      "run.tasks=/tmp/tasks.jsonl\n"
      "run.out_dir=/tmp/out\n");
  const TrainConfig c = load_train_config(path);
  CHECK(c.model.d_model == 24);
  CHECK(c.model.vocab_size == Vocabulary::size());  // resolved
  CHECK(c.grpo.iterations == 50);
  CHECK(!c.reward.toggles.increase);
  CHECK(c.run_seed == 123);
  // Caps resolved from depth and step budget.
  CHECK(c.reward.length_hard_cap ==
        c.grpo.depth * (c.sampling.max_step_tokens + 1));
  CHECK(c.reward.length_soft_cap == c.reward.length_hard_cap * 3 / 5);

  const TrainConfig rt = parse_train_config(c.to_kv());
  CHECK(rt.to_kv() == c.to_kv());
  CHECK(config_digest(rt) == config_digest(c));
}

TEST_CASE("schema violations name the key") {
  const std::string unknown = write_temp("grpo.momentum=0.9\n");
  CHECK_THROWS_WITH_AS(load_train_config(unknown),
                       doctest::Contains("grpo.momentum"), ConfigError);
  const std::string bad_type = write_temp("grpo.mu=many\n");
  CHECK_THROWS_WITH_AS(load_train_config(bad_type),
                       doctest::Contains("grpo.mu"), ConfigError);
  const std::string dup = write_temp("run.seed=1\nrun.seed=2\n");
  CHECK_THROWS_AS(load_train_config(dup), ConfigError);
  const std::string invalid = write_temp("grpo.epsilon=1.5\n");
  CHECK_THROWS_AS(load_train_config(invalid), ConfigError);
  const std::string noeq = write_temp("grpo.mu 12\n");
  CHECK_THROWS_AS(load_train_config(noeq), ConfigError);
}

TEST_CASE("digest is stable and sensitive") {
  TrainConfig a;
  a.resolve();
  TrainConfig b = a;
  CHECK(config_digest(a) == config_digest(b));
  b.grpo.beta = 0.05;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("manifest lists every resolved key") {
  namespace fs = std::filesystem;
  TrainConfig c;
  c.resolve();
  const fs::path path = fs::temp_directory_path() / "rta_manifest_test.txt";
  write_manifest(c, path.string());
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  for (const auto& [k, v] : c.to_kv()) {
    CHECK(all.find(k + "=" + v + "\n") != std::string::npos);
  }
  CHECK(all.find("tool.version=") != std::string::npos);
  CHECK(all.find("config.digest=" + config_digest(c)) != std::string::npos);
  fs::remove(path);
}
