#include "rta/config.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rta/checkpoint.hpp"
#include "rta/errors.hpp"
#include "rta/metrics.hpp"
#include "rta/task.hpp"

namespace rta {

void GrpoConfig::validate() const {
  if (epsilon <= 0.0 || epsilon >= 1.0) throw ConfigError("grpo.epsilon must be in (0,1)");
  if (beta < 0.0) throw ConfigError("grpo.beta must be >= 0");
  if (mu < 1) throw ConfigError("grpo.mu must be >= 1");
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (depth < 1) throw ConfigError("grpo.depth must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("grpo.learning_rate must be positive");
  if (conf_learning_rate <= 0.0) throw ConfigError("grpo.conf_learning_rate must be positive");
  if (batch_tasks < 1) throw ConfigError("grpo.batch_tasks must be >= 1");
  if (iterations < 1) throw ConfigError("grpo.iterations must be >= 1");
  if (std_guard <= 0.0) throw ConfigError("grpo.std_guard must be positive");
  if (grad_clip <= 0.0) throw ConfigError("grpo.grad_clip must be positive");
}

void TrainConfig::validate() const {
  model.validate();
  sampling.validate();
  reward.validate();
  grpo.validate();
  if (save_every < 1) throw ConfigError("run.save_every must be >= 1");
}

void TrainConfig::resolve() {
  if (model.vocab_size == 0) model.vocab_size = Vocabulary::size();
  if (reward.length_hard_cap == 0) {
    reward.length_hard_cap = grpo.depth * (sampling.max_step_tokens + 1);
  }
  if (reward.length_soft_cap == 0) {
    reward.length_soft_cap = reward.length_hard_cap * 3 / 5;
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: " + v);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(d);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: " + v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an unsigned integer: " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("config key " + key + ": not a boolean: " + v);
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    if (kv.count(key)) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": duplicate key " + key);
    }
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "model.d_model") c.model.d_model = parse_int(key, v);
    else if (key == "model.vocab_size") c.model.vocab_size = parse_int(key, v);
    else if (key == "model.n_layers") c.model.n_layers = parse_int(key, v);
    else if (key == "model.n_heads") c.model.n_heads = parse_int(key, v);
    else if (key == "model.max_context") c.model.max_context = parse_int(key, v);
    else if (key == "model.seed") c.model.seed = parse_u64(key, v);
    else if (key == "sampling.temperature") c.sampling.temperature = parse_real(key, v);
    else if (key == "sampling.top_p") c.sampling.top_p = parse_real(key, v);
    else if (key == "sampling.top_k") c.sampling.top_k = parse_int(key, v);
    else if (key == "sampling.repetition_penalty") c.sampling.repetition_penalty = parse_real(key, v);
    else if (key == "sampling.max_step_tokens") c.sampling.max_step_tokens = parse_int(key, v);
    else if (key == "reward.tau") c.reward.tau = parse_real(key, v);
    else if (key == "reward.length_soft_cap") c.reward.length_soft_cap = parse_int(key, v);
    else if (key == "reward.length_hard_cap") c.reward.length_hard_cap = parse_int(key, v);
    else if (key == "reward.increase") c.reward.toggles.increase = parse_bool(key, v);
    else if (key == "reward.final_conf") c.reward.toggles.final_conf = parse_bool(key, v);
    else if (key == "reward.format") c.reward.toggles.format = parse_bool(key, v);
    else if (key == "reward.answer") c.reward.toggles.answer = parse_bool(key, v);
    else if (key == "reward.length") c.reward.toggles.length = parse_bool(key, v);
    else if (key == "grpo.epsilon") c.grpo.epsilon = parse_real(key, v);
    else if (key == "grpo.beta") c.grpo.beta = parse_real(key, v);
    else if (key == "grpo.mu") c.grpo.mu = parse_int(key, v);
    else if (key == "grpo.group_size") c.grpo.group_size = parse_int(key, v);
    else if (key == "grpo.depth") c.grpo.depth = parse_int(key, v);
    else if (key == "grpo.learning_rate") c.grpo.learning_rate = parse_real(key, v);
    else if (key == "grpo.conf_learning_rate") c.grpo.conf_learning_rate = parse_real(key, v);
    else if (key == "grpo.batch_tasks") c.grpo.batch_tasks = parse_int(key, v);
    else if (key == "grpo.iterations") c.grpo.iterations = parse_int(key, v);
    else if (key == "grpo.std_guard") c.grpo.std_guard = parse_real(key, v);
    else if (key == "grpo.grad_clip") c.grpo.grad_clip = parse_real(key, v);
    else if (key == "grpo.sequence_level_ratio") c.grpo.sequence_level_ratio = parse_bool(key, v);
    else if (key == "run.seed") c.run_seed = parse_u64(key, v);
    else if (key == "run.tasks") c.tasks_path = v;
    else if (key == "run.out_dir") c.out_dir = v;
    else if (key == "run.policy_ckpt") c.policy_ckpt = v;
    else if (key == "run.conf_ckpt") c.conf_ckpt = v;
    else if (key == "run.save_every") c.save_every = parse_int(key, v);
    else throw ConfigError("unknown config key: " + key);
  }
  c.resolve();
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  return parse_train_config(read_kv_file(path));
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["model.d_model"] = std::to_string(model.d_model);
  kv["model.n_layers"] = std::to_string(model.n_layers);
  kv["model.n_heads"] = std::to_string(model.n_heads);
  kv["model.max_context"] = std::to_string(model.max_context);
  kv["model.seed"] = std::to_string(model.seed);
  kv["model.vocab_size"] = std::to_string(model.vocab_size);
  kv["sampling.temperature"] = format_g17(sampling.temperature);
  kv["sampling.top_p"] = format_g17(sampling.top_p);
  kv["sampling.top_k"] = std::to_string(sampling.top_k);
  kv["sampling.repetition_penalty"] = format_g17(sampling.repetition_penalty);
  kv["sampling.max_step_tokens"] = std::to_string(sampling.max_step_tokens);
  kv["reward.tau"] = format_g17(reward.tau);
  kv["reward.length_soft_cap"] = std::to_string(reward.length_soft_cap);
  kv["reward.length_hard_cap"] = std::to_string(reward.length_hard_cap);
  kv["reward.increase"] = reward.toggles.increase ? "1" : "0";
  kv["reward.final_conf"] = reward.toggles.final_conf ? "1" : "0";
  kv["reward.format"] = reward.toggles.format ? "1" : "0";
  kv["reward.answer"] = reward.toggles.answer ? "1" : "0";
  kv["reward.length"] = reward.toggles.length ? "1" : "0";
  kv["grpo.epsilon"] = format_g17(grpo.epsilon);
  kv["grpo.beta"] = format_g17(grpo.beta);
  kv["grpo.mu"] = std::to_string(grpo.mu);
  kv["grpo.group_size"] = std::to_string(grpo.group_size);
  kv["grpo.depth"] = std::to_string(grpo.depth);
  kv["grpo.learning_rate"] = format_g17(grpo.learning_rate);
  kv["grpo.conf_learning_rate"] = format_g17(grpo.conf_learning_rate);
  kv["grpo.batch_tasks"] = std::to_string(grpo.batch_tasks);
  kv["grpo.iterations"] = std::to_string(grpo.iterations);
  kv["grpo.std_guard"] = format_g17(grpo.std_guard);
  kv["grpo.grad_clip"] = format_g17(grpo.grad_clip);
  kv["grpo.sequence_level_ratio"] = grpo.sequence_level_ratio ? "1" : "0";
  kv["run.seed"] = std::to_string(run_seed);
  kv["run.tasks"] = tasks_path;
  kv["run.out_dir"] = out_dir;
  kv["run.policy_ckpt"] = policy_ckpt;
  kv["run.conf_ckpt"] = conf_ckpt;
  kv["run.save_every"] = std::to_string(save_every);
  return kv;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string config_digest(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : config.to_kv()) {
    h = fnv1a(h, k);
    h = fnv1a(h, "=");
    h = fnv1a(h, v);
    h = fnv1a(h, "\n");
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const TrainConfig& config, const std::string& path) {
  namespace fs = std::filesystem;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const auto& [k, v] : config.to_kv()) out << k << "=" << v << "\n";
  out << "tool.version=" << kToolVersion << "\n";
  out << "config.digest=" << config_digest(config) << "\n";
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  out << "run.started_unix="
      << std::chrono::duration_cast<std::chrono::seconds>(now).count() << "\n";
  if (fs::exists(config.tasks_path)) {
    out << "checksum.tasks=" << file_checksum(config.tasks_path) << "\n";
  }
  const auto ckpt_sum = [&](const std::string& dir) {
    return file_checksum((fs::path(dir) / "payload.bin").string());
  };
  if (!config.policy_ckpt.empty() &&
      fs::exists(fs::path(config.policy_ckpt) / "payload.bin")) {
    out << "checksum.policy_ckpt=" << ckpt_sum(config.policy_ckpt) << "\n";
  }
  if (!config.conf_ckpt.empty() &&
      fs::exists(fs::path(config.conf_ckpt) / "payload.bin")) {
    out << "checksum.conf_ckpt=" << ckpt_sum(config.conf_ckpt) << "\n";
  }
  out.close();
  if (!out) throw IoError("write failed for manifest " + path);
}

}  // namespace rta
