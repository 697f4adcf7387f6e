#include "rta/task.hpp"

#include <fstream>

#include <json.hpp>

#include "rta/errors.hpp"

namespace rta {

namespace {

const char* kMarkerNames[] = {"<PAD>",   "<BOS>",  "<EOS>",  "<QEND>",
                              "<THINK>", "</THINK>", "<ANS>", "</ANS>",
                              "<SEP>",   "<REVISE>"};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string Vocabulary::symbol(int id) {
  if (id < 0 || id >= tok::COUNT) {
    throw Error("vocabulary: id out of range: " + std::to_string(id));
  }
  if (id < tok::DIGIT0) return kMarkerNames[id];
  if (tok::is_digit(id)) return std::string(1, static_cast<char>('0' + tok::digit_value(id)));
  if (id == tok::PLUS) return "+";
  if (id == tok::STAR) return "*";
  return "%";
}

int Vocabulary::id(const std::string& symbol) {
  for (int i = 0; i < tok::COUNT; ++i) {
    if (Vocabulary::symbol(i) == symbol) return i;
  }
  throw Error("vocabulary: unknown symbol: " + symbol);
}

std::vector<int> Vocabulary::encode(const std::string& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (char c : s) {
    if (c >= '0' && c <= '9') {
      out.push_back(tok::digit(c - '0'));
    } else if (c == '+') {
      out.push_back(tok::PLUS);
    } else if (c == '*') {
      out.push_back(tok::STAR);
    } else if (c == '%') {
      out.push_back(tok::MOD);
    } else {
      throw Error(std::string("vocabulary: unencodable character '") + c +
                  "'");
    }
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& tokens) {
  std::string out;
  for (int t : tokens) out += symbol(t);
  return out;
}

std::string family_name(TaskFamily f) {
  return f == TaskFamily::ModularChain ? "modular-chain" : "multi-digit-add";
}

TaskFamily family_from_name(const std::string& s) {
  if (s == "modular-chain") return TaskFamily::ModularChain;
  if (s == "multi-digit-add") return TaskFamily::MultiDigitAdd;
  throw ConfigError("unknown task family: " + s);
}

void TaskSpec::validate() const {
  if (difficulty < 1) throw ConfigError("TaskSpec.difficulty must be >= 1");
  if (family == TaskFamily::ModularChain && modulus < 2) {
    throw ConfigError("TaskSpec.modulus must be >= 2");
  }
}

TaskInstance generate_task(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  TaskInstance t;
  t.spec = spec;
  std::string text;
  std::string gt;

  if (spec.family == TaskFamily::ModularChain) {
    long long acc = 0;
    for (int i = 0; i < spec.difficulty; ++i) {
      const int operand = static_cast<int>(rng.below(10));
      if (i == 0) {
        acc = operand;
        text += static_cast<char>('0' + operand);
        continue;
      }
      const bool mul = rng.below(2) == 1;
      // Left-to-right evaluation, no operator precedence.
      acc = mul ? acc * operand : acc + operand;
      text += mul ? '*' : '+';
      text += static_cast<char>('0' + operand);
    }
    acc %= spec.modulus;
    text += '%';
    text += std::to_string(spec.modulus);
    gt = std::to_string(acc);
  } else {
    auto draw_number = [&](int digits) {
      std::string s;
      for (int i = 0; i < digits; ++i) {
        const int lo = (i == 0 && digits > 1) ? 1 : 0;
        s += static_cast<char>('0' + lo + static_cast<int>(rng.below(
                                              static_cast<uint64_t>(10 - lo))));
      }
      return s;
    };
    const std::string a = draw_number(spec.difficulty);
    const std::string b = draw_number(spec.difficulty);
    text = a + "+" + b;
    gt = std::to_string(std::stoll(a) + std::stoll(b));
  }

  t.question_text = text;
  t.ground_truth = gt;
  t.question_tokens.push_back(tok::BOS);
  for (int id : Vocabulary::encode(text)) t.question_tokens.push_back(id);
  t.question_tokens.push_back(tok::QUESTION_END);
  t.id = fnv1a(text + "=" + gt);
  return t;
}

std::optional<std::string> canonicalize_answer(const std::string& answer) {
  if (answer.empty()) return std::nullopt;
  for (char c : answer) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  std::size_t i = 0;
  while (i + 1 < answer.size() && answer[i] == '0') ++i;
  return answer.substr(i);
}

bool verify_answer(const TaskInstance& task, const std::string& answer) {
  const auto canon = canonicalize_answer(answer);
  return canon.has_value() && *canon == task.ground_truth;
}

std::optional<std::string> parse_answer(const std::vector<int>& step_tokens) {
  int start = -1;
  int last_begin = -1, last_end = -1;
  for (std::size_t i = 0; i < step_tokens.size(); ++i) {
    if (step_tokens[i] == tok::ANS_OPEN) {
      start = static_cast<int>(i);
    } else if (step_tokens[i] == tok::ANS_CLOSE && start >= 0) {
      last_begin = start + 1;
      last_end = static_cast<int>(i);
      start = -1;
    }
  }
  if (last_begin < 0 || last_end <= last_begin) return std::nullopt;
  std::string s;
  for (int i = last_begin; i < last_end; ++i) {
    if (!tok::is_digit(step_tokens[static_cast<std::size_t>(i)])) {
      return std::nullopt;
    }
    s += static_cast<char>(
        '0' + tok::digit_value(step_tokens[static_cast<std::size_t>(i)]));
  }
  return s;
}

void save_tasks(const std::string& path,
                const std::vector<TaskInstance>& tasks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& t : tasks) {
    nlohmann::json j{{"id", t.id},
                     {"family", family_name(t.spec.family)},
                     {"question", t.question_text},
                     {"ground_truth", t.ground_truth},
                     {"seed", t.spec.seed},
                     {"difficulty", t.spec.difficulty},
                     {"modulus", t.spec.modulus}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

std::vector<TaskInstance> load_tasks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<TaskInstance> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    TaskInstance t;
    t.id = j.at("id").get<std::uint64_t>();
    t.spec.family = family_from_name(j.at("family").get<std::string>());
    t.spec.seed = j.at("seed").get<std::uint64_t>();
    t.spec.difficulty = j.at("difficulty").get<int>();
    t.spec.modulus = j.at("modulus").get<int>();
    t.question_text = j.at("question").get<std::string>();
    t.ground_truth = j.at("ground_truth").get<std::string>();
    t.question_tokens.push_back(tok::BOS);
    for (int id : Vocabulary::encode(t.question_text)) {
      t.question_tokens.push_back(id);
    }
    t.question_tokens.push_back(tok::QUESTION_END);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace rta
