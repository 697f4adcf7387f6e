#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rta/rng.hpp"

namespace rta {

// Fixed token vocabulary: control markers, digits, operators.
namespace tok {
inline constexpr int PAD = 0;
inline constexpr int BOS = 1;
inline constexpr int EOS = 2;
inline constexpr int QUESTION_END = 3;
inline constexpr int THINK_OPEN = 4;
inline constexpr int THINK_CLOSE = 5;
inline constexpr int ANS_OPEN = 6;
inline constexpr int ANS_CLOSE = 7;
inline constexpr int STEP_SEP = 8;
inline constexpr int REVISE_CUE = 9;
inline constexpr int DIGIT0 = 10;  // '0'..'9' are DIGIT0..DIGIT0+9
inline constexpr int PLUS = 20;
inline constexpr int STAR = 21;
inline constexpr int MOD = 22;
inline constexpr int COUNT = 23;

inline bool is_digit(int t) { return t >= DIGIT0 && t < DIGIT0 + 10; }
inline int digit(int d) { return DIGIT0 + d; }
inline int digit_value(int t) { return t - DIGIT0; }
}  // namespace tok

// Bijective symbol <-> id mapping over the fixed token table.
struct Vocabulary {
  static int size() { return tok::COUNT; }
  // Symbolic name for markers, single characters for digits/operators.
  static std::string symbol(int id);
  static int id(const std::string& symbol);

  // Encodes a string of digits/operators (no markers) to token ids.
  static std::vector<int> encode(const std::string& s);
  // Decodes any token sequence; markers render as <NAME>.
  static std::string decode(const std::vector<int>& tokens);
};

enum class TaskFamily { ModularChain, MultiDigitAdd };

std::string family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& s);

struct TaskSpec {
  TaskFamily family = TaskFamily::ModularChain;
  int difficulty = 2;  // operand count (modular-chain) / digit count (add)
  int modulus = 7;     // modular-chain only
  std::uint64_t seed = 0;

  void validate() const;
};

struct TaskInstance {
  std::uint64_t id = 0;
  std::vector<int> question_tokens;  // BOS ... QUESTION_END
  std::string ground_truth;          // canonical decimal, no leading zeros
  TaskSpec spec;
  std::string question_text;
};

// Deterministic given (spec, rng state). Modular-chain expressions are
// evaluated left-to-right with the modulus applied at the end.
TaskInstance generate_task(const TaskSpec& spec, Rng& rng);

// Strips leading zeros; returns nullopt for empty/non-digit strings.
std::optional<std::string> canonicalize_answer(const std::string& answer);

// True iff answer canonicalizes to the instance's ground truth.
bool verify_answer(const TaskInstance& task, const std::string& answer);

// Digit string strictly between the last complete ANS_OPEN..ANS_CLOSE pair
// of a step, or nullopt when no well-formed pair exists.
std::optional<std::string> parse_answer(const std::vector<int>& step_tokens);

// Line-delimited task dump IO (JSON records, UTF-8).
void save_tasks(const std::string& path, const std::vector<TaskInstance>& tasks);
std::vector<TaskInstance> load_tasks(const std::string& path);

}  // namespace rta
