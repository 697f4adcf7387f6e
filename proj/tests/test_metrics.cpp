#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rta/metrics.hpp"
#include "rta/rng.hpp"

using namespace rta;

namespace {

Step step_with(std::vector<int> think, std::optional<std::string> answer) {
  Step s;
  s.tokens.push_back(tok::THINK_OPEN);
  s.tokens.insert(s.tokens.end(), think.begin(), think.end());
  s.tokens.push_back(tok::THINK_CLOSE);
  if (answer) {
    s.tokens.push_back(tok::ANS_OPEN);
    for (char c : *answer) s.tokens.push_back(tok::digit(c - '0'));
    s.tokens.push_back(tok::ANS_CLOSE);
  }
  s.parsed_answer = std::move(answer);
  s.terminator = tok::STEP_SEP;
  return s;
}

// Brute-force recount used as an oracle: scan every step's think segment
// for each cue, then count differing consecutive answers.
int oops_oracle(const Trajectory& t, const OopsLexicon& lex) {
  int count = 0;
  for (const Step& s : t.steps) {
    std::vector<int> think;
    bool in = false;
    for (int tk : s.tokens) {
      if (tk == tok::THINK_OPEN && !in) {
        in = true;
        continue;
      }
      if (tk == tok::THINK_CLOSE && in) break;
      if (in) think.push_back(tk);
    }
    for (const auto& cue : lex.cues) {
      if (cue.empty()) continue;
      for (std::size_t i = 0; i + cue.size() <= think.size(); ++i) {
        bool hit = true;
        for (std::size_t j = 0; j < cue.size(); ++j) {
          if (think[i + j] != cue[j]) hit = false;
        }
        if (hit) ++count;
      }
    }
  }
  if (lex.count_answer_revisions) {
    for (std::size_t i = 1; i < t.steps.size(); ++i) {
      if (t.steps[i].parsed_answer != t.steps[i - 1].parsed_answer) ++count;
    }
  }
  return count;
}

}  // namespace

TEST_CASE("oops_count: spec examples") {
  const OopsLexicon lex;
  Trajectory same;
  same.steps.push_back(step_with({tok::digit(2)}, "5"));
  same.steps.push_back(step_with({tok::digit(3)}, "5"));
  CHECK(oops_count(same, lex) == 0);

  Trajectory revised;
  revised.steps.push_back(step_with({tok::REVISE_CUE}, "3"));
  revised.steps.push_back(step_with({tok::REVISE_CUE, tok::digit(1)}, "7"));
  CHECK(oops_count(revised, lex) == 2 + 1);

  Trajectory single;
  single.steps.push_back(step_with({tok::digit(4)}, "4"));
  CHECK(oops_count(single, lex) == 0);
  CHECK(oops_count(Trajectory{}, lex) == 0);
}

TEST_CASE("oops_count matches the brute-force oracle on random trajectories") {
  OopsLexicon lex;
  lex.cues = {{tok::REVISE_CUE}, {tok::digit(9), tok::digit(9)}};
  Rng rng(91);
  for (int trial = 0; trial < 1000; ++trial) {
    Trajectory t;
    const int n = 1 + static_cast<int>(rng.below(4));
    for (int s = 0; s < n; ++s) {
      std::vector<int> think;
      const int len = static_cast<int>(rng.below(8));
      for (int i = 0; i < len; ++i) {
        const int pick = static_cast<int>(rng.below(4));
        think.push_back(pick == 0 ? tok::REVISE_CUE : tok::digit(9));
      }
      const bool has_answer = rng.below(4) != 0;
      t.steps.push_back(step_with(
          think, has_answer ? std::optional<std::string>(
                                  std::to_string(rng.below(3)))
                            : std::nullopt));
    }
    CHECK(oops_count(t, lex) == oops_oracle(t, lex));
  }
}

TEST_CASE("decoding token count is additive over steps") {
  Trajectory t;
  CHECK(decoding_token_count(t) == 0);
  t.steps.push_back(step_with({tok::digit(1)}, "5"));  // 6 tokens + sep
  CHECK(decoding_token_count(t) == 7);
  t.steps.push_back(step_with({tok::digit(2), tok::digit(3)}, "6"));
  CHECK(decoding_token_count(t) == 7 + 8);
}

TEST_CASE("csv emitter: atomic flushes, single header, exact round-trip") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "rta_metrics_test.csv";
  fs::remove(path);
  CsvEmitter csv(path.string(), {"iteration", "value"});
  csv.append({1.0, 0.1});
  csv.flush();
  csv.append({2.0, 1.0 / 3.0});
  csv.append({3.0, 1e-17});
  csv.flush();

  std::ifstream in(path);
  std::string line;
  int headers = 0, rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("iteration", 0) == 0) ++headers;
    else ++rows;
  }
  CHECK(headers == 1);
  CHECK(rows == 3);

  const CsvTable table = read_csv(path.string());
  CHECK(table.columns == std::vector<std::string>{"iteration", "value"});
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[1][table.column("value")] == 1.0 / 3.0);  // exact
  CHECK(table.rows[2][1] == 1e-17);
  CHECK_THROWS_AS(table.column("missing"), Error);
  CHECK_THROWS_AS(csv.append({1.0}), Error);
  fs::remove(path);
}

TEST_CASE("g17 serialization round-trips doubles exactly") {
  Rng rng(92);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.gaussian() * std::pow(10.0, rng.gaussian() * 3.0);
    CHECK(std::stod(format_g17(v)) == v);
  }
}

TEST_CASE("least_squares_slope") {
  CHECK(least_squares_slope({1.0, 2.0, 3.0, 4.0}) == doctest::Approx(1.0));
  CHECK(least_squares_slope({5.0, 5.0, 5.0}) == doctest::Approx(0.0));
  CHECK(least_squares_slope({3.0, 1.0}) == doctest::Approx(-2.0));
  CHECK(least_squares_slope({7.0}) == 0.0);
}
