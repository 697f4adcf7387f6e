#pragma once

#include <string>
#include <vector>

#include "rta/sampling.hpp"

namespace rta {

struct OopsLexicon {
  // Cue token sequences searched for inside think segments.
  std::vector<std::vector<int>> cues = {{tok::REVISE_CUE}};
  bool count_answer_revisions = true;
};

// Cue occurrences across all think segments plus (when enabled) the number
// of steps t >= 2 whose parsed answer differs from the previous step's.
int oops_count(const Trajectory& trajectory, const OopsLexicon& lexicon);

// Generated tokens over retained steps; question tokens excluded.
int decoding_token_count(const Trajectory& trajectory);

// CSV emitter with atomic flushes (write-then-rename) and 17-significant-
// digit decimal serialization so re-parses round-trip exactly.
class CsvEmitter {
 public:
  CsvEmitter(std::string path, std::vector<std::string> columns);

  void append(const std::vector<double>& row);
  void flush();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

std::string format_g17(double v);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  int column(const std::string& name) const;
};
CsvTable read_csv(const std::string& path);

// Least-squares slope of y over x = 0..n-1.
double least_squares_slope(const std::vector<double>& y);

}  // namespace rta
