#include "rta/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rta/errors.hpp"

namespace rta {

namespace {

// Think segment of a step: tokens after the first THINK_OPEN up to the
// first following THINK_CLOSE (or the step end when unclosed).
std::vector<int> think_segment(const std::vector<int>& tokens) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < tokens.size() && tokens[i] != tok::THINK_OPEN) ++i;
  if (i == tokens.size()) return out;
  for (++i; i < tokens.size() && tokens[i] != tok::THINK_CLOSE; ++i) {
    out.push_back(tokens[i]);
  }
  return out;
}

int count_occurrences(const std::vector<int>& haystack,
                      const std::vector<int>& needle) {
  if (needle.empty() || haystack.size() < needle.size()) return 0;
  int count = 0;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool hit = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (haystack[i + j] != needle[j]) {
        hit = false;
        break;
      }
    }
    if (hit) ++count;
  }
  return count;
}

}  // namespace

int oops_count(const Trajectory& trajectory, const OopsLexicon& lexicon) {
  int count = 0;
  for (const Step& step : trajectory.steps) {
    const std::vector<int> think = think_segment(step.tokens);
    for (const auto& cue : lexicon.cues) {
      count += count_occurrences(think, cue);
    }
  }
  if (lexicon.count_answer_revisions) {
    for (std::size_t t = 1; t < trajectory.steps.size(); ++t) {
      if (trajectory.steps[t].parsed_answer !=
          trajectory.steps[t - 1].parsed_answer) {
        ++count;
      }
    }
  }
  return count;
}

int decoding_token_count(const Trajectory& trajectory) {
  return trajectory.decoding_tokens();
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvEmitter::CsvEmitter(std::string path, std::vector<std::string> columns)
    : path_(std::move(path)), columns_(std::move(columns)) {}

void CsvEmitter::append(const std::vector<double>& row) {
  if (row.size() != columns_.size()) {
    throw Error("csv append: row width " + std::to_string(row.size()) +
                " != " + std::to_string(columns_.size()) + " columns");
  }
  rows_.push_back(row);
}

void CsvEmitter::flush() {
  namespace fs = std::filesystem;
  const std::string tmp = path_ + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      out << (i ? "," : "") << columns_[i];
    }
    out << "\n";
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        out << (i ? "," : "") << format_g17(row[i]);
      }
      out << "\n";
    }
    out.close();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path_, ec);
  if (ec) throw IoError("rename failed for " + path_ + ": " + ec.message());
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  throw Error("csv: no column named " + name);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable table;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (header) {
      while (std::getline(ss, cell, ',')) table.columns.push_back(cell);
      header = false;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    table.rows.push_back(std::move(row));
  }
  return table;
}

double least_squares_slope(const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (n < 2) return 0.0;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += y[i];
    sxx += x * x;
    sxy += x * y[i];
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

}  // namespace rta
