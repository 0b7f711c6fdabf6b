#pragma once

// Trial lists ("label enroll test", single spaces) and score files
// ("#streams: a b c" header, then "trial_id<TAB>label<TAB>score...").

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msv/error.hpp"
#include "msv/kv.hpp"

namespace msv::metrics {

struct Trial {
  int label = 0;  // 1 target, 0 nontarget
  std::string enroll;
  std::string test;
};

using TrialList = std::vector<Trial>;

/// Per-trial labels and one score column per stream.
struct ScoreSet {
  std::vector<std::string> trial_ids;
  std::vector<int> labels;
  std::vector<std::string> streams;
  std::vector<std::vector<double>> scores;  // [trial][stream]

  std::size_t num_trials() const { return labels.size(); }
  std::size_t num_streams() const { return streams.size(); }

  std::vector<double> Column(std::size_t s) const {
    if (s >= num_streams()) Fail(ErrorKind::kDimMismatch, "stream index out of range");
    std::vector<double> out(num_trials());
    for (std::size_t i = 0; i < num_trials(); ++i) out[i] = scores[i][s];
    return out;
  }

  std::size_t StreamIndex(const std::string &name) const {
    for (std::size_t s = 0; s < streams.size(); ++s)
      if (streams[s] == name) return s;
    Fail(ErrorKind::kInvalidArgument, "no stream named '" + name + "'");
  }
};

inline std::vector<std::string> SplitOn(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline TrialList ReadTrials(std::istream &is) {
  TrialList trials;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = SplitOn(line, ' ');
    if (f.size() != 3 || (f[0] != "0" && f[0] != "1") || f[1].empty() || f[2].empty())
      Fail(ErrorKind::kMalformedInput, "trial list line " + std::to_string(lineno) + ": expected 'label enroll test'");
    trials.push_back({f[0] == "1" ? 1 : 0, f[1], f[2]});
  }
  return trials;
}

inline void WriteTrials(std::ostream &os, const TrialList &trials) {
  for (const Trial &t : trials) os << t.label << ' ' << t.enroll << ' ' << t.test << '\n';
}

inline TrialList LoadTrials(const std::string &path) {
  std::ifstream is(path);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  return ReadTrials(is);
}

inline void SaveTrials(const std::string &path, const TrialList &trials) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  WriteTrials(os, trials);
}

inline std::string FormatScore(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void WriteScores(std::ostream &os, const ScoreSet &set) {
  os << "#streams:";
  for (const auto &s : set.streams) os << ' ' << s;
  os << '\n';
  for (std::size_t i = 0; i < set.num_trials(); ++i) {
    os << set.trial_ids[i] << '\t' << set.labels[i];
    for (double v : set.scores[i]) os << '\t' << FormatScore(v);
    os << '\n';
  }
}

inline ScoreSet ReadScores(std::istream &is) {
  ScoreSet set;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("#streams:", 0) != 0) Fail(ErrorKind::kMalformedInput, "scores file must start with '#streams:'");
      std::istringstream names(line.substr(9));
      std::string name;
      while (names >> name) set.streams.push_back(name);
      if (set.streams.empty()) Fail(ErrorKind::kMalformedInput, "'#streams:' header names no streams");
      header = true;
      continue;
    }
    const auto f = SplitOn(line, '\t');
    if (f.size() != 2 + set.streams.size())
      Fail(ErrorKind::kMalformedInput, "scores line " + std::to_string(lineno) + ": expected " +
                                           std::to_string(2 + set.streams.size()) + " tab-separated fields");
    if (f[1] != "0" && f[1] != "1")
      Fail(ErrorKind::kMalformedInput, "scores line " + std::to_string(lineno) + ": label must be 0 or 1");
    set.trial_ids.push_back(f[0]);
    set.labels.push_back(f[1] == "1" ? 1 : 0);
    std::vector<double> row;
    for (std::size_t s = 2; s < f.size(); ++s) row.push_back(ParseDouble("score", f[s]));
    set.scores.push_back(std::move(row));
  }
  if (!header) Fail(ErrorKind::kMalformedInput, "empty scores file");
  return set;
}

inline ScoreSet LoadScores(const std::string &path) {
  std::ifstream is(path);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  return ReadScores(is);
}

inline void SaveScores(const std::string &path, const ScoreSet &set) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  WriteScores(os, set);
}

}  // namespace msv::metrics
