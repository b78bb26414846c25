#pragma once

// Supervised token-sequence datasets shared by every task.
//
// Text serialization, one example per line: space-separated input token ids,
// a tab, then the supervised label ids (one per supervised position). A
// single header line "# mint-dataset kind=<kind> vocab=<n>" makes files
// self-describing; the kind determines which positions the labels apply to.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mint/core/error.hpp"

namespace mint::tasks {

/// Which sequence positions carry supervision.
///   final_position: one label, predicted at the last input position
///   second_half:    labels are tokens L..2L-1, predicted at L-1..2L-2
///   next_token:     labels are tokens 1..T-1, predicted at 0..T-2
enum class SupervisionKind { kFinalPosition, kSecondHalf, kNextToken };

inline const char* supervision_name(SupervisionKind k) {
  switch (k) {
    case SupervisionKind::kFinalPosition: return "final_position";
    case SupervisionKind::kSecondHalf: return "second_half";
    case SupervisionKind::kNextToken: return "next_token";
  }
  throw ContractError("unreachable supervision kind");
}

inline SupervisionKind supervision_from_name(const std::string& name) {
  if (name == "final_position") return SupervisionKind::kFinalPosition;
  if (name == "second_half") return SupervisionKind::kSecondHalf;
  if (name == "next_token") return SupervisionKind::kNextToken;
  throw InputError("unknown supervision kind '" + name + "'");
}

struct Example {
  std::vector<int> tokens;
  std::vector<int> labels;
};

struct Dataset {
  int vocab_size = 0;
  SupervisionKind kind = SupervisionKind::kFinalPosition;
  std::vector<Example> examples;

  /// Input positions whose logits are supervised, aligned with labels.
  static std::vector<int> label_positions(const Example& ex, SupervisionKind kind) {
    std::vector<int> out;
    const int t = static_cast<int>(ex.tokens.size());
    switch (kind) {
      case SupervisionKind::kFinalPosition:
        out.push_back(t - 1);
        break;
      case SupervisionKind::kSecondHalf: {
        const int half = t / 2;
        for (int p = half - 1; p < t - 1; ++p) out.push_back(p);
        break;
      }
      case SupervisionKind::kNextToken:
        for (int p = 0; p < t - 1; ++p) out.push_back(p);
        break;
    }
    if (out.size() != ex.labels.size())
      throw ContractError("example has " + std::to_string(ex.labels.size()) + " labels but " +
                          std::to_string(out.size()) + " supervised positions");
    return out;
  }

  std::vector<int> label_positions(const Example& ex) const { return label_positions(ex, kind); }

  int max_seq_len() const {
    std::size_t m = 0;
    for (const auto& ex : examples) m = std::max(m, ex.tokens.size());
    return static_cast<int>(m);
  }
};

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f << "# mint-dataset kind=" << supervision_name(ds.kind) << " vocab=" << ds.vocab_size << "\n";
  for (const auto& ex : ds.examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) f << (i ? " " : "") << ex.tokens[i];
    f << "\t";
    for (std::size_t i = 0; i < ex.labels.size(); ++i) f << (i ? " " : "") << ex.labels[i];
    f << "\n";
  }
  if (!f) throw InputError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for reading");
  Dataset ds;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  auto parse_ids = [&](const std::string& text) {
    std::vector<int> ids;
    std::istringstream is(text);
    int v = 0;
    while (is >> v) ids.push_back(v);
    return ids;
  };
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string word;
      while (is >> word) {
        auto eq = word.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = word.substr(0, eq), val = word.substr(eq + 1);
        if (key == "kind") {
          ds.kind = supervision_from_name(val);
          saw_header = true;
        } else if (key == "vocab") {
          ds.vocab_size = std::stoi(val);
        }
      }
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ConfigError("dataset line missing tab separator", line_no);
    Example ex;
    ex.tokens = parse_ids(line.substr(0, tab));
    ex.labels = parse_ids(line.substr(tab + 1));
    if (ex.tokens.empty()) throw ConfigError("dataset line has no tokens", line_no);
    ds.examples.push_back(std::move(ex));
  }
  if (!saw_header) throw InputError("'" + path + "' has no mint-dataset header line");
  for (const auto& ex : ds.examples) Dataset::label_positions(ex, ds.kind);
  return ds;
}

}  // namespace mint::tasks
