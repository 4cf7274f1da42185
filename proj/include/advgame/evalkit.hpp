#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "advgame/attacks.hpp"
#include "advgame/data.hpp"
#include "advgame/error.hpp"
#include "advgame/models.hpp"

namespace advgame {

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

/// Fraction of rows whose predicted class differs from the label.
inline double classification_error(const ClassifierParams& u, const Tensor& x,
                                   std::span<const int> labels) {
  if (labels.empty()) throw DimensionError("classification_error: empty test set");
  const Tensor logits = forward_mlp(u, x);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax(logits.row(i)) != static_cast<std::size_t>(labels[i])) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

/// Test error of u, optionally under an attack. Gradient attacks are
/// computed against `source` when given, otherwise against u itself.
inline double error_rate(const ClassifierParams& u, const std::optional<AttackSpec>& attack,
                         const Dataset& test, const ClassifierParams* source = nullptr) {
  if (test.size() == 0) throw DimensionError("error_rate: empty test set");
  if (!attack) return classification_error(u, test.features, test.labels);
  const PerturbedBatch z = apply_attack(*attack, source ? *source : u, test.features, test.labels);
  return classification_error(u, z.z, test.labels);
}

// ---------------------------------------------------------------------------
// Convergence traces
// ---------------------------------------------------------------------------

struct TraceSample {
  std::size_t iteration = 0;
  double test_error = 0.0;
  double train_risk = 0.0;
  /// Sensitivity penalty added to the leader's objective (0 without one).
  double penalty = 0.0;
};

struct ConvergenceTrace {
  std::vector<TraceSample> samples;

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (i > 0 && samples[i].iteration <= samples[i - 1].iteration) {
        throw Error("trace iterations must be strictly increasing");
      }
      if (!(samples[i].test_error >= 0.0 && samples[i].test_error <= 1.0)) {
        throw Error("trace test error outside [0, 1]");
      }
    }
  }
};

/// One JSON object per line: {"iter", "test_error", "train_risk"}. An empty
/// trace produces an empty file.
inline std::string trace_jsonl(const ConvergenceTrace& trace) {
  std::string out;
  for (const auto& s : trace.samples) {
    nlohmann::ordered_json j;
    j["iter"] = s.iteration;
    j["test_error"] = s.test_error;
    j["train_risk"] = s.train_risk;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

inline void write_trace_jsonl(const ConvergenceTrace& trace, const std::filesystem::path& path) {
  write_text(path, trace_jsonl(trace));
}

// ---------------------------------------------------------------------------
// Defense x attack matrix
// ---------------------------------------------------------------------------

struct NoAttackColumn {};
/// A gradient attack frozen at `source`, or a fixed attack network.
struct FixedAttackColumn {
  AttackSpec spec;
  std::optional<ClassifierParams> source;
};
/// A gradient attack recomputed against each row's classifier.
struct CurrentAttackColumn {
  AttackSpec spec;
};
/// An attack network trained from scratch against each row's classifier.
struct CurrentAttNetColumn {
  AttackBudget budget;
  std::vector<std::size_t> hidden;
  AttNetTrainConfig training;
};

struct AttackColumn {
  std::string name;
  std::variant<NoAttackColumn, FixedAttackColumn, CurrentAttackColumn, CurrentAttNetColumn> kind;
};

struct NamedClassifier {
  std::string name;
  ClassifierParams params;
};

/// Rows are defenses, columns attacks. Invalid cells hold nullopt and an
/// explanation in `notes`.
struct EvalMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> column_labels;
  std::vector<std::vector<std::optional<double>>> cells;
  std::vector<std::string> notes;

  /// Largest valid error in row i.
  std::optional<double> worst(std::size_t i) const {
    std::optional<double> w;
    for (const auto& c : cells.at(i))
      if (c && (!w || *c > *w)) w = c;
    return w;
  }

  std::optional<double> at(const std::string& row, const std::string& col) const {
    const auto r = std::find(row_labels.begin(), row_labels.end(), row);
    const auto c = std::find(column_labels.begin(), column_labels.end(), col);
    if (r == row_labels.end() || c == column_labels.end()) {
      throw Error("matrix has no cell (" + row + ", " + col + ")");
    }
    return cells[static_cast<std::size_t>(r - row_labels.begin())]
                [static_cast<std::size_t>(c - column_labels.begin())];
  }
};

/// Error of one defense under one column's attack.
inline double evaluate_cell(const ClassifierParams& u, const AttackColumn& column,
                            const Dataset& test, const Dataset& attack_train,
                            std::uint64_t row_seed) {
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, NoAttackColumn>) {
          return error_rate(u, std::nullopt, test);
        } else if constexpr (std::is_same_v<K, FixedAttackColumn>) {
          const bool network = std::holds_alternative<AttNetAttack>(k.spec.variant);
          if (!network && !k.source) {
            throw ConfigError("fixed gradient attack '" + column.name + "' has no source classifier");
          }
          return error_rate(u, k.spec, test, network ? nullptr : &*k.source);
        } else if constexpr (std::is_same_v<K, CurrentAttackColumn>) {
          return error_rate(u, k.spec, test);
        } else {
          AttNetTrainConfig cfg = k.training;
          cfg.seed = derive_seed(row_seed, "attnet-curr-batches");
          const auto v0 = init_attnet(derive_seed(row_seed, "attnet-curr-init"), test.dim(),
                                      test.classes, k.hidden);
          const auto trained = attnet_train(u, v0, attack_train, k.budget, cfg);
          return error_rate(u, AttackSpec{AttNetAttack{trained.params}, k.budget}, test);
        }
      },
      column.kind);
}

/// Evaluates every (defense, attack) cell. A failing cell is recorded as
/// invalid instead of aborting the matrix. Rows are independent and run on
/// up to `workers` threads; "-curr" attack training stays within its row.
inline EvalMatrix build_matrix(const std::vector<NamedClassifier>& defenses,
                               const std::vector<AttackColumn>& columns, const Dataset& test,
                               const Dataset& attack_train, std::uint64_t seed,
                               std::size_t workers = 1) {
  EvalMatrix m;
  for (const auto& d : defenses) m.row_labels.push_back(d.name);
  for (const auto& c : columns) m.column_labels.push_back(c.name);
  m.cells.assign(defenses.size(), std::vector<std::optional<double>>(columns.size()));
  std::vector<std::vector<std::string>> row_notes(defenses.size());

  auto run_row = [&](std::size_t i) {
    const std::uint64_t row_seed = derive_seed(seed, "matrix-row:" + defenses[i].name);
    for (std::size_t j = 0; j < columns.size(); ++j) {
      try {
        m.cells[i][j] = evaluate_cell(defenses[i].params, columns[j], test, attack_train, row_seed);
      } catch (const std::exception& e) {
        m.cells[i][j] = std::nullopt;
        row_notes[i].push_back(defenses[i].name + " / " + columns[j].name + ": " + e.what());
      }
    }
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < defenses.size(); ++i) run_row(i);
  } else {
    for (std::size_t start = 0; start < defenses.size(); start += workers) {
      std::vector<std::future<void>> batch;
      for (std::size_t i = start; i < std::min(defenses.size(), start + workers); ++i) {
        batch.push_back(std::async(std::launch::async, run_row, i));
      }
      for (auto& f : batch) f.get();
    }
  }
  for (auto& notes : row_notes)
    for (auto& n : notes) m.notes.push_back(std::move(n));
  return m;
}

inline std::string format_error(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

/// Header row "defense,<attacks...>,worst"; one row per defense; entries
/// with three decimals, invalid cells as "n/a".
inline std::string matrix_csv(const EvalMatrix& m) {
  std::string out = "defense";
  for (const auto& c : m.column_labels) out += "," + c;
  out += ",worst\n";
  for (std::size_t i = 0; i < m.row_labels.size(); ++i) {
    out += m.row_labels[i];
    for (const auto& c : m.cells[i]) out += "," + format_error(c);
    out += "," + format_error(m.worst(i)) + "\n";
  }
  return out;
}

inline void write_matrix_csv(const EvalMatrix& m, const std::filesystem::path& path) {
  write_text(path, matrix_csv(m));
}

/// Parses matrix_csv output. The trailing worst column is dropped.
inline EvalMatrix parse_matrix_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
  };
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("matrix CSV is empty");
  auto header = split(line);
  if (header.size() < 2 || header.front() != "defense" || header.back() != "worst") {
    throw ParseError("matrix CSV header must start with 'defense' and end with 'worst'");
  }
  EvalMatrix m;
  m.column_labels.assign(header.begin() + 1, header.end() - 1);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != header.size()) throw ParseError("matrix CSV row has wrong field count");
    m.row_labels.push_back(fields.front());
    std::vector<std::optional<double>> row;
    for (std::size_t j = 1; j + 1 < fields.size(); ++j) {
      if (fields[j] == "n/a") {
        row.push_back(std::nullopt);
      } else {
        try {
          row.push_back(std::stod(fields[j]));
        } catch (const std::exception&) {
          throw ParseError("matrix CSV entry '" + fields[j] + "' is not a number");
        }
      }
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

}  // namespace advgame
