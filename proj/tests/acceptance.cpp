// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. The first argument, if given,
// replaces the desk-scale config.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "oracles.hpp"

using namespace advgame;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double limit_seconds;  // 0 means no runtime limit
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string err3(double x) { return fmt("%.3f", x); }

class Report {
 public:
  void run(const Criterion& c, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() + carried_;
    carried_ = 0.0;
    bool pass = o.pass;
    std::string detail = o.detail;
    if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
      pass = false;
      detail += "; over the " + fmt("%.0f", c.limit_seconds) + " s limit";
    }
    std::printf("%s  C%-2d %s: %s [%.1f s]\n", pass ? "PASS" : "FAIL", c.id, c.title.c_str(), detail.c_str(),
                secs);
    std::fflush(stdout);
    passed_ += pass;
    ++total_;
  }

  /// Adds shared setup time (e.g. a trained checkpoint) to the next criterion.
  void carry(double seconds) { carried_ += seconds; }

  int finish() const {
    std::printf("%d/%d criteria passed\n", passed_, total_);
    return passed_ == total_ ? 0 : 1;
  }

 private:
  int passed_ = 0, total_ = 0;
  double carried_ = 0.0;
};

template <class F>
auto timed(double& seconds, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = f();
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Exact and property criteria
// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  double first = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) first = std::max(first, oracle::first_order_worst(seed));
  const double second = oracle::second_order_worst(20);
  return {first < 1e-6 && second < 1e-4,
          "first-order max rel err " + fmt("%.2e", first) + " (< 1e-6), second-order " + fmt("%.2e", second) +
              " (< 1e-4), 20 seeds"};
}

Outcome analytic_second_order() {
  auto penalty_grad = [](const TapePayoff& f, double u, double v) {
    const std::vector<Tensor> uu{Tensor::scalar(u)}, vv{Tensor::scalar(v)};
    return grad_of_gradnorm(f, uu, vv)[0].item();
  };
  const TapePayoff uv = [](Tape& t, std::span<const Var> u, std::span<const Var> v) { return t.mul(u[0], v[0]); };
  const TapePayoff u2v2 = [](Tape& t, std::span<const Var> u, std::span<const Var> v) {
    return t.mul(t.mul(u[0], u[0]), t.mul(v[0], v[0]));
  };
  double worst = 0.0;
  for (double u : {-2.0, 0.5, 3.0}) worst = std::max(worst, std::abs(penalty_grad(uv, u, 0.7) - u));
  const double quartic = penalty_grad(u2v2, 1.0, 2.0);
  worst = std::max(worst, std::abs(quartic - 32.0));
  return {worst <= 1e-12, "uv -> u at three points, u^2v^2 at (1,2) -> " + fmt("%.15g", quartic) +
                              ", max abs err " + fmt("%.1e", worst)};
}

Outcome bilinear_contrast() {
  const auto pen = verify::bilinear_run(1.0, 2000, 0.1, 0.1);
  const auto plain = verify::bilinear_run(0.0, 2000, 0.1, 0.1);
  const bool ok = pen.first_below <= 2000 && plain.min_norm >= 1.0;
  return {ok, "penalized play below 1e-3 at iterate " + std::to_string(pen.first_below) +
                  ", plain play minimum norm " + fmt("%.4f", plain.min_norm)};
}

Outcome ordering_suite() {
  std::vector<PayoffFn> games = toy_game_suite();
  for (std::uint64_t k = 0; k < 50; ++k) games.push_back(random_polynomial_game(derive_seed(k, "acceptance-poly")));
  std::size_t failing = 0, oracle_mismatch = 0;
  for (std::size_t k = 0; k < games.size(); ++k) {
    const auto r = lemma1_check(games[k], 201, 100, k);
    // Independent brute-force grid values.
    double minimax = std::numeric_limits<double>::infinity(), maximin = -minimax;
    std::vector<double> col_min(201, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < 201; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      const double u = -1.0 + 2.0 * static_cast<double>(i) / 200.0;
      for (std::size_t j = 0; j < 201; ++j) {
        const double f = games[k].eval(u, -1.0 + 2.0 * static_cast<double>(j) / 200.0);
        row_max = std::max(row_max, f);
        col_min[j] = std::min(col_min[j], f);
      }
      minimax = std::min(minimax, row_max);
    }
    for (double m : col_min) maximin = std::max(maximin, m);
    if (std::abs(r.minimax.value - minimax) > 1e-12 || std::abs(r.maximin.value - maximin) > 1e-12) ++oracle_mismatch;
    if (!r.all_hold() || maximin > minimax) ++failing;
  }
  return {failing == 0 && oracle_mismatch == 0,
          std::to_string(games.size()) + " games, " + std::to_string(failing) + " violating, " +
              std::to_string(oracle_mismatch) + " disagreeing with the brute-force grid"};
}

// ---------------------------------------------------------------------------
// Desk-scale experiment
// ---------------------------------------------------------------------------

struct Desk {
  ExperimentConfig config;
  LoadedData data;
  AttackBudget budget;
  ClassifierParams undefended;
  std::vector<CatMouseRound> rounds;
  ClassifierParams minimax_grad, minimax_attnet;
  EvalMatrix matrix;
};

double fgsm_from(const ClassifierParams& u, const ClassifierParams& source, const Desk& d) {
  return error_rate(u, AttackSpec{FgsmAttack{}, d.budget}, d.data.test, &source);
}

EvalMatrix desk_matrix(const ExperimentConfig& c, const LoadedData& data, const ClassifierParams& base,
                       const std::vector<CatMouseRound>& rounds, const ClassifierParams& mg,
                       const ClassifierParams& mma) {
  const AttackBudget budget{c.max_eta()};
  std::vector<NamedClassifier> rows{{"No defense", base}};
  std::vector<AttackColumn> cols{{"No attack", NoAttackColumn{}}};
  for (const auto& r : rounds) {
    const std::string k = std::to_string(r.round);
    cols.push_back({"FGSM" + k, FixedAttackColumn{AttackSpec{FgsmAttack{}, budget}, r.attack_source}});
    rows.push_back({"AdvFGSM" + k, r.defense});
  }
  rows.push_back({"Minimax-Grad", mg});
  rows.push_back({"Minimax-AttNet", mma});
  cols.push_back({"FGSM-curr", CurrentAttackColumn{AttackSpec{FgsmAttack{}, budget}}});
  cols.push_back(pipeline::attnet_curr_column(c));
  return build_matrix(rows, cols, data.test, data.train, pipeline::matrix_seed(c), c.workers);
}

/// Everything C11 compares byte for byte, from one run on `c`.
std::vector<std::string> pipeline_bytes(const ExperimentConfig& c) {
  const auto data = load_data(c);
  const auto base = pipeline::undefended(c, data);
  const auto rounds = pipeline::cat_and_mouse_rounds(c, data, base.params);
  const auto mg = pipeline::run_defense(c, data, DefenseKind::MinimaxGrad);
  const auto mma = pipeline::run_defense(c, data, DefenseKind::MinimaxAttNet);
  const auto attack = pipeline::train_attack(c, data, mg.u, {c.max_eta()});
  auto bytes = [](const auto& p) {
    const auto b = encode_params(p);
    return std::string(b.begin(), b.end());
  };
  std::vector<std::string> out{bytes(base.params), trace_jsonl(base.trace), bytes(mg.u),  trace_jsonl(mg.trace),
                               bytes(mma.u),       bytes(*mma.v),           bytes(attack), trace_jsonl(mma.trace)};
  for (const auto& r : rounds) out.push_back(bytes(r.defense));
  out.push_back(matrix_csv(desk_matrix(c, data, base.params, rounds, mg.u, mma.u)));
  return out;
}

Outcome determinism_and_formats() {
  std::vector<std::string> problems;
  const auto smoke = load_config(std::string(ADVGAME_CONFIGS) + "/smoke.json");
  const auto a = pipeline_bytes(smoke);
  const auto b = pipeline_bytes(smoke);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differing += a[i] != b[i];
  if (differing) problems.push_back(std::to_string(differing) + " artifacts differ between runs");

  const auto idx = load_idx(oracle::fixture("mnist2-images.idx"), oracle::fixture("mnist2-labels.idx"));
  const auto idx_lines = oracle::read_lines(oracle::fixture("mnist2-expected.txt"));
  bool idx_ok = idx_lines.size() == 3 && idx.size() == 2;
  for (std::size_t i = 0; idx_ok && i < 2; ++i) {
    idx_ok = idx.labels[i] == static_cast<int>(oracle::parse_numbers(idx_lines[0])[i]);
    const auto want = oracle::parse_numbers(idx_lines[i + 1]);
    idx_ok = idx_ok && want.size() == idx.dim();
    for (std::size_t k = 0; idx_ok && k < want.size(); ++k) idx_ok = idx.features(i, k) == want[k];
  }
  if (!idx_ok) problems.push_back("IDX fixture mismatch");

  const std::vector<std::filesystem::path> cifar_paths{oracle::fixture("cifar2.bin")};
  const auto cifar = load_cifar10(cifar_paths);
  const auto cifar_lines = oracle::read_lines(oracle::fixture("cifar2-expected.txt"));
  bool cifar_ok = cifar_lines.size() == 3 && cifar.size() == 2;
  for (std::size_t i = 0; cifar_ok && i < 2; ++i) {
    cifar_ok = cifar.labels[i] == static_cast<int>(oracle::parse_numbers(cifar_lines[0])[i]);
    const auto want = oracle::parse_numbers(cifar_lines[i + 1]);
    cifar_ok = cifar_ok && want.size() == cifar.dim();
    for (std::size_t k = 0; cifar_ok && k < want.size(); ++k) cifar_ok = std::abs(cifar.features(i, k) - want[k]) <= 1e-12;
  }
  if (!cifar_ok) problems.push_back("CIFAR fixture mismatch");

  EvalMatrix m;
  m.row_labels = {"No defense", "AdvFGSM1", "Minimax-Grad"};
  m.column_labels = {"No attack", "FGSM1", "FGSM-curr"};
  m.cells = {{0.004, 0.9371, 0.9371}, {0.048, 0.0761, 0.99349}, {0.359, 0.2843, std::nullopt}};
  if (matrix_csv(m) != oracle::read_bytes(oracle::fixture("matrix-expected.csv"))) problems.push_back("CSV mismatch");
  ConvergenceTrace t;
  t.samples = {{0, 0.5, 0.75, 0.0}, {50, 0.125, 0.25, 0.0}};
  if (trace_jsonl(t) != oracle::read_bytes(oracle::fixture("trace-expected.jsonl"))) problems.push_back("trace mismatch");

  std::string detail = std::to_string(a.size()) + " artifacts identical across two runs; IDX, CIFAR, CSV and trace fixtures match";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config_path = argc > 1 ? argv[1] : ADVGAME_DESK_CONFIG;
  Report report;

  report.run({1, "gradient correctness", 30}, gradient_correctness);
  report.run({2, "analytic second-order cases", 0}, analytic_second_order);
  report.run({3, "penalized vs plain play on the bilinear game", 1}, bilinear_contrast);
  report.run({4, "ordering properties on grid games", 60}, ordering_suite);

  Desk d;
  d.config = load_config(config_path);
  d.data = load_data(d.config);
  d.budget = {d.config.max_eta()};
  std::printf("desk config %s: eta %.2f, %zu train / %zu test, d=%zu\n", config_path.c_str(), d.budget.eta,
              d.data.train.size(), d.data.test.size(), d.data.train.dim());

  report.run({5, "FGSM effectiveness", 120}, [&]() -> Outcome {
    d.undefended = pipeline::undefended(d.config, d.data).params;
    const double clean = error_rate(d.undefended, std::nullopt, d.data.test);
    const double attacked = error_rate(d.undefended, AttackSpec{FgsmAttack{}, d.budget}, d.data.test);
    return {clean <= 0.05 && attacked >= 8.0 * clean && attacked > clean,
            "clean " + err3(clean) + " (<= 0.05), FGSM " + err3(attacked) + " (>= 8x clean = " +
                err3(8.0 * clean) + ")"};
  });

  report.run({6, "adversarial training against a fixed FGSM set", 120}, [&]() -> Outcome {
    ExperimentConfig one = d.config;
    one.rounds = 1;
    const auto r = pipeline::cat_and_mouse_rounds(one, d.data, d.undefended);
    const double clean = error_rate(d.undefended, std::nullopt, d.data.test);
    const double own_clean = error_rate(r[0].defense, std::nullopt, d.data.test);
    const double on_attack = fgsm_from(r[0].defense, d.undefended, d);
    return {on_attack <= 2.0 * clean,
            "AdvFGSM1 on FGSM1 " + err3(on_attack) + " vs 2x undefended clean " + err3(2.0 * clean) +
                " (AdvFGSM1 own clean error " + err3(own_clean) + ")"};
  });

  report.run({7, "cat-and-mouse myopia", 600}, [&]() -> Outcome {
    d.rounds = pipeline::cat_and_mouse_rounds(d.config, d.data, d.undefended);
    int ok = 0;
    std::string detail;
    for (const auto& r : d.rounds) {
      const double prev = fgsm_from(r.defense, r.attack_source, d);
      const double next = fgsm_from(r.defense, r.defense, d);
      ok += prev < next;
      detail += (detail.empty() ? "" : ", ") + std::string("k=") + std::to_string(r.round) + " " + err3(prev) +
                (prev < next ? "<" : ">=") + err3(next);
    }
    return {ok >= 4 && d.rounds.size() == 5, std::to_string(ok) + "/5 rounds (>= 4): " + detail};
  });

  report.run({8, "Minimax-Grad worst-case dominance", 600}, [&]() -> Outcome {
    d.minimax_grad = pipeline::run_defense(d.config, d.data, DefenseKind::MinimaxGrad).u;
    auto worst = [&](const ClassifierParams& u) {
      return std::max(fgsm_from(u, d.undefended, d), fgsm_from(u, u, d));
    };
    const double mg = worst(d.minimax_grad), adv1 = worst(d.rounds.at(0).defense), none = worst(d.undefended);
    return {mg <= adv1 && mg <= none, "worst over {FGSM1, FGSM-curr}: Minimax-Grad " + err3(mg) + ", AdvFGSM1 " +
                                          err3(adv1) + ", No defense " + err3(none)};
  });

  double mma_seconds = 0.0, matrix_seconds = 0.0;
  d.minimax_attnet =
      timed(mma_seconds, [&] { return pipeline::run_defense(d.config, d.data, DefenseKind::MinimaxAttNet).u; });
  d.matrix = timed(matrix_seconds, [&] {
    return desk_matrix(d.config, d.data, d.undefended, d.rounds, d.minimax_grad, d.minimax_attnet);
  });
  write_matrix_csv(d.matrix, "acceptance_matrix.csv");
  std::printf("defense x attack matrix at eta %.2f (also in acceptance_matrix.csv):\n%s", d.budget.eta,
              matrix_csv(d.matrix).c_str());
  const std::size_t rows = d.matrix.row_labels.size();
  // Each AttNet-curr cell trains its own attack network; charge one row's
  // share of the matrix to C9 and the Minimax-AttNet game plus two rows to C10.
  const double per_row = matrix_seconds / static_cast<double>(rows);

  report.carry(per_row);
  report.run({9, "attack network vs FGSM on Minimax-Grad", 600}, [&]() -> Outcome {
    const double attnet = *d.matrix.at("Minimax-Grad", "AttNet-curr");
    const double fgsm = *d.matrix.at("Minimax-Grad", "FGSM-curr");
    return {attnet >= 1.5 * fgsm, "AttNet-curr " + err3(attnet) + " vs 1.5x FGSM-curr " + err3(1.5 * fgsm)};
  });

  report.carry(mma_seconds + 2 * per_row);
  report.run({10, "Minimax-AttNet robustness", 900}, [&]() -> Outcome {
    const double mma = *d.matrix.at("Minimax-AttNet", "AttNet-curr");
    const double mg = *d.matrix.at("Minimax-Grad", "AttNet-curr");
    return {mma <= 0.5 * mg, "AttNet-curr on Minimax-AttNet " + err3(mma) + " vs half of that on Minimax-Grad " +
                                 err3(0.5 * mg)};
  });

  report.run({11, "determinism and file formats", 0}, determinism_and_formats);
  return report.finish();
}
