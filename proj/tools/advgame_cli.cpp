// Batch experiment runner: train | game | defend | attack | matrix | check.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advgame/advgame.hpp"

namespace fs = std::filesystem;
using namespace advgame;

namespace {

/// Exit status for bad invocations and configs.
constexpr int kUsage = 2;

struct Overrides {
  std::string config;
  std::optional<double> eta, gamma, lambda, sigma;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, optimizer;
  std::optional<std::size_t> iterations, batch, rounds, attnet_iterations, trace_stride;

  void attach(CLI::App* app, bool config_required) {
    auto* c = app->add_option("--config", config, "JSON experiment config");
    if (config_required) c->required();
    app->add_option("--eta", eta, "attack budget (replaces the eta list)");
    app->add_option("--gamma", gamma, "sensitivity penalty coefficient");
    app->add_option("--lambda", lambda, "defender step size");
    app->add_option("--sigma", sigma, "attacker step size");
    app->add_option("--seed", seed, "global seed");
    app->add_option("--out", out, "output root directory");
    app->add_option("--optimizer", optimizer, "sgd or adam");
    app->add_option("--iterations", iterations, "game/defense iterations");
    app->add_option("--batch", batch, "minibatch size");
    app->add_option("--rounds", rounds, "cat-and-mouse rounds");
    app->add_option("--attnet_iterations", attnet_iterations, "attack network training iterations");
    app->add_option("--trace_stride", trace_stride, "trace sampling stride");
  }

  ExperimentConfig load() const {
    Json j = read_json_file(config);
    if (eta) j["eta"] = *eta;
    if (gamma) j["gamma"] = *gamma;
    if (lambda) j["lambda"] = *lambda;
    if (sigma) j["sigma"] = *sigma;
    if (seed) j["seed"] = *seed;
    if (out) j["out"] = *out;
    if (optimizer) j["optimizer"] = *optimizer;
    if (iterations) j["iterations"] = *iterations;
    if (batch) j["batch"] = *batch;
    if (rounds) j["rounds"] = *rounds;
    if (attnet_iterations) j["attnet_iterations"] = *attnet_iterations;
    if (trace_stride) j["trace_stride"] = *trace_stride;
    return config_from_json(j);
  }
};

std::string file_digest(const fs::path& p) {
  const auto bytes = detail::read_file(p);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(std::string(bytes.begin(), bytes.end()))));
  return buf;
}

/// out/<command>-<hash>, created if missing, with the resolved config.
fs::path run_dir(const ExperimentConfig& c, const std::string& command, const std::string& extra) {
  const fs::path dir = c.out / (command + "-" + config_hash(c, command + "\n" + extra));
  fs::create_directories(dir);
  write_text(dir / "config.json", config_to_json(c).dump(2) + "\n");
  return dir;
}

void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

std::string eta_tag(double eta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", eta);
  return buf;
}

int cmd_train(const Overrides& o) {
  const auto c = o.load();
  const auto data = load_data(c);
  const fs::path dir = run_dir(c, "train", "");
  const auto r = pipeline::undefended(c, data);
  save_params(r.params, dir / "classifier.advg");
  write_trace_jsonl(r.trace, dir / "trace.jsonl");
  Json s{{"clean_error", error_rate(r.params, std::nullopt, data.test)}};
  for (double eta : c.eta) {
    s["fgsm_error"][eta_tag(eta)] = error_rate(r.params, AttackSpec{FgsmAttack{}, {eta}}, data.test);
  }
  write_json(dir / "summary.json", s);
  std::cout << dir.string() << "\n" << s.dump(2) << "\n";
  return 0;
}

int cmd_game(const Overrides& o) {
  const auto c = o.load();
  const auto data = load_data(c);
  const fs::path dir = run_dir(c, "game", "");
  const AttackBudget budget{c.max_eta()};
  const auto base = pipeline::undefended(c, data);
  save_params(base.params, dir / "undefended.advg");

  const auto rounds = pipeline::cat_and_mouse_rounds(c, data, base.params);
  Json manifest{{"command", "game"},
                {"eta", budget.eta},
                {"undefended", {{"name", "No defense"}, {"checkpoint", "undefended.advg"},
                                {"fnv1a64", file_digest(dir / "undefended.advg")}}}};
  manifest["rounds"] = Json::array();
  std::string source = "undefended.advg";
  for (const auto& r : rounds) {
    const std::string k = std::to_string(r.round);
    const std::string ckpt = "adv_fgsm" + k + ".advg";
    save_params(r.defense, dir / ckpt);
    manifest["rounds"].push_back(
        {{"round", r.round},
         {"attack", {{"name", "FGSM" + k}, {"kind", "fgsm-set"}, {"split", "train"},
                     {"eta", budget.eta}, {"source_checkpoint", source}}},
         {"defense", {{"name", "AdvFGSM" + k}, {"checkpoint", ckpt},
                      {"fnv1a64", file_digest(dir / ckpt)}}}});
    std::cerr << "round " << k << ": AdvFGSM" << k << " clean error "
              << format_error(error_rate(r.defense, std::nullopt, data.test)) << "\n";
    source = ckpt;
  }
  write_json(dir / "manifest.json", manifest);
  std::cout << (dir / "manifest.json").string() << "\n";
  return 0;
}

int cmd_defend(const Overrides& o, const std::string& variant, const std::string& init) {
  const DefenseKind kind = parse_defense_kind(variant);
  const auto c = o.load();
  const auto data = load_data(c);
  const std::string extra = variant + "\n" + (init.empty() ? "" : file_digest(init));
  const fs::path dir = run_dir(c, "defend", extra);
  const AttackBudget budget{c.max_eta()};

  std::optional<ClassifierParams> u0;
  if (!init.empty()) u0 = load_classifier(init);
  const auto r = pipeline::run_defense(c, data, kind, u0);
  save_params(r.u, dir / "classifier.advg");
  if (r.v) save_params(*r.v, dir / "attnet.advg");
  write_trace_jsonl(r.trace, dir / "trace.jsonl");
  Json s{{"variant", variant},
         {"eta", budget.eta},
         {"clean_error", error_rate(r.u, std::nullopt, data.test)},
         {"fgsm_curr_error", error_rate(r.u, AttackSpec{FgsmAttack{}, budget}, data.test)}};
  write_json(dir / "summary.json", s);
  std::cout << dir.string() << "\n" << s.dump(2) << "\n";
  return 0;
}

int cmd_attack(const Overrides& o, const std::string& kind, const std::string& checkpoint,
               std::size_t steps) {
  if (kind != "fgsm" && kind != "ifgsm" && kind != "gradstep" && kind != "attnet") {
    throw ConfigError("unknown attack kind '" + kind + "' (expected fgsm, ifgsm, gradstep or attnet)");
  }
  const auto c = o.load();
  const auto data = load_data(c);
  const auto u = load_classifier(checkpoint);
  const fs::path dir =
      run_dir(c, "attack", kind + "\n" + std::to_string(steps) + "\n" + file_digest(checkpoint));
  Json s{{"kind", kind},
         {"checkpoint_digest", file_digest(checkpoint)},
         {"clean_error", error_rate(u, std::nullopt, data.test)}};
  for (double eta : c.eta) {
    const AttackBudget b{eta};
    double err;
    if (kind == "attnet") {
      const auto v = pipeline::train_attack(c, data, u, b);
      save_params(v, dir / ("attnet_eta" + eta_tag(eta) + ".advg"));
      err = error_rate(u, AttackSpec{AttNetAttack{v}, b}, data.test);
    } else if (kind == "fgsm") {
      err = error_rate(u, AttackSpec{FgsmAttack{}, b}, data.test);
    } else if (kind == "ifgsm") {
      err = error_rate(u, AttackSpec{IfgsmAttack{steps}, b}, data.test);
    } else {
      err = error_rate(u, AttackSpec{GradStepAttack{}, b}, data.test);
    }
    s["error"][eta_tag(eta)] = err;
  }
  write_json(dir / "attack.json", s);
  std::cout << dir.string() << "\n" << s.dump(2) << "\n";
  return 0;
}

std::pair<std::string, fs::path> split_named(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
    throw ConfigError("expected NAME=PATH, got '" + arg + "'");
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

int cmd_matrix(const Overrides& o, const std::string& game_manifest, const std::vector<std::string>& rows,
               const std::vector<std::string>& fgsm_sources, const std::vector<std::string>& attnets,
               bool fgsm_curr, bool attnet_curr) {
  const auto c = o.load();
  const auto data = load_data(c);
  const AttackBudget budget{c.max_eta()};

  std::vector<NamedClassifier> defenses;
  std::vector<AttackColumn> columns{{"No attack", NoAttackColumn{}}};
  std::string extra;
  if (!game_manifest.empty()) {
    const Json m = read_json_file(game_manifest);
    const fs::path base = fs::path(game_manifest).parent_path();
    const fs::path undefended = base / m.at("undefended").at("checkpoint").get<std::string>();
    defenses.push_back({"No defense", load_classifier(undefended)});
    extra += file_digest(undefended);
    for (const auto& r : m.at("rounds")) {
      const fs::path src = base / r.at("attack").at("source_checkpoint").get<std::string>();
      columns.push_back({r.at("attack").at("name").get<std::string>(),
                         FixedAttackColumn{AttackSpec{FgsmAttack{}, budget}, load_classifier(src)}});
      const fs::path ckpt = base / r.at("defense").at("checkpoint").get<std::string>();
      defenses.push_back({r.at("defense").at("name").get<std::string>(), load_classifier(ckpt)});
      extra += file_digest(ckpt);
    }
  }
  for (const auto& a : rows) {
    auto [name, path] = split_named(a);
    defenses.push_back({name, load_classifier(path)});
    extra += name + file_digest(path);
  }
  for (const auto& a : fgsm_sources) {
    auto [name, path] = split_named(a);
    columns.push_back({name, FixedAttackColumn{AttackSpec{FgsmAttack{}, budget}, load_classifier(path)}});
    extra += name + file_digest(path);
  }
  for (const auto& a : attnets) {
    auto [name, path] = split_named(a);
    columns.push_back({name, FixedAttackColumn{AttackSpec{AttNetAttack{load_attnet(path)}, budget}, std::nullopt}});
    extra += name + file_digest(path);
  }
  if (fgsm_curr) columns.push_back({"FGSM-curr", CurrentAttackColumn{AttackSpec{FgsmAttack{}, budget}}});
  if (attnet_curr) {
    columns.push_back(pipeline::attnet_curr_column(c));
  }
  if (defenses.empty()) throw ConfigError("matrix needs at least one defense (--row or --game)");
  extra += std::to_string(fgsm_curr) + std::to_string(attnet_curr);

  const fs::path dir = run_dir(c, "matrix", extra);
  const auto m = build_matrix(defenses, columns, data.test, data.train, pipeline::matrix_seed(c), c.workers);
  write_matrix_csv(m, dir / "matrix.csv");
  std::string notes;
  for (const auto& n : m.notes) notes += n + "\n";
  write_text(dir / "notes.txt", notes);
  std::cout << (dir / "matrix.csv").string() << "\n" << matrix_csv(m);
  for (const auto& n : m.notes) std::cerr << "invalid cell: " << n << "\n";
  return 0;
}

int cmd_check(bool negate_penalty) {
  const auto results = verify::run_all(negate_penalty);
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    if (!r.passed) ++failed;
  }
  std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial example game: attacks, defenses and evaluation"};
  app.require_subcommand(1);

  Overrides train_o, game_o, defend_o, attack_o, matrix_o, check_o;
  auto* train = app.add_subcommand("train", "plain training (the undefended baseline)");
  train_o.attach(train, true);

  auto* game = app.add_subcommand("game", "cat-and-mouse rounds of FGSM and adversarial training");
  game_o.attach(game, true);

  std::string variant, init;
  auto* defend = app.add_subcommand("defend", "train one defense");
  defend_o.attach(defend, true);
  defend->add_option("--variant", variant,
                     "none | adv-train | lwa | minimax-grad | minimax-attnet | maximin-attnet | alt-attnet")
      ->required();
  defend->add_option("--init", init, "start from this classifier checkpoint");

  std::string attack_kind, checkpoint;
  std::size_t steps = 10;
  auto* attack = app.add_subcommand("attack", "attack a classifier checkpoint at every eta");
  attack_o.attach(attack, true);
  attack->add_option("--kind", attack_kind, "fgsm | ifgsm | gradstep | attnet")->required();
  attack->add_option("--checkpoint", checkpoint, "classifier checkpoint")->required()->check(CLI::ExistingFile);
  attack->add_option("--steps", steps, "IFGSM steps");

  std::string manifest;
  std::vector<std::string> rows, fgsm_sources, attnets;
  bool no_fgsm_curr = false, no_attnet_curr = false;
  auto* matrix = app.add_subcommand("matrix", "defense x attack error matrix");
  matrix_o.attach(matrix, true);
  matrix->add_option("--game", manifest, "cat-and-mouse manifest (adds its rounds)")->check(CLI::ExistingFile);
  matrix->add_option("--row", rows, "defense row NAME=CHECKPOINT");
  matrix->add_option("--fgsm-source", fgsm_sources, "fixed FGSM column NAME=SOURCE_CHECKPOINT");
  matrix->add_option("--attnet", attnets, "fixed attack network column NAME=ATTNET_CHECKPOINT");
  matrix->add_flag("--no-fgsm-curr", no_fgsm_curr, "omit the FGSM-curr column");
  matrix->add_flag("--no-attnet-curr", no_attnet_curr, "omit the AttNet-curr column");

  bool negate_penalty = false;
  auto* check = app.add_subcommand("check", "gradient, second-order and game verification suite");
  check_o.attach(check, false);
  check->add_flag("--inject-penalty-sign-fault", negate_penalty)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*train) return cmd_train(train_o);
    if (*game) return cmd_game(game_o);
    if (*defend) return cmd_defend(defend_o, variant, init);
    if (*attack) return cmd_attack(attack_o, attack_kind, checkpoint, steps);
    if (*matrix) {
      return cmd_matrix(matrix_o, manifest, rows, fgsm_sources, attnets, !no_fgsm_curr, !no_attnet_curr);
    }
    if (*check) return cmd_check(negate_penalty);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
