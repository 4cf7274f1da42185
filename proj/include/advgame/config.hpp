#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advgame/attacks.hpp"
#include "advgame/data.hpp"
#include "advgame/defenses.hpp"
#include "advgame/error.hpp"
#include "advgame/random.hpp"

namespace advgame {

using Json = nlohmann::json;

enum class DatasetKind { Blobs, Mnist, Cifar10 };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Blobs;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  // blobs
  std::size_t dim = 20;
  std::size_t classes = 2;
  double separation = 6.0;
  BlobShape shape;
  // mnist
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  // cifar10
  std::vector<std::filesystem::path> train_files, test_files;
};

/// One experiment. Every random choice derives from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs";
  DatasetConfig dataset;
  std::vector<std::size_t> classifier_hidden{64, 64};
  std::vector<std::size_t> attnet_hidden{300, 300, 300};
  /// Attack budgets; the largest is the headline budget.
  std::vector<double> eta{0.3};
  /// Defense games and adversarial training.
  GameConfig game;
  /// Plain training iterations (the undefended baseline).
  std::size_t train_iterations = 2000;
  /// Adversarial training iterations per cat-and-mouse round.
  std::size_t adv_iterations = 2000;
  std::size_t rounds = 5;
  AttNetTrainConfig attnet_training;
  std::size_t workers = 1;

  double max_eta() const { return *std::max_element(eta.begin(), eta.end()); }

  void validate() const {
    if (eta.empty()) throw ConfigError("at least one eta is required");
    for (double e : eta) AttackBudget{e}.validate();
    game.validate();
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (attnet_training.batch == 0 || !(attnet_training.rate > 0.0)) {
      throw ConfigError("attnet batch and rate must be positive");
    }
    if (workers == 0) throw ConfigError("workers must be >= 1");
    if (dataset.n_train == 0 || dataset.n_test == 0) throw ConfigError("dataset splits must be non-empty");
    auto need = [](const std::filesystem::path& p, const char* key) {
      if (p.empty()) throw ConfigError(std::string("dataset.") + key + " is required");
      if (!std::filesystem::exists(p)) throw ConfigError("dataset file does not exist: " + p.string());
    };
    switch (dataset.kind) {
      case DatasetKind::Blobs:
        if (dataset.dim == 0 || dataset.classes < 2) throw ConfigError("blobs need dim >= 1 and classes >= 2");
        if (!(dataset.separation > 0.0)) throw ConfigError("blobs separation must be positive");
        break;
      case DatasetKind::Mnist:
        need(dataset.train_images, "train_images");
        need(dataset.train_labels, "train_labels");
        need(dataset.test_images, "test_images");
        need(dataset.test_labels, "test_labels");
        break;
      case DatasetKind::Cifar10:
        if (dataset.train_files.empty() || dataset.test_files.empty()) {
          throw ConfigError("cifar10 needs train_files and test_files");
        }
        for (const auto& p : dataset.train_files) need(p, "train_files");
        for (const auto& p : dataset.test_files) need(p, "test_files");
        break;
    }
  }
};

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline Schedule schedule_from(const Json& j, const char* key, Schedule fallback) {
  if (!j.contains(key)) return fallback;
  const Json& s = j.at(key);
  if (s.is_number()) return Schedule{s.get<double>(), 0.0};
  if (s.is_object()) {
    reject_unknown(s, {"base", "decay"}, key);
    return Schedule{get_or<double>(s, "base", fallback.base), get_or<double>(s, "decay", 0.0)};
  }
  throw ConfigError(std::string("config key '") + key + "' must be a number or {base, decay}");
}

inline Json schedule_to(const Schedule& s) {
  if (s.decay == 0.0) return s.base;
  return Json{{"base", s.base}, {"decay", s.decay}};
}

inline std::vector<std::filesystem::path> paths_from(const Json& j, const char* key) {
  std::vector<std::filesystem::path> out;
  for (const auto& s : get_or<std::vector<std::string>>(j, key, {})) out.emplace_back(s);
  return out;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"seed", "out", "dataset", "classifier_hidden", "attnet_hidden", "eta",
                          "iterations", "lambda", "sigma", "gamma", "batch", "optimizer",
                          "attacker_steps", "trace_stride", "train_iterations", "adv_iterations",
                          "rounds", "attnet_iterations", "attnet_rate", "attnet_batch", "workers"},
                         "config");
  if (!j.contains("seed")) throw ConfigError("config must set 'seed'");
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.out = get_or<std::string>(j, "out", "runs");
  c.classifier_hidden = get_or(j, "classifier_hidden", c.classifier_hidden);
  c.attnet_hidden = get_or(j, "attnet_hidden", c.attnet_hidden);
  if (j.contains("eta")) {
    c.eta = j.at("eta").is_array() ? get_or<std::vector<double>>(j, "eta", {})
                                   : std::vector<double>{get_or<double>(j, "eta", 0.0)};
  }

  c.game.iterations = get_or<std::size_t>(j, "iterations", 2000);
  c.game.defender_rate = detail::schedule_from(j, "lambda", Schedule{1e-3});
  c.game.attacker_rate = detail::schedule_from(j, "sigma", Schedule{1e-3});
  c.game.penalty = detail::schedule_from(j, "gamma", Schedule{1.0});
  c.game.batch = get_or<std::size_t>(j, "batch", 64);
  c.game.optimizer = parse_optimizer(get_or<std::string>(j, "optimizer", "adam"));
  c.game.attacker_steps = get_or<std::size_t>(j, "attacker_steps", 1);
  c.game.trace_stride = get_or<std::size_t>(j, "trace_stride", 50);
  c.game.seed = derive_seed(c.seed, "game");
  c.train_iterations = get_or<std::size_t>(j, "train_iterations", c.game.iterations);
  c.adv_iterations = get_or<std::size_t>(j, "adv_iterations", c.train_iterations);
  c.rounds = get_or<std::size_t>(j, "rounds", 5);
  c.attnet_training.iterations = get_or<std::size_t>(j, "attnet_iterations", 1000);
  c.attnet_training.rate = get_or<double>(j, "attnet_rate", 1e-3);
  c.attnet_training.batch = get_or<std::size_t>(j, "attnet_batch", c.game.batch);
  c.attnet_training.optimizer = c.game.optimizer;
  c.attnet_training.seed = derive_seed(c.seed, "attnet-training");
  c.workers = get_or<std::size_t>(j, "workers", 1);

  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    detail::reject_unknown(d,
                           {"kind", "n_train", "n_test", "dim", "classes", "separation", "noise",
                            "squash", "train_images", "train_labels", "test_images", "test_labels",
                            "train_files", "test_files"},
                           "dataset");
    const auto kind = get_or<std::string>(d, "kind", "blobs");
    if (kind == "blobs") {
      c.dataset.kind = DatasetKind::Blobs;
    } else if (kind == "mnist") {
      c.dataset.kind = DatasetKind::Mnist;
      c.dataset.classes = 10;
    } else if (kind == "cifar10") {
      c.dataset.kind = DatasetKind::Cifar10;
      c.dataset.classes = 10;
    } else {
      throw ConfigError("unknown dataset kind '" + kind + "' (expected blobs, mnist or cifar10)");
    }
    c.dataset.n_train = get_or(d, "n_train", c.dataset.n_train);
    c.dataset.n_test = get_or(d, "n_test", c.dataset.n_test);
    c.dataset.dim = get_or(d, "dim", c.dataset.dim);
    c.dataset.classes = get_or(d, "classes", c.dataset.classes);
    c.dataset.separation = get_or(d, "separation", c.dataset.separation);
    c.dataset.shape.noise = get_or(d, "noise", c.dataset.shape.noise);
    c.dataset.shape.squash = get_or(d, "squash", c.dataset.shape.squash);
    c.dataset.train_images = get_or<std::string>(d, "train_images", "");
    c.dataset.train_labels = get_or<std::string>(d, "train_labels", "");
    c.dataset.test_images = get_or<std::string>(d, "test_images", "");
    c.dataset.test_labels = get_or<std::string>(d, "test_labels", "");
    c.dataset.train_files = detail::paths_from(d, "train_files");
    c.dataset.test_files = detail::paths_from(d, "test_files");
  }
  c.validate();
  return c;
}

/// Canonical JSON form. Keys are sorted, so equal configs dump equally.
inline Json config_to_json(const ExperimentConfig& c) {
  Json d;
  switch (c.dataset.kind) {
    case DatasetKind::Blobs:
      d = Json{{"kind", "blobs"},
               {"dim", c.dataset.dim},
               {"classes", c.dataset.classes},
               {"separation", c.dataset.separation},
               {"noise", c.dataset.shape.noise},
               {"squash", c.dataset.shape.squash}};
      break;
    case DatasetKind::Mnist:
      d = Json{{"kind", "mnist"},
               {"train_images", c.dataset.train_images.string()},
               {"train_labels", c.dataset.train_labels.string()},
               {"test_images", c.dataset.test_images.string()},
               {"test_labels", c.dataset.test_labels.string()}};
      break;
    case DatasetKind::Cifar10: {
      std::vector<std::string> tr, te;
      for (const auto& p : c.dataset.train_files) tr.push_back(p.string());
      for (const auto& p : c.dataset.test_files) te.push_back(p.string());
      d = Json{{"kind", "cifar10"}, {"train_files", tr}, {"test_files", te}};
      break;
    }
  }
  d["n_train"] = c.dataset.n_train;
  d["n_test"] = c.dataset.n_test;
  return Json{{"seed", c.seed},
              {"out", c.out.string()},
              {"dataset", d},
              {"classifier_hidden", c.classifier_hidden},
              {"attnet_hidden", c.attnet_hidden},
              {"eta", c.eta},
              {"iterations", c.game.iterations},
              {"lambda", detail::schedule_to(c.game.defender_rate)},
              {"sigma", detail::schedule_to(c.game.attacker_rate)},
              {"gamma", detail::schedule_to(c.game.penalty)},
              {"batch", c.game.batch},
              {"optimizer", optimizer_name(c.game.optimizer)},
              {"attacker_steps", c.game.attacker_steps},
              {"trace_stride", c.game.trace_stride},
              {"train_iterations", c.train_iterations},
              {"adv_iterations", c.adv_iterations},
              {"rounds", c.rounds},
              {"attnet_iterations", c.attnet_training.iterations},
              {"attnet_rate", c.attnet_training.rate},
              {"attnet_batch", c.attnet_training.batch},
              {"workers", c.workers}};
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path));
}

/// 16 hex digits of FNV-1a over the canonical config plus a command tag.
inline std::string config_hash(const ExperimentConfig& c, const std::string& tag) {
  Json j = config_to_json(c);
  j.erase("out");
  j.erase("workers");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(tag + "\n" + j.dump())));
  return buf;
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

inline LoadedData load_data(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  switch (d.kind) {
    case DatasetKind::Blobs: {
      // Draw train and test from one generator so they share class centers.
      const std::size_t total = d.n_train + d.n_test;
      const std::size_t per_class = (total + d.classes - 1) / d.classes;
      Dataset all = synth_blobs(derive_seed(c.seed, "blobs"), per_class, d.dim, d.classes,
                                d.separation, d.shape)
                        .head(total);
      auto [train, test] = split_head(all, d.n_train);
      return {std::move(train), std::move(test)};
    }
    case DatasetKind::Mnist: {
      Dataset train = load_idx(d.train_images, d.train_labels, 10, d.n_train);
      Dataset test = load_idx(d.test_images, d.test_labels, 10, d.n_test);
      test.split = Split::Test;
      return {std::move(train), std::move(test)};
    }
    case DatasetKind::Cifar10: {
      Dataset train = load_cifar10(d.train_files, d.n_train);
      Dataset test = load_cifar10(d.test_files, d.n_test);
      test.split = Split::Test;
      return {std::move(train), std::move(test)};
    }
  }
  throw ConfigError("unreachable dataset kind");
}

}  // namespace advgame
