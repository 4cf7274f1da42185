#pragma once

// The seeded steps shared by the command-line tool and the end-to-end
// checks. Every random stream is derived from the experiment seed and a
// fixed tag, so a step reproduces bit for bit from (config, inputs).

#include <optional>
#include <string>
#include <vector>

#include "advgame/config.hpp"
#include "advgame/defenses.hpp"
#include "advgame/evalkit.hpp"

namespace advgame::pipeline {

inline GameConfig with_iterations(GameConfig g, std::size_t iterations, const std::string& seed_tag,
                                  std::uint64_t seed) {
  g.iterations = iterations;
  g.seed = derive_seed(seed, seed_tag);
  return g;
}

inline ClassifierParams initial_classifier(const ExperimentConfig& c, const Dataset& train) {
  return init_classifier(derive_seed(c.seed, "classifier-init"), train.dim(), c.classifier_hidden,
                         train.classes);
}

inline AttackNetParams initial_attnet(const ExperimentConfig& c, const Dataset& train, const std::string& tag) {
  return init_attnet(derive_seed(c.seed, tag), train.dim(), train.classes, c.attnet_hidden);
}

inline AttNetTrainConfig attnet_config(const ExperimentConfig& c, const std::string& tag) {
  AttNetTrainConfig a = c.attnet_training;
  a.seed = derive_seed(c.seed, tag);
  return a;
}

/// The undefended baseline: plain training from the seeded initialization.
inline TrainResult undefended(const ExperimentConfig& c, const LoadedData& data) {
  return train_classifier(initial_classifier(c, data.train), data.train, data.test,
                          with_iterations(c.game, c.train_iterations, "train-batches", c.seed));
}

inline std::vector<CatMouseRound> cat_and_mouse_rounds(const ExperimentConfig& c, const LoadedData& data,
                                                       const ClassifierParams& base) {
  return cat_and_mouse(base, data.train, data.test, c.rounds, {c.max_eta()},
                       with_iterations(c.game, c.adv_iterations, "adv-train", c.seed));
}

struct DefenseOutcome {
  ClassifierParams u;
  std::optional<AttackNetParams> v;
  ConvergenceTrace trace;
};

/// Trains one defense variant at the headline budget. `init` replaces the
/// seeded classifier initialization when given.
inline DefenseOutcome run_defense(const ExperimentConfig& c, const LoadedData& data, DefenseKind kind,
                                  const std::optional<ClassifierParams>& init = std::nullopt) {
  const AttackBudget budget{c.max_eta()};
  DefenseSpec spec{kind, c.game, budget, std::nullopt, 1, MaxStep::Fgsm};
  if (uses_attnet(kind)) spec.attnet_hidden = c.attnet_hidden;
  spec.validate();

  const ClassifierParams u0 = init ? *init : initial_classifier(c, data.train);
  const GameConfig game =
      with_iterations(c.game, c.game.iterations, std::string("defense-") + defense_kind_name(kind), c.seed);
  switch (kind) {
    case DefenseKind::NoDefense: {
      auto r = train_classifier(u0, data.train, data.test,
                                with_iterations(c.game, c.train_iterations, "train-batches", c.seed));
      return {r.params, std::nullopt, r.trace};
    }
    case DefenseKind::AdvTrain: {
      const auto base = init ? u0 : undefended(c, data).params;
      const auto adv = fgsm_dataset(base, data.train, budget);
      auto r = adv_train(base, data.train, adv, data.test,
                         with_iterations(c.game, c.adv_iterations, "adv-train", c.seed));
      return {r.params, std::nullopt, r.trace};
    }
    case DefenseKind::Lwa: {
      auto r = lwa(u0, data.train, data.test, budget, game);
      return {r.params, std::nullopt, r.trace};
    }
    case DefenseKind::MinimaxGrad: {
      auto r = minimax_grad(u0, data.train, data.test, budget, game);
      return {r.params, std::nullopt, r.trace};
    }
    case DefenseKind::MinimaxAttNet:
    case DefenseKind::MaximinAttNet:
    case DefenseKind::AltAttNet: {
      const auto v0 = initial_attnet(c, data.train, "attnet-init");
      auto r = kind == DefenseKind::MinimaxAttNet ? minimax_attnet(u0, v0, data.train, data.test, budget, game)
               : kind == DefenseKind::MaximinAttNet ? maximin_attnet(u0, v0, data.train, data.test, budget, game)
                                                    : alt_attnet(u0, v0, data.train, data.test, budget, game);
      return {r.u, r.v, r.trace};
    }
  }
  throw ConfigError("unreachable defense kind");
}

/// An attack network trained from the seeded initialization against u.
inline AttackNetParams train_attack(const ExperimentConfig& c, const LoadedData& data, const ClassifierParams& u,
                                    const AttackBudget& budget) {
  return attnet_train(u, initial_attnet(c, data.train, "attack-attnet-init"), data.train, budget,
                      attnet_config(c, "attack-attnet-batches"))
      .params;
}

inline AttackColumn attnet_curr_column(const ExperimentConfig& c) {
  return {"AttNet-curr", CurrentAttNetColumn{{c.max_eta()}, c.attnet_hidden, attnet_config(c, "attnet-curr")}};
}

inline std::uint64_t matrix_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "matrix"); }

}  // namespace advgame::pipeline
