#pragma once

#include "advgame/attacks.hpp"
#include "advgame/config.hpp"
#include "advgame/data.hpp"
#include "advgame/defenses.hpp"
#include "advgame/diffcore.hpp"
#include "advgame/error.hpp"
#include "advgame/evalkit.hpp"
#include "advgame/games.hpp"
#include "advgame/mlp.hpp"
#include "advgame/models.hpp"
#include "advgame/optim.hpp"
#include "advgame/pipeline.hpp"
#include "advgame/random.hpp"
#include "advgame/tape.hpp"
#include "advgame/tensor.hpp"
#include "advgame/verify.hpp"
