#pragma once

// Umbrella header for the elimrank library.

#include "elimrank/choice_models.hpp"
#include "elimrank/common.hpp"
#include "elimrank/dataset.hpp"
#include "elimrank/metrics.hpp"
#include "elimrank/rank_functions.hpp"
#include "elimrank/rng.hpp"
#include "elimrank/rut.hpp"
#include "elimrank/sgtb.hpp"
#include "elimrank/training.hpp"
