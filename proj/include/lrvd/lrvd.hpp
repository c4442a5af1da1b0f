#pragma once

// Umbrella header for the BayesLoRA / LRVD library.

#include "lrvd/adapter.hpp"
#include "lrvd/autodiff.hpp"
#include "lrvd/config.hpp"
#include "lrvd/diagnostics.hpp"
#include "lrvd/evaluator.hpp"
#include "lrvd/io.hpp"
#include "lrvd/matrix.hpp"
#include "lrvd/model.hpp"
#include "lrvd/rng.hpp"
#include "lrvd/svd.hpp"
#include "lrvd/sweep.hpp"
#include "lrvd/trainer.hpp"
