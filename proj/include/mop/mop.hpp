#pragma once

// Umbrella header for the MoP structured-pruning library.

#include "mop/bench.hpp"
#include "mop/checkpoint.hpp"
#include "mop/criteria.hpp"
#include "mop/data.hpp"
#include "mop/engine.hpp"
#include "mop/errors.hpp"
#include "mop/rng.hpp"
#include "mop/surgery.hpp"
#include "mop/tensor.hpp"
#include "mop/trace_io.hpp"
#include "mop/training.hpp"
#include "mop/transformer.hpp"
