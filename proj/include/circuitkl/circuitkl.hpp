#pragma once

// Umbrella header: the whole library.

#include "circuitkl/errors.hpp"
#include "circuitkl/matrix.hpp"
#include "circuitkl/rng.hpp"
#include "circuitkl/stats.hpp"
#include "circuitkl/model.hpp"
#include "circuitkl/graph.hpp"
#include "circuitkl/circuit.hpp"
#include "circuitkl/forward.hpp"
#include "circuitkl/ablation.hpp"
#include "circuitkl/tasks.hpp"
#include "circuitkl/workpool.hpp"
#include "circuitkl/harness.hpp"
