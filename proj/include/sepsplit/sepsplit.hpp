#pragma once

// Numerical core: model, separatrix chart, variational/Riccati data, Melnikov
// function, homological solvers and the splitting experiment.

#include "common.hpp"
#include "cylinder.hpp"
#include "dynamics.hpp"
#include "homological.hpp"
#include "melnikov.hpp"
#include "model.hpp"
#include "separatrix.hpp"
#include "spectral.hpp"
#include "variational.hpp"
