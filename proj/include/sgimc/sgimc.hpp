#pragma once

// Umbrella header: the whole library.

#include "sgimc/admm.hpp"
#include "sgimc/datagen.hpp"
#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/eval.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/io.hpp"
#include "sgimc/kernels.hpp"
#include "sgimc/loss.hpp"
#include "sgimc/penalty.hpp"
#include "sgimc/rng.hpp"
#include "sgimc/solver.hpp"
#include "sgimc/sparse_matrix.hpp"
#include "sgimc/subproblem.hpp"
#include "sgimc/thread_pool.hpp"
