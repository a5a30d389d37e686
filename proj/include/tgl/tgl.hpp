#pragma once

// Single include for the whole library: trainable gate functions, gated
// layers, budget regularization, the tape-based autodiff engine, training,
// and the experiment tooling built on top.

#include "tgl/budget.hpp"
#include "tgl/checkpoint.hpp"
#include "tgl/config.hpp"
#include "tgl/data.hpp"
#include "tgl/errors.hpp"
#include "tgl/experiments.hpp"
#include "tgl/gates.hpp"
#include "tgl/gradcheck.hpp"
#include "tgl/idx.hpp"
#include "tgl/layers.hpp"
#include "tgl/ops.hpp"
#include "tgl/optim.hpp"
#include "tgl/oracle.hpp"
#include "tgl/prune.hpp"
#include "tgl/rng.hpp"
#include "tgl/tape.hpp"
#include "tgl/tensor.hpp"
#include "tgl/trainer.hpp"
