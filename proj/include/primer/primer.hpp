#pragma once

// Umbrella header for the whole library.

#include "primer/checkpoint.hpp"
#include "primer/combination.hpp"
#include "primer/config.hpp"
#include "primer/downstream.hpp"
#include "primer/elements.hpp"
#include "primer/error.hpp"
#include "primer/experiment.hpp"
#include "primer/metrics.hpp"
#include "primer/model.hpp"
#include "primer/optim.hpp"
#include "primer/parameter.hpp"
#include "primer/pretrain.hpp"
#include "primer/tasks.hpp"
#include "primer/tensor.hpp"
#include "primer/tokenizer.hpp"
#include "primer/upstream.hpp"
