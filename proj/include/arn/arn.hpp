#pragma once

// Umbrella header.

#include "arn/artifacts.hpp"
#include "arn/attacks.hpp"
#include "arn/config.hpp"
#include "arn/dataset.hpp"
#include "arn/defense.hpp"
#include "arn/errors.hpp"
#include "arn/evaluator.hpp"
#include "arn/gradcheck.hpp"
#include "arn/layers.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"
#include "arn/optim.hpp"
#include "arn/parallel.hpp"
#include "arn/report.hpp"
#include "arn/rng.hpp"
#include "arn/serialize.hpp"
#include "arn/tensor.hpp"
#include "arn/trainer.hpp"
#include "arn/workbench.hpp"
