// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "grpocl/boxcodec.hpp"
#include "grpocl/config.hpp"
#include "grpocl/curriculum.hpp"
#include "grpocl/difficulty.hpp"
#include "grpocl/geometry.hpp"
#include "grpocl/grpo.hpp"
#include "grpocl/policy.hpp"
#include "grpocl/rng.hpp"
#include "grpocl/synthetic_env.hpp"
#include "grpocl/trainer.hpp"
