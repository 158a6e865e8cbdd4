// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "alflb/core.hpp"
#include "alflb/random.hpp"
#include "alflb/router.hpp"
#include "alflb/dual_balancer.hpp"
#include "alflb/deterministic_lab.hpp"
#include "alflb/quadrature.hpp"
#include "alflb/distributions.hpp"
#include "alflb/selection.hpp"
#include "alflb/parallel.hpp"
#include "alflb/online.hpp"
#include "alflb/convexity.hpp"
#include "alflb/regret.hpp"
#include "alflb/instances.hpp"
#include "alflb/config.hpp"
#include "alflb/experiment.hpp"
