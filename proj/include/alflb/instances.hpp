// SPDX-License-Identifier: Apache-2.0
//
// Seeded random routing instances: raw scores zeta_ik = s * N(0,1) + o_k
// with per-expert offsets o_k ~ N(0, skew^2), normalized by softmax.

#pragma once

#include <cstddef>

#include "alflb/core.hpp"
#include "alflb/random.hpp"
#include "alflb/router.hpp"

namespace alflb {

struct InstanceSpec {
  double spread = 1.0;  // token-level noise scale
  double skew = 0.0;    // spread of per-expert popularity offsets
};

inline RawScoreMatrix random_raw_scores(std::size_t tokens, std::size_t experts, RandomSource& rng,
                                        const InstanceSpec& spec = {}) {
  std::vector<double> offset(experts);
  for (auto& o : offset) o = spec.skew * rng.normal();
  RawScoreMatrix raw{Matrix<double>(tokens, experts)};
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t k = 0; k < experts; ++k) raw.values(i, k) = spec.spread * rng.normal() + offset[k];
  }
  return raw;
}

inline AffinityMatrix random_affinities(std::size_t tokens, std::size_t experts, RandomSource& rng,
                                        const InstanceSpec& spec = {}) {
  return softmax_affinities(random_raw_scores(tokens, experts, rng, spec));
}

}  // namespace alflb
