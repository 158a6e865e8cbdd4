// SPDX-License-Identifier: Apache-2.0
//
// Per-expert affinity laws on (0,1): finite mixtures of uniform and
// rescaled Beta components with bounded densities.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "alflb/core.hpp"
#include "alflb/quadrature.hpp"
#include "alflb/random.hpp"

namespace alflb {

struct UniformComponent {
  double lo = 0.0;
  double hi = 1.0;
};

/// Beta(a, b) rescaled onto [lo, hi]. a, b >= 1 keeps the density bounded.
struct BetaComponent {
  double a = 2.0;
  double b = 2.0;
  double lo = 0.0;
  double hi = 1.0;
};

using Component = std::variant<UniformComponent, BetaComponent>;

struct WeightedComponent {
  double weight = 1.0;
  Component component;
};

class AffinityDistribution {
 public:
  AffinityDistribution() : AffinityDistribution(std::vector<WeightedComponent>{{1.0, UniformComponent{}}}) {}

  explicit AffinityDistribution(std::vector<WeightedComponent> parts) : parts_(std::move(parts)) {
    if (parts_.empty()) throw Error(ErrorCode::ValidationError, "distribution needs a component");
    double total = 0.0;
    for (const auto& p : parts_) {
      if (!(p.weight > 0.0)) throw Error(ErrorCode::ValidationError, "component weights must be positive");
      total += p.weight;
      const auto [lo, hi] = support(p.component);
      if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) {
        throw Error(ErrorCode::ValidationError, "component support must be a nonempty subset of [0,1]");
      }
      if (const auto* b = std::get_if<BetaComponent>(&p.component)) {
        if (!(b->a >= 1.0 && b->b >= 1.0)) {
          throw Error(ErrorCode::ValidationError, "Beta shapes below 1 give an unbounded density");
        }
        log_beta_.push_back(std::lgamma(b->a) + std::lgamma(b->b) - std::lgamma(b->a + b->b));
      } else {
        log_beta_.push_back(0.0);
      }
    }
    for (auto& p : parts_) p.weight /= total;
    density_bound_ = 0.0;
    for (std::size_t c = 0; c < parts_.size(); ++c) density_bound_ += parts_[c].weight * component_max_pdf(c);
    validate_normalization();
  }

  static AffinityDistribution uniform(double lo = 0.0, double hi = 1.0) {
    return AffinityDistribution({{1.0, UniformComponent{lo, hi}}});
  }
  static AffinityDistribution beta(double a, double b, double lo = 0.0, double hi = 1.0) {
    return AffinityDistribution({{1.0, BetaComponent{a, b, lo, hi}}});
  }

  const std::vector<WeightedComponent>& components() const noexcept { return parts_; }

  double pdf(double v) const {
    double s = 0.0;
    for (std::size_t c = 0; c < parts_.size(); ++c) s += parts_[c].weight * component_pdf(c, v);
    return s;
  }

  double cdf(double v) const {
    double s = 0.0;
    for (std::size_t c = 0; c < parts_.size(); ++c) s += parts_[c].weight * component_cdf(c, v, false);
    return std::clamp(s, 0.0, 1.0);
  }

  /// 1 - cdf(v), evaluated without cancellation in the upper tail.
  double ccdf(double v) const {
    double s = 0.0;
    for (std::size_t c = 0; c < parts_.size(); ++c) s += parts_[c].weight * component_cdf(c, v, true);
    return std::clamp(s, 0.0, 1.0);
  }

  double density_bound() const noexcept { return density_bound_; }

  /// Support endpoints of every component; the density is smooth between them.
  std::vector<double> breakpoints() const {
    std::vector<double> out;
    for (const auto& p : parts_) {
      const auto [lo, hi] = support(p.component);
      out.push_back(lo);
      out.push_back(hi);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  double support_lo() const { return breakpoints().front(); }
  double support_hi() const { return breakpoints().back(); }

  double mean() const {
    double m = 0.0;
    for (const auto& p : parts_) {
      if (const auto* u = std::get_if<UniformComponent>(&p.component)) {
        m += p.weight * 0.5 * (u->lo + u->hi);
      } else {
        const auto& b = std::get<BetaComponent>(p.component);
        m += p.weight * (b.lo + (b.hi - b.lo) * b.a / (b.a + b.b));
      }
    }
    return m;
  }

  /// One draw, clipped into the open interval (0, 1).
  double sample(RandomSource& rng) const {
    std::size_t c = 0;
    if (parts_.size() > 1) {
      double r = rng.uniform();
      for (; c + 1 < parts_.size(); ++c) {
        if (r < parts_[c].weight) break;
        r -= parts_[c].weight;
      }
    }
    double x;
    if (const auto* u = std::get_if<UniformComponent>(&parts_[c].component)) {
      x = rng.uniform(u->lo, u->hi);
    } else {
      const auto& b = std::get<BetaComponent>(parts_[c].component);
      x = b.lo + (b.hi - b.lo) * rng.beta(b.a, b.b);
    }
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = std::nextafter(1.0, 0.0);
    return std::clamp(x, lo, hi);
  }

 private:
  static std::pair<double, double> support(const Component& c) {
    return std::visit([](const auto& x) { return std::make_pair(x.lo, x.hi); }, c);
  }

  double component_pdf(std::size_t c, double v) const {
    const auto& comp = parts_[c].component;
    if (const auto* u = std::get_if<UniformComponent>(&comp)) {
      return (v >= u->lo && v <= u->hi) ? 1.0 / (u->hi - u->lo) : 0.0;
    }
    const auto& b = std::get<BetaComponent>(comp);
    if (v < b.lo || v > b.hi) return 0.0;
    const double w = b.hi - b.lo;
    const double x = (v - b.lo) / w;
    if ((x == 0.0 && b.a > 1.0) || (x == 1.0 && b.b > 1.0)) return 0.0;
    const double lx = b.a == 1.0 ? 0.0 : (b.a - 1.0) * std::log(x);
    const double l1x = b.b == 1.0 ? 0.0 : (b.b - 1.0) * std::log1p(-x);
    return std::exp(lx + l1x - log_beta_[c]) / w;
  }

  double component_cdf(std::size_t c, double v, bool upper) const {
    const auto& comp = parts_[c].component;
    double lo, hi;
    std::tie(lo, hi) = support(comp);
    if (v <= lo) return upper ? 1.0 : 0.0;
    if (v >= hi) return upper ? 0.0 : 1.0;
    const double x = (v - lo) / (hi - lo);
    if (std::holds_alternative<UniformComponent>(comp)) return upper ? 1.0 - x : x;
    const auto& b = std::get<BetaComponent>(comp);
    return upper ? boost::math::ibetac(b.a, b.b, x) : boost::math::ibeta(b.a, b.b, x);
  }

  double component_max_pdf(std::size_t c) const {
    const auto& comp = parts_[c].component;
    if (const auto* u = std::get_if<UniformComponent>(&comp)) return 1.0 / (u->hi - u->lo);
    const auto& b = std::get<BetaComponent>(comp);
    const double mode = (b.a + b.b > 2.0) ? (b.a - 1.0) / (b.a + b.b - 2.0) : 0.5;
    return component_pdf(c, b.lo + mode * (b.hi - b.lo));
  }

  void validate_normalization() const {
    const QuadratureOptions opts{64, 4096, 1e-9, true};
    const auto breaks = panel_breaks(0.0, 1.0, breakpoints());
    const auto r = integrate_panels(
        breaks, 1, [&](double v, std::vector<double>& acc, double w) { acc[0] += w * pdf(v); }, opts);
    if (std::abs(r.values[0] - 1.0) > 1e-6) {
      throw Error(ErrorCode::ValidationError,
                  "density integrates to " + std::to_string(r.values[0]) + ", expected 1 within 1e-6");
    }
    if (cdf(0.0) != 0.0 || cdf(1.0) != 1.0) {
      throw Error(ErrorCode::ValidationError, "cdf must be 0 at 0 and 1 at 1");
    }
  }

  std::vector<WeightedComponent> parts_;
  std::vector<double> log_beta_;
  double density_bound_ = 0.0;
};

/// One distribution per expert, with the shared density bound M.
class AffinityDistributionSet {
 public:
  AffinityDistributionSet() = default;
  explicit AffinityDistributionSet(std::vector<AffinityDistribution> experts) : experts_(std::move(experts)) {
    if (experts_.size() < 2) throw Error(ErrorCode::ValidationError, "need at least two experts");
    for (const auto& d : experts_) density_bound_ = std::max(density_bound_, d.density_bound());
  }

  static AffinityDistributionSet identical(const AffinityDistribution& d, std::size_t experts) {
    return AffinityDistributionSet(std::vector<AffinityDistribution>(experts, d));
  }

  std::size_t experts() const noexcept { return experts_.size(); }
  const AffinityDistribution& operator[](std::size_t k) const { return experts_[k]; }
  double density_bound() const noexcept { return density_bound_; }

 private:
  std::vector<AffinityDistribution> experts_;
  double density_bound_ = 0.0;
};

}  // namespace alflb
