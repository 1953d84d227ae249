// Copyright 2026 The dpfed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Moments accountant for the sampled Gaussian mechanism.
//
// One round releases sum_{k in C} x_k + N(0, z^2) with |x_k| <= 1 and every
// user included independently with probability q. With
//   mu0 = N(0, z^2),  mu1 = N(1, z^2),  mu = (1 - q) mu0 + q mu1
// the per-round log-moment of order lambda is
//   alpha(lambda) = log max(E_mu0[(mu0/mu)^lambda], E_mu[(mu/mu0)^lambda]).
// Log-moments compose additively over rounds, and
//   epsilon(delta) = min_lambda (alpha_total(lambda) + log(1/delta)) / lambda.

#ifndef DPFED_ACCOUNTANT_HPP_
#define DPFED_ACCOUNTANT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include "dpfed/error.hpp"

namespace dpfed {

struct QuadratureOptions {
  // An integral is accepted when its error estimate is within either
  // tolerance. The integrands are non-negative, so the relative target is what
  // drives refinement; it keeps tiny moments (small q) accurate, while the
  // absolute one cannot be met in double precision once a moment is >> 1.
  double absolute_tolerance = 1e-14;
  double relative_tolerance = 1e-11;
  unsigned max_depth = 18;
};

namespace internal {

// (1 + y)^n - 1 - n y for |n y| < kSeriesCutoff, as the tail of the binomial
// series. Terms shrink by at least |n y| each step.
inline constexpr double kSeriesCutoff = 1e-2;

inline double BinomialRemainderSeries(double n, double y) {
  double term = n * y;
  double sum = 0.0;
  for (int k = 2; k < 16; ++k) {
    term *= (n - (k - 1)) * y / k;
    sum += term;
    if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
  }
  return sum;
}

// log((1 - q) + q e^u), stable for large |u| and q close to 0 or 1.
inline double LogMixtureRatio(double q, double u) {
  if (q == 1.0) return u;
  if (u > 0.0) return u + std::log(q + (1.0 - q) * std::exp(-u));
  return std::log1p(q * std::expm1(u));
}

// Integrand of E_mu0[(1 + q v)^n] - 1 where v = mu1/mu0 - 1 = e^u - 1, after
// subtracting the zero-mean term n q v. The result is non-negative, so the
// quadrature sees no cancellation. Where (1 + q v)^n would overflow, the
// product with mu0 is formed in log space instead.
inline double MomentIntegrand(double x, double q, double z, double n) {
  const double z2 = z * z;
  const double log_mu0 =
      -0.5 * x * x / z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi);
  const double u = (2.0 * x - 1.0) / (2.0 * z2);
  const double r = LogMixtureRatio(q, u);  // log(1 + q v)
  const double nr = n * r;
  if (nr < 50.0) {
    const double mu0 = std::exp(log_mu0);
    if (u < 50.0) {
      const double qv = q * std::expm1(u);
      const double remainder = std::abs(n * qv) < kSeriesCutoff
                                   ? BinomialRemainderSeries(n, qv)
                                   : std::expm1(nr) - n * qv;
      return mu0 * remainder;
    }
    // e^u overflows long before mu0 e^u does.
    return mu0 * std::expm1(nr) - n * q * (std::exp(log_mu0 + u) - mu0);
  }
  // (1 + q v)^n dominates both subtracted terms by a factor > e^40 / n.
  const double mu0 = std::exp(log_mu0);
  return std::exp(log_mu0 + nr) - mu0 - n * q * (std::exp(log_mu0 + u) - mu0);
}

// log(mu0(x) (1 + q v)^n), the dominant part of MomentIntegrand.
inline double LogPoweredDensity(double x, double q, double z, double n) {
  const double z2 = z * z;
  const double log_mu0 =
      -0.5 * x * x / z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi);
  return log_mu0 + n * LogMixtureRatio(q, (2.0 * x - 1.0) / (2.0 * z2));
}

}  // namespace internal

inline std::vector<int> DefaultMomentOrders() {
  std::vector<int> orders(32);
  for (int i = 0; i < 32; ++i) orders[i] = i + 1;
  return orders;
}

// Logs of the two moment-generating expectations
//   null:    E_mu0[(mu0/mu)^lambda]
//   mixture: E_mu[(mu/mu0)^lambda] = E_mu0[(mu/mu0)^(lambda+1)]
struct LogMomentTerms {
  double log_null_expectation = 0;
  double log_mixture_expectation = 0;
};

// Both expectations by adaptive Gauss-Kronrod quadrature on [-B, B]. When an
// expectation is modest it is integrated as E - 1 (non-negative integrand,
// result through log1p, so tiny moments keep full relative precision). When
// the integrand peaks above e^kLogSpaceThreshold, the integral is taken of
// the integrand divided by its peak and the log of the peak added back.
inline LogMomentTerms ComputeLogMomentTerms(double q, double z, int lambda,
                                            const QuadratureOptions& opts = {}) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling probability q must be in (0, 1]");
  if (!(z > 0.0) || !std::isfinite(z)) throw ConfigError("noise scale z must be positive");
  if (lambda < 1) throw ConfigError("moment order lambda must be >= 1");
  constexpr double kLogSpaceThreshold = 100.0;

  // The mass of both integrands sits within about lambda + 1 of the origin
  // with width z; the window covers that plus 20 standard deviations.
  const double window = std::max(1.0 + z * (lambda + 20.0), lambda + 2.0 + 20.0 * z);

  // Globally adaptive: the window starts as panels about 2z wide (at most
  // 512), refined to width z within 12z of each centre where mass can
  // concentrate, so no spike falls between Kronrod nodes. A panel whose error
  // estimate exceeds its share (by width) of the global tolerance is bisected.
  const int panels = static_cast<int>(std::clamp(std::ceil(window / z), 1.0, 512.0));

  // Relative rounding level of an integrand with power n on [a, b]: its
  // exponent carries terms up to (x^2 + |n| (2|x| + 1)) / (2 z^2). Below this
  // level a panel's error estimate is roundoff that bisection cannot reduce.
  auto noise = [&](double a, double b, double n) {
    const double m = std::max(std::abs(a), std::abs(b));
    return 16.0 * std::numeric_limits<double>::epsilon() *
           std::max(1.0, (m * m + std::abs(n) * (2.0 * m + 1.0)) / (2.0 * z * z));
  };

  // `relative` bounds the error relative to the integral itself, on top of
  // the summed rounding floor of the accepted panels.
  auto quadrature = [&](auto&& f, const char* which, double relative, double n,
                        std::initializer_list<double> centres) {
    using Rule = boost::math::quadrature::gauss_kronrod<double, 61>;
    struct Panel {
      double a, b, value, error;
      unsigned depth;
    };
    auto make = [&](double a, double b, unsigned depth) {
      Panel p{a, b, 0.0, 0.0, depth};
      p.value = Rule::integrate(f, a, b, 0, 0.0, &p.error);
      // Boost reports the error of the rule mapped to [-1, 1].
      p.error *= 0.5 * (b - a);
      return p;
    };
    std::vector<double> edges;
    for (int i = 0; i <= panels; ++i) edges.push_back(-window + 2.0 * window * i / panels);
    edges.back() = window;
    if (2.0 * window / panels > z) {
      for (double c : centres) {
        for (int k = -12; k <= 12; ++k) {
          const double x = c + k * z;
          if (x > -window && x < window) edges.push_back(x);
        }
      }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    std::vector<Panel> work;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      work.push_back(make(edges[i], edges[i + 1], 0));
    }
    double estimate = 0.0;
    for (const auto& p : work) estimate += p.value;
    const double target =
        std::max(opts.absolute_tolerance, relative * std::abs(estimate));
    double value = std::isfinite(target) ? 0.0 : target;
    double error = 0.0;
    double floor = 0.0;
    if (!std::isfinite(value)) work.clear();
    while (!work.empty()) {
      const Panel p = work.back();
      work.pop_back();
      const double share = target * (p.b - p.a) / (2.0 * window);
      if (!std::isfinite(p.value) || !std::isfinite(p.error)) {
        value = p.value + p.error;
        break;
      }
      const double rounding = noise(p.a, p.b, n) * std::abs(p.value);
      if (p.error <= std::max(share, rounding) || p.depth >= opts.max_depth) {
        value += p.value;
        error += p.error;
        floor += rounding;
        continue;
      }
      const double mid = 0.5 * (p.a + p.b);
      work.push_back(make(p.a, mid, p.depth + 1));
      work.push_back(make(mid, p.b, p.depth + 1));
    }
    const double allowed =
        std::max(opts.absolute_tolerance, relative * std::abs(value)) + floor;
    if (!std::isfinite(value) || !(error <= allowed)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "log-moment integration (" << which << ") did not reach tolerance: lambda="
          << lambda << " q=" << q << " z=" << z << " value=" << value << " error=" << error
          << " allowed=" << allowed;
      throw NumericError(msg.str());
    }
    return value;
  };

  auto log_expectation = [&](double n, const char* which) {
    // Grid spacing of at most z / 4 resolves every bump of width ~z.
    double peak = -std::numeric_limits<double>::infinity();
    double at = 0.0;
    const int grid = static_cast<int>(std::max(4096.0, std::ceil(8.0 * window / z)));
    for (int i = 0; i <= grid; ++i) {
      const double x = -window + 2.0 * window * i / grid;
      const double g = internal::LogPoweredDensity(x, q, z, n);
      if (g > peak) {
        peak = g;
        at = x;
      }
    }
    if (peak < kLogSpaceThreshold) {
      const double excess =
          quadrature([&](double x) { return internal::MomentIntegrand(x, q, z, n); }, which,
                     opts.relative_tolerance, n, {0.0, 1.0, at});
      return std::log1p(std::max(excess, 0.0));
    }
    // A relative error r in the scaled integral is an absolute error r in the
    // log, so the log moment (at least `peak`) keeps its relative tolerance.
    const double scaled = quadrature(
        [&](double x) { return std::exp(internal::LogPoweredDensity(x, q, z, n) - peak); },
        which, opts.relative_tolerance * peak, n, {0.0, 1.0, at});
    return peak + std::log(scaled);
  };

  LogMomentTerms terms;
  terms.log_null_expectation = log_expectation(-static_cast<double>(lambda), "null");
  terms.log_mixture_expectation = log_expectation(static_cast<double>(lambda) + 1.0, "mixture");
  return terms;
}

// Per-round log-moment alpha(lambda) for sampling rate q and noise scale z.
inline double LogMoment(double q, double z, int lambda, const QuadratureOptions& opts = {}) {
  const LogMomentTerms t = ComputeLogMomentTerms(q, z, lambda, opts);
  return std::max(t.log_null_expectation, t.log_mixture_expectation);
}

// min over orders of (log_moment + log(1/delta)) / order. Orders whose
// log-moment is not finite are skipped.
inline double EpsilonFromLogMoments(const std::vector<int>& orders,
                                    const std::vector<double>& log_moments, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0, 1)");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < orders.size(); ++i) {
    if (!std::isfinite(log_moments[i])) continue;
    best = std::min(best, (log_moments[i] - std::log(delta)) / orders[i]);
  }
  return best;
}

class MomentsAccountant {
 public:
  struct Spending {
    double noise_scale;
    std::uint64_t rounds;
  };

  explicit MomentsAccountant(double q, std::vector<int> orders = DefaultMomentOrders(),
                             QuadratureOptions quadrature = {})
      : q_(q), orders_(std::move(orders)), quadrature_(quadrature) {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling probability q must be in (0, 1]");
    if (orders_.empty()) throw ConfigError("moment order grid is empty");
    for (int l : orders_) {
      if (l < 1) throw ConfigError("moment orders must be positive integers");
    }
  }

  double q() const { return q_; }
  const std::vector<int>& orders() const { return orders_; }
  const std::vector<Spending>& history() const { return history_; }

  // Records `rounds` invocations at noise scale z. Rounds are tallied per z as
  // integers, so splitting a run into pieces gives bit-identical log-moments.
  void AccumPrivSpending(double z, std::uint64_t rounds = 1) {
    if (rounds == 0) return;
    PerRound(z);  // validates z and fills the cache
    history_.push_back({z, rounds});
    rounds_by_z_[z] += rounds;
  }

  // Accumulated alpha(lambda) for every order in the grid.
  std::vector<double> LogMoments() const {
    std::vector<double> total(orders_.size(), 0.0);
    for (const auto& [z, rounds] : rounds_by_z_) {
      const auto& alpha = PerRound(z);
      for (std::size_t i = 0; i < total.size(); ++i) {
        total[i] += static_cast<double>(rounds) * alpha[i];
      }
    }
    return total;
  }

  double GetPrivacySpent(double delta) const {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0, 1)");
    if (rounds_by_z_.empty()) return 0.0;
    return EpsilonFromLogMoments(orders_, LogMoments(), delta);
  }

  // Single-round log-moments at noise scale z (cached).
  const std::vector<double>& PerRound(double z) const {
    auto it = cache_.find(z);
    if (it != cache_.end()) return it->second;
    std::vector<double> alpha;
    alpha.reserve(orders_.size());
    for (int l : orders_) alpha.push_back(LogMoment(q_, z, l, quadrature_));
    return cache_.emplace(z, std::move(alpha)).first->second;
  }

  nlohmann::json ToJson() const {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& s : history_) hist.push_back({{"z", s.noise_scale}, {"rounds", s.rounds}});
    return {{"q", q_}, {"orders", orders_}, {"history", std::move(hist)}};
  }

  static MomentsAccountant FromJson(const nlohmann::json& j, QuadratureOptions quadrature = {}) {
    MomentsAccountant acc(j.at("q").get<double>(), j.at("orders").get<std::vector<int>>(),
                          quadrature);
    for (const auto& s : j.at("history")) {
      acc.AccumPrivSpending(s.at("z").get<double>(), s.at("rounds").get<std::uint64_t>());
    }
    return acc;
  }

 private:
  double q_;
  std::vector<int> orders_;
  QuadratureOptions quadrature_;
  std::vector<Spending> history_;
  std::map<double, std::uint64_t> rounds_by_z_;
  mutable std::map<double, std::vector<double>> cache_;
};

struct PrivacyTableRow {
  double num_users = 0;       // K
  double expected_users = 0;  // C~ = qK
  double noise_scale = 0;     // z
  std::uint64_t rounds = 0;
  double delta = 0;
  double epsilon = 0;
};

struct PrivacyTableSpec {
  double num_users;
  double expected_users;
  double noise_scale;
};

// Equal-weight populations: q = C~/K and delta = K^-1.1 for every row,
// epsilon reported at each round checkpoint.
inline std::vector<PrivacyTableRow> BuildPrivacyTable(const std::vector<PrivacyTableSpec>& specs,
                                                      const std::vector<std::uint64_t>& checkpoints,
                                                      std::vector<int> orders = DefaultMomentOrders()) {
  std::vector<PrivacyTableRow> rows;
  for (const auto& s : specs) {
    if (!(s.expected_users > 0.0 && s.expected_users <= s.num_users)) {
      throw ConfigError("privacy table rows need 0 < C~ <= K");
    }
    MomentsAccountant acc(s.expected_users / s.num_users, orders);
    const double delta = std::pow(s.num_users, -1.1);
    for (std::uint64_t t : checkpoints) {
      MomentsAccountant snapshot = acc;
      snapshot.AccumPrivSpending(s.noise_scale, t);
      rows.push_back({s.num_users, s.expected_users, s.noise_scale, t, delta,
                      snapshot.GetPrivacySpent(delta)});
    }
  }
  return rows;
}

// The six (K, C~, z) rows and 10^0..10^6 checkpoints of the reference table.
inline std::vector<PrivacyTableSpec> ReferencePrivacyTableSpecs() {
  return {{1e5, 1e2, 1.0}, {1e6, 1e1, 1.0}, {1e6, 1e3, 1.0},
          {1e6, 1e4, 1.0}, {1e6, 1e3, 3.0}, {1e9, 1e3, 1.0}};
}

inline std::vector<std::uint64_t> DecadeCheckpoints(int max_exponent = 6) {
  std::vector<std::uint64_t> out;
  std::uint64_t t = 1;
  for (int e = 0; e <= max_exponent; ++e, t *= 10) out.push_back(t);
  return out;
}

}  // namespace dpfed

#endif  // DPFED_ACCOUNTANT_HPP_
