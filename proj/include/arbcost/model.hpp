#pragma once

// Closed-form parameter transformations of the arb-cost model: cost-adjusted
// drifts and volatilities, the implied risk-neutral rate, the market price of
// risk and the three risk-neutral up-move probabilities.
//
// Units: every drift is per unit time and every volatility per sqrt(unit
// time), where the unit is whatever the caller uses. Nothing here assumes a
// trading calendar; see annualize() for the conversion helper.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "arbcost/errors.hpp"

namespace arbcost {

/// Physical-measure parameters of the two traders' assets S and V plus the
/// arbitrage-cost coefficient c.
struct MarketParams {
    double mu{0.0};     // drift of S
    double sigma{0.0};  // volatility of S
    double m{0.0};      // drift of V
    double v{0.0};      // volatility of V
    double c{0.0};      // arb-cost coefficient, c = 0 is frictionless

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidParams("sigma must be positive and finite");
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidParams("v must be positive and finite");
        if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidParams("c must be non-negative and finite");
        if (!std::isfinite(mu) || !std::isfinite(m)) throw InvalidParams("drifts must be finite");
    }

    /// Cost exponent for trades in S.
    double rho_s() const { return c * mu / sigma; }
    /// Cost exponent for trades in V; mirrors rho_s with (m, v).
    double rho_v() const { return c * m / v; }

    MarketParams without_cost() const {
        MarketParams p = *this;
        p.c = 0.0;
        return p;
    }
};

struct AdjustedParams {
    double mu_star{0.0};
    double m_star{0.0};
    double sigma_star{0.0};
    double v_star{0.0};
    double r_star{0.0};
    double theta_star{0.0};
};

struct RiskNeutralProb {
    double q_up{0.5};
    double q_down{0.5};
    double dt{0.0};
};

namespace detail {

inline bool degenerate_spread(double a, double b) {
    return std::abs(a - b) < 1e-12 * std::max({std::abs(a), std::abs(b), 1.0});
}

inline std::string fmt(double x) {
    std::ostringstream os;
    os.precision(12);
    os << x;
    return os.str();
}

// q = 1/2 - 1/2 * theta * sqrt(dt), admissible iff |theta| sqrt(dt) < 1.
inline RiskNeutralProb make_prob(double q_up, double theta, double dt) {
    if (!(q_up > 0.0 && q_up < 1.0)) {
        const double max_dt = 0.999999 / (theta * theta);
        throw ProbabilityOutOfRange("q_up = " + fmt(q_up) + " outside (0, 1) at dt = " + fmt(dt) +
                                        "; largest admissible dt is " + fmt(max_dt),
                                    max_dt);
    }
    return {q_up, 1.0 - q_up, dt};
}

inline void check_dt(double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParams("dt must be positive and finite");
}

}  // namespace detail

/// sigma* - v* = (sigma - v) + c (mu - m); zero means no rate can be implied.
inline double adjusted_spread(const MarketParams& p) {
    return (p.sigma - p.v) + p.c * (p.mu - p.m);
}

/// Cost-adjusted parameters. Throws DegenerateSpread when sigma* == v*
/// (within 1e-12 relative), since r* divides by their difference.
inline AdjustedParams adjusted_params(const MarketParams& p) {
    p.validate();
    AdjustedParams a;
    a.mu_star = p.mu * (1.0 + p.c * p.mu / p.sigma) * (1.0 + p.c * p.sigma / 2.0);
    a.m_star = p.m * (1.0 + p.c * p.m / p.v) * (1.0 + p.c * p.v / 2.0);
    a.sigma_star = p.sigma + p.c * p.mu;
    a.v_star = p.v + p.c * p.m;
    if (detail::degenerate_spread(a.sigma_star, a.v_star)) {
        throw DegenerateSpread("sigma* = v* = " + detail::fmt(a.sigma_star) + ": r* is undefined");
    }
    a.r_star = (a.mu_star * a.v_star - a.m_star * a.sigma_star) / (a.v_star - a.sigma_star);
    // Equivalent to (mu* - r*) / sigma* without the cancellation in mu* - r*.
    a.theta_star = (a.mu_star - a.m_star) / (a.sigma_star - a.v_star);
    return a;
}

/// theta* through the sigma* representation.
inline double market_price_of_risk(const AdjustedParams& a) {
    if (a.sigma_star == 0.0) throw InvalidParams("sigma* is zero");
    return (a.mu_star - a.r_star) / a.sigma_star;
}

/// theta* through the v* representation.
inline double market_price_of_risk_v(const AdjustedParams& a) {
    if (a.v_star == 0.0) throw InvalidParams("v* is zero");
    return (a.m_star - a.r_star) / a.v_star;
}

/// Up-move probability of the representative investor with arb-costs,
/// evaluated exactly as the closed form (no higher-order terms).
inline RiskNeutralProb q_risk_neutral(const MarketParams& p, double dt) {
    p.validate();
    detail::check_dt(dt);
    const double denom = p.sigma - p.v + p.c * (p.mu - p.m);
    if (detail::degenerate_spread(p.sigma + p.c * p.mu, p.v + p.c * p.m)) {
        throw DegenerateSpread("sigma - v + c(mu - m) = 0: no risk-neutral probability");
    }
    const double num = p.mu * (1.0 + p.c * p.mu / p.sigma) * (1.0 + p.c * p.sigma / 2.0) -
                       p.m * (1.0 + p.c * p.m / p.v) * (1.0 + p.c * p.v / 2.0);
    const double q = 0.5 - num / (2.0 * denom) * std::sqrt(dt);
    return detail::make_prob(q, num / denom, dt);
}

/// Black (1972) two-asset probability; ignores p.c.
inline RiskNeutralProb q_no_arbcost(const MarketParams& p, double dt) {
    p.without_cost().validate();
    detail::check_dt(dt);
    if (detail::degenerate_spread(p.sigma, p.v)) {
        throw DegenerateSpread("sigma = v with no arb-cost: the two-asset market admits arbitrage");
    }
    const double num = p.mu - p.m;
    const double denom = p.sigma - p.v;
    const double q = 0.5 - num / (2.0 * denom) * std::sqrt(dt);
    return detail::make_prob(q, num / denom, dt);
}

/// Single-asset probability with a given riskless rate.
inline RiskNeutralProb q_no_transcost(double mu, double r, double sigma, double dt) {
    if (!(sigma > 0.0)) throw InvalidParams("sigma must be positive");
    detail::check_dt(dt);
    const double theta = (mu - r) / sigma;
    const double q = 0.5 - 0.5 * theta * std::sqrt(dt);
    return detail::make_prob(q, theta, dt);
}

/// Rate implied by two frictionless assets, (mu v - m sigma) / (v - sigma).
inline double black_rate(double mu, double sigma, double m, double v) {
    if (detail::degenerate_spread(sigma, v)) throw DegenerateSpread("sigma = v: no implied rate");
    return (mu * v - m * sigma) / (v - sigma);
}

/// Sample moments of per-observation returns rescaled to another unit:
/// mean * factor, stdev * sqrt(factor). Equity convention is factor = 252.
struct Moments {
    double mean{0.0};
    double stdev{0.0};
};

inline Moments annualize(Moments per_obs, double factor = 252.0) {
    if (!(factor > 0.0)) throw InvalidParams("annualization factor must be positive");
    return {per_obs.mean * factor, per_obs.stdev * std::sqrt(factor)};
}

}  // namespace arbcost
