#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <set>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "arbcost/chain.hpp"
#include "arbcost/errors.hpp"
#include "arbcost/model.hpp"

namespace arbcost {

struct EuropeanOption {
    double strike{0.0};
    double tau{0.0};
    OptionKind kind{OptionKind::call};

    void validate() const {
        if (!(strike > 0.0)) throw InvalidParams("strike must be positive");
        if (!(tau >= 0.0)) throw InvalidParams("tau must be non-negative");
    }
};

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double bs_price(double spot, const EuropeanOption& opt, double r, double sigma) {
    opt.validate();
    if (!(spot > 0.0)) throw InvalidParams("spot must be positive");
    if (!(sigma >= 0.0)) throw InvalidParams("sigma must be non-negative");
    const bool call = opt.kind == OptionKind::call;
    if (opt.tau == 0.0) return call ? std::max(spot - opt.strike, 0.0) : std::max(opt.strike - spot, 0.0);

    const double disc_k = opt.strike * std::exp(-r * opt.tau);
    if (sigma == 0.0) return call ? std::max(spot - disc_k, 0.0) : std::max(disc_k - spot, 0.0);

    const double sd = sigma * std::sqrt(opt.tau);
    const double d1 = (std::log(spot / opt.strike) + (r + 0.5 * sigma * sigma) * opt.tau) / sd;
    const double d2 = d1 - sd;
    if (call) return spot * norm_cdf(d1) - disc_k * norm_cdf(d2);
    return disc_k * norm_cdf(-d2) - spot * norm_cdf(-d1);
}

/// Analytic sensitivities. `theta` is the calendar-time derivative df/dt
/// (so it is minus df/dtau).
struct Greeks {
    double price{0.0};
    double delta{0.0};
    double gamma{0.0};
    double theta{0.0};
    double vega{0.0};
};

inline Greeks bs_greeks(double spot, const EuropeanOption& opt, double r, double sigma) {
    opt.validate();
    if (!(opt.tau > 0.0) || !(sigma > 0.0)) throw InvalidParams("greeks need tau > 0 and sigma > 0");
    if (!(spot > 0.0)) throw InvalidParams("spot must be positive");
    const double sqrt_tau = std::sqrt(opt.tau);
    const double sd = sigma * sqrt_tau;
    const double d1 = (std::log(spot / opt.strike) + (r + 0.5 * sigma * sigma) * opt.tau) / sd;
    const double d2 = d1 - sd;
    const double disc_k = opt.strike * std::exp(-r * opt.tau);
    const double pdf = norm_pdf(d1);

    Greeks g;
    g.price = bs_price(spot, opt, r, sigma);
    g.gamma = pdf / (spot * sd);
    g.vega = spot * pdf * sqrt_tau;
    const double decay = -spot * pdf * sigma / (2.0 * sqrt_tau);
    if (opt.kind == OptionKind::call) {
        g.delta = norm_cdf(d1);
        g.theta = decay - r * disc_k * norm_cdf(d2);
    } else {
        g.delta = norm_cdf(d1) - 1.0;
        g.theta = decay + r * disc_k * norm_cdf(-d2);
    }
    return g;
}

/// Static no-arbitrage price bounds (lower, upper) for a European option.
inline std::pair<double, double> price_bounds(double spot, const EuropeanOption& opt, double r) {
    const double disc_k = opt.strike * std::exp(-r * opt.tau);
    if (opt.kind == OptionKind::call) return {std::max(spot - disc_k, 0.0), spot};
    return {std::max(disc_k - spot, 0.0), disc_k};
}

struct ImpliedVolSettings {
    double vol_lo{1e-6};
    double vol_hi{5.0};
    int max_iter{200};
    double price_tol{1e-10};
};

/// Black-Scholes volatility reproducing `observed`. Bisection on
/// [vol_lo, vol_hi] with a Newton step taken whenever it stays inside the
/// current bracket.
inline double implied_vol(double spot, const EuropeanOption& opt, double r, double observed,
                          const ImpliedVolSettings& cfg = {}) {
    opt.validate();
    if (!(opt.tau > 0.0)) throw InvalidParams("implied vol needs tau > 0");
    const auto [lower, upper] = price_bounds(spot, opt, r);
    if (!std::isfinite(observed) || observed <= lower || observed >= upper) {
        throw PriceOutOfBounds("price " + detail::fmt(observed) + " outside (" + detail::fmt(lower) + ", " +
                               detail::fmt(upper) + ")");
    }
    auto f = [&](double s) { return bs_price(spot, opt, r, s) - observed; };

    double lo = cfg.vol_lo, hi = cfg.vol_hi;
    const double f_lo = f(lo);
    if (f_lo >= 0.0) {
        if (f_lo <= cfg.price_tol) return lo;
        throw PriceOutOfBounds("price " + detail::fmt(observed) + " below the vol floor");
    }
    if (f(hi) < 0.0) throw PriceOutOfBounds("price " + detail::fmt(observed) + " above the vol cap");

    // Brenner-Subrahmanyam starting point, kept inside the bracket.
    double x = std::sqrt(2.0 * std::numbers::pi / opt.tau) * observed / spot;
    if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);

    for (int it = 0; it < cfg.max_iter; ++it) {
        const double fx = f(x);
        if (fx == 0.0) return x;
        if (fx > 0.0)
            hi = x;
        else
            lo = x;

        const double sd = x * std::sqrt(opt.tau);
        const double d1 = (std::log(spot / opt.strike) + (r + 0.5 * x * x) * opt.tau) / sd;
        const double vega = spot * norm_pdf(d1) * std::sqrt(opt.tau);
        double next = vega > 0.0 ? x - fx / vega : std::numeric_limits<double>::quiet_NaN();
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);

        if (std::abs(next - x) <= 2.0 * std::numeric_limits<double>::epsilon() * x ||
            hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) {
            x = next;
            break;
        }
        x = next;
    }
    if (std::abs(f(x)) > cfg.price_tol) {
        throw NoConvergence("implied vol did not reproduce price " + detail::fmt(observed) + " within " +
                            detail::fmt(cfg.price_tol));
    }
    return x;
}

struct FitReport {
    double rmse{0.0};
    std::size_t evaluations{0};
    std::size_t iterations{0};
    std::vector<double> residuals;  // model mid - market mid, in quote order
};

struct RateVolFit {
    double r_star{0.0};
    double sigma_star{0.0};
    FitReport report;
};

struct RateVolSettings {
    double r_lo{-0.2};
    double r_hi{0.3};
    double vol_lo{1e-4};
    double vol_hi{5.0};
    std::size_t max_evaluations{10000};
};

/// Least-squares (r, sigma) for the chain's mid prices. The rate is searched
/// by Brent's parabolic method over the profile objective min_sigma SSE(r,
/// sigma), whose inner minimisation is again Brent in sigma.
inline RateVolFit implied_rate_vol(const OptionChain& chain, double spot, const RateVolSettings& cfg = {}) {
    if (!(spot > 0.0)) throw InvalidParams("spot must be positive");
    std::set<std::pair<double, long>> distinct;
    for (const auto& q : chain.quotes) distinct.emplace(q.strike, days_between(chain.quote_date, q.expiry));
    if (chain.quotes.size() < 2 || distinct.size() < 2) {
        throw InsufficientQuotes("need at least two quotes with distinct strike or expiry, got " +
                                 std::to_string(chain.quotes.size()));
    }
    std::vector<EuropeanOption> opts;
    std::vector<double> mids;
    for (const auto& q : chain.quotes) {
        opts.push_back({q.strike, chain.tau(q), q.kind});
        opts.back().validate();
        mids.push_back(q.mid());
    }

    std::size_t evals = 0;
    auto sse = [&](double r, double s) {
        if (++evals > cfg.max_evaluations) {
            throw NoConvergence("rate/vol fit exceeded " + std::to_string(cfg.max_evaluations) + " evaluations");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < opts.size(); ++i) {
            const double e = bs_price(spot, opts[i], r, s) - mids[i];
            acc += e * e;
        }
        return acc;
    };
    constexpr int bits = std::numeric_limits<double>::digits / 2;
    auto best_sigma = [&](double r) {
        std::uintmax_t iters = 200;
        return boost::math::tools::brent_find_minima([&](double s) { return sse(r, s); }, cfg.vol_lo, cfg.vol_hi,
                                                     bits, iters);
    };
    std::uintmax_t outer = 200;
    const auto [r_best, profile] = boost::math::tools::brent_find_minima(
        [&](double r) { return best_sigma(r).second; }, cfg.r_lo, cfg.r_hi, bits, outer);
    const double s_best = best_sigma(r_best).first;

    RateVolFit fit;
    fit.r_star = r_best;
    fit.sigma_star = s_best;
    fit.report.iterations = static_cast<std::size_t>(outer);
    double acc = 0.0;
    for (std::size_t i = 0; i < opts.size(); ++i) {
        const double e = bs_price(spot, opts[i], r_best, s_best) - mids[i];
        fit.report.residuals.push_back(e);
        acc += e * e;
    }
    fit.report.evaluations = evals;
    fit.report.rmse = std::sqrt(acc / static_cast<double>(opts.size()));
    (void)profile;
    return fit;
}

/// Left side of the heterogeneous-drift pricing PDE
///   f_t + f_x (mu1 - mu2 + r) x - r f + 1/2 f_xx sigma^2 x^2
/// evaluated on the homogeneous Black-Scholes solution f. Vanishes iff
/// mu1 == mu2; otherwise equals (mu1 - mu2) x f_x.
inline double pde_residual(double spot, const EuropeanOption& opt, double mu1, double mu2, double r,
                           double sigma) {
    if (!(opt.tau > 0.0)) throw InvalidParams("pde residual needs tau > 0");
    const Greeks g = bs_greeks(spot, opt, r, sigma);
    const double drift_term = g.delta * (mu1 - mu2) * spot;
    const double bs_terms = g.theta + g.delta * r * spot - r * g.price + 0.5 * g.gamma * sigma * sigma * spot * spot;
    return bs_terms + drift_term;
}

}  // namespace arbcost
