#pragma once

// One-factor bivariate binomial lattice for the two assets S and V, the
// per-trade transaction-cost factor, the two-asset hedge, and backward
// induction under the cost-adjusted risk-neutral probability.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "arbcost/errors.hpp"
#include "arbcost/model.hpp"
#include "arbcost/parallel.hpp"
#include "arbcost/random.hpp"

namespace arbcost {

struct JointNode {
    double s{0.0};
    double v{0.0};
};

/// Recombining lattice. Node (k, j) is reached after k steps with j up moves;
/// S and V always move up or down together.
class BivariateTree {
public:
    BivariateTree(double s0, double v0, const MarketParams& params, double dt, std::size_t n_steps)
        : s0_(s0), v0_(v0), params_(params), dt_(dt), n_steps_(n_steps) {
        params_.validate();
        if (!(s0 > 0.0) || !(v0 > 0.0)) throw InvalidParams("initial prices must be positive");
        if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParams("dt must be positive and finite");
        const double sq = std::sqrt(dt);
        s_up_ = 1.0 + params_.mu * dt + params_.sigma * sq;
        s_down_ = 1.0 + params_.mu * dt - params_.sigma * sq;
        v_up_ = 1.0 + params_.m * dt + params_.v * sq;
        v_down_ = 1.0 + params_.m * dt - params_.v * sq;
        if (!(s_down_ > 0.0) || !(v_down_ > 0.0)) {
            throw NegativePriceStep("down factor is not positive (S: " + detail::fmt(s_down_) +
                                    ", V: " + detail::fmt(v_down_) + "); reduce dt");
        }
        levels_.resize(n_steps_ + 1);
        for (std::size_t k = 0; k <= n_steps_; ++k) {
            auto& level = levels_[k];
            level.resize(k + 1);
            for (std::size_t j = 0; j <= k; ++j) {
                const int ups = static_cast<int>(j);
                const int downs = static_cast<int>(k - j);
                level[j].s = s0_ * std::pow(s_up_, ups) * std::pow(s_down_, downs);
                level[j].v = v0_ * std::pow(v_up_, ups) * std::pow(v_down_, downs);
            }
        }
    }

    double s0() const { return s0_; }
    double v0() const { return v0_; }
    const MarketParams& params() const { return params_; }
    double dt() const { return dt_; }
    std::size_t n_steps() const { return n_steps_; }

    double s_up_factor() const { return s_up_; }
    double s_down_factor() const { return s_down_; }
    double v_up_factor() const { return v_up_; }
    double v_down_factor() const { return v_down_; }

    const JointNode& node(std::size_t k, std::size_t j) const { return levels_.at(k).at(j); }
    const std::vector<JointNode>& level(std::size_t k) const { return levels_.at(k); }

private:
    double s0_, v0_;
    MarketParams params_;
    double dt_;
    std::size_t n_steps_;
    double s_up_{}, s_down_{}, v_up_{}, v_down_{};
    std::vector<std::vector<JointNode>> levels_;
};

inline BivariateTree build_tree(double s0, double v0, const MarketParams& p, double dt, std::size_t n) {
    return BivariateTree(s0, v0, p, dt, n);
}

/// (price_next / price_now)^rho, the multiplicative cost on one trade.
inline double transaction_cost_factor(double price_now, double price_next, double rho) {
    if (!(price_now > 0.0) || !(price_next > 0.0)) throw InvalidParams("prices must be positive");
    if (rho == 0.0) return 1.0;
    return std::pow(price_next / price_now, rho);
}

struct HedgePosition {
    double a{0.0};  // units of S
    double b{0.0};  // units of V
};

/// Holdings (a, b) at node (k, j) such that the cost-adjusted portfolio
/// a S' (S'/S)^rho_s + b V' (V'/V)^rho_v equals the claim in both successor
/// states.
inline HedgePosition solve_hedge(const BivariateTree& tree, std::size_t k, std::size_t j, double g_up,
                                 double g_down) {
    if (k >= tree.n_steps()) throw InvalidParams("hedge needs a successor level");
    const auto& p = tree.params();
    const JointNode& now = tree.node(k, j);
    const JointNode& up = tree.node(k + 1, j + 1);
    const JointNode& down = tree.node(k + 1, j);

    const double su = up.s * transaction_cost_factor(now.s, up.s, p.rho_s());
    const double sd = down.s * transaction_cost_factor(now.s, down.s, p.rho_s());
    const double vu = up.v * transaction_cost_factor(now.v, up.v, p.rho_v());
    const double vd = down.v * transaction_cost_factor(now.v, down.v, p.rho_v());

    const double det = su * vd - sd * vu;
    const double scale = std::abs(su * vd) + std::abs(sd * vu);
    if (!(std::abs(det) > 1e-14 * scale)) {
        throw SingularHedge("up and down cost-adjusted moves of S and V are linearly dependent");
    }
    return {(g_up * vd - g_down * vu) / det, (su * g_down - sd * g_up) / det};
}

/// Terminal claim g(S, V).
class Payoff {
public:
    enum class Kind { call, put, constant, custom };
    enum class Underlying { s, v };

    Payoff(Kind kind, std::function<double(double, double)> g, std::optional<double> strike = std::nullopt)
        : kind_(kind), g_(std::move(g)), strike_(strike) {}

    static Payoff call(double strike, Underlying on = Underlying::s) {
        check_strike(strike);
        return {Kind::call, [strike, on](double s, double v) {
                    return std::max((on == Underlying::s ? s : v) - strike, 0.0);
                }, strike};
    }
    static Payoff put(double strike, Underlying on = Underlying::s) {
        check_strike(strike);
        return {Kind::put, [strike, on](double s, double v) {
                    return std::max(strike - (on == Underlying::s ? s : v), 0.0);
                }, strike};
    }
    static Payoff constant(double value) {
        return {Kind::constant, [value](double, double) { return value; }};
    }
    static Payoff custom(std::function<double(double, double)> g) { return {Kind::custom, std::move(g)}; }

    double operator()(double s, double v) const { return g_(s, v); }
    Kind kind() const { return kind_; }
    const std::optional<double>& strike() const { return strike_; }

private:
    static void check_strike(double k) {
        if (!(k > 0.0)) throw InvalidParams("strike must be positive");
    }

    Kind kind_;
    std::function<double(double, double)> g_;
    std::optional<double> strike_;
};

/// Per-step discounting applied during backward induction. The model's own
/// recursion is undiscounted (`none`); `simple` divides by 1 + r dt and
/// `continuous` multiplies by exp(-r dt) for comparison with standard trees.
struct Discounting {
    enum class Kind { none, simple, continuous };
    Kind kind{Kind::none};
    double rate{0.0};

    static Discounting none() { return {}; }
    static Discounting simple(double r) { return {Kind::simple, r}; }
    static Discounting continuous(double r) { return {Kind::continuous, r}; }

    double step_factor(double dt) const {
        switch (kind) {
            case Kind::simple: return 1.0 / (1.0 + rate * dt);
            case Kind::continuous: return std::exp(-rate * dt);
            case Kind::none: break;
        }
        return 1.0;
    }
};

struct PricingResult {
    double price{0.0};
    RiskNeutralProb q;
    std::vector<std::vector<double>> values;  // values[k][j], same shape as the tree
};

/// Backward induction g_k = Q g_up + (1 - Q) g_down with Q from
/// q_risk_neutral(tree.params(), tree.dt()).
inline PricingResult price_contract(const BivariateTree& tree, const Payoff& payoff,
                                    Discounting discount = Discounting::none()) {
    PricingResult out;
    out.q = q_risk_neutral(tree.params(), tree.dt());
    const double qu = out.q.q_up;
    const double qd = out.q.q_down;
    const double df = discount.step_factor(tree.dt());
    const std::size_t n = tree.n_steps();

    out.values.resize(n + 1);
    auto& terminal = out.values[n];
    terminal.resize(n + 1);
    for (std::size_t j = 0; j <= n; ++j) {
        const JointNode& nd = tree.node(n, j);
        terminal[j] = payoff(nd.s, nd.v);
        if (!std::isfinite(terminal[j])) throw InvalidParams("payoff is not finite at a terminal node");
    }
    for (std::size_t k = n; k-- > 0;) {
        const auto& next = out.values[k + 1];
        auto& cur = out.values[k];
        cur.resize(k + 1);
        for (std::size_t j = 0; j <= k; ++j) cur[j] = df * (qu * next[j + 1] + qd * next[j]);
    }
    out.price = out.values[0][0];
    return out;
}

/// Closed-form risk-neutral GBM pair at time t driven by one normal draw z.
inline std::pair<double, double> gbm_closed_form(double s0, double v0, const AdjustedParams& a, double t,
                                                 double z) {
    if (!(t >= 0.0)) throw InvalidParams("t must be non-negative");
    const double w = std::sqrt(t) * z;
    return {s0 * std::exp((a.r_star - 0.5 * a.sigma_star * a.sigma_star) * t + a.sigma_star * w),
            v0 * std::exp((a.r_star - 0.5 * a.v_star * a.v_star) * t + a.v_star * w)};
}

/// Physical-measure GBM pair, the weak limit of the lattice.
inline std::pair<double, double> gbm_physical(double s0, double v0, const MarketParams& p, double t, double z) {
    if (!(t >= 0.0)) throw InvalidParams("t must be non-negative");
    const double w = std::sqrt(t) * z;
    return {s0 * std::exp((p.mu - 0.5 * p.sigma * p.sigma) * t + p.sigma * w),
            v0 * std::exp((p.m - 0.5 * p.v * p.v) * t + p.v * w)};
}

struct MonteCarloEstimate {
    double mean_s{0.0};
    double stderr_s{0.0};
    double mean_v{0.0};
    double stderr_v{0.0};
    std::size_t draws{0};
};

/// Sample means of (S_t, V_t) under the risk-neutral closed form. Draws are
/// reduced in fixed-size blocks in block order, so the result does not depend
/// on the thread count.
inline MonteCarloEstimate mc_terminal_mean(double s0, double v0, const AdjustedParams& a, double t,
                                           std::size_t draws, const NormalStream& rng, unsigned threads = 1) {
    if (draws < 2) throw InvalidParams("need at least two draws");
    constexpr std::size_t block = 4096;
    const std::size_t n_blocks = (draws + block - 1) / block;
    struct Sums {
        double s{0}, s2{0}, v{0}, v2{0};
    };
    std::vector<Sums> partial(n_blocks);
    parallel_for(n_blocks, threads, [&](std::size_t b) {
        Sums acc;
        const std::size_t hi = std::min(draws, (b + 1) * block);
        for (std::size_t i = b * block; i < hi; ++i) {
            const auto [st, vt] = gbm_closed_form(s0, v0, a, t, rng.normal(i));
            acc.s += st;
            acc.s2 += st * st;
            acc.v += vt;
            acc.v2 += vt * vt;
        }
        partial[b] = acc;
    });
    Sums total;
    for (const auto& p : partial) {
        total.s += p.s;
        total.s2 += p.s2;
        total.v += p.v;
        total.v2 += p.v2;
    }
    const double n = static_cast<double>(draws);
    MonteCarloEstimate est;
    est.draws = draws;
    est.mean_s = total.s / n;
    est.mean_v = total.v / n;
    const double var_s = std::max(0.0, (total.s2 - n * est.mean_s * est.mean_s) / (n - 1.0));
    const double var_v = std::max(0.0, (total.v2 - n * est.mean_v * est.mean_v) / (n - 1.0));
    est.stderr_s = std::sqrt(var_s / n);
    est.stderr_v = std::sqrt(var_v / n);
    return est;
}

}  // namespace arbcost
