#pragma once

// Arb-cost coefficient calibration and the per-quote diagnostic surfaces:
// implied volatility, arb-cost (ACS), bid-ask spread ACS and the pooled
// two-instrument ACS.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "arbcost/blackscholes.hpp"
#include "arbcost/chain.hpp"
#include "arbcost/errors.hpp"
#include "arbcost/parallel.hpp"

namespace arbcost {

/// c from sigma* = sigma + c mu.
inline double calibrate_c_scalar(double sigma_star, double sigma, double mu) {
    if (mu == 0.0) throw ZeroDrift("mu = 0: c is not identifiable from sigma* = sigma + c mu");
    return (sigma_star - sigma) / mu;
}

/// Sample drift and volatility of an instrument, in the same time unit as the
/// implied volatilities they are compared against.
struct SampleParams {
    double mu{0.0};
    double sigma{0.0};
};

enum class PriceSource { mid, bid, ask };
enum class SurfaceKind { implied_vol, arb_cost, spread_arb_cost, combined_arb_cost };

inline const char* to_string(SurfaceKind k) {
    switch (k) {
        case SurfaceKind::implied_vol: return "implied_vol";
        case SurfaceKind::arb_cost: return "arb_cost";
        case SurfaceKind::spread_arb_cost: return "spread_arb_cost";
        case SurfaceKind::combined_arb_cost: return "combined_arb_cost";
    }
    return "?";
}

/// Grid nodes on each axis. A quote lands in the cell of the nearest node;
/// quotes further than half a spacing beyond either end are off-grid.
struct GridSpec {
    std::vector<double> moneyness;
    std::vector<double> maturity;

    /// Moneyness 0.50..1.50 by 0.05; maturities 7, 14, 30, 60, 90, 180, 365
    /// and 730 calendar days expressed in units of `days_per_unit`.
    static GridSpec defaults(double days_per_unit = 365.0) {
        GridSpec g;
        for (int i = 10; i <= 30; ++i) g.moneyness.push_back(i / 20.0);
        for (double d : {7.0, 14.0, 30.0, 60.0, 90.0, 180.0, 365.0, 730.0}) g.maturity.push_back(d / days_per_unit);
        return g;
    }

    void validate() const {
        auto check = [](const std::vector<double>& axis, const char* name) {
            if (axis.empty()) throw InvalidParams(std::string(name) + " axis is empty");
            for (std::size_t i = 0; i < axis.size(); ++i) {
                if (!std::isfinite(axis[i])) throw InvalidParams(std::string(name) + " axis has a non-finite node");
                if (i > 0 && !(axis[i] > axis[i - 1]))
                    throw InvalidParams(std::string(name) + " axis is not strictly increasing");
            }
        };
        check(moneyness, "moneyness");
        check(maturity, "maturity");
    }
};

namespace detail {

inline std::optional<std::size_t> nearest_node(const std::vector<double>& axis, double x) {
    if (axis.size() == 1) {
        return std::abs(x - axis[0]) <= 0.5 * std::max(std::abs(axis[0]), 1e-12) ? std::optional<std::size_t>(0)
                                                                                  : std::nullopt;
    }
    const double lo = axis.front() - 0.5 * (axis[1] - axis[0]);
    const double hi = axis.back() + 0.5 * (axis[axis.size() - 1] - axis[axis.size() - 2]);
    if (!(x >= lo && x <= hi)) return std::nullopt;
    auto it = std::lower_bound(axis.begin(), axis.end(), x);
    if (it == axis.begin()) return 0;
    if (it == axis.end()) return axis.size() - 1;
    const auto i = static_cast<std::size_t>(it - axis.begin());
    return (axis[i] - x < x - axis[i - 1]) ? i : i - 1;
}

}  // namespace detail

/// Moneyness x maturity grid of cell means. Cells without contributions hold
/// nullopt.
class SurfaceGrid {
public:
    SurfaceGrid() = default;
    SurfaceGrid(SurfaceKind kind, GridSpec spec)
        : kind_(kind), spec_(std::move(spec)), values_(spec_.moneyness.size() * spec_.maturity.size()),
          counts_(values_.size(), 0) {
        spec_.validate();
    }

    SurfaceKind kind() const { return kind_; }
    const std::vector<double>& moneyness() const { return spec_.moneyness; }
    const std::vector<double>& maturity() const { return spec_.maturity; }
    const GridSpec& spec() const { return spec_; }

    const std::optional<double>& value(std::size_t i_money, std::size_t i_tau) const {
        return values_.at(index(i_money, i_tau));
    }
    std::size_t count(std::size_t i_money, std::size_t i_tau) const { return counts_.at(index(i_money, i_tau)); }
    std::size_t filled_cells() const {
        return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(),
                                                      [](const auto& v) { return v.has_value(); }));
    }

    void set(std::size_t i_money, std::size_t i_tau, double value, std::size_t count) {
        values_.at(index(i_money, i_tau)) = value;
        counts_.at(index(i_money, i_tau)) = count;
    }

    /// (moneyness index, maturity index) of the cell a point falls in.
    std::optional<std::pair<std::size_t, std::size_t>> locate(double moneyness, double tau) const {
        auto im = detail::nearest_node(spec_.moneyness, moneyness);
        auto it = detail::nearest_node(spec_.maturity, tau);
        if (!im || !it) return std::nullopt;
        return std::pair{*im, *it};
    }

private:
    std::size_t index(std::size_t i_money, std::size_t i_tau) const {
        if (i_money >= spec_.moneyness.size() || i_tau >= spec_.maturity.size())
            throw InvalidParams("surface cell index out of range");
        return i_money * spec_.maturity.size() + i_tau;
    }

    SurfaceKind kind_{SurfaceKind::implied_vol};
    GridSpec spec_;
    std::vector<std::optional<double>> values_;
    std::vector<std::size_t> counts_;
};

struct SkipEntry {
    std::string instrument;
    std::size_t quote_index{0};  // 0-based position in the chain's quote list
    std::string reason;
};

struct SurfaceResult {
    SurfaceGrid grid;
    std::vector<SkipEntry> skipped;
    std::size_t contributions{0};
};

struct SurfaceOptions {
    GridSpec grid = GridSpec::defaults();
    unsigned threads{1};
};

namespace detail {

using QuoteOutcome = std::variant<double, std::string>;

inline std::optional<std::string> quote_defect(const OptionChain& chain, const OptionQuote& q) {
    if (!(q.strike > 0.0)) return "strike is not positive";
    if (!(q.bid >= 0.0)) return "negative bid";
    if (q.bid > q.ask) return "bid > ask";
    if (!(chain.tau(q) > 0.0)) return "expiry not after quote date";
    return std::nullopt;
}

inline double quote_price(const OptionQuote& q, PriceSource src) {
    switch (src) {
        case PriceSource::bid: return q.bid;
        case PriceSource::ask: return q.ask;
        case PriceSource::mid: break;
    }
    return q.mid();
}

inline EuropeanOption as_option(const OptionChain& chain, const OptionQuote& q) {
    return {q.strike, chain.tau(q), q.kind};
}

/// Applies `value_of` to each in-grid, well-formed quote (in parallel) and
/// averages contributions per cell. Errors from value_of become skip entries.
template <class ValueOf>
SurfaceResult build_surface(const OptionChain& chain, SurfaceKind kind, const SurfaceOptions& opt,
                            ValueOf&& value_of) {
    chain.validate();
    SurfaceResult out{SurfaceGrid(kind, opt.grid), {}, 0};
    const std::size_t n = chain.quotes.size();
    std::vector<QuoteOutcome> outcome(n);
    parallel_for(n, opt.threads, [&](std::size_t i) {
        const OptionQuote& q = chain.quotes[i];
        if (auto defect = quote_defect(chain, q)) {
            outcome[i] = *defect;
            return;
        }
        if (!out.grid.locate(chain.moneyness(q), chain.tau(q))) {
            outcome[i] = std::string("outside surface grid");
            return;
        }
        try {
            outcome[i] = value_of(q);
        } catch (const Error& e) {
            outcome[i] = e.name() + ": " + e.what();
        }
    });

    std::vector<std::vector<double>> cells(opt.grid.moneyness.size() * opt.grid.maturity.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (const auto* reason = std::get_if<std::string>(&outcome[i])) {
            out.skipped.push_back({chain.instrument, i, *reason});
            continue;
        }
        const OptionQuote& q = chain.quotes[i];
        const auto cell = *out.grid.locate(chain.moneyness(q), chain.tau(q));
        cells[cell.first * opt.grid.maturity.size() + cell.second].push_back(std::get<double>(outcome[i]));
        ++out.contributions;
    }
    for (std::size_t im = 0; im < opt.grid.moneyness.size(); ++im) {
        for (std::size_t it = 0; it < opt.grid.maturity.size(); ++it) {
            auto& vals = cells[im * opt.grid.maturity.size() + it];
            if (vals.empty()) continue;
            // Sorted accumulation makes the mean independent of quote order.
            std::sort(vals.begin(), vals.end());
            double sum = 0.0;
            for (double x : vals) sum += x;
            out.grid.set(im, it, sum / static_cast<double>(vals.size()), vals.size());
        }
    }
    if (out.contributions == 0) {
        throw EmptySurface("no quote of " + (chain.instrument.empty() ? std::string("chain") : chain.instrument) +
                           " contributed to the " + to_string(kind) + " surface");
    }
    return out;
}

}  // namespace detail

/// Mid-price Black-Scholes implied volatility per quote at rate r_star.
inline SurfaceResult iv_surface(const OptionChain& chain, double r_star, const SurfaceOptions& opt = {}) {
    return detail::build_surface(chain, SurfaceKind::implied_vol, opt, [&](const OptionQuote& q) {
        return implied_vol(chain.spot, detail::as_option(chain, q), r_star, q.mid());
    });
}

/// Per-quote c = (implied vol - sigma) / mu from the chosen price.
inline SurfaceResult acs_surface(const OptionChain& chain, PriceSource source, SampleParams params, double r_star,
                                 const SurfaceOptions& opt = {}) {
    if (params.mu == 0.0) throw ZeroDrift("sample drift is zero: c is not identifiable");
    return detail::build_surface(chain, SurfaceKind::arb_cost, opt, [&](const OptionQuote& q) {
        const double iv = implied_vol(chain.spot, detail::as_option(chain, q), r_star, detail::quote_price(q, source));
        return (iv - params.sigma) / params.mu;
    });
}

/// Per-quote c(ask) - c(bid) = (iv(ask) - iv(bid)) / mu.
inline SurfaceResult spread_acs_surface(const OptionChain& chain, SampleParams params, double r_star,
                                        const SurfaceOptions& opt = {}) {
    if (params.mu == 0.0) throw ZeroDrift("sample drift is zero: c is not identifiable");
    return detail::build_surface(chain, SurfaceKind::spread_arb_cost, opt, [&](const OptionQuote& q) {
        if (q.bid == q.ask) return 0.0;
        const auto o = detail::as_option(chain, q);
        const double iv_ask = implied_vol(chain.spot, o, r_star, q.ask);
        const double iv_bid = implied_vol(chain.spot, o, r_star, q.bid);
        return (iv_ask - iv_bid) / params.mu;
    });
}

struct PerQuoteC {
    double mean{0.0};
    double median{0.0};
    std::size_t used{0};
    std::vector<SkipEntry> skipped;
};

/// c from every quote's own implied vol, then aggregated. Quotes whose price
/// admits no implied vol are skipped and logged.
inline PerQuoteC calibrate_c_per_quote(const OptionChain& chain, PriceSource source, SampleParams params,
                                       double r_star, unsigned threads = 1) {
    chain.validate();
    if (params.mu == 0.0) throw ZeroDrift("sample drift is zero; c is undefined");
    const std::size_t n = chain.quotes.size();
    std::vector<detail::QuoteOutcome> outcome(n);
    parallel_for(n, threads, [&](std::size_t i) {
        const OptionQuote& q = chain.quotes[i];
        if (auto defect = detail::quote_defect(chain, q)) {
            outcome[i] = *defect;
            return;
        }
        try {
            const double iv = implied_vol(chain.spot, detail::as_option(chain, q), r_star, detail::quote_price(q, source));
            outcome[i] = (iv - params.sigma) / params.mu;
        } catch (const Error& e) {
            outcome[i] = e.name() + ": " + e.what();
        }
    });
    PerQuoteC out;
    std::vector<double> cs;
    for (std::size_t i = 0; i < n; ++i) {
        if (const auto* reason = std::get_if<std::string>(&outcome[i])) {
            out.skipped.push_back({chain.instrument, i, *reason});
        } else {
            cs.push_back(std::get<double>(outcome[i]));
        }
    }
    if (cs.empty()) throw InsufficientQuotes("no quote yields an implied volatility");
    std::sort(cs.begin(), cs.end());
    double sum = 0.0;
    for (double x : cs) sum += x;
    out.used = cs.size();
    out.mean = sum / static_cast<double>(cs.size());
    const std::size_t h = cs.size() / 2;
    out.median = cs.size() % 2 ? cs[h] : 0.5 * (cs[h - 1] + cs[h]);
    return out;
}

/// One instrument's contribution to a pooled c fit.
struct PricedChain {
    const OptionChain* chain{nullptr};
    SampleParams params;
};

struct CFit {
    double c{0.0};
    double rmse{0.0};         // over all bid and ask prices used
    std::size_t prices{0};    // number of bid/ask prices in the objective
};

namespace detail {

struct PooledQuote {
    double spot;
    EuropeanOption option;
    double bid;
    double ask;
    SampleParams params;
    double c_hint;  // mid-implied per-quote c, used only to bracket the search
};

inline double pooled_sse(const std::vector<PooledQuote>& quotes, double r_star, double c) {
    double acc = 0.0;
    for (const auto& q : quotes) {
        const double vol = std::max(q.params.sigma + c * q.params.mu, 0.0);
        const double model = bs_price(q.spot, q.option, r_star, vol);
        acc += (model - q.bid) * (model - q.bid) + (model - q.ask) * (model - q.ask);
    }
    return acc;
}

inline CFit fit_pooled(const std::vector<PooledQuote>& quotes, double r_star) {
    if (quotes.empty()) throw EmptySurface("no usable quotes for the pooled c fit");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& q : quotes) {
        lo = std::min(lo, q.c_hint);
        hi = std::max(hi, q.c_hint);
    }
    const double pad = 0.5 * (hi - lo) + 1.0;
    lo -= pad;
    hi += pad;
    std::uintmax_t iters = 500;
    const auto [c, sse] = boost::math::tools::brent_find_minima(
        [&](double x) { return pooled_sse(quotes, r_star, x); }, lo, hi, std::numeric_limits<double>::digits / 2,
        iters);
    if (iters >= 500) throw NoConvergence("pooled c fit did not converge in 500 iterations");
    const double edge = 1e-6 * (hi - lo);
    if (c - lo < edge || hi - c < edge) {
        throw NoConvergence("pooled c fit hit the search bracket [" + detail::fmt(lo) + ", " + detail::fmt(hi) + "]");
    }
    const std::size_t prices = 2 * quotes.size();
    return {c, std::sqrt(sse / static_cast<double>(prices)), prices};
}

}  // namespace detail

struct CombinedAcs {
    double c_combined{0.0};
    double rmse{0.0};
    SurfaceGrid grid;
    std::vector<SkipEntry> skipped;
    std::size_t contributions{0};
};

/// Pooled least-squares c over any number of instruments: minimises the sum
/// of squared differences between BS(sigma + c mu) and both the bid and the
/// ask of every usable quote. The grid holds the same fit restricted to each
/// cell.
inline CombinedAcs combined_acs(const std::vector<PricedChain>& chains, double r_star, const SurfaceOptions& opt = {}) {
    CombinedAcs out;
    out.grid = SurfaceGrid(SurfaceKind::combined_arb_cost, opt.grid);
    const std::size_t n_mat = opt.grid.maturity.size();
    std::vector<detail::PooledQuote> pooled;
    std::vector<std::vector<detail::PooledQuote>> cells(opt.grid.moneyness.size() * n_mat);

    for (const auto& pc : chains) {
        if (pc.chain == nullptr) throw InvalidParams("null chain");
        const OptionChain& chain = *pc.chain;
        chain.validate();
        if (pc.params.mu == 0.0) throw ZeroDrift("sample drift is zero for " + chain.instrument);
        const std::size_t n = chain.quotes.size();
        std::vector<detail::QuoteOutcome> hint(n);
        parallel_for(n, opt.threads, [&](std::size_t i) {
            const OptionQuote& q = chain.quotes[i];
            if (auto defect = detail::quote_defect(chain, q)) {
                hint[i] = *defect;
                return;
            }
            try {
                const double iv = implied_vol(chain.spot, detail::as_option(chain, q), r_star, q.mid());
                hint[i] = (iv - pc.params.sigma) / pc.params.mu;
            } catch (const Error& e) {
                hint[i] = e.name() + ": " + e.what();
            }
        });
        for (std::size_t i = 0; i < n; ++i) {
            if (const auto* reason = std::get_if<std::string>(&hint[i])) {
                out.skipped.push_back({chain.instrument, i, *reason});
                continue;
            }
            const OptionQuote& q = chain.quotes[i];
            detail::PooledQuote pq{chain.spot, detail::as_option(chain, q), q.bid, q.ask, pc.params,
                                   std::get<double>(hint[i])};
            pooled.push_back(pq);
            if (auto cell = out.grid.locate(chain.moneyness(q), chain.tau(q))) {
                cells[cell->first * n_mat + cell->second].push_back(pq);
            }
            ++out.contributions;
        }
    }
    if (pooled.empty()) throw EmptySurface("no usable quotes in any chain for the combined arb-cost fit");

    const CFit total = detail::fit_pooled(pooled, r_star);
    out.c_combined = total.c;
    out.rmse = total.rmse;

    std::vector<std::optional<double>> cell_c(cells.size());
    parallel_for(cells.size(), opt.threads, [&](std::size_t idx) {
        if (cells[idx].empty()) return;
        try {
            cell_c[idx] = detail::fit_pooled(cells[idx], r_star).c;
        } catch (const NoConvergence&) {
            // leave the cell empty
        }
    });
    for (std::size_t idx = 0; idx < cells.size(); ++idx) {
        if (cell_c[idx]) out.grid.set(idx / n_mat, idx % n_mat, *cell_c[idx], cells[idx].size());
    }
    return out;
}

inline CombinedAcs combined_acs(const OptionChain& chain_a, const OptionChain& chain_b, SampleParams params_a,
                                SampleParams params_b, double r_star, const SurfaceOptions& opt = {}) {
    return combined_acs(std::vector<PricedChain>{{&chain_a, params_a}, {&chain_b, params_b}}, r_star, opt);
}

/// Single-instrument least-squares c (the pooled fit over one chain).
inline CombinedAcs acs_scalar_fit(const OptionChain& chain, SampleParams params, double r_star,
                                  const SurfaceOptions& opt = {}) {
    return combined_acs(std::vector<PricedChain>{{&chain, params}}, r_star, opt);
}

}  // namespace arbcost
