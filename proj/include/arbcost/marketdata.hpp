#pragma once

// CSV ingestion of price histories and option chains, sample moments of
// returns, and the rolling-window parameter and implied-rate series.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arbcost/chain.hpp"
#include "arbcost/errors.hpp"
#include "arbcost/model.hpp"
#include "arbcost/parallel.hpp"

namespace arbcost {

struct PricePoint {
    Date date{};
    double adj_close{0.0};
};

struct PriceSeries {
    std::string instrument;
    std::vector<PricePoint> points;  // strictly increasing dates
};

namespace csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::optional<double> to_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(x)) return std::nullopt;
    return x;
}

/// Header line mapped to column positions; throws ParseError (row 0) when a
/// required column is missing.
class Table {
public:
    Table(std::istream& in, std::vector<std::string> required) : in_(in) {
        std::string header;
        while (std::getline(in_, header)) {
            if (!trim(header).empty()) break;
        }
        if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
        const auto names = split(header);
        for (const auto& want : required) {
            auto it = std::find(names.begin(), names.end(), want);
            if (it == names.end()) throw ParseError("missing column '" + want + "' in header", 0, want);
            columns_[want] = static_cast<std::size_t>(it - names.begin());
        }
        width_ = names.size();
    }

    /// Next non-blank data row; false at end of stream.
    bool next(std::vector<std::string_view>& fields) {
        while (std::getline(in_, line_)) {
            if (trim(line_).empty()) continue;
            ++row_;
            fields = split(line_);
            if (fields.size() != width_) {
                throw ParseError("row " + std::to_string(row_) + " has " + std::to_string(fields.size()) +
                                     " fields, header has " + std::to_string(width_),
                                 row_, "");
            }
            return true;
        }
        return false;
    }

    std::size_t row() const { return row_; }
    std::size_t col(const std::string& name) const { return columns_.at(name); }

private:
    std::istream& in_;
    std::map<std::string, std::size_t> columns_;
    std::size_t width_{0};
    std::size_t row_{0};
    std::string line_;
};

}  // namespace csv

/// Reads `date,adj_close` rows, sorts by date, rejects duplicates and
/// non-positive prices.
inline PriceSeries load_prices(std::istream& in, std::string instrument = {}) {
    csv::Table table(in, {"date", "adj_close"});
    PriceSeries series{std::move(instrument), {}};
    std::vector<std::size_t> rows;
    std::vector<std::string_view> f;
    while (table.next(f)) {
        const auto row = table.row();
        const auto date = parse_date(f[table.col("date")]);
        if (!date) throw ParseError("row " + std::to_string(row) + ": bad date", row, "date");
        const auto price = csv::to_double(f[table.col("adj_close")]);
        if (!price) throw ParseError("row " + std::to_string(row) + ": bad adj_close", row, "adj_close");
        if (!(*price > 0.0)) {
            throw NonPositivePrice("row " + std::to_string(row) + ": adj_close " + detail::fmt(*price) + " is not positive",
                                   row);
        }
        series.points.push_back({*date, *price});
        rows.push_back(row);
    }
    std::vector<std::size_t> order(series.points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return series.points[a].date < series.points[b].date; });
    std::vector<PricePoint> sorted;
    sorted.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& p = series.points[order[i]];
        if (!sorted.empty() && sorted.back().date == p.date) {
            throw DuplicateDate("date " + format_date(p.date) + " appears twice (row " + std::to_string(rows[order[i]]) +
                                ")");
        }
        sorted.push_back(p);
    }
    series.points = std::move(sorted);
    return series;
}

struct ChainLoad {
    OptionChain chain;
    std::vector<std::string> rejections;  // "ROW <n>: <reason>"
};

/// Reads `expiry,strike,bid,ask,last,type` rows. Rows that parse but violate a
/// quote invariant are dropped and reported; malformed fields are fatal.
inline ChainLoad load_chain(std::istream& in, Date quote_date, double spot, std::string instrument = {},
                            double days_per_unit = 365.0) {
    if (!(spot > 0.0)) throw InvalidParams("spot must be positive");
    csv::Table table(in, {"expiry", "strike", "bid", "ask", "last", "type"});
    ChainLoad out;
    out.chain.quote_date = quote_date;
    out.chain.spot = spot;
    out.chain.instrument = std::move(instrument);
    out.chain.days_per_unit = days_per_unit;

    std::vector<std::string_view> f;
    while (table.next(f)) {
        const auto row = table.row();
        auto fail = [&](const std::string& col) {
            return ParseError("row " + std::to_string(row) + ": bad " + col, row, col);
        };
        OptionQuote q;
        const auto expiry = parse_date(f[table.col("expiry")]);
        if (!expiry) throw fail("expiry");
        q.expiry = *expiry;
        auto number = [&](const char* col) {
            const auto x = csv::to_double(f[table.col(col)]);
            if (!x) throw fail(col);
            return *x;
        };
        q.strike = number("strike");
        q.bid = number("bid");
        q.ask = number("ask");
        q.last = f[table.col("last")].empty() ? 0.0 : number("last");
        const auto type = f[table.col("type")];
        if (type == "C")
            q.kind = OptionKind::call;
        else if (type == "P")
            q.kind = OptionKind::put;
        else
            throw fail("type");

        std::string reason;
        if (!(q.strike > 0.0))
            reason = "strike is not positive";
        else if (q.bid < 0.0)
            reason = "negative bid";
        else if (q.bid > q.ask)
            reason = "bid > ask";
        else if (q.expiry < quote_date)
            reason = "expiry before quote date";
        if (!reason.empty()) {
            out.rejections.push_back("ROW " + std::to_string(row) + ": " + reason);
            continue;
        }
        out.chain.quotes.push_back(q);
    }
    if (out.chain.quotes.empty()) {
        throw EmptyChain("chain has no valid quotes (" + std::to_string(out.rejections.size()) + " rejected)");
    }
    return out;
}

enum class ReturnKind { simple, log };

inline std::vector<double> returns_of(const PriceSeries& s, ReturnKind kind = ReturnKind::simple) {
    std::vector<double> r;
    if (s.points.size() < 2) return r;
    r.reserve(s.points.size() - 1);
    for (std::size_t i = 1; i < s.points.size(); ++i) {
        const double ratio = s.points[i].adj_close / s.points[i - 1].adj_close;
        r.push_back(kind == ReturnKind::simple ? ratio - 1.0 : std::log(ratio));
    }
    return r;
}

/// Mean and n-1 sample standard deviation (Welford's update).
inline Moments return_moments(std::span<const double> returns) {
    if (returns.empty()) throw InsufficientData("need at least one return");
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (double x : returns) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    const double var = n > 1 ? std::max(m2, 0.0) / static_cast<double>(n - 1) : 0.0;
    return {mean, std::sqrt(var)};
}

inline Moments sample_moments(const PriceSeries& s, ReturnKind kind = ReturnKind::simple) {
    if (s.points.size() < 2) throw InsufficientData("need at least two prices");
    const auto r = returns_of(s, kind);
    return return_moments(r);
}

/// Window parameters without c; window end date is the last price date.
struct RollingPoint {
    Date date{};
    double mu{0.0};
    double sigma{0.0};
    double m{0.0};
    double v{0.0};
};

/// Inner join of two series on date.
inline std::pair<PriceSeries, PriceSeries> align(const PriceSeries& a, const PriceSeries& b) {
    PriceSeries ja{a.instrument, {}}, jb{b.instrument, {}};
    std::size_t i = 0, j = 0;
    while (i < a.points.size() && j < b.points.size()) {
        if (a.points[i].date < b.points[j].date)
            ++i;
        else if (b.points[j].date < a.points[i].date)
            ++j;
        else {
            ja.points.push_back(a.points[i++]);
            jb.points.push_back(b.points[j++]);
        }
    }
    return {std::move(ja), std::move(jb)};
}

/// One entry per window of `window` consecutive returns on the date-aligned
/// pair; (mu, sigma) from S, (m, v) from V.
inline std::vector<RollingPoint> rolling_params(const PriceSeries& s, const PriceSeries& v, std::size_t window,
                                                ReturnKind kind = ReturnKind::simple, unsigned threads = 1) {
    if (window < 2) throw InvalidParams("window must hold at least two returns");
    const auto [js, jv] = align(s, v);
    if (js.points.empty()) throw EmptyDateIntersection("price series share no dates");
    if (js.points.size() < window + 1) {
        throw InsufficientData("aligned series has " + std::to_string(js.points.size()) + " prices, window " +
                               std::to_string(window) + " needs " + std::to_string(window + 1));
    }
    const auto rs = returns_of(js, kind);
    const auto rv = returns_of(jv, kind);
    const std::size_t count = rs.size() - window + 1;
    std::vector<RollingPoint> out(count);
    parallel_for(count, threads, [&](std::size_t i) {
        const auto ms = return_moments(std::span(rs).subspan(i, window));
        const auto mv = return_moments(std::span(rv).subspan(i, window));
        out[i] = {js.points[i + window].date, ms.mean, ms.stdev, mv.mean, mv.stdev};
    });
    return out;
}

struct Smoothing {
    enum class Kind { none, moving_average };
    Kind kind{Kind::none};
    std::size_t width{1};

    static Smoothing none() { return {}; }
    static Smoothing moving_average(std::size_t k) {
        if (k == 0) throw InvalidParams("moving-average width must be positive");
        return {Kind::moving_average, k};
    }
    std::string describe() const {
        return kind == Kind::none ? "none" : "moving-average(" + std::to_string(width) + ")";
    }
};

struct RStarPoint {
    Date date{};
    double r_star{std::numeric_limits<double>::quiet_NaN()};  // NaN when degenerate
    bool degenerate{false};
};

struct RStarSeries {
    std::vector<RStarPoint> points;
    std::size_t window{0};
    Smoothing smoothing;
};

/// r* per window via adjusted_params(mu, sigma, m, v, c). Windows where r* is
/// undefined (sigma* = v*, or a zero sample volatility) are marked degenerate
/// and excluded from smoothing. The moving average is trailing and uses the
/// non-degenerate values available in the last `width` cells.
inline RStarSeries rstar_series(const std::vector<RollingPoint>& params, double c, Smoothing smoothing = {},
                                std::size_t window = 0) {
    if (!std::isfinite(c)) throw InvalidParams("c must be finite");
    RStarSeries out;
    out.window = window;
    out.smoothing = smoothing;
    out.points.reserve(params.size());
    for (const auto& p : params) {
        RStarPoint pt{p.date};
        try {
            pt.r_star = adjusted_params({p.mu, p.sigma, p.m, p.v, c}).r_star;
        } catch (const DegenerateSpread&) {
            pt.degenerate = true;
        } catch (const InvalidParams&) {
            pt.degenerate = true;
        }
        out.points.push_back(pt);
    }
    if (smoothing.kind == Smoothing::Kind::moving_average) {
        std::vector<RStarPoint> raw = out.points;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (raw[i].degenerate) continue;
            const std::size_t lo = i + 1 >= smoothing.width ? i + 1 - smoothing.width : 0;
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t j = lo; j <= i; ++j) {
                if (raw[j].degenerate) continue;
                sum += raw[j].r_star;
                ++n;
            }
            out.points[i].r_star = sum / static_cast<double>(n);
        }
    }
    return out;
}

}  // namespace arbcost
