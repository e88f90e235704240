#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arbcost/errors.hpp"

namespace arbcost {

using Date = std::chrono::year_month_day;

/// Parses an ISO-8601 calendar date `YYYY-MM-DD`; nullopt if malformed or
/// not a real date.
inline std::optional<Date> parse_date(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    int y = 0;
    unsigned mo = 0, d = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        if (i == 4 || i == 7) continue;
        if (text[i] < '0' || text[i] > '9') return std::nullopt;
    }
    auto digits = [&](std::size_t from, std::size_t len) {
        unsigned x = 0;
        for (std::size_t i = from; i < from + len; ++i) x = x * 10 + static_cast<unsigned>(text[i] - '0');
        return x;
    };
    y = static_cast<int>(digits(0, 4));
    mo = digits(5, 2);
    d = digits(8, 2);
    Date date{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
    if (!date.ok()) return std::nullopt;
    return date;
}

inline std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                  static_cast<unsigned>(d.day()));
    return buf;
}

inline long days_between(const Date& from, const Date& to) {
    return (std::chrono::sys_days{to} - std::chrono::sys_days{from}).count();
}

enum class OptionKind { call, put };

struct OptionQuote {
    Date expiry{};
    double strike{0.0};
    double bid{0.0};
    double ask{0.0};
    double last{0.0};
    OptionKind kind{OptionKind::call};

    double mid() const { return 0.5 * (bid + ask); }
};

/// Quotes observed on one date for one underlying. Maturities are measured
/// in units of `days_per_unit` calendar days (365 gives years).
struct OptionChain {
    Date quote_date{};
    double spot{0.0};
    std::vector<OptionQuote> quotes;
    std::string instrument;
    double days_per_unit{365.0};

    double tau(const OptionQuote& q) const {
        return static_cast<double>(days_between(quote_date, q.expiry)) / days_per_unit;
    }
    double moneyness(const OptionQuote& q) const { return q.strike / spot; }

    void validate() const {
        if (!(spot > 0.0)) throw InvalidParams("chain spot must be positive");
        if (!(days_per_unit > 0.0)) throw InvalidParams("days_per_unit must be positive");
    }
};

}  // namespace arbcost
