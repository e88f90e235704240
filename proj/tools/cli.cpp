#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "arbcost/arbcost.hpp"

namespace arbcost::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("IoError", message) {}
};

enum class Level { error, warn, info, debug };

Level level_from_env() {
    const char* raw = std::getenv("ARBCOST_LOG");
    if (raw == nullptr || *raw == '\0') return Level::warn;
    const std::string v(raw);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    throw ConfigError("ARBCOST_LOG must be one of error, warn, info, debug (got '" + v + "')");
}

class Log {
public:
    Log(std::ostream& err, Level level) : err_(err), level_(level) {}

    void warn(const std::string& msg) const { emit(Level::warn, "warn", msg); }
    void info(const std::string& msg) const { emit(Level::info, "info", msg); }
    void debug(const std::string& msg) const { emit(Level::debug, "debug", msg); }

private:
    void emit(Level at, const char* tag, const std::string& msg) const {
        if (at <= level_) err_ << tag << ": " << msg << '\n';
    }

    std::ostream& err_;
    Level level_;
};

// 12 significant digits everywhere, so golden files are stable.
std::string num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

json jnum(double x) {
    if (!std::isfinite(x)) return nullptr;
    return std::strtod(num(x).c_str(), nullptr);
}

/// Read-only view of one JSON object in the config with typed accessors.
class Cfg {
public:
    Cfg(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j_->is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const std::string& key) const { return j_->contains(key) && !(*j_)[key].is_null(); }

    Cfg at(const std::string& key) const {
        if (!has(key)) throw ConfigError("missing " + where(key));
        return Cfg((*j_)[key], where(key));
    }

    const json& raw(const std::string& key) const {
        if (!has(key)) throw ConfigError("missing " + where(key));
        return (*j_)[key];
    }

    double number(const std::string& key) const {
        const json& v = raw(key);
        if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw ConfigError(where(key) + " must be finite");
        return x;
    }
    std::optional<double> number_opt(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return number(key);
    }

    std::uint64_t count(const std::string& key) const {
        const json& v = raw(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ConfigError(where(key) + " must be a non-negative integer");
        return v.get<std::uint64_t>();
    }
    std::optional<std::uint64_t> count_opt(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return count(key);
    }

    std::string text(const std::string& key) const {
        const json& v = raw(key);
        if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
        return v.get<std::string>();
    }
    std::string text_or(const std::string& key, std::string fallback) const {
        return has(key) ? text(key) : std::move(fallback);
    }

    bool flag_or(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_boolean()) throw ConfigError(where(key) + " must be true or false");
        return v.get<bool>();
    }

    std::vector<double> numbers(const std::string& key) const {
        const json& v = raw(key);
        if (!v.is_array()) throw ConfigError(where(key) + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    std::vector<Cfg> objects(const std::string& key) const {
        const json& v = raw(key);
        if (!v.is_array()) throw ConfigError(where(key) + " must be an array");
        std::vector<Cfg> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], where(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    /// Rejects keys outside `allowed`, so typos fail loudly.
    void only(std::initializer_list<const char*> allowed) const {
        for (const auto& [key, value] : j_->items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || key == a;
            if (!ok) throw ConfigError("unknown key " + where(key));
        }
    }

    std::string where(const std::string& key = {}) const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    const json* j_;
    std::string path_;
};

template <class T>
T pick(const std::string& what, const std::string& value, std::initializer_list<std::pair<const char*, T>> choices) {
    std::string names;
    for (const auto& [name, v] : choices) {
        if (value == name) return v;
        names += names.empty() ? name : std::string(", ") + name;
    }
    throw ConfigError(what + " must be one of " + names + " (got '" + value + "')");
}

enum class Format { csv, json };
enum class MomentUnits { per_observation, annualized };

struct Job {
    std::string command;
    json doc = json::object();
    fs::path base;
    std::string out;
    Format format{Format::csv};
    int annualization{252};
    std::uint64_t seed{1};
    unsigned threads{1};
    ReturnKind returns{ReturnKind::simple};
    MomentUnits units{MomentUnits::per_observation};
    const Log* log{nullptr};

    fs::path input(const std::string& value, const std::string& what) const {
        fs::path p(value);
        if (p.is_relative()) p = base / p;
        if (!fs::is_regular_file(p)) throw ConfigError(what + ": input file not found: " + p.string());
        return p;
    }

    Moments in_units(Moments m) const {
        return units == MomentUnits::annualized ? annualize(m, annualization) : m;
    }
    std::string units_name() const {
        return units == MomentUnits::annualized ? "annualized x" + std::to_string(annualization) : "per observation";
    }
};

bool is_common_key(const std::string& k) {
    for (const char* c : {"command", "out", "format", "annualization", "seed", "threads", "log_returns",
                          "moment_units"})
        if (k == c) return true;
    return false;
}

/// Cfg::only plus the keys every command accepts.
void only_with_common(const Cfg& root, const json& doc, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : doc.items()) {
        if (is_common_key(key)) continue;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown key " + root.where(key));
    }
}

/// Everything a command produces. Nothing touches the filesystem until the
/// command has finished without error.
struct Output {
    std::vector<std::pair<fs::path, std::string>> files;
    std::string text;  // for the result stream

    void primary(const Job& job, std::string content) {
        if (job.out.empty()) {
            text += content;
        } else {
            files.emplace_back(job.out, std::move(content));
        }
    }
};

void write_atomic(const fs::path& target, const std::string& content) {
    std::error_code ec;
    if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f << content;
        f.flush();
        if (!f) throw IoError("failed writing " + tmp.string());
    }
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + target.string() + ": " + ec.message());
    }
}

std::ifstream open_input(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return in;
}

Date date_of(const Cfg& c, const std::string& key) {
    const auto d = parse_date(c.text(key));
    if (!d) throw ConfigError(c.where(key) + " must be an ISO-8601 date (YYYY-MM-DD)");
    return *d;
}

std::string key_value_csv(const std::vector<std::pair<std::string, double>>& rows) {
    std::string s = "field,value\n";
    for (const auto& [k, v] : rows) s += k + "," + num(v) + "\n";
    return s;
}

json key_value_json(const std::vector<std::pair<std::string, double>>& rows) {
    json j = json::object();
    for (const auto& [k, v] : rows) j[k] = jnum(v);
    return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- price

void cmd_price(const Job& job, Output& o) {
    const Cfg root(job.doc, "");
    only_with_common(root, job.doc, {"s0", "v0", "params", "lattice", "payoff", "discount", "node_grid", "monte_carlo"});

    const Cfg pc = root.at("params");
    pc.only({"mu", "sigma", "m", "v", "c"});
    const MarketParams p{pc.number("mu"), pc.number("sigma"), pc.number("m"), pc.number("v"), pc.number("c")};
    p.validate();
    const double s0 = root.number_opt("s0").value_or(100.0);
    const double v0 = root.number_opt("v0").value_or(100.0);

    const Cfg lat = root.at("lattice");
    lat.only({"steps", "dt", "horizon"});
    const auto steps_in = lat.count_opt("steps");
    const auto dt_in = lat.number_opt("dt");
    const auto horizon_in = lat.number_opt("horizon");
    const int given = int(steps_in.has_value()) + int(dt_in.has_value()) + int(horizon_in.has_value());
    if (given != 2) throw ConfigError("lattice needs exactly two of steps, dt, horizon");
    std::size_t steps = 0;
    double dt = 0.0;
    if (steps_in && horizon_in) {
        steps = *steps_in;
        if (steps == 0 || !(*horizon_in > 0.0)) throw ConfigError("lattice steps and horizon must be positive");
        dt = *horizon_in / static_cast<double>(steps);
    } else if (steps_in && dt_in) {
        steps = *steps_in;
        dt = *dt_in;
        if (steps == 0 || !(dt > 0.0)) throw ConfigError("lattice steps and dt must be positive");
    } else {
        if (!(*dt_in > 0.0) || !(*horizon_in > 0.0)) throw ConfigError("lattice dt and horizon must be positive");
        const double ratio = *horizon_in / *dt_in;
        steps = static_cast<std::size_t>(std::llround(ratio));
        if (steps == 0 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio)
            throw ConfigError("lattice horizon is not a whole number of dt steps");
        dt = *horizon_in / static_cast<double>(steps);
    }

    const Cfg pay = root.at("payoff");
    pay.only({"type", "strike", "underlying", "value"});
    const auto on = pick<Payoff::Underlying>("payoff.underlying", pay.text_or("underlying", "S"),
                                             {{"S", Payoff::Underlying::s}, {"V", Payoff::Underlying::v}});
    const std::string type = pay.text("type");
    std::optional<Payoff> payoff;
    if (type == "call") {
        payoff = Payoff::call(pay.number("strike"), on);
    } else if (type == "put") {
        payoff = Payoff::put(pay.number("strike"), on);
    } else if (type == "constant") {
        payoff = Payoff::constant(pay.number("value"));
    } else {
        throw ConfigError("payoff.type must be one of call, put, constant (got '" + type + "')");
    }

    enum class Disc { none, simple, continuous };
    const Disc disc = pick<Disc>("discount", root.text_or("discount", "none"),
                                 {{"none", Disc::none}, {"simple", Disc::simple}, {"continuous", Disc::continuous}});
    const std::string grid_path = root.text_or("node_grid", "");
    std::size_t draws = 0;
    if (root.has("monte_carlo")) {
        const Cfg mc = root.at("monte_carlo");
        mc.only({"draws"});
        draws = mc.count("draws");
        if (draws < 2) throw ConfigError("monte_carlo.draws must be at least 2");
    }

    const AdjustedParams a = adjusted_params(p);
    const Discounting discounting = disc == Disc::simple       ? Discounting::simple(a.r_star)
                                    : disc == Disc::continuous ? Discounting::continuous(a.r_star)
                                                               : Discounting::none();
    job.log->info("lattice: " + std::to_string(steps) + " steps of dt = " + num(dt));
    const auto tree = build_tree(s0, v0, p, dt, steps);
    const auto res = price_contract(tree, *payoff, discounting);

    std::vector<std::pair<std::string, double>> rows{
        {"price", res.price},       {"q_up", res.q.q_up},         {"q_down", res.q.q_down},
        {"dt", dt},                 {"steps", double(steps)},     {"horizon", dt * double(steps)},
        {"mu_star", a.mu_star},     {"m_star", a.m_star},         {"sigma_star", a.sigma_star},
        {"v_star", a.v_star},       {"r_star", a.r_star},         {"theta_star", a.theta_star}};
    if (draws > 0) {
        const auto est = mc_terminal_mean(s0, v0, a, dt * double(steps), draws, NormalStream(job.seed), job.threads);
        rows.insert(rows.end(), {{"mc_mean_s", est.mean_s},
                                 {"mc_stderr_s", est.stderr_s},
                                 {"mc_mean_v", est.mean_v},
                                 {"mc_stderr_v", est.stderr_v},
                                 {"mc_draws", double(draws)},
                                 {"mc_seed", double(job.seed)}});
    }
    if (job.format == Format::json) {
        o.primary(job, dump(key_value_json(rows)));
    } else {
        o.primary(job, key_value_csv(rows));
    }

    if (!grid_path.empty()) {
        std::string g = "step,node,s,v,value\n";
        for (std::size_t k = 0; k <= steps; ++k) {
            for (std::size_t j = 0; j <= k; ++j) {
                const auto& nd = tree.node(k, j);
                g += std::to_string(k) + "," + std::to_string(j) + "," + num(nd.s) + "," + num(nd.v) + "," +
                     num(res.values[k][j]) + "\n";
            }
        }
        o.files.emplace_back(grid_path, std::move(g));
    }
}

// ---------------------------------------------------------------- inputs shared by calibrate and surfaces

struct LoadedChain {
    ChainLoad load;
    std::size_t rows{0};
    std::optional<SampleParams> sample;
    std::optional<std::size_t> sample_returns;
};

LoadedChain load_chain_entry(const Job& job, const Cfg& c, bool need_sample) {
    c.only({"file", "instrument", "quote_date", "spot", "days_per_unit", "prices", "sample"});
    const fs::path file = job.input(c.text("file"), c.where("file"));
    const std::string instrument = c.text_or("instrument", fs::path(c.text("file")).stem().string());
    const Date quote_date = date_of(c, "quote_date");
    const double spot = c.number("spot");
    if (!(spot > 0.0)) throw ConfigError(c.where("spot") + " must be positive");
    const double days = c.number_opt("days_per_unit").value_or(365.0);
    if (!(days > 0.0)) throw ConfigError(c.where("days_per_unit") + " must be positive");
    if (c.has("prices") && c.has("sample")) throw ConfigError(c.where() + " takes prices or sample, not both");

    std::optional<fs::path> prices;
    std::optional<SampleParams> given;
    if (c.has("prices")) prices = job.input(c.text("prices"), c.where("prices"));
    if (c.has("sample")) {
        const Cfg s = c.at("sample");
        s.only({"mu", "sigma"});
        given = SampleParams{s.number("mu"), s.number("sigma")};
    }
    if (need_sample && !prices && !given) throw ConfigError(c.where() + " needs prices or sample for arb-cost work");

    LoadedChain out;
    auto in = open_input(file);
    out.load = load_chain(in, quote_date, spot, instrument, days);
    out.rows = out.load.chain.quotes.size() + out.load.rejections.size();
    for (const auto& r : out.load.rejections) job.log->warn(instrument + " " + r);
    if (prices) {
        auto pin = open_input(*prices);
        const auto series = load_prices(pin, instrument);
        const Moments m = job.in_units(sample_moments(series, job.returns));
        out.sample = SampleParams{m.mean, m.stdev};
        out.sample_returns = series.points.size() - 1;
    } else if (given) {
        out.sample = given;
    }
    return out;
}

json skip_json(const std::vector<SkipEntry>& skipped) {
    json arr = json::array();
    for (const auto& s : skipped)
        arr.push_back({{"instrument", s.instrument}, {"quote_index", s.quote_index}, {"reason", s.reason}});
    return arr;
}

// ---------------------------------------------------------------- calibrate

void cmd_calibrate(const Job& job, Output& o) {
    if (job.format != Format::json) throw ConfigError("calibrate writes JSON; use --format json");
    const Cfg root(job.doc, "");
    only_with_common(root, job.doc, {"direct", "chain", "rate_vol", "price_source"});
    if (root.has("direct") == root.has("chain")) throw ConfigError("calibrate needs exactly one of direct, chain");

    json report;
    if (root.has("direct")) {
        const Cfg d = root.at("direct");
        d.only({"sigma_star", "sigma", "mu"});
        const double sigma_star = d.number("sigma_star"), sigma = d.number("sigma"), mu = d.number("mu");
        report = {{"mode", "direct"},
                  {"sigma_star", jnum(sigma_star)},
                  {"sigma", jnum(sigma)},
                  {"mu", jnum(mu)},
                  {"c", jnum(calibrate_c_scalar(sigma_star, sigma, mu))},
                  {"c_unit", "sigma_star units per unit of sample drift, as supplied"}};
        o.primary(job, dump(report));
        return;
    }

    RateVolSettings settings;
    if (root.has("rate_vol")) {
        const Cfg rv = root.at("rate_vol");
        rv.only({"r_lo", "r_hi", "vol_lo", "vol_hi", "max_evaluations"});
        settings.r_lo = rv.number_opt("r_lo").value_or(settings.r_lo);
        settings.r_hi = rv.number_opt("r_hi").value_or(settings.r_hi);
        settings.vol_lo = rv.number_opt("vol_lo").value_or(settings.vol_lo);
        settings.vol_hi = rv.number_opt("vol_hi").value_or(settings.vol_hi);
        settings.max_evaluations = rv.count_opt("max_evaluations").value_or(settings.max_evaluations);
        if (!(settings.r_lo < settings.r_hi) || !(settings.vol_lo > 0.0) || !(settings.vol_lo < settings.vol_hi))
            throw ConfigError("rate_vol bounds must satisfy r_lo < r_hi and 0 < vol_lo < vol_hi");
    }
    const auto source = pick<PriceSource>("price_source", root.text_or("price_source", "mid"),
                                          {{"mid", PriceSource::mid}, {"bid", PriceSource::bid}, {"ask", PriceSource::ask}});
    const LoadedChain lc = load_chain_entry(job, root.at("chain"), true);
    const OptionChain& chain = lc.load.chain;
    const SampleParams sample = *lc.sample;

    const RateVolFit fit = implied_rate_vol(chain, chain.spot, settings);
    job.log->info("rate/vol fit: " + std::to_string(fit.report.evaluations) + " evaluations");
    const double c = calibrate_c_scalar(fit.sigma_star, sample.sigma, sample.mu);
    const PerQuoteC per_quote = calibrate_c_per_quote(chain, source, sample, fit.r_star, job.threads);

    json skip_log = json::array();
    for (const auto& r : lc.load.rejections) skip_log.push_back(r);
    for (const auto& s : per_quote.skipped)
        skip_log.push_back("QUOTE " + std::to_string(s.quote_index) + ": " + s.reason);

    report = {{"mode", "chain"},
              {"instrument", chain.instrument},
              {"quote_date", format_date(chain.quote_date)},
              {"spot", jnum(chain.spot)},
              {"r_star", jnum(fit.r_star)},
              {"sigma_star", jnum(fit.sigma_star)},
              {"c", jnum(c)},
              {"c_unit", "volatility per year (days_per_unit " + num(chain.days_per_unit) +
                             ") per unit of sample drift " + job.units_name()},
              {"rmse", jnum(fit.report.rmse)},
              {"evaluations", fit.report.evaluations},
              {"sample",
               {{"mu", jnum(sample.mu)},
                {"sigma", jnum(sample.sigma)},
                {"units", job.units_name()},
                {"returns", lc.sample_returns ? json(*lc.sample_returns) : json(nullptr)},
                {"return_kind", job.returns == ReturnKind::log ? "log" : "simple"}}},
              {"c_per_quote",
               {{"mean", jnum(per_quote.mean)},
                {"median", jnum(per_quote.median)},
                {"used", per_quote.used},
                {"price_source", root.text_or("price_source", "mid")}}},
              {"quotes",
               {{"rows", lc.rows},
                {"accepted", chain.quotes.size()},
                {"rejected", lc.load.rejections.size()},
                {"fitted", fit.report.residuals.size()}}},
              {"skip_log", skip_log}};
    o.primary(job, dump(report));
}

// ---------------------------------------------------------------- surfaces

GridSpec grid_from(const Cfg& root, double days_per_unit) {
    GridSpec g = GridSpec::defaults(days_per_unit);
    if (!root.has("grid")) return g;
    const Cfg gc = root.at("grid");
    gc.only({"moneyness", "maturity_days"});
    if (gc.has("moneyness")) {
        const json& m = gc.raw("moneyness");
        if (m.is_array()) {
            g.moneyness = gc.numbers("moneyness");
        } else {
            const Cfg r = gc.at("moneyness");
            r.only({"from", "to", "step"});
            const double from = r.number("from"), to = r.number("to"), step = r.number("step");
            if (!(step > 0.0) || !(to >= from)) throw ConfigError("grid.moneyness needs from <= to and step > 0");
            g.moneyness.clear();
            const auto n = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9));
            for (std::size_t i = 0; i <= n; ++i) g.moneyness.push_back(from + step * static_cast<double>(i));
        }
    }
    if (gc.has("maturity_days")) {
        g.maturity.clear();
        for (double d : gc.numbers("maturity_days")) g.maturity.push_back(d / days_per_unit);
    }
    try {
        g.validate();
    } catch (const InvalidParams& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
    return g;
}

std::string surface_csv(const SurfaceGrid& g, bool matrix) {
    std::string s;
    if (matrix) {
        s = "moneyness";
        for (double t : g.maturity()) s += "," + num(t);
        s += "\n";
        for (std::size_t i = 0; i < g.moneyness().size(); ++i) {
            s += num(g.moneyness()[i]);
            for (std::size_t j = 0; j < g.maturity().size(); ++j) {
                s += ",";
                if (const auto& v = g.value(i, j)) s += num(*v);
            }
            s += "\n";
        }
        return s;
    }
    s = "moneyness,maturity,value\n";
    for (std::size_t i = 0; i < g.moneyness().size(); ++i)
        for (std::size_t j = 0; j < g.maturity().size(); ++j)
            if (const auto& v = g.value(i, j)) s += num(g.moneyness()[i]) + "," + num(g.maturity()[j]) + "," + num(*v) + "\n";
    return s;
}

json surface_json(const SurfaceGrid& g) {
    json cells = json::array();
    for (std::size_t i = 0; i < g.moneyness().size(); ++i)
        for (std::size_t j = 0; j < g.maturity().size(); ++j)
            if (const auto& v = g.value(i, j))
                cells.push_back({{"moneyness", jnum(g.moneyness()[i])},
                                 {"maturity", jnum(g.maturity()[j])},
                                 {"value", jnum(*v)},
                                 {"count", g.count(i, j)}});
    return {{"kind", to_string(g.kind())}, {"cells", cells}};
}

void cmd_surfaces(const Job& job, Output& o) {
    const Cfg root(job.doc, "");
    only_with_common(root, job.doc, {"chains", "r_star", "surfaces", "price_source", "grid", "layout", "metadata"});
    if (job.out.empty()) throw ConfigError("surfaces writes one file per surface; give an output directory with --out");

    const double r_star = root.number("r_star");
    const auto source = pick<PriceSource>("price_source", root.text_or("price_source", "mid"),
                                          {{"mid", PriceSource::mid}, {"bid", PriceSource::bid}, {"ask", PriceSource::ask}});
    const bool matrix = pick<bool>("layout", root.text_or("layout", "long"), {{"long", false}, {"matrix", true}});
    const bool metadata = root.flag_or("metadata", true);

    enum class Want { iv, acs, spread, combined };
    std::vector<Want> wanted;
    {
        const json& list = root.raw("surfaces");
        if (!list.is_array() || list.empty()) throw ConfigError("surfaces must be a non-empty array");
        for (const auto& item : list) {
            if (!item.is_string()) throw ConfigError("surfaces entries must be strings");
            wanted.push_back(pick<Want>("surfaces entry", item.get<std::string>(),
                                        {{"iv", Want::iv}, {"acs", Want::acs}, {"spread-acs", Want::spread},
                                         {"combined", Want::combined}}));
        }
    }
    bool need_sample = false;
    for (Want w : wanted) need_sample = need_sample || w != Want::iv;

    const auto entries = root.objects("chains");
    if (entries.empty()) throw ConfigError("chains must list at least one chain");
    double days_per_unit = 0.0;
    for (const auto& e : entries) {
        const double d = e.number_opt("days_per_unit").value_or(365.0);
        if (days_per_unit != 0.0 && d != days_per_unit) throw ConfigError("all chains must share days_per_unit");
        days_per_unit = d;
    }
    SurfaceOptions opt;
    opt.grid = grid_from(root, days_per_unit);
    opt.threads = job.threads;

    std::vector<LoadedChain> chains;
    for (const auto& e : entries) chains.push_back(load_chain_entry(job, e, need_sample));
    std::map<std::string, int> seen;
    for (const auto& c : chains)
        if (++seen[c.load.chain.instrument] > 1)
            throw ConfigError("duplicate chain instrument '" + c.load.chain.instrument + "'");

    const std::string ext = job.format == Format::json ? ".json" : ".csv";
    const fs::path dir(job.out);
    json meta_surfaces = json::array();
    auto emit = [&](const std::string& stem, const SurfaceGrid& grid, const std::string& instrument,
                    std::size_t contributions, const std::vector<SkipEntry>& skipped) {
        const std::string file = stem + ext;
        o.files.emplace_back(dir / file, job.format == Format::json ? dump(surface_json(grid)) : surface_csv(grid, matrix));
        meta_surfaces.push_back({{"file", file},
                                 {"kind", to_string(grid.kind())},
                                 {"instrument", instrument},
                                 {"filled_cells", grid.filled_cells()},
                                 {"contributions", contributions},
                                 {"skipped", skip_json(skipped)}});
        job.log->info(file + ": " + std::to_string(grid.filled_cells()) + " cells, " +
                      std::to_string(skipped.size()) + " skipped quotes");
    };

    json combined_meta = nullptr;
    for (Want w : wanted) {
        if (w == Want::combined) {
            std::vector<PricedChain> pooled;
            for (const auto& c : chains) pooled.push_back({&c.load.chain, *c.sample});
            const auto res = combined_acs(pooled, r_star, opt);
            emit("combined_acs", res.grid, "combined", res.contributions, res.skipped);
            combined_meta = {{"c", jnum(res.c_combined)}, {"rmse", jnum(res.rmse)}};
            continue;
        }
        for (const auto& c : chains) {
            const OptionChain& ch = c.load.chain;
            if (w == Want::iv) {
                const auto res = iv_surface(ch, r_star, opt);
                emit(ch.instrument + "_iv", res.grid, ch.instrument, res.contributions, res.skipped);
            } else if (w == Want::acs) {
                const auto res = acs_surface(ch, source, *c.sample, r_star, opt);
                emit(ch.instrument + "_acs", res.grid, ch.instrument, res.contributions, res.skipped);
            } else {
                const auto res = spread_acs_surface(ch, *c.sample, r_star, opt);
                emit(ch.instrument + "_spread_acs", res.grid, ch.instrument, res.contributions, res.skipped);
            }
        }
    }

    if (metadata) {
        json chain_meta = json::array();
        for (const auto& c : chains) {
            json entry = {{"instrument", c.load.chain.instrument},
                          {"quote_date", format_date(c.load.chain.quote_date)},
                          {"spot", jnum(c.load.chain.spot)},
                          {"rows", c.rows},
                          {"accepted", c.load.chain.quotes.size()},
                          {"rejections", c.load.rejections}};
            if (c.sample)
                entry["sample"] = {{"mu", jnum(c.sample->mu)}, {"sigma", jnum(c.sample->sigma)}, {"units", job.units_name()}};
            chain_meta.push_back(entry);
        }
        json axes = {{"moneyness", json::array()}, {"maturity", json::array()}};
        for (double x : opt.grid.moneyness) axes["moneyness"].push_back(jnum(x));
        for (double x : opt.grid.maturity) axes["maturity"].push_back(jnum(x));
        json meta = {{"r_star", jnum(r_star)},
                     {"price_source", root.text_or("price_source", "mid")},
                     {"days_per_unit", jnum(days_per_unit)},
                     {"layout", matrix ? "matrix" : "long"},
                     {"grid", axes},
                     {"chains", chain_meta},
                     {"surfaces", meta_surfaces}};
        if (!combined_meta.is_null()) meta["combined"] = combined_meta;
        o.files.emplace_back(dir / "surfaces.json", dump(meta));
    }
}

// ---------------------------------------------------------------- rfr-series

void cmd_rfr_series(const Job& job, Output& o) {
    const Cfg root(job.doc, "");
    only_with_common(root, job.doc, {"prices_s", "prices_v", "c", "window", "smoothing"});
    const fs::path ps = job.input(root.text("prices_s"), "prices_s");
    const fs::path pv = job.input(root.text("prices_v"), "prices_v");
    const double c = root.number("c");
    const std::size_t window = root.count_opt("window").value_or(252);
    if (window < 2) throw ConfigError("window must be at least 2");
    Smoothing smoothing;
    if (root.has("smoothing")) {
        const json& sm = root.raw("smoothing");
        if (sm.is_string() && sm.get<std::string>() == "none") {
            smoothing = Smoothing::none();
        } else if (sm.is_object()) {
            const Cfg s = root.at("smoothing");
            s.only({"moving_average"});
            const auto k = s.count("moving_average");
            if (k == 0) throw ConfigError("smoothing.moving_average must be positive");
            smoothing = Smoothing::moving_average(k);
        } else {
            throw ConfigError("smoothing must be \"none\" or {\"moving_average\": k}");
        }
    }

    auto in_s = open_input(ps);
    auto in_v = open_input(pv);
    const auto s = load_prices(in_s, ps.stem().string());
    const auto v = load_prices(in_v, pv.stem().string());
    auto params = rolling_params(s, v, window, job.returns, job.threads);
    if (job.units == MomentUnits::annualized) {
        for (auto& p : params) {
            const Moments a = job.in_units({p.mu, p.sigma});
            const Moments b = job.in_units({p.m, p.v});
            p.mu = a.mean;
            p.sigma = a.stdev;
            p.m = b.mean;
            p.v = b.stdev;
        }
    }
    const auto series = rstar_series(params, c, smoothing, window);
    std::size_t degenerate = 0;
    for (const auto& p : series.points) degenerate += p.degenerate ? 1 : 0;
    job.log->info(std::to_string(series.points.size()) + " windows, " + std::to_string(degenerate) + " degenerate");

    if (job.format == Format::json) {
        json pts = json::array();
        for (const auto& p : series.points)
            pts.push_back({{"date", format_date(p.date)}, {"r_star", jnum(p.r_star)}, {"degenerate", p.degenerate}});
        o.primary(job, dump({{"c", jnum(c)},
                             {"window", window},
                             {"smoothing", smoothing.describe()},
                             {"units", job.units_name()},
                             {"points", pts}}));
    } else {
        std::string out = "date,r_star,degenerate_flag\n";
        for (const auto& p : series.points)
            out += format_date(p.date) + "," + num(p.r_star) + "," + (p.degenerate ? "1" : "0") + "\n";
        o.primary(job, out);
    }
}

// ---------------------------------------------------------------- driver

struct Flags {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<int> annualization;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool log_returns{false};
    std::vector<std::pair<json::json_pointer, double>> overrides;
};

struct Override {
    const char* flag;
    const char* pointer;
    const char* help;
};

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON job configuration");
    app->add_option("--out", f.out, "output file (directory for surfaces)");
    app->add_option("--format", f.format, "csv or json");
    app->add_option("--annualization", f.annualization, "periods per year for annualized moments (default 252)");
    app->add_option("--seed", f.seed, "seed for sampled computations");
    app->add_option("--threads", f.threads, "worker threads, 0 for all cores");
    app->add_flag("--log-returns", f.log_returns, "use log instead of simple returns");
}

Job make_job(const std::string& command, const Flags& f, std::map<std::string, std::optional<double>>& values,
             const std::vector<Override>& table, const Log& log) {
    Job job;
    job.command = command;
    job.log = &log;
    if (!f.config.empty()) {
        const fs::path path(f.config);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("config file not found: " + f.config);
        try {
            job.doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config is not valid JSON: " + std::string(e.what()));
        }
        if (!job.doc.is_object()) throw ConfigError("config must be a JSON object");
        job.base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    } else {
        job.base = ".";
    }
    for (const auto& o : table) {
        const auto& v = values[o.flag];
        if (v) job.doc[json::json_pointer(o.pointer)] = *v;
    }

    const Cfg root(job.doc, "");
    if (root.has("command") && root.text("command") != command)
        throw ConfigError("config is for '" + root.text("command") + "', not '" + command + "'");
    job.out = f.out.value_or(root.text_or("out", ""));
    job.format = pick<Format>("format", f.format.value_or(root.text_or("format", command == "calibrate" ? "json" : "csv")),
                              {{"csv", Format::csv}, {"json", Format::json}});
    if (f.annualization) {
        job.annualization = *f.annualization;
    } else if (root.has("annualization")) {
        job.annualization = static_cast<int>(root.count("annualization"));
    }
    if (job.annualization <= 0) throw ConfigError("annualization must be a positive integer");
    job.seed = f.seed.value_or(root.count_opt("seed").value_or(1));
    job.threads = f.threads.value_or(static_cast<unsigned>(root.count_opt("threads").value_or(1)));
    job.returns = (f.log_returns || root.flag_or("log_returns", false)) ? ReturnKind::log : ReturnKind::simple;
    job.units = pick<MomentUnits>("moment_units", root.text_or("moment_units", "per_observation"),
                                  {{"per_observation", MomentUnits::per_observation},
                                   {"annualized", MomentUnits::annualized}});
    return job;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Arb-cost option pricing and calibration"};
    app.require_subcommand(1);
    Flags flags;
    std::map<std::string, std::optional<double>> values;

    const std::map<std::string, std::vector<Override>> overrides{
        {"price",
         {{"--mu", "/params/mu", "S drift"},
          {"--sigma", "/params/sigma", "S volatility"},
          {"--m", "/params/m", "V drift"},
          {"--v", "/params/v", "V volatility"},
          {"--c", "/params/c", "arb-cost coefficient"},
          {"--s0", "/s0", "initial S"},
          {"--v0", "/v0", "initial V"},
          {"--strike", "/payoff/strike", "payoff strike"},
          {"--steps", "/lattice/steps", "lattice steps"},
          {"--dt", "/lattice/dt", "lattice step length"},
          {"--horizon", "/lattice/horizon", "lattice horizon"}}},
        {"calibrate",
         {{"--sigma-star", "/direct/sigma_star", "implied volatility (direct mode)"},
          {"--sigma", "/direct/sigma", "sample volatility (direct mode)"},
          {"--mu", "/direct/mu", "sample drift (direct mode)"}}},
        {"surfaces", {{"--r-star", "/r_star", "rate used for implied vols"}}},
        {"rfr-series",
         {{"--c", "/c", "arb-cost coefficient"}, {"--window", "/window", "rolling window length"}}}};

    const std::map<std::string, const char*> descriptions{
        {"price", "price a European claim on the arb-cost lattice"},
        {"calibrate", "implied rate, volatility and arb-cost coefficient from a chain"},
        {"surfaces", "implied-vol and arb-cost surfaces on a moneyness x maturity grid"},
        {"rfr-series", "rolling implied risk-free rate from two price histories"}};
    for (const auto& [name, table] : overrides) {
        auto* sub = app.add_subcommand(name, descriptions.at(name));
        add_common(sub, flags);
        for (const auto& o : table) sub->add_option(o.flag, values[o.flag], o.help);
    }
    // Integer-valued overrides must stay integers in the config document.
    const auto integral = [](const std::string& flag) { return flag == "--steps" || flag == "--window"; };

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: UsageError: " << e.what() << '\n';
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        const Log log(err, level_from_env());
        Job job = make_job(command, flags, values, overrides.at(command), log);
        for (const auto& o : overrides.at(command)) {
            const auto& v = values[o.flag];
            if (v && integral(o.flag)) {
                if (*v < 0 || std::floor(*v) != *v) throw ConfigError(std::string(o.flag) + " must be a whole number");
                job.doc[json::json_pointer(o.pointer)] = static_cast<std::uint64_t>(*v);
            }
        }
        Output result;
        if (command == "price") {
            cmd_price(job, result);
        } else if (command == "calibrate") {
            cmd_calibrate(job, result);
        } else if (command == "surfaces") {
            cmd_surfaces(job, result);
        } else {
            cmd_rfr_series(job, result);
        }
        for (const auto& [path, content] : result.files) write_atomic(path, content);
        out << result.text;
        out.flush();
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.name() << ": " << e.what() << '\n';
        return e.name() == "ConfigError" ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error: InternalError: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace arbcost::cli
