#pragma once

// Experiment harness: run configurations, paired and swept runs, and the
// CSV / JSON artifacts written for each run.

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngflow/accel.hpp"

namespace ngflow {

class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& message)
        : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline constexpr const char* kCsvHeader =
    "k,g_vprime,g_l2,picard_resid_h1,theta,gamma,kappa_hat,max_abs_alpha,alpha_json,wall_ms";

struct RunConfig {
    double re = 1000.0;
    std::size_t nx = 64;
    DepthSchedule depth = DepthSchedule::fixed(0);
    NormKind norm = NormKind::VPrime;
    double tol = 1e-8;
    std::size_t max_iters = 100;
    Mode mode = Mode::Ngmres;
    std::optional<std::filesystem::path> out_dir;
    bool timing = false;  // write measured wall_ms into the CSV instead of 0

    void validate() const {
        if (!(re > 0.0) || !std::isfinite(re)) throw ConfigError("re", "must be a positive finite number");
        if (nx < 8) throw ConfigError("nx", "must be at least 8, got " + std::to_string(nx));
        if (!(tol > 0.0) || std::isnan(tol)) throw ConfigError("tol", "must be positive");
        for (auto m : {depth.early(), depth.late()}) {
            if (m && *m > max_iters && max_iters > 0) {
                throw ConfigError("m", "depth " + std::to_string(*m) + " exceeds max_iters " + std::to_string(max_iters));
            }
        }
    }
};

inline std::optional<std::size_t> parse_depth_value(const std::string& s) {
    if (s == "inf") return std::nullopt;
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("m", "expected a non-negative integer or 'inf', got '" + s + "'");
    }
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
    if (errno == ERANGE) throw ConfigError("m", "value out of range: " + s);
    return static_cast<std::size_t>(v);
}

/// "5", "inf" or "early:switch_tol:late".
inline DepthSchedule parse_depth(const std::string& text) {
    const auto first = text.find(':');
    if (first == std::string::npos) {
        const auto m = parse_depth_value(text);
        return m ? DepthSchedule::fixed(*m) : DepthSchedule::unbounded();
    }
    const auto second = text.find(':', first + 1);
    if (second == std::string::npos || text.find(':', second + 1) != std::string::npos) {
        throw ConfigError("m", "schedule must look like early:tol:late, got '" + text + "'");
    }
    const auto early = parse_depth_value(text.substr(0, first));
    const std::string tol_text = text.substr(first + 1, second - first - 1);
    char* end = nullptr;
    const double tol = std::strtod(tol_text.c_str(), &end);
    if (tol_text.empty() || *end != '\0' || !(tol > 0.0) || !std::isfinite(tol)) {
        throw ConfigError("m", "schedule switch tolerance must be a positive number, got '" + tol_text + "'");
    }
    return DepthSchedule::switched(early, tol, parse_depth_value(text.substr(second + 1)));
}

inline NormKind parse_norm(const std::string& s) {
    if (s == "vprime") return NormKind::VPrime;
    if (s == "l2") return NormKind::L2;
    throw ConfigError("norm", "expected 'vprime' or 'l2', got '" + s + "'");
}

inline Mode parse_mode(const std::string& s) {
    if (s == "picard") return Mode::Picard;
    if (s == "ngmres") return Mode::Ngmres;
    throw ConfigError("mode", "expected 'picard' or 'ngmres', got '" + s + "'");
}

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// File stem for a run, e.g. "ngmres_re1000_nx64_m5_vprime".
inline std::string run_stem(const RunConfig& cfg) {
    std::string m = cfg.depth.describe();
    std::replace(m.begin(), m.end(), ':', '-');
    return std::string(to_string(cfg.mode)) + "_re" + format_double(cfg.re) + "_nx" + std::to_string(cfg.nx) + "_m" +
           m + "_" + to_string(cfg.norm);
}

/// Legend text for plots.
inline std::string run_label(const RunConfig& cfg) {
    std::string s = cfg.mode == Mode::Picard ? std::string("picard") : "ngmres m=" + cfg.depth.describe();
    s += std::string(" ") + to_string(cfg.norm) + " nx=" + std::to_string(cfg.nx) + " Re=" + format_double(cfg.re);
    return s;
}

struct RunTotals {
    std::size_t iterations = 0;
    double wall_ms = 0.0;
    std::size_t linear_solves = 0;
    std::size_t riesz_solves = 0;
};

struct RunLog {
    RunConfig config;
    std::vector<IterationRecord> records;
    Status status = Status::MaxIters;
    std::string message;
    RunTotals totals;
    std::string label;  // overrides run_label(config) when set

    std::string legend() const { return label.empty() ? run_label(config) : label; }
};

inline std::filesystem::path write_run(const RunLog& log, const std::filesystem::path& dir);

/// Runs one configuration. Artifacts are written when cfg.out_dir is set.
inline RunLog run(const RunConfig& cfg, std::shared_ptr<const RieszMap> riesz = nullptr) {
    cfg.validate();
    RunLog log;
    log.config = cfg;
    const auto prob = FlowProblem::cavity(cfg.nx, cfg.re);

    DriverConfig d;
    d.mode = cfg.mode;
    d.depth = cfg.depth;
    d.norm = cfg.norm;
    d.tol = cfg.tol;
    d.max_iters = cfg.max_iters;
    d.riesz = std::move(riesz);
    d.on_record = [&log](const IterationRecord& r) { log.records.push_back(r); };

    try {
        const auto result = drive(prob, d);
        log.status = result.status;
        log.message = result.message;
        log.totals = {result.iterations(), result.wall_ms, result.linear_solves, result.riesz_solves};
    } catch (const SolverFailure& e) {
        log.status = Status::Diverged;
        log.message = e.what();
        log.totals.iterations = log.records.empty() ? 0 : log.records.back().k;
    }
    if (cfg.out_dir) write_run(log, *cfg.out_dir);
    return log;
}

inline int exit_code(Status s) noexcept {
    switch (s) {
        case Status::Converged: return 0;
        case Status::MaxIters: return 2;
        case Status::Diverged: return 3;
    }
    return 3;
}

// --- CSV -------------------------------------------------------------------

inline std::string alpha_json(const std::vector<double>& alpha) {
    std::string s = "[";
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (i) s += ',';
        s += format_double(alpha[i]);
    }
    return s + "]";
}

inline std::string csv_row(const IterationRecord& r, bool timing) {
    std::string s = std::to_string(r.k);
    for (double x : {r.g_vprime, r.g_l2, r.picard_resid_h1, r.theta, r.gamma, r.kappa_hat, r.max_abs_alpha}) {
        s += ',';
        s += format_double(x);
    }
    s += ",\"" + alpha_json(r.alpha) + "\",";
    s += timing ? format_double(r.wall_time_ms) : std::string("0");
    return s;
}

inline std::string csv_text(const RunLog& log) {
    std::string s = std::string(kCsvHeader) + "\n";
    for (const auto& r : log.records) s += csv_row(r, log.config.timing) + "\n";
    return s;
}

/// One table for several runs, keyed by a leading column.
inline std::string combined_csv_text(const std::vector<RunLog>& logs, const std::string& key,
                                     const std::vector<std::string>& key_values) {
    if (key_values.size() != logs.size()) throw std::invalid_argument("combined_csv_text: one key per log required");
    std::string s = key + "," + kCsvHeader + "\n";
    for (std::size_t i = 0; i < logs.size(); ++i) {
        for (const auto& r : logs[i].records) s += key_values[i] + "," + csv_row(r, logs[i].config.timing) + "\n";
    }
    return s;
}

/// Writes through a temporary file in the same directory and renames it.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f << content;
        f.flush();
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline double parse_csv_double(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw std::runtime_error(where + ": not a number: '" + s + "'");
    return v;
}

}  // namespace detail

// --- JSON ------------------------------------------------------------------

inline nlohmann::json config_json(const RunConfig& cfg) {
    return {{"re", cfg.re},       {"nx", cfg.nx},
            {"m", cfg.depth.describe()},
            {"norm", to_string(cfg.norm)},
            {"tol", cfg.tol},     {"max_iters", cfg.max_iters},
            {"mode", to_string(cfg.mode)}};
}

/// Inverse of config_json; output paths are not part of the echo.
inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.re = j.at("re").get<double>();
        c.nx = j.at("nx").get<std::size_t>();
        c.depth = parse_depth(j.at("m").get<std::string>());
        c.norm = parse_norm(j.at("norm").get<std::string>());
        c.tol = j.at("tol").get<double>();
        c.max_iters = j.at("max_iters").get<std::size_t>();
        c.mode = parse_mode(j.at("mode").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", e.what());
    }
    return c;
}

/// Reads a per-run CSV or a combined CSV. A combined file yields one log per
/// distinct key value, labelled "key=value", in order of first appearance.
inline std::vector<RunLog> read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::string key;
    if (line != kCsvHeader) {
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.substr(comma + 1) != kCsvHeader) {
            throw std::runtime_error(path.string() + ": unexpected CSV header");
        }
        key = line.substr(0, comma);
    }
    const std::size_t offset = key.empty() ? 0 : 1;

    std::vector<RunLog> logs;
    std::vector<std::string> keys;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (fields.size() != 10 + offset) throw std::runtime_error(where + ": expected " + std::to_string(10 + offset) + " fields");
        const std::string kv = offset ? fields[0] : std::string();
        if (keys.empty() || keys.back() != kv) {
            keys.push_back(kv);
            logs.emplace_back();
            logs.back().label = key.empty() ? path.stem().string() : key + "=" + kv;
        }
        IterationRecord r;
        r.k = static_cast<std::size_t>(detail::parse_csv_double(fields[offset], where));
        double* targets[] = {&r.g_vprime, &r.g_l2, &r.picard_resid_h1, &r.theta, &r.gamma, &r.kappa_hat, &r.max_abs_alpha};
        for (std::size_t i = 0; i < 7; ++i) *targets[i] = detail::parse_csv_double(fields[offset + 1 + i], where);
        const auto alpha = nlohmann::json::parse(fields[offset + 8], nullptr, false);
        if (alpha.is_discarded() || !alpha.is_array()) throw std::runtime_error(where + ": alpha_json is not an array");
        for (const auto& a : alpha) r.alpha.push_back(a.get<double>());
        r.wall_time_ms = detail::parse_csv_double(fields[offset + 9], where);
        logs.back().records.push_back(std::move(r));
    }
    for (auto& log : logs) {
        if (!log.records.empty()) log.totals.iterations = log.records.back().k;
    }
    // A per-run CSV written by write_run has a JSON sidecar with the config.
    auto sidecar = path;
    sidecar.replace_extension(".json");
    if (key.empty() && logs.size() == 1 && std::filesystem::exists(sidecar)) {
        std::ifstream js(sidecar);
        const auto meta = nlohmann::json::parse(js, nullptr, false);
        if (!meta.is_discarded() && meta.contains("config")) {
            logs[0].config = config_from_json(meta["config"]);
            logs[0].label.clear();
            const auto status = meta.value("status", std::string());
            if (status == "converged") logs[0].status = Status::Converged;
            if (status == "diverged") logs[0].status = Status::Diverged;
        }
    }
    return logs;
}

inline nlohmann::json run_json(const RunLog& log) {
    nlohmann::json diag = nlohmann::json::array();
    std::size_t lemma_violations = 0;
    double max_div = 0.0;
    double max_theta = 0.0;
    double max_gamma = 0.0;
    for (const auto& r : log.records) {
        if (r.final()) continue;
        if (!r.lemma1_holds) ++lemma_violations;
        if (std::isfinite(r.max_divergence)) max_div = std::max(max_div, r.max_divergence);
        if (std::isfinite(r.theta)) max_theta = std::max(max_theta, r.theta);
        if (std::isfinite(r.gamma)) max_gamma = std::max(max_gamma, r.gamma);
        diag.push_back({{"k", r.k},
                        {"objective", r.objective},
                        {"lemma1_lhs", r.lemma1_lhs},
                        {"lemma1_rhs", r.lemma1_rhs},
                        {"lemma1_holds", r.lemma1_holds},
                        {"max_divergence", r.max_divergence},
                        {"window", r.window_size},
                        {"dropped", r.dropped},
                        {"fallback", r.fallback},
                        {"safeguarded", r.safeguarded}});
    }
    nlohmann::json totals = {{"iterations", log.totals.iterations},
                             {"linear_solves", log.totals.linear_solves},
                             {"riesz_solves", log.totals.riesz_solves}};
    if (log.config.timing) totals["wall_ms"] = log.totals.wall_ms;
    return {{"config", config_json(log.config)},
            {"status", to_string(log.status)},
            {"message", log.message},
            {"totals", totals},
            {"summary",
             {{"final_g_vprime", log.records.empty() ? 0.0 : log.records.back().g_vprime},
              {"lemma1_violations", lemma_violations},
              {"max_divergence", max_div},
              {"max_theta", max_theta},
              {"max_gamma", max_gamma}}},
            {"diagnostics", diag}};
}

/// Writes <dir>/<stem>.csv and <dir>/<stem>.json; returns the CSV path.
inline std::filesystem::path write_run(const RunLog& log, const std::filesystem::path& dir) {
    const auto stem = run_stem(log.config);
    const auto csv = dir / (stem + ".csv");
    write_file_atomic(csv, csv_text(log));
    write_file_atomic(dir / (stem + ".json"), run_json(log).dump(2) + "\n");
    return csv;
}

// --- sweeps ------------------------------------------------------------------

/// One run per grid size; runs are spread over up to `threads` workers.
/// A failure in one run is recorded in its log and does not stop the others.
inline std::vector<RunLog> sweep_mesh(const RunConfig& cfg, const std::vector<std::size_t>& sizes,
                                      std::size_t threads = 1) {
    if (!std::is_sorted(sizes.begin(), sizes.end())) throw ConfigError("nx", "sweep sizes must be nondecreasing");
    std::vector<RunConfig> configs;
    for (auto n : sizes) {
        RunConfig c = cfg;
        c.nx = n;
        c.validate();
        configs.push_back(c);
    }
    std::vector<RunLog> logs(configs.size());
    if (configs.empty()) return logs;

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            try {
                logs[i] = run(configs[i]);
            } catch (const std::exception& e) {
                logs[i].config = configs[i];
                logs[i].status = Status::Diverged;
                logs[i].message = e.what();
            }
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, configs.size());
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    if (cfg.out_dir) {
        std::vector<std::string> keys;
        for (const auto& log : logs) {
            if (log.records.empty()) write_run(log, *cfg.out_dir);
            keys.push_back(std::to_string(log.config.nx));
        }
        write_file_atomic(*cfg.out_dir / "sweep_mesh.csv", combined_csv_text(logs, "nx", keys));
    }
    return logs;
}

/// The same configuration once with each optimization norm, V' first.
/// Both runs share one Riesz factorization.
inline std::pair<RunLog, RunLog> compare_norms(const RunConfig& cfg) {
    cfg.validate();
    auto riesz = std::make_shared<const RieszMap>(MacGrid(cfg.nx));
    RunConfig a = cfg;
    a.norm = NormKind::VPrime;
    RunConfig b = cfg;
    b.norm = NormKind::L2;
    std::pair<RunLog, RunLog> out{run(a, riesz), run(b, riesz)};
    if (cfg.out_dir) {
        write_file_atomic(*cfg.out_dir / "compare_norms.csv",
                          combined_csv_text({out.first, out.second}, "norm", {"vprime", "l2"}));
    }
    return out;
}

}  // namespace ngflow
