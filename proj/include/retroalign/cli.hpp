// Batch front end: flag and config-file parsing plus byte-stable JSON/CSV
// output. Exit codes: 0 pass, 1 an assertion failed,
// 2 usage error, 3 scheme failure (a construction bug, reported as a record).

#pragma once

#include "retroalign/eval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace retroalign::cli {

using Json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { Verify, DofSweep, Audit };
enum class Format { Json, Csv };

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::Verify: return "verify";
        case Mode::DofSweep: return "dof_sweep";
        case Mode::Audit: return "audit";
    }
    return "?";
}
inline std::string to_string(Format f) { return f == Format::Json ? "json" : "csv"; }

inline std::optional<Mode> parse_mode(std::string_view s) {
    for (Mode m : {Mode::Verify, Mode::DofSweep, Mode::Audit})
        if (to_string(m) == s) return m;
    return std::nullopt;
}
inline std::optional<Format> parse_format(std::string_view s) {
    if (s == "json") return Format::Json;
    if (s == "csv") return Format::Csv;
    return std::nullopt;
}

inline constexpr double kSlopeTolerance = 0.05;
inline constexpr double kMinRSquared = 0.999;
inline constexpr double kMaxLeakageRatio = 1e-12;

struct RunConfig {
    eval::SchemeId scheme = eval::SchemeId::XRetroCsit;
    Mode mode = Mode::Verify;
    int trials = 100;
    std::uint64_t seed = 0;
    std::vector<double> snr_grid_db;
    ToleranceSpec tolerances{};
    std::string output_path;  ///< empty: stdout
    Format output_format = Format::Json;
    unsigned threads = eval::default_threads();
};

namespace detail {

inline eval::SchemeId scheme_or_throw(const std::string& s, const std::string& where) {
    if (auto id = eval::parse_scheme(s)) return *id;
    throw UsageError(where + ": unknown scheme '" + s + "'");
}
inline Mode mode_or_throw(const std::string& s, const std::string& where) {
    if (auto m = parse_mode(s)) return *m;
    throw UsageError(where + ": unknown mode '" + s + "' (verify, dof_sweep, audit)");
}
inline Format format_or_throw(const std::string& s, const std::string& where) {
    if (auto f = parse_format(s)) return *f;
    throw UsageError(where + ": unknown format '" + s + "' (json, csv)");
}

struct Seen {
    bool scheme = false;
    bool mode = false;
};

inline void apply_config_file(const std::string& path, RunConfig& cfg, Seen& seen) {
    std::ifstream in(path);
    if (!in) throw UsageError("--config: cannot open '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw UsageError("--config: " + std::string(e.what()));
    }
    if (!j.is_object()) throw UsageError("--config: top level must be an object");

    for (const auto& [key, v] : j.items()) {
        const std::string where = "config key '" + key + "'";
        try {
            if (key == "scheme") {
                cfg.scheme = scheme_or_throw(v.get<std::string>(), where);
                seen.scheme = true;
            } else if (key == "mode") {
                cfg.mode = mode_or_throw(v.get<std::string>(), where);
                seen.mode = true;
            } else if (key == "trials") {
                cfg.trials = v.get<int>();
            } else if (key == "seed") {
                cfg.seed = v.get<std::uint64_t>();
            } else if (key == "snr_grid_db") {
                cfg.snr_grid_db = v.get<std::vector<double>>();
            } else if (key == "tolerances") {
                if (!v.is_object()) throw UsageError(where + ": expected an object");
                for (const auto& [tk, tv] : v.items()) {
                    if (tk == "rank_rel_tol")
                        cfg.tolerances.rank_rel_tol = tv.get<double>();
                    else if (tk == "residual_rel_tol")
                        cfg.tolerances.residual_rel_tol = tv.get<double>();
                    else
                        throw UsageError("unknown config key 'tolerances." + tk + "'");
                }
            } else if (key == "output_path") {
                cfg.output_path = v.get<std::string>();
            } else if (key == "output_format") {
                cfg.output_format = format_or_throw(v.get<std::string>(), where);
            } else if (key == "threads") {
                cfg.threads = v.get<unsigned>();
            } else {
                throw UsageError("unknown config key '" + key + "'");
            }
        } catch (const Json::exception& e) {
            throw UsageError(where + ": " + e.what());
        }
    }
}

inline void validate(const RunConfig& cfg, const Seen& seen) {
    if (!seen.scheme) throw UsageError("--scheme is required");
    if (!seen.mode) throw UsageError("--mode is required");
    if (cfg.trials < 1) throw UsageError("--trials must be >= 1");
    if (cfg.threads < 1) throw UsageError("--threads must be >= 1");
    if (!(cfg.tolerances.rank_rel_tol > 0.0 && cfg.tolerances.rank_rel_tol < 1.0))
        throw UsageError("--tol-rank must lie in (0, 1)");
    if (!(cfg.tolerances.residual_rel_tol > 0.0 && cfg.tolerances.residual_rel_tol < 1.0))
        throw UsageError("--tol-residual must lie in (0, 1)");
    if (cfg.mode == Mode::DofSweep) {
        if (cfg.snr_grid_db.empty()) throw UsageError("--snr-grid is required with --mode dof_sweep");
        try {
            eval::check_snr_grid(cfg.snr_grid_db);
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--snr-grid: ") + e.what());
        }
    } else if (!cfg.snr_grid_db.empty()) {
        throw UsageError("--snr-grid is only valid with --mode dof_sweep");
    }
    if (cfg.output_format == Format::Csv && cfg.mode != Mode::DofSweep)
        throw UsageError("--format csv is only valid with --mode dof_sweep");
}

}  // namespace detail

/// Thrown by parse_config when --help was requested; carries the help text.
class HelpRequested : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline RunConfig parse_config(const std::vector<std::string>& args) {
    CLI::App app{"Retrospective interference alignment simulator"};
    std::string scheme, mode, format, snr_grid, config_path, out;
    int trials = 0;
    std::uint64_t seed = 0;
    double tol_rank = 0.0, tol_residual = 0.0;
    unsigned threads = 0;

    auto* o_scheme = app.add_option("--scheme", scheme, "bc_mat | x_retro_csit | ic3_retro_csit | x_output_fb | ic3_output_fb");
    auto* o_mode = app.add_option("--mode", mode, "verify | dof_sweep | audit");
    auto* o_trials = app.add_option("--trials", trials, "trials (per SNR point in dof_sweep)");
    auto* o_seed = app.add_option("--seed", seed, "base seed");
    auto* o_grid = app.add_option("--snr-grid", snr_grid, "comma-separated SNR points in dB");
    auto* o_rank = app.add_option("--tol-rank", tol_rank, "relative singular-value cutoff");
    auto* o_resid = app.add_option("--tol-residual", tol_residual, "relative residual cutoff");
    auto* o_out = app.add_option("--out", out, "output file (default stdout)");
    auto* o_format = app.add_option("--format", format, "json | csv");
    auto* o_threads = app.add_option("--threads", threads, "worker threads");
    app.add_option("--config", config_path, "JSON file with RunConfig fields");

    std::vector<const char*> argv{"retroalign"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested(app.help());
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    RunConfig cfg;
    detail::Seen seen;
    if (!config_path.empty()) detail::apply_config_file(config_path, cfg, seen);

    if (o_scheme->count()) {
        cfg.scheme = detail::scheme_or_throw(scheme, "--scheme");
        seen.scheme = true;
    }
    if (o_mode->count()) {
        cfg.mode = detail::mode_or_throw(mode, "--mode");
        seen.mode = true;
    }
    if (o_trials->count()) cfg.trials = trials;
    if (o_seed->count()) cfg.seed = seed;
    if (o_grid->count()) {
        cfg.snr_grid_db.clear();
        std::stringstream ss(snr_grid);
        for (std::string item; std::getline(ss, item, ',');) {
            try {
                std::size_t used = 0;
                cfg.snr_grid_db.push_back(std::stod(item, &used));
                if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw UsageError("--snr-grid: cannot parse '" + item + "'");
            }
        }
    }
    if (o_rank->count()) cfg.tolerances.rank_rel_tol = tol_rank;
    if (o_resid->count()) cfg.tolerances.residual_rel_tol = tol_residual;
    if (o_out->count()) cfg.output_path = out;
    if (o_format->count()) cfg.output_format = detail::format_or_throw(format, "--format");
    if (o_threads->count()) cfg.threads = threads;

    detail::validate(cfg, seen);
    return cfg;
}

// ---------------------------------------------------------------------------
// Emission

/// Serializes with a fixed key order and every float as %.17g, so identical
/// configs give byte-identical files.
inline void write_json(std::ostream& os, const Json& j, int indent = 0) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
    if (j.is_object()) {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << "{\n";
        bool first = true;
        for (const auto& [k, v] : j.items()) {
            if (!first) os << ",\n";
            first = false;
            os << inner << Json(k).dump() << ": ";
            write_json(os, v, indent + 1);
        }
        os << "\n" << pad << "}";
    } else if (j.is_array()) {
        const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
        if (j.empty()) {
            os << "[]";
        } else if (flat) {
            os << "[";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) os << ", ";
                write_json(os, j[i], indent + 1);
            }
            os << "]";
        } else {
            os << "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) os << ",\n";
                os << inner;
                write_json(os, j[i], indent + 1);
            }
            os << "\n" << pad << "]";
        }
    } else if (j.is_number_float()) {
        const double v = j.get<double>();
        if (!std::isfinite(v)) {
            os << "null";
            return;
        }
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    } else {
        os << j.dump();
    }
}

inline Json config_echo(const RunConfig& c) {
    Json j;
    j["scheme"] = std::string(eval::to_string(c.scheme));
    j["mode"] = to_string(c.mode);
    j["trials"] = c.trials;
    j["seed"] = c.seed;
    j["snr_grid_db"] = c.snr_grid_db;
    j["tolerances"] = {{"rank_rel_tol", c.tolerances.rank_rel_tol},
                       {"residual_rel_tol", c.tolerances.residual_rel_tol}};
    j["output_path"] = c.output_path;
    j["output_format"] = to_string(c.output_format);
    j["threads"] = c.threads;
    return j;
}

struct RunOutput {
    bool pass = false;
    Json results;
    std::string csv;  ///< filled for dof_sweep only
};

namespace detail {

inline eval::TrialConfig trial_config(const RunConfig& c) {
    eval::TrialConfig t;
    t.tol = c.tolerances;
    return t;
}

inline RunOutput run_verify(const RunConfig& c) {
    auto tc = trial_config(c);
    tc.replay_causality = true;
    const auto results = eval::run_trials(c.scheme, c.trials, c.seed, tc, c.threads);

    int ok = 0, discarded = 0, redraws = 0;
    double worst = 0.0;
    double min_rcond = 1.0;
    double min_det = std::numeric_limits<double>::infinity();
    Json trials = Json::array();
    for (const auto& r : results) {
        ok += r.decode_ok;
        discarded += r.discarded;
        redraws += r.redraws;
        if (!r.discarded) worst = std::max(worst, r.max_rel_symbol_error);
        for (double rc : r.certificates.desired_rcond) min_rcond = std::min(min_rcond, rc);
        if (!r.discarded && r.certificates.det_product > 0.0) min_det = std::min(min_det, r.certificates.det_product);
        Json t;
        t["seed"] = r.seed;
        t["decode_ok"] = r.decode_ok;
        t["max_rel_symbol_error"] = r.max_rel_symbol_error;
        t["interference_ranks"] = r.interference_ranks;
        t["desired_rcond"] = r.certificates.desired_rcond;
        t["redraws"] = r.redraws;
        t["discarded"] = r.discarded;
        if (r.discarded) t["discard_reason"] = r.discard_reason;
        t["csi_slots"] = r.audit.csi_slots;
        t["causality_violations"] = r.causality_violations;
        trials.push_back(std::move(t));
    }
    const int expected_rank = eval::visit_scheme(c.scheme, [](auto t) { return decltype(t)::type::kInterferenceRank; });

    Json summary;
    summary["trials"] = c.trials;
    summary["decode_ok"] = ok;
    summary["discarded"] = discarded;
    summary["redraws"] = redraws;
    summary["max_rel_symbol_error"] = worst;
    if (expected_rank > 0) summary["expected_interference_rank"] = expected_rank;
    if (!results.front().certificates.desired_rcond.empty()) summary["min_desired_rcond"] = min_rcond;
    if (std::isfinite(min_det)) summary["min_abs_det_product"] = min_det;
    summary["dof_by_counting"] = eval::dof_by_counting(c.scheme).str();

    RunOutput out;
    out.pass = ok == c.trials && discarded == 0;
    out.results["summary"] = std::move(summary);
    out.results["trials"] = std::move(trials);
    return out;
}

inline RunOutput run_dof_sweep(const RunConfig& c) {
    const auto est = eval::estimate_dof(c.scheme, c.snr_grid_db, c.trials, c.seed, trial_config(c), c.threads);
    const eval::Rational dof = eval::dof_by_counting(c.scheme);

    RunOutput out;
    Json& r = out.results;
    r["snr_grid_db"] = est.snr_grid_db;
    r["sum_rates"] = est.sum_rates;
    r["trials"] = est.trials;
    r["discards"] = est.discards;
    r["redraws"] = est.redraws;
    r["slope"] = est.slope;
    r["intercept"] = est.intercept;
    r["r_squared"] = est.r_squared;
    r["max_leakage_ratio"] = est.max_leakage_ratio;
    r["dof_by_counting"] = dof.str();
    r["slope_tolerance"] = kSlopeTolerance;
    r["min_r_squared"] = kMinRSquared;
    out.pass = std::abs(est.slope - dof.value()) <= kSlopeTolerance && est.r_squared >= kMinRSquared &&
               est.max_leakage_ratio < kMaxLeakageRatio;

    std::ostringstream csv;
    csv << "snr_db,sum_rate,trials,discards\n";
    char buf[96];
    for (std::size_t i = 0; i < est.snr_grid_db.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%d\n", est.snr_grid_db[i], est.sum_rates[i], est.trials[i],
                      est.discards[i]);
        csv << buf;
    }
    out.csv = csv.str();
    return out;
}

inline RunOutput run_audit(const RunConfig& c) {
    const auto results = eval::run_trials(c.scheme, c.trials, c.seed, trial_config(c), c.threads);
    const FeedbackModel model = eval::feedback_model(c.scheme);
    const int slots = eval::block_slots(c.scheme);

    std::set<int> csi_slots;
    std::set<std::pair<int, int>> links;
    std::size_t max_csi = 0;
    int audited = 0;
    for (const auto& r : results) {
        if (r.discarded) continue;
        ++audited;
        csi_slots.insert(r.audit.csi_slots.begin(), r.audit.csi_slots.end());
        links.insert(r.audit.output_links.begin(), r.audit.output_links.end());
        max_csi = std::max(max_csi, r.audit.csi_slots.size());
    }
    const eval::Rational fraction = eval::reduced(static_cast<int>(max_csi), slots);
    const eval::Rational bound = eval::csi_fraction_bound(c.scheme);
    const bool own_only = std::all_of(links.begin(), links.end(), [](const auto& l) { return l.first == l.second; });
    const bool links_allowed =
        std::all_of(links.begin(), links.end(), [&](const auto& l) { return model.output_reaches(l.first, l.second); });

    RunOutput out;
    Json& r = out.results;
    r["feedback_kind"] = model.kind == FeedbackKind::DelayedCSIT     ? "delayed_csit"
                         : model.kind == FeedbackKind::DelayedOutput ? "delayed_output"
                         : model.kind == FeedbackKind::DelayedShannon ? "delayed_shannon"
                                                                      : "none";
    r["trials_audited"] = audited;
    r["block_slots"] = slots;
    r["csi_slots"] = csi_slots;
    r["csi_fraction"] = fraction.str();
    r["csi_fraction_value"] = fraction.value();
    r["csi_fraction_bound"] = bound.str();
    Json jl = Json::array();
    for (const auto& [rx, tx] : links) jl.push_back({{"rx", rx}, {"tx", tx}});
    r["output_links"] = std::move(jl);
    r["own_receiver_outputs_only"] = own_only;

    // Access-log causality is already enforced per trial (SchemeFailure).
    out.pass = audited == c.trials && fraction.value() <= bound.value() + 1e-15 && links_allowed;
    if (!model.exposes_csi()) out.pass = out.pass && csi_slots.empty();
    if (c.scheme == eval::SchemeId::Ic3OutputFb) out.pass = out.pass && own_only;
    return out;
}

}  // namespace detail

inline RunOutput execute(const RunConfig& c) {
    switch (c.mode) {
        case Mode::Verify: return detail::run_verify(c);
        case Mode::DofSweep: return detail::run_dof_sweep(c);
        case Mode::Audit: return detail::run_audit(c);
    }
    throw std::logic_error("unreachable mode");
}

inline Json error_record(std::string_view kind, std::string_view message) {
    Json j;
    j["error"] = {{"kind", kind}, {"message", message}};
    j["pass"] = false;
    return j;
}

inline void emit(const RunConfig& c, std::string_view payload, std::ostream& fallback) {
    if (c.output_path.empty()) {
        fallback << payload;
        return;
    }
    std::ofstream f(c.output_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + c.output_path + "'");
    f << payload;
}

/// Whole program from argument list to output. Returns the exit code.
inline int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    try {
        cfg = parse_config(args);
    } catch (const HelpRequested& h) {
        out << h.what();
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    std::ostringstream payload;
    int code = 0;
    try {
        const RunOutput r = execute(cfg);
        code = r.pass ? 0 : 1;
        if (cfg.output_format == Format::Csv) {
            payload << r.csv;
        } else {
            Json doc;
            doc["config"] = config_echo(cfg);
            doc["results"] = r.results;
            doc["pass"] = r.pass;
            write_json(payload, doc);
            payload << "\n";
        }
    } catch (const SchemeFailure& e) {
        Json doc = error_record("SchemeFailure", e.what());
        doc["config"] = config_echo(cfg);
        write_json(payload, doc);
        payload << "\n";
        err << "scheme failure: " << e.what() << "\n";
        code = 3;
    } catch (const CausalityViolation& e) {
        Json doc = error_record("CausalityViolation", e.what());
        doc["config"] = config_echo(cfg);
        write_json(payload, doc);
        payload << "\n";
        err << "causality violation: " << e.what() << "\n";
        code = 3;
    }
    try {
        emit(cfg, payload.str(), out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return code;
}

}  // namespace retroalign::cli
