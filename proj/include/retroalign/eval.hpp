// Monte Carlo harness: seeded trials with exact-recovery checks, and DoF
// estimation from the slope of zero-forcing rates.
//
// Trial t of a run with base seed b uses seed derive_seed(b, t); attempt r of
// that trial (after r discarded draws) uses derive_seed(seed, r). Trial seeds
// do not depend on the SNR point, so a DoF sweep evaluates every SNR on the
// same channel draws.

#pragma once

#include "retroalign/channel.hpp"
#include "retroalign/numerics.hpp"
#include "retroalign/output_feedback.hpp"
#include "retroalign/retro_csit_ic3.hpp"
#include "retroalign/retro_csit_x.hpp"
#include "retroalign/scheme.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

namespace retroalign::eval {

enum class SchemeId { BcMat, XRetroCsit, Ic3RetroCsit, XOutputFb, Ic3OutputFb };

inline constexpr std::array kAllSchemes{SchemeId::BcMat, SchemeId::XRetroCsit, SchemeId::Ic3RetroCsit,
                                        SchemeId::XOutputFb, SchemeId::Ic3OutputFb};

/// Calls f(std::type_identity<S>{}) with the scheme type behind `id`.
template <class F>
decltype(auto) visit_scheme(SchemeId id, F&& f) {
    switch (id) {
        case SchemeId::BcMat: return f(std::type_identity<outfb::BcMat>{});
        case SchemeId::XRetroCsit: return f(std::type_identity<xchan::XRetroCsit>{});
        case SchemeId::Ic3RetroCsit: return f(std::type_identity<ic3::Ic3RetroCsit>{});
        case SchemeId::XOutputFb: return f(std::type_identity<outfb::XOutputFb>{});
        case SchemeId::Ic3OutputFb: return f(std::type_identity<outfb::Ic3OutputFb>{});
    }
    throw std::invalid_argument("unknown scheme id");
}

inline std::string_view to_string(SchemeId id) {
    return visit_scheme(id, [](auto t) -> std::string_view { return decltype(t)::type::kName; });
}

inline std::optional<SchemeId> parse_scheme(std::string_view name) {
    for (SchemeId id : kAllSchemes)
        if (to_string(id) == name) return id;
    return std::nullopt;
}

struct Rational {
    int num = 0;
    int den = 1;

    [[nodiscard]] double value() const { return static_cast<double>(num) / den; }
    [[nodiscard]] std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
    friend bool operator==(const Rational&, const Rational&) = default;
};

inline Rational reduced(int num, int den) {
    const int g = std::gcd(num, den);
    return {num / g, den / g};
}

/// Symbols delivered per channel use, from the scheme's block structure.
inline Rational dof_by_counting(SchemeId id) {
    return visit_scheme(id, [](auto t) {
        using S = typename decltype(t)::type;
        return reduced(S::kSymbols, S::kSlots);
    });
}

/// Largest fraction of slots whose CSI a scheme is designed to feed back.
inline Rational csi_fraction_bound(SchemeId id) {
    switch (id) {
        case SchemeId::BcMat: return {2, 3};
        case SchemeId::XRetroCsit: return {3, 7};
        case SchemeId::Ic3RetroCsit: return {5, 8};
        case SchemeId::XOutputFb:
        case SchemeId::Ic3OutputFb: return {0, 1};
    }
    return {0, 1};
}

inline int block_slots(SchemeId id) {
    return visit_scheme(id, [](auto t) { return decltype(t)::type::kSlots; });
}

inline FeedbackModel feedback_model(SchemeId id) {
    return visit_scheme(id, [](auto t) { return decltype(t)::type::feedback_model(); });
}

// ---------------------------------------------------------------------------

struct TrialConfig {
    ToleranceSpec tol{};  ///< residual_rel_tol doubles as the exact-recovery threshold
    int max_attempts = 10;
    MagnitudeBounds bounds{};
    /// When set, compute zero-forcing SINRs at this SNR (noise variance 1).
    std::optional<double> snr_db;
    /// Replay each trial with future channel states redrawn and compare the
    /// transmitted prefix.
    bool replay_causality = false;
};

struct TrialResult {
    SchemeId scheme = SchemeId::XRetroCsit;
    std::uint64_t seed = 0;
    int redraws = 0;  ///< discarded degenerate draws before the accepted one
    bool discarded = false;
    std::string discard_reason;

    bool decode_ok = false;
    double max_rel_symbol_error = 0.0;
    std::vector<int> interference_ranks;
    Certificates certificates;

    FeedbackAudit audit;
    bool access_log_causal = true;
    int causality_violations = 0;  ///< replay slots whose transmitted prefix changed

    std::vector<double> per_symbol_sinr;
    double sum_rate_bits = 0.0;   ///< bits per channel use
    double leakage_ratio = 0.0;   ///< noiseless decode error power / symbol power
};

inline std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t trial) { return derive_seed(base_seed, trial); }

namespace detail {

template <Scheme S>
BlockContext make_context(std::uint64_t attempt_seed, const TrialConfig& cfg) {
    Rng channel_rng(derive_seed(attempt_seed, 1));
    Rng symbol_rng(derive_seed(attempt_seed, 2));
    BlockContext ctx;
    ctx.channel = generate_channel(S::kNumRx, S::kNumTx, S::kSlots, channel_rng, cfg.bounds);
    ctx.symbols = sample_complex_gaussian(symbol_rng, S::kSymbols);
    ctx.noise = zero_noise(S::kNumRx, S::kSlots);
    ctx.codebook_seed = derive_seed(attempt_seed, 3);
    ctx.tol = cfg.tol;
    if (cfg.snr_db) {
        ctx.power = std::pow(10.0, *cfg.snr_db / 10.0);
        ctx.noise_variance = 1.0;
    }
    return ctx;
}

inline double max_rel_error(const CVector& decoded, const CVector& sent) {
    const double scale = sent.cwiseAbs().maxCoeff();
    const double err = (decoded - sent).cwiseAbs().maxCoeff();
    return scale > 0.0 ? err / scale : err;
}

/// Number of slots n for which redrawing h at slots >= n changes any
/// transmitted scalar at slots < n.
template <Scheme S>
int replay_violations(const BlockContext& ctx, const BlockOutcome& base, std::uint64_t attempt_seed,
                      const TrialConfig& cfg) {
    int violations = 0;
    for (int n = 1; n <= S::kSlots; ++n) {
        for (int salt = 0;; ++salt) {
            Rng rng(derive_seed(attempt_seed, 100 + static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(salt)));
            BlockContext perturbed = ctx;
            perturbed.channel = redraw_from_slot(ctx.channel, n, rng, cfg.bounds);
            try {
                const BlockOutcome replay = S::run_block(perturbed);
                for (int m = 1; m < n; ++m)
                    if (replay.record.x.col(m - 1) != base.record.x.col(m - 1)) {
                        ++violations;
                        break;
                    }
                break;
            } catch (const DegenerateDraw&) {
                if (salt >= cfg.max_attempts) throw SchemeFailure("causality replay kept hitting degenerate draws");
            }
        }
    }
    return violations;
}

/// Zero-forcing SINR per symbol. The whole chain (encode, channel, decode) is
/// linear in (symbols, noise), so the decoder's noise gain follows from
/// pushing each unit noise sample through it with the symbols set to zero.
template <Scheme S>
void fill_rates(const BlockContext& ctx, const BlockOutcome& clean, TrialResult& r) {
    const CVector err = clean.decoded - ctx.symbols;
    Eigen::VectorXd noise_power = Eigen::VectorXd::Zero(S::kSymbols);
    for (int k = 0; k < S::kNumRx; ++k)
        for (int n = 0; n < S::kSlots; ++n) {
            BlockContext unit = ctx;
            unit.symbols = CVector::Zero(S::kSymbols);
            unit.noise = zero_noise(S::kNumRx, S::kSlots);
            unit.noise(k, n) = std::sqrt(ctx.noise_variance);
            const BlockOutcome o = S::run_block(unit);
            noise_power += o.decoded.cwiseAbs2();
        }
    r.per_symbol_sinr.resize(S::kSymbols);
    double rate = 0.0;
    for (int i = 0; i < S::kSymbols; ++i) {
        const double sinr = 1.0 / (noise_power(i) + std::norm(err(i)));
        r.per_symbol_sinr[static_cast<std::size_t>(i)] = sinr;
        rate += std::log2(1.0 + sinr);
    }
    r.sum_rate_bits = rate / S::kSlots;
}

}  // namespace detail

/// One trial with discard-and-redraw of degenerate draws. Throws SchemeFailure
/// on causality or rank-certificate violations.
template <Scheme S>
TrialResult run_trial(SchemeId id, std::uint64_t seed, const TrialConfig& cfg = {}) {
    TrialResult r;
    r.scheme = id;
    r.seed = seed;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        const std::uint64_t attempt_seed = derive_seed(seed, static_cast<std::uint64_t>(attempt));
        const BlockContext ctx = detail::make_context<S>(attempt_seed, cfg);
        BlockOutcome out;
        try {
            out = S::run_block(ctx);
        } catch (const DegenerateDraw& e) {
            ++r.redraws;
            r.discard_reason = e.what();
            continue;
        } catch (const CausalityViolation& e) {
            throw SchemeFailure(std::string(S::kName) + ": causality violation: " + e.what());
        }

        r.audit = audit_feedback_usage(out.log, S::kSlots);
        r.access_log_causal = access_log_is_causal(out.log, S::feedback_model());
        if (!r.access_log_causal) throw SchemeFailure(std::string(S::kName) + ": access log breaks causality");

        r.certificates = out.certificates;
        r.interference_ranks = out.certificates.interference_ranks;
        if constexpr (S::kInterferenceRank > 0) {
            for (int rank : r.interference_ranks)
                if (rank != S::kInterferenceRank)
                    throw SchemeFailure(std::string(S::kName) + ": interference rank " + std::to_string(rank) +
                                        ", expected " + std::to_string(S::kInterferenceRank));
        }

        r.max_rel_symbol_error = detail::max_rel_error(out.decoded, ctx.symbols);
        r.decode_ok = r.max_rel_symbol_error <= cfg.tol.residual_rel_tol;
        const double sent_power = ctx.symbols.squaredNorm();
        r.leakage_ratio = sent_power > 0.0 ? (out.decoded - ctx.symbols).squaredNorm() / sent_power : 0.0;

        if (cfg.replay_causality) {
            r.causality_violations = detail::replay_violations<S>(ctx, out, attempt_seed, cfg);
            if (r.causality_violations > 0)
                throw SchemeFailure(std::string(S::kName) + ": transmitted prefix depends on future channel states");
        }
        if (cfg.snr_db) detail::fill_rates<S>(ctx, out, r);
        r.discard_reason.clear();
        return r;
    }
    r.discarded = true;
    return r;
}

inline TrialResult run_trial(SchemeId id, std::uint64_t seed, const TrialConfig& cfg = {}) {
    return visit_scheme(id, [&](auto t) { return run_trial<typename decltype(t)::type>(id, seed, cfg); });
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Trials [0, num_trials) in parallel; results are ordered by trial index and
/// do not depend on the thread count.
inline std::vector<TrialResult> run_trials(SchemeId id, int num_trials, std::uint64_t base_seed,
                                           const TrialConfig& cfg = {}, unsigned threads = 1) {
    if (num_trials < 1) throw std::invalid_argument("run_trials: num_trials must be >= 1");
    std::vector<TrialResult> results(static_cast<std::size_t>(num_trials));
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;

    const auto worker = [&] {
        for (int t = next++; t < num_trials; t = next++) {
            try {
                results[static_cast<std::size_t>(t)] =
                    run_trial(id, trial_seed(base_seed, static_cast<std::uint64_t>(t)), cfg);
            } catch (...) {
                const std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = num_trials;
            }
        }
    };
    const unsigned n = std::clamp(threads, 1u, static_cast<unsigned>(num_trials));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

// ---------------------------------------------------------------------------

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("least_squares: need >= 2 points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
    return f;
}

struct DofEstimate {
    SchemeId scheme = SchemeId::XRetroCsit;
    std::vector<double> snr_grid_db;
    std::vector<double> sum_rates;  ///< bits per channel use, averaged over kept trials
    std::vector<int> trials;        ///< kept trials per point
    std::vector<int> discards;      ///< trials dropped after exhausting redraws
    std::vector<int> redraws;       ///< degenerate draws replaced by fresh ones
    double max_leakage_ratio = 0.0; ///< worst noiseless decode error power / symbol power
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline void check_snr_grid(const std::vector<double>& grid) {
    if (grid.size() < 3) throw std::invalid_argument("SNR grid needs at least 3 points");
    const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
    if (*hi - *lo < 20.0) throw std::invalid_argument("SNR grid must span at least 20 dB");
}

/// Slope of average sum rate against log2(SNR).
inline DofEstimate estimate_dof(SchemeId id, const std::vector<double>& snr_grid_db, int trials_per_point,
                                std::uint64_t base_seed, TrialConfig cfg = {}, unsigned threads = 1) {
    check_snr_grid(snr_grid_db);
    DofEstimate est;
    est.scheme = id;
    est.snr_grid_db = snr_grid_db;
    std::vector<double> log2_snr;
    for (double db : snr_grid_db) {
        cfg.snr_db = db;
        const auto results = run_trials(id, trials_per_point, base_seed, cfg, threads);
        double total = 0.0;
        int kept = 0, dropped = 0, redraws = 0;
        for (const auto& r : results) {
            redraws += r.redraws;
            est.max_leakage_ratio = std::max(est.max_leakage_ratio, r.leakage_ratio);
            if (r.discarded) {
                ++dropped;
                continue;
            }
            total += r.sum_rate_bits;
            ++kept;
        }
        if (kept == 0) throw SchemeFailure("estimate_dof: every trial was discarded");
        est.sum_rates.push_back(total / kept);
        est.trials.push_back(kept);
        est.discards.push_back(dropped);
        est.redraws.push_back(redraws);
        log2_snr.push_back(db * std::log2(10.0) / 10.0);
    }
    const LinearFit fit = least_squares(log2_snr, est.sum_rates);
    est.slope = fit.slope;
    est.intercept = fit.intercept;
    est.r_squared = fit.r_squared;
    return est;
}

}  // namespace retroalign::eval
