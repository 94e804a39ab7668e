// Retrospective interference alignment on the 3-user interference channel
// with delayed CSIT: 9 symbols over an 8-slot block.
//
// Slots 1-5 send random combinations of each user's three symbols, which fills
// the five interference dimensions every receiver can afford. From slot 1-5
// CSI, alpha(k) is the null vector of the 5x6 interference matrix at receiver
// k. In slots 6-8 transmitter j repeats a single scalar s(j) whose coefficient
// triple is orthogonal (bilinear, no conjugation) to its sub-triple of alpha
// at both unintended receivers, so the six interferers at each receiver stay
// inside five dimensions. Each receiver projects onto the 3-dimensional left
// null space of its 8x6 interference matrix and solves for its symbols.

#pragma once

#include "retroalign/channel.hpp"
#include "retroalign/numerics.hpp"
#include "retroalign/scheme.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

namespace retroalign::ic3 {

inline constexpr int kUsers = 3;
inline constexpr int kSymbolsPerUser = 3;
inline constexpr int kPhase1Slots = 5;
inline constexpr int kBlockSlots = 8;
inline constexpr int kInterferenceDims = 5;

using Triple = std::array<Complex, 3>;

constexpr int symbol_index(int k, int i) { return (k - 1) * kSymbolsPerUser + (i - 1); }

/// The two interfering transmitters at receiver k, lower index first. This
/// fixes the column order of the interference matrix and hence the meaning of
/// alpha entries 1-3 (first interferer) and 4-6 (second interferer).
constexpr std::pair<int, int> interferers(int k) {
    return k == 1 ? std::pair{2, 3} : k == 2 ? std::pair{1, 3} : std::pair{1, 2};
}

/// The two receivers that see transmitter j as interference, lower first.
constexpr std::pair<int, int> victims(int j) { return interferers(j); }

struct ICMessageSet {
    std::array<Complex, 9> u{};

    Complex& operator()(int k, int i) { return u.at(static_cast<std::size_t>(symbol_index(k, i))); }
    Complex operator()(int k, int i) const { return u.at(static_cast<std::size_t>(symbol_index(k, i))); }

    [[nodiscard]] Triple user(int k) const { return {(*this)(k, 1), (*this)(k, 2), (*this)(k, 3)}; }

    static ICMessageSet from_vector(const CVector& v) {
        if (v.size() != 9) throw std::invalid_argument("ICMessageSet: need 9 symbols");
        ICMessageSet m;
        for (std::size_t i = 0; i < 9; ++i) m.u[i] = v(static_cast<Eigen::Index>(i));
        return m;
    }
};

/// V(k, i, n), n in [1, 5]. Offline, channel independent, unit power per (k, n).
struct ICPhase1Precoders {
    std::array<Complex, 9 * kPhase1Slots> v{};

    Complex& operator()(int k, int i, int n) { return v.at(index(k, i, n)); }
    Complex operator()(int k, int i, int n) const { return v.at(index(k, i, n)); }

    static ICPhase1Precoders generate(std::uint64_t seed) {
        Rng rng(seed);
        ICPhase1Precoders p;
        for (auto& c : p.v) c = rng.complex_gaussian();
        for (int k = 1; k <= kUsers; ++k)
            for (int n = 1; n <= kPhase1Slots; ++n) {
                double pw = 0.0;
                for (int i = 1; i <= kSymbolsPerUser; ++i) pw += std::norm(p(k, i, n));
                for (int i = 1; i <= kSymbolsPerUser; ++i) p(k, i, n) /= std::sqrt(pw);
            }
        return p;
    }

private:
    static std::size_t index(int k, int i, int n) {
        if (n < 1 || n > kPhase1Slots) throw std::out_of_range("ICPhase1Precoders: slot outside 1..5");
        return static_cast<std::size_t>(symbol_index(k, i) * kPhase1Slots + (n - 1));
    }
};

/// alpha(k): unit-norm null vector of receiver k's slot 1-5 interference.
struct AlphaVectors {
    std::array<CVector, kUsers> alpha;

    const CVector& operator[](int k) const { return alpha.at(static_cast<std::size_t>(k - 1)); }
    CVector& operator[](int k) { return alpha.at(static_cast<std::size_t>(k - 1)); }
};

/// 5x6 matrix of the interfering symbols' slot 1-5 directions at receiver k.
template <class ChannelFn>
CMatrix phase1_interference_matrix(int k, ChannelFn&& h, const ICPhase1Precoders& pre) {
    const auto [a, b] = interferers(k);
    CMatrix m(kPhase1Slots, 6);
    for (int n = 1; n <= kPhase1Slots; ++n) {
        const Complex ha = h(k, a, n), hb = h(k, b, n);
        for (int i = 1; i <= 3; ++i) {
            m(n - 1, i - 1) = ha * pre(a, i, n);
            m(n - 1, i + 2) = hb * pre(b, i, n);
        }
    }
    return m;
}

template <class ChannelFn>
CVector compute_alpha(int k, ChannelFn&& h, const ICPhase1Precoders& pre, const ToleranceSpec& tol = {}) {
    return null_vector(phase1_interference_matrix(k, h, pre), tol);
}

template <class ChannelFn>
AlphaVectors compute_alpha_vectors(ChannelFn&& h, const ICPhase1Precoders& pre, const ToleranceSpec& tol = {}) {
    AlphaVectors out;
    for (int k = 1; k <= kUsers; ++k) out[k] = compute_alpha(k, h, pre, tol);
    return out;
}

inline AlphaVectors compute_alpha_vectors(const ChannelTensor& h, const ICPhase1Precoders& pre,
                                          const ToleranceSpec& tol = {}) {
    return compute_alpha_vectors([&h](int k, int j, int n) { return h(k, j, n); }, pre, tol);
}

/// Entries of alpha(k) that multiply transmitter j's columns.
inline Triple alpha_subtriple(const CVector& alpha_k, int k, int j) {
    const auto [a, b] = interferers(k);
    if (j != a && j != b) throw std::invalid_argument("alpha_subtriple: transmitter does not interfere at k");
    const Eigen::Index off = j == a ? 0 : 3;
    return {alpha_k(off), alpha_k(off + 1), alpha_k(off + 2)};
}

/// Cross product (bilinear), orthogonal to both a and b under x . y = sum x_i y_i.
inline Triple cross(const Triple& a, const Triple& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline Complex bilinear_dot(const Triple& a, const Triple& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline double triple_norm(const Triple& a) {
    return std::sqrt(std::norm(a[0]) + std::norm(a[1]) + std::norm(a[2]));
}

/// Phase-2 coefficient triple of transmitter j from the alphas of its two
/// victims: the 2x2-determinant expansion that annihilates both constraints.
inline Triple phase2_coefficients(int j, const CVector& alpha_first, const CVector& alpha_second,
                                  const ToleranceSpec& tol = {}) {
    const auto [k1, k2] = victims(j);
    const Triple a = alpha_subtriple(alpha_first, k1, j);
    const Triple b = alpha_subtriple(alpha_second, k2, j);
    Triple c = cross(a, b);
    if (triple_norm(c) <= tol.rank_rel_tol * triple_norm(a) * triple_norm(b))
        throw DegenerateDraw(DegenerateReason::DegenerateCoefficients,
                             "phase-2 coefficients of transmitter " + std::to_string(j) + " vanish");
    return c;
}

inline Triple phase2_coefficients(int j, const AlphaVectors& alpha, const ToleranceSpec& tol = {}) {
    const auto [k1, k2] = victims(j);
    return phase2_coefficients(j, alpha[k1], alpha[k2], tol);
}

struct ICPhase2Symbols {
    std::array<Complex, kUsers> s{};
    std::array<Triple, kUsers> coeffs{};

    [[nodiscard]] Complex of(int k) const { return s.at(static_cast<std::size_t>(k - 1)); }
    [[nodiscard]] const Triple& coefficients(int k) const { return coeffs.at(static_cast<std::size_t>(k - 1)); }
};

inline ICPhase2Symbols form_phase2_symbols(const ICMessageSet& msgs, const AlphaVectors& alpha,
                                           const ToleranceSpec& tol = {}) {
    ICPhase2Symbols out;
    for (int k = 1; k <= kUsers; ++k) {
        const Triple c = phase2_coefficients(k, alpha, tol);
        out.coeffs[static_cast<std::size_t>(k - 1)] = c;
        out.s[static_cast<std::size_t>(k - 1)] = bilinear_dot(c, msgs.user(k));
    }
    return out;
}

/// Unscaled phase-1 signal of user k at slot n.
inline Complex ic_phase1_transmit(int k, const Triple& own, const ICPhase1Precoders& pre, int n) {
    return pre(k, 1, n) * own[0] + pre(k, 2, n) * own[1] + pre(k, 3, n) * own[2];
}

/// Phase 2 repeats the effective symbol unchanged in slots 6, 7 and 8.
inline Complex ic_phase2_transmit(Complex s_k, int n) {
    if (n <= kPhase1Slots || n > kBlockSlots) throw std::out_of_range("ic_phase2_transmit: slot outside 6..8");
    return s_k;
}

inline double ic_phase2_scale(const Triple& coeffs, double power) {
    return std::sqrt(power) / triple_norm(coeffs);
}

class ICTransmitter {
public:
    ICTransmitter(int k, Triple own, const ICPhase1Precoders& pre, double power, ToleranceSpec tol = {})
        : k_(k), own_(own), pre_(&pre), power_(power), tol_(tol) {}

    Complex transmit(const TxInformationView& view) {
        const int n = view.slot();
        if (n <= kPhase1Slots) return std::sqrt(power_) * ic_phase1_transmit(k_, own_, *pre_, n);
        if (!coeffs_) {
            const auto read = [&view](int k, int j, int m) { return view.channel(k, j, m); };
            const auto [v1, v2] = victims(k_);
            coeffs_ = phase2_coefficients(k_, compute_alpha(v1, read, *pre_, tol_),
                                          compute_alpha(v2, read, *pre_, tol_), tol_);
            s_ = bilinear_dot(*coeffs_, own_);
        }
        return ic_phase2_scale(*coeffs_, power_) * ic_phase2_transmit(s_, n);
    }

private:
    int k_;
    Triple own_;
    const ICPhase1Precoders* pre_;
    double power_;
    ToleranceSpec tol_;
    std::optional<Triple> coeffs_;
    Complex s_{};
};

// ---------------------------------------------------------------------------
// Decoding

/// Effective 8-slot direction of symbol u(j, i) at receiver k.
inline CVector effective_direction(int k, int j, int i, const ChannelTensor& h, const ICPhase1Precoders& pre,
                                   const Triple& coeffs_j, double power) {
    CVector d(kBlockSlots);
    for (int n = 1; n <= kPhase1Slots; ++n) d(n - 1) = std::sqrt(power) * h(k, j, n) * pre(j, i, n);
    const double a = ic_phase2_scale(coeffs_j, power);
    for (int n = kPhase1Slots + 1; n <= kBlockSlots; ++n)
        d(n - 1) = a * h(k, j, n) * coeffs_j[static_cast<std::size_t>(i - 1)];
    return d;
}

struct ICDecodeResult {
    Triple u{};
    CMatrix interference;  ///< 8x6, columns ordered (first interferer 1-3, second 1-3)
    CMatrix desired;       ///< 8x3
    int interference_rank = 0;
    double alignment_ratio = 0;  ///< sigma_6 / sigma_1 of the interference matrix
    double full_rcond = 0;       ///< rcond of [desired | interference basis], unit columns
};

inline ICDecodeResult ic_decode(int k, const CVector& y, const ChannelTensor& h, const ICPhase1Precoders& pre,
                                const AlphaVectors& alpha, double power, const ToleranceSpec& tol = {}) {
    if (y.size() != kBlockSlots) throw std::invalid_argument("ic_decode: need 8 observations");
    std::array<Triple, kUsers> coeffs;
    for (int j = 1; j <= kUsers; ++j) coeffs[static_cast<std::size_t>(j - 1)] = phase2_coefficients(j, alpha, tol);

    ICDecodeResult out;
    const auto [a, b] = interferers(k);
    out.interference.resize(kBlockSlots, 6);
    out.desired.resize(kBlockSlots, 3);
    for (int i = 1; i <= 3; ++i) {
        out.interference.col(i - 1) = effective_direction(k, a, i, h, pre, coeffs[static_cast<std::size_t>(a - 1)], power);
        out.interference.col(i + 2) = effective_direction(k, b, i, h, pre, coeffs[static_cast<std::size_t>(b - 1)], power);
        out.desired.col(i - 1) = effective_direction(k, k, i, h, pre, coeffs[static_cast<std::size_t>(k - 1)], power);
    }

    const RVector isv = singular_values(out.interference);
    out.alignment_ratio = isv(kInterferenceDims) / isv(0);
    out.interference_rank = static_cast<int>(numerical_rank(out.interference, tol));
    if (out.interference_rank != kInterferenceDims)
        throw SchemeFailure("InterferenceRankUnexpected: receiver " + std::to_string(k) +
                            " interference rank " + std::to_string(out.interference_rank));

    CMatrix full(kBlockSlots, kBlockSlots);
    full.leftCols(3) = out.desired.colwise().normalized();
    full.rightCols(kInterferenceDims) = column_space_basis(out.interference, tol);
    out.full_rcond = inverse_condition(full);

    const CMatrix n = left_null_basis(out.interference, tol);
    const CMatrix projected = n.adjoint() * out.desired;
    const CVector rhs = n.adjoint() * y;
    const CVector sol = solve_square(projected, rhs, tol);
    out.u = {sol(0), sol(1), sol(2)};
    return out;
}

// ---------------------------------------------------------------------------

struct Ic3RetroCsit {
    static constexpr std::string_view kName = "ic3_retro_csit";
    static constexpr int kNumRx = kUsers;
    static constexpr int kNumTx = kUsers;
    static constexpr int kSlots = kBlockSlots;
    static constexpr int kSymbols = 9;
    static constexpr int kInterferenceRank = kInterferenceDims;

    static FeedbackModel feedback_model() { return FeedbackModel::delayed_csit(); }

    static BlockOutcome run_block(const BlockContext& ctx) {
        const ICPhase1Precoders pre = ICPhase1Precoders::generate(ctx.codebook_seed);
        const ICMessageSet msgs = ICMessageSet::from_vector(ctx.symbols);
        const FeedbackModel model = feedback_model();

        std::array<ICTransmitter, kUsers> tx{ICTransmitter(1, msgs.user(1), pre, ctx.power, ctx.tol),
                                             ICTransmitter(2, msgs.user(2), pre, ctx.power, ctx.tol),
                                             ICTransmitter(3, msgs.user(3), pre, ctx.power, ctx.tol)};
        BlockOutcome out;
        out.record = retroalign::run_block(
            ctx.channel, model, ctx.noise, out.log,
            [&tx](int j, const TxInformationView& view) { return tx[static_cast<std::size_t>(j - 1)].transmit(view); },
            ctx.noise_variance);

        const AlphaVectors alpha = compute_alpha_vectors(ctx.channel, pre, ctx.tol);
        out.decoded = CVector::Zero(kSymbols);
        for (int k = 1; k <= kUsers; ++k) {
            const ICDecodeResult d =
                ic_decode(k, out.record.y_noisy.row(k - 1).transpose(), ctx.channel, pre, alpha, ctx.power, ctx.tol);
            for (int i = 1; i <= 3; ++i) out.decoded(symbol_index(k, i)) = d.u[static_cast<std::size_t>(i - 1)];
            out.certificates.interference_ranks.push_back(d.interference_rank);
            out.certificates.alignment_ratios.push_back(d.alignment_ratio);
            out.certificates.desired_rcond.push_back(d.full_rcond);
        }
        return out;
    }
};

static_assert(Scheme<Ic3RetroCsit>);

}  // namespace retroalign::ic3
