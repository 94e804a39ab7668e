// Retrospective interference alignment on the 2-user X channel with delayed
// CSIT: 8 symbols over a 7-slot block.
//
// Slots 1-3 carry random combinations of each transmitter's four symbols.
// After slot 3 the transmitters learn those channel states and build two
// layer-2 variables per transmitter,
//
//     s(j, k) = u(k, j, 1) - gamma(j, k) u(k, j, 2),
//
// which are sent through fresh random combinations over slots 4-7. The gamma
// constants come from null vectors of the slot 1-3 interference matrices and
// are chosen so that, once a receiver knows all four s variables, the two
// interfering symbols it still sees over slots 1-3 collapse onto one
// direction.
//
// Symbol u(k, j, i) is the i-th symbol of the message from transmitter j to
// receiver k.

#pragma once

#include "retroalign/channel.hpp"
#include "retroalign/numerics.hpp"
#include "retroalign/scheme.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace retroalign::xchan {

inline constexpr int kPhase1Slots = 3;
inline constexpr int kBlockSlots = 7;

/// Position of u(k, j, i) in the flattened symbol vector.
constexpr int symbol_index(int k, int j, int i) { return ((k - 1) * 2 + (j - 1)) * 2 + (i - 1); }

struct XMessageSet {
    std::array<Complex, 8> u{};

    Complex& operator()(int k, int j, int i) { return u.at(static_cast<std::size_t>(symbol_index(k, j, i))); }
    Complex operator()(int k, int j, int i) const { return u.at(static_cast<std::size_t>(symbol_index(k, j, i))); }

    static XMessageSet from_vector(const CVector& v) {
        if (v.size() != 8) throw std::invalid_argument("XMessageSet: need 8 symbols");
        XMessageSet m;
        for (std::size_t i = 0; i < 8; ++i) m.u[i] = v(static_cast<Eigen::Index>(i));
        return m;
    }
};

/// The four symbols available at transmitter j.
struct XTxSymbols {
    int tx = 1;
    std::array<Complex, 4> u{};  // u(1,j,1), u(1,j,2), u(2,j,1), u(2,j,2)

    Complex operator()(int k, int i) const { return u.at(static_cast<std::size_t>((k - 1) * 2 + (i - 1))); }
};

inline XTxSymbols own_symbols(const XMessageSet& m, int j) {
    return {j, {m(1, j, 1), m(1, j, 2), m(2, j, 1), m(2, j, 2)}};
}

/// V(k, j, i, n): phase-1 coefficient of u(k, j, i) at slot n in [1, 3].
/// Generated offline; each (j, n) row is scaled to unit power.
struct XPhase1Precoders {
    std::array<Complex, 8 * kPhase1Slots> v{};

    Complex& operator()(int k, int j, int i, int n) { return v.at(index(k, j, i, n)); }
    Complex operator()(int k, int j, int i, int n) const { return v.at(index(k, j, i, n)); }

    static XPhase1Precoders generate(Rng& rng) {
        XPhase1Precoders p;
        for (auto& c : p.v) c = rng.complex_gaussian();
        for (int j = 1; j <= 2; ++j)
            for (int n = 1; n <= kPhase1Slots; ++n) {
                double pw = 0.0;
                for (int k = 1; k <= 2; ++k)
                    for (int i = 1; i <= 2; ++i) pw += std::norm(p(k, j, i, n));
                const double scale = 1.0 / std::sqrt(pw);
                for (int k = 1; k <= 2; ++k)
                    for (int i = 1; i <= 2; ++i) p(k, j, i, n) *= scale;
            }
        return p;
    }

private:
    static std::size_t index(int k, int j, int i, int n) {
        if (n < 1 || n > kPhase1Slots) throw std::out_of_range("XPhase1Precoders: slot outside 1..3");
        return static_cast<std::size_t>(symbol_index(k, j, i) * kPhase1Slots + (n - 1));
    }
};

/// c(j, m, n): weight of s(j, m) in transmitter j's slot-n signal, n in [4, 7].
struct XPhase2Coefficients {
    std::array<Complex, 2 * 2 * 4> c{};

    Complex& operator()(int j, int m, int n) { return c.at(index(j, m, n)); }
    Complex operator()(int j, int m, int n) const { return c.at(index(j, m, n)); }

    static XPhase2Coefficients generate(Rng& rng) {
        XPhase2Coefficients p;
        for (auto& x : p.c) x = rng.complex_gaussian();
        return p;
    }

private:
    static std::size_t index(int j, int m, int n) {
        if (n <= kPhase1Slots || n > kBlockSlots) throw std::out_of_range("XPhase2Coefficients: slot outside 4..7");
        return static_cast<std::size_t>(((j - 1) * 2 + (m - 1)) * 4 + (n - kPhase1Slots - 1));
    }
};

/// Channel-independent coefficients shared by all nodes before communication.
struct XCodebook {
    XPhase1Precoders phase1;
    XPhase2Coefficients phase2;

    static XCodebook generate(std::uint64_t seed) {
        Rng rng(seed);
        XCodebook cb;
        cb.phase1 = XPhase1Precoders::generate(rng);
        cb.phase2 = XPhase2Coefficients::generate(rng);
        return cb;
    }
};

struct XAlignmentConstants {
    std::array<Complex, 4> gamma_{};  // gamma(j, k), j = transmitter, k = receiver
    Complex beta{};                   // alignment ratio at receiver 1
    Complex delta{};                  // alignment ratio at receiver 2

    Complex& gamma(int j, int k) { return gamma_.at(static_cast<std::size_t>((j - 1) * 2 + (k - 1))); }
    Complex gamma(int j, int k) const { return gamma_.at(static_cast<std::size_t>((j - 1) * 2 + (k - 1))); }
};

/// s(j, m) = u(m, j, 1) - gamma(j, m) u(m, j, 2).
struct XLayer2Symbols {
    std::array<Complex, 4> s_{};

    Complex& s(int j, int m) { return s_.at(static_cast<std::size_t>((j - 1) * 2 + (m - 1))); }
    Complex s(int j, int m) const { return s_.at(static_cast<std::size_t>((j - 1) * 2 + (m - 1))); }
};

// ---------------------------------------------------------------------------
// Encoding

/// Unscaled slot-n (n <= 3) signal of transmitter `own.tx`.
inline Complex x_phase1_transmit(const XTxSymbols& own, const XPhase1Precoders& pre, int n) {
    Complex x{0.0, 0.0};
    for (int k = 1; k <= 2; ++k)
        for (int i = 1; i <= 2; ++i) x += pre(k, own.tx, i, n) * own(k, i);
    return x;
}

/// 3x4 matrix whose null vector aligns interference at receiver `rx`. Its
/// columns are the slot 1-3 directions of u(m,1,1), u(m,1,2), u(m,2,1),
/// u(m,2,2) seen at `rx`, with m the other receiver. `h(k, j, n)` supplies
/// channel coefficients for slots 1-3 only.
template <class ChannelFn>
CMatrix alignment_matrix(int rx, ChannelFn&& h, const XPhase1Precoders& pre) {
    const int m = 3 - rx;
    CMatrix a(kPhase1Slots, 4);
    for (int n = 1; n <= kPhase1Slots; ++n) {
        const Complex h1 = h(rx, 1, n), h2 = h(rx, 2, n);
        a(n - 1, 0) = h1 * pre(m, 1, 1, n);
        a(n - 1, 1) = h1 * pre(m, 1, 2, n);
        a(n - 1, 2) = h2 * pre(m, 2, 1, n);
        a(n - 1, 3) = h2 * pre(m, 2, 2, n);
    }
    return a;
}

namespace detail {

struct NullRatios {
    Complex first_over_second;   // v1 / v2
    Complex fourth_over_second;  // v4 / v2
    Complex third_over_fourth;   // v3 / v4
};

inline NullRatios null_ratios(const CMatrix& a, const ToleranceSpec& tol) {
    const CVector v = null_vector(a, tol);
    const double floor = tol.rank_rel_tol * v.norm();
    if (std::abs(v(1)) < floor || std::abs(v(3)) < floor)
        throw DegenerateDraw(DegenerateReason::DegenerateNormalization,
                             "alignment null vector has a vanishing normalization entry");
    return {v(0) / v(1), v(3) / v(1), v(2) / v(3)};
}

}  // namespace detail

/// gamma, beta and delta from slot 1-3 CSI. Normalizing the null vector's
/// second entry to one gives (gamma(1,2), 1, -beta gamma(2,2), -beta) at
/// receiver 1 and (gamma(1,1), 1, -delta gamma(2,1), -delta) at receiver 2.
template <class ChannelFn>
XAlignmentConstants compute_alignment_constants(ChannelFn&& h, const XPhase1Precoders& pre,
                                                const ToleranceSpec& tol = {}) {
    XAlignmentConstants c;
    const auto r1 = detail::null_ratios(alignment_matrix(1, h, pre), tol);
    c.gamma(1, 2) = r1.first_over_second;
    c.beta = -r1.fourth_over_second;
    c.gamma(2, 2) = r1.third_over_fourth;

    const auto r2 = detail::null_ratios(alignment_matrix(2, h, pre), tol);
    c.gamma(1, 1) = r2.first_over_second;
    c.delta = -r2.fourth_over_second;
    c.gamma(2, 1) = r2.third_over_fourth;
    return c;
}

inline XAlignmentConstants compute_alignment_constants(const ChannelTensor& h,
                                                       const XPhase1Precoders& pre,
                                                       const ToleranceSpec& tol = {}) {
    return compute_alignment_constants([&h](int k, int j, int n) { return h(k, j, n); }, pre, tol);
}

/// Layer-2 pair (s(j,1), s(j,2)) from transmitter j's own symbols.
inline std::array<Complex, 2> form_layer2(const XTxSymbols& own, const XAlignmentConstants& c) {
    return {own(1, 1) - c.gamma(own.tx, 1) * own(1, 2), own(2, 1) - c.gamma(own.tx, 2) * own(2, 2)};
}

inline XLayer2Symbols form_layer2(const XMessageSet& m, const XAlignmentConstants& c) {
    XLayer2Symbols s;
    for (int j = 1; j <= 2; ++j) {
        const auto pair = form_layer2(own_symbols(m, j), c);
        s.s(j, 1) = pair[0];
        s.s(j, 2) = pair[1];
    }
    return s;
}

/// Unscaled slot-n (n in 4..7) signal: c(j,1,n) s(j,1) + c(j,2,n) s(j,2).
inline Complex x_phase2_transmit(int j, const std::array<Complex, 2>& s, const XPhase2Coefficients& coeffs, int n) {
    return coeffs(j, 1, n) * s[0] + coeffs(j, 2, n) * s[1];
}

/// Amplitude giving transmitter j average power `power` in phase-2 slot n.
inline double x_phase2_scale(int j, int n, const XPhase2Coefficients& coeffs,
                             const XAlignmentConstants& c, double power) {
    const double pw = std::norm(coeffs(j, 1, n)) * (1.0 + std::norm(c.gamma(j, 1))) +
                      std::norm(coeffs(j, 2, n)) * (1.0 + std::norm(c.gamma(j, 2)));
    return std::sqrt(power / pw);
}

/// One distributed transmitter. Holds only its own symbols and the shared
/// codebook; channel knowledge arrives exclusively through the slot views.
class XTransmitter {
public:
    XTransmitter(XTxSymbols own, const XCodebook& codebook, double power, ToleranceSpec tol = {})
        : own_(own), codebook_(&codebook), power_(power), tol_(tol) {}

    Complex transmit(const TxInformationView& view) {
        const int n = view.slot();
        if (n <= kPhase1Slots) return std::sqrt(power_) * x_phase1_transmit(own_, codebook_->phase1, n);
        if (!constants_) {
            constants_ = compute_alignment_constants(
                [&view](int k, int j, int m) { return view.channel(k, j, m); }, codebook_->phase1, tol_);
            layer2_ = form_layer2(own_, *constants_);
        }
        const double a = x_phase2_scale(own_.tx, n, codebook_->phase2, *constants_, power_);
        return a * x_phase2_transmit(own_.tx, layer2_, codebook_->phase2, n);
    }

    [[nodiscard]] const std::optional<XAlignmentConstants>& constants() const noexcept { return constants_; }

private:
    XTxSymbols own_;
    const XCodebook* codebook_;
    double power_;
    ToleranceSpec tol_;
    std::optional<XAlignmentConstants> constants_;
    std::array<Complex, 2> layer2_{};
};

// ---------------------------------------------------------------------------
// Decoding

struct XDecodeResult {
    std::array<Complex, 4> u{};  // u(k,1,1), u(k,1,2), u(k,2,1), u(k,2,2)
    XLayer2Symbols layer2;
    CMatrix desired_matrix;      // M_k: two desired directions + aligned interference
    CMatrix interference;        // 3x2 directions of the two interfering symbols
    double alignment_ratio = 0;  // sigma_2 / sigma_1 of `interference`
    int interference_rank = 0;
};

/// Slot 1-3 direction of u(m, j, 2) at receiver k once the layer-2 variables
/// are substituted: sqrt(P) h(k,j,n) (V(m,j,1,n) gamma(j,m) + V(m,j,2,n)).
inline CVector substituted_direction(int k, int m, int j, const ChannelTensor& h, const XCodebook& cb,
                                     const XAlignmentConstants& c, double power) {
    CVector d(kPhase1Slots);
    for (int n = 1; n <= kPhase1Slots; ++n)
        d(n - 1) = std::sqrt(power) * h(k, j, n) *
                   (cb.phase1(m, j, 1, n) * c.gamma(j, m) + cb.phase1(m, j, 2, n));
    return d;
}

/// Receiver k's decoder. `y` holds its 7 observations.
inline XDecodeResult x_decode(int k, const CVector& y, const ChannelTensor& h, const XCodebook& cb,
                              const XAlignmentConstants& c, double power, const ToleranceSpec& tol = {}) {
    if (y.size() != kBlockSlots) throw std::invalid_argument("x_decode: need 7 observations");
    XDecodeResult out;

    // Slots 4-7: resolve (s(1,1), s(1,2), s(2,1), s(2,2)).
    CMatrix a2(4, 4);
    CVector y2(4);
    for (int n = kPhase1Slots + 1; n <= kBlockSlots; ++n) {
        const int r = n - kPhase1Slots - 1;
        for (int j = 1; j <= 2; ++j) {
            const Complex g = h(k, j, n) * x_phase2_scale(j, n, cb.phase2, c, power);
            a2(r, (j - 1) * 2 + 0) = g * cb.phase2(j, 1, n);
            a2(r, (j - 1) * 2 + 1) = g * cb.phase2(j, 2, n);
        }
        y2(r) = y(n - 1);
    }
    const CVector s = solve_square(a2, y2, tol);
    for (int j = 1; j <= 2; ++j)
        for (int m = 1; m <= 2; ++m) out.layer2.s(j, m) = s((j - 1) * 2 + (m - 1));

    // Slots 1-3: remove the layer-2 contributions of the first-index symbols.
    CVector y1(kPhase1Slots);
    for (int n = 1; n <= kPhase1Slots; ++n) {
        Complex known{0.0, 0.0};
        for (int j = 1; j <= 2; ++j)
            for (int m = 1; m <= 2; ++m) known += h(k, j, n) * cb.phase1(m, j, 1, n) * out.layer2.s(j, m);
        y1(n - 1) = y(n - 1) - std::sqrt(power) * known;
    }

    const int other = 3 - k;
    out.interference.resize(kPhase1Slots, 2);
    out.interference.col(0) = substituted_direction(k, other, 1, h, cb, c, power);
    out.interference.col(1) = substituted_direction(k, other, 2, h, cb, c, power);
    const RVector isv = singular_values(out.interference);
    out.alignment_ratio = isv(0) > 0.0 ? isv(1) / isv(0) : 0.0;
    out.interference_rank = static_cast<int>(numerical_rank(out.interference, tol));

    out.desired_matrix.resize(kPhase1Slots, 3);
    out.desired_matrix.col(0) = substituted_direction(k, k, 1, h, cb, c, power);
    out.desired_matrix.col(1) = substituted_direction(k, k, 2, h, cb, c, power);
    out.desired_matrix.col(2) = out.interference.col(0);
    const CVector sol = solve_square(out.desired_matrix, y1, tol);

    for (int j = 1; j <= 2; ++j) {
        const Complex second = sol(j - 1);
        out.u[static_cast<std::size_t>((j - 1) * 2 + 1)] = second;
        out.u[static_cast<std::size_t>((j - 1) * 2)] = out.layer2.s(j, k) + c.gamma(j, k) * second;
    }
    return out;
}

// ---------------------------------------------------------------------------

struct XRetroCsit {
    static constexpr std::string_view kName = "x_retro_csit";
    static constexpr int kNumRx = 2;
    static constexpr int kNumTx = 2;
    static constexpr int kSlots = kBlockSlots;
    static constexpr int kSymbols = 8;
    static constexpr int kInterferenceRank = 1;

    static FeedbackModel feedback_model() { return FeedbackModel::delayed_csit(); }

    static BlockOutcome run_block(const BlockContext& ctx) {
        const XCodebook cb = XCodebook::generate(ctx.codebook_seed);
        const XMessageSet msgs = XMessageSet::from_vector(ctx.symbols);
        const FeedbackModel model = feedback_model();

        std::array<XTransmitter, 2> tx{XTransmitter(own_symbols(msgs, 1), cb, ctx.power, ctx.tol),
                                       XTransmitter(own_symbols(msgs, 2), cb, ctx.power, ctx.tol)};
        BlockOutcome out;
        out.record = retroalign::run_block(
            ctx.channel, model, ctx.noise, out.log,
            [&tx](int j, const TxInformationView& view) { return tx[static_cast<std::size_t>(j - 1)].transmit(view); },
            ctx.noise_variance);

        // Receivers have global CSI and rebuild the constants themselves.
        const XAlignmentConstants c = compute_alignment_constants(ctx.channel, cb.phase1, ctx.tol);
        out.decoded = CVector::Zero(kSymbols);
        Complex det_product{1.0, 0.0};
        for (int k = 1; k <= 2; ++k) {
            const XDecodeResult d = x_decode(k, out.record.y_noisy.row(k - 1).transpose(), ctx.channel, cb, c,
                                             ctx.power, ctx.tol);
            for (int j = 1; j <= 2; ++j)
                for (int i = 1; i <= 2; ++i)
                    out.decoded(symbol_index(k, j, i)) = d.u[static_cast<std::size_t>((j - 1) * 2 + (i - 1))];
            out.certificates.interference_ranks.push_back(d.interference_rank);
            out.certificates.alignment_ratios.push_back(d.alignment_ratio);
            out.certificates.desired_rcond.push_back(inverse_condition(d.desired_matrix));
            det_product *= d.desired_matrix.determinant();
        }
        out.certificates.det_product = std::abs(det_product);
        return out;
    }
};

static_assert(Scheme<XRetroCsit>);

}  // namespace retroalign::xchan
