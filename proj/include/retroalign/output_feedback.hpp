// Schemes that resend previously received signals. The 2-antenna broadcast
// baseline uses delayed CSIT; the X channel and 3-user interference channel
// variants use delayed output feedback.
//
// The output-feedback schemes are expressed as data. A SlotSchedule says what
// each transmitter sends in each slot (an own symbol or a fed-back output);
// a CancellationPlan per receiver lists the peel and solve steps that recover
// its symbols. One executor runs any legal schedule, and the plans can be
// validated without running a channel.

#pragma once

#include "retroalign/channel.hpp"
#include "retroalign/numerics.hpp"
#include "retroalign/scheme.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace retroalign::outfb {

/// Y[rx](slot)
struct OutputRef {
    int rx = 0;
    int slot = 0;
    friend auto operator<=>(const OutputRef&, const OutputRef&) = default;
};

inline std::string to_string(const OutputRef& r) {
    return "Y[" + std::to_string(r.rx) + "](" + std::to_string(r.slot) + ")";
}

struct Payload {
    enum class Kind { Symbol, Output };

    int tx = 0;
    Kind kind = Kind::Symbol;
    int symbol = -1;   ///< index into the message vector (Symbol)
    OutputRef output;  ///< fed-back output to resend (Output)

    static Payload send_symbol(int tx, int symbol) { return {tx, Kind::Symbol, symbol, {}}; }
    static Payload resend(int tx, int rx, int slot) { return {tx, Kind::Output, -1, {rx, slot}}; }
};

struct SymbolInfo {
    int owner_tx = 0;
    int intended_rx = 0;
};

struct SlotSchedule {
    int num_rx = 0;
    int num_tx = 0;
    std::vector<SymbolInfo> symbols;
    std::vector<std::vector<Payload>> slots;  ///< slots[n - 1]

    [[nodiscard]] int num_slots() const noexcept { return static_cast<int>(slots.size()); }
    [[nodiscard]] const std::vector<Payload>& at(int n) const { return slots.at(static_cast<std::size_t>(n - 1)); }

    [[nodiscard]] const Payload* payload_of(int tx, int n) const {
        for (const auto& p : at(n))
            if (p.tx == tx) return &p;
        return nullptr;
    }
};

/// Recover `target` from the slot-n observation by removing the contribution
/// of `known`, which the receiver must already hold.
struct PeelStep {
    int slot = 0;
    OutputRef known;
    OutputRef target;
};

/// Solve the 2x2 system formed by two held outputs for two symbols.
struct SolveStep {
    std::array<OutputRef, 2> outputs;
    std::array<int, 2> symbols;
};

using PlanStep = std::variant<PeelStep, SolveStep>;

struct CancellationPlan {
    int rx = 0;
    std::vector<PlanStep> steps;
};

/// Each payload is sent at average power P, so a slot with `a` payloads yields
/// outputs of average power a P + sigma^2 (unit-power fading). Resent outputs
/// are scaled back to P with a channel-independent factor.
inline double resend_scale(const SlotSchedule& s, int slot, double power, double noise_variance) {
    const double a = static_cast<double>(s.at(slot).size());
    return std::sqrt(power / (a * power + noise_variance));
}

inline double payload_scale(const SlotSchedule& s, const Payload& p, double power, double noise_variance) {
    return p.kind == Payload::Kind::Symbol ? std::sqrt(power) : resend_scale(s, p.output.slot, power, noise_variance);
}

/// Static schedule legality under `model`. Each payload uses only its
/// sender's own symbols; a resent output must be visible to its sender.
inline std::optional<std::string> check_schedule(const SlotSchedule& s, const FeedbackModel& model) {
    for (int n = 1; n <= s.num_slots(); ++n) {
        std::vector<int> seen;
        for (const auto& p : s.at(n)) {
            if (p.tx < 1 || p.tx > s.num_tx) return "slot " + std::to_string(n) + ": bad transmitter";
            if (std::find(seen.begin(), seen.end(), p.tx) != seen.end())
                return "slot " + std::to_string(n) + ": transmitter " + std::to_string(p.tx) + " used twice";
            seen.push_back(p.tx);
            if (p.kind == Payload::Kind::Symbol) {
                if (p.symbol < 0 || p.symbol >= static_cast<int>(s.symbols.size()) ||
                    s.symbols[static_cast<std::size_t>(p.symbol)].owner_tx != p.tx)
                    return "slot " + std::to_string(n) + ": transmitter " + std::to_string(p.tx) +
                           " sends a symbol it does not own";
            } else if (p.output.slot < 1 || p.output.slot > n - model.delay_slots ||
                       !model.output_reaches(p.output.rx, p.tx)) {
                return "slot " + std::to_string(n) + ": transmitter " + std::to_string(p.tx) + " cannot see " +
                       to_string(p.output);
            }
        }
    }
    return std::nullopt;
}

/// Linear form of Y[r](m) over the message symbols (noise excluded).
inline CVector output_form(const SlotSchedule& s, const OutputRef& ref, const ChannelTensor& h, double power,
                           double noise_variance) {
    CVector form = CVector::Zero(static_cast<Eigen::Index>(s.symbols.size()));
    for (const auto& p : s.at(ref.slot)) {
        const Complex g = h(ref.rx, p.tx, ref.slot) * payload_scale(s, p, power, noise_variance);
        if (p.kind == Payload::Kind::Symbol)
            form(p.symbol) += g;
        else
            form += g * output_form(s, p.output, h, power, noise_variance);
    }
    return form;
}

/// Structural support of Y[r](m): symbols that reach it with nonzero weight
/// for generic channels.
inline std::vector<bool> output_support(const SlotSchedule& s, const OutputRef& ref) {
    std::vector<bool> sup(s.symbols.size(), false);
    for (const auto& p : s.at(ref.slot)) {
        if (p.kind == Payload::Kind::Symbol) {
            sup[static_cast<std::size_t>(p.symbol)] = true;
        } else {
            const auto inner = output_support(s, p.output);
            for (std::size_t i = 0; i < sup.size(); ++i) sup[i] = sup[i] || inner[i];
        }
    }
    return sup;
}

/// Checks that every step only uses quantities the receiver holds and that
/// the receiver ends up with all of its symbols. Peel slots must combine two
/// outputs; solves must be closed over their symbols.
inline std::optional<std::string> validate_plan(const SlotSchedule& s, const CancellationPlan& plan) {
    std::vector<OutputRef> held;
    for (int m = 1; m <= s.num_slots(); ++m) held.push_back({plan.rx, m});
    const auto holds = [&held](const OutputRef& r) { return std::find(held.begin(), held.end(), r) != held.end(); };
    std::vector<bool> recovered(s.symbols.size(), false);

    for (const auto& step : plan.steps) {
        if (const auto* peel = std::get_if<PeelStep>(&step)) {
            if (!holds(peel->known)) return "peel uses " + to_string(peel->known) + " before it is held";
            const auto& slot = s.at(peel->slot);
            if (slot.size() != 2 || slot[0].kind != Payload::Kind::Output || slot[1].kind != Payload::Kind::Output)
                return "slot " + std::to_string(peel->slot) + " is not a two-output superposition";
            const bool ok = (slot[0].output == peel->known && slot[1].output == peel->target) ||
                            (slot[1].output == peel->known && slot[0].output == peel->target);
            if (!ok) return "slot " + std::to_string(peel->slot) + " does not carry the peel pair";
            held.push_back(peel->target);
        } else {
            const auto& solve = std::get<SolveStep>(step);
            for (const auto& r : solve.outputs) {
                if (!holds(r)) return "solve uses " + to_string(r) + " before it is held";
                const auto sup = output_support(s, r);
                for (std::size_t i = 0; i < sup.size(); ++i)
                    if (sup[i] && static_cast<int>(i) != solve.symbols[0] && static_cast<int>(i) != solve.symbols[1])
                        return to_string(r) + " involves a symbol outside the solve";
            }
            for (int sym : solve.symbols) recovered[static_cast<std::size_t>(sym)] = true;
        }
    }
    for (std::size_t i = 0; i < s.symbols.size(); ++i)
        if (s.symbols[i].intended_rx == plan.rx && !recovered[i])
            return "symbol " + std::to_string(i) + " is never recovered";
    return std::nullopt;
}

struct PlanResult {
    std::map<int, Complex> symbols;  ///< recovered symbols intended for this receiver
    std::map<OutputRef, Complex> held;
    double min_rcond = 1.0;
};

/// Runs receiver `plan.rx`'s plan on its observations `y` (length T).
inline PlanResult execute_plan(const SlotSchedule& s, const CancellationPlan& plan, const CVector& y,
                               const ChannelTensor& h, double power, double noise_variance,
                               const ToleranceSpec& tol = {}) {
    if (const auto err = validate_plan(s, plan)) throw std::logic_error("invalid cancellation plan: " + *err);
    PlanResult out;
    for (int m = 1; m <= s.num_slots(); ++m) out.held[{plan.rx, m}] = y(m - 1);

    for (const auto& step : plan.steps) {
        if (const auto* peel = std::get_if<PeelStep>(&step)) {
            const auto& slot = s.at(peel->slot);
            const Payload& known = slot[0].output == peel->known ? slot[0] : slot[1];
            const Payload& target = slot[0].output == peel->known ? slot[1] : slot[0];
            const Complex gk = h(plan.rx, known.tx, peel->slot) * payload_scale(s, known, power, noise_variance);
            const Complex gt = h(plan.rx, target.tx, peel->slot) * payload_scale(s, target, power, noise_variance);
            out.held[peel->target] = (y(peel->slot - 1) - gk * out.held.at(peel->known)) / gt;
        } else {
            const auto& solve = std::get<SolveStep>(step);
            CMatrix a(2, 2);
            CVector b(2);
            for (int r = 0; r < 2; ++r) {
                const CVector form = output_form(s, solve.outputs[static_cast<std::size_t>(r)], h, power, noise_variance);
                a(r, 0) = form(solve.symbols[0]);
                a(r, 1) = form(solve.symbols[1]);
                b(r) = out.held.at(solve.outputs[static_cast<std::size_t>(r)]);
            }
            out.min_rcond = std::min(out.min_rcond, inverse_condition(a));
            const CVector sol = solve_square(a, b, tol);
            for (int c = 0; c < 2; ++c) {
                const int sym = solve.symbols[static_cast<std::size_t>(c)];
                if (s.symbols[static_cast<std::size_t>(sym)].intended_rx == plan.rx) out.symbols[sym] = sol(c);
            }
        }
    }
    return out;
}

/// Transmitter step for a schedule: own symbols and outputs read through the
/// view only.
inline Complex schedule_transmit(const SlotSchedule& s, const CVector& symbols, const TxInformationView& view,
                                 double power, double noise_variance) {
    const Payload* p = s.payload_of(view.transmitter(), view.slot());
    if (p == nullptr) return {0.0, 0.0};
    if (p->kind == Payload::Kind::Symbol) {
        if (s.symbols.at(static_cast<std::size_t>(p->symbol)).owner_tx != view.transmitter())
            throw CausalityViolation("transmitter " + std::to_string(view.transmitter()) +
                                     " scheduled to send a symbol it does not own");
        return std::sqrt(power) * symbols(p->symbol);
    }
    return resend_scale(s, p->output.slot, power, noise_variance) * view.output(p->output.rx, p->output.slot);
}

inline BlockOutcome run_schedule(const SlotSchedule& s, const std::vector<CancellationPlan>& plans,
                                 const FeedbackModel& model, const BlockContext& ctx) {
    if (ctx.symbols.size() != static_cast<Eigen::Index>(s.symbols.size()))
        throw std::invalid_argument("run_schedule: symbol count mismatch");
    BlockOutcome out;
    out.record = retroalign::run_block(
        ctx.channel, model, ctx.noise, out.log,
        [&](int, const TxInformationView& view) {
            return schedule_transmit(s, ctx.symbols, view, ctx.power, ctx.noise_variance);
        },
        ctx.noise_variance);

    out.decoded = CVector::Zero(ctx.symbols.size());
    for (const auto& plan : plans) {
        const PlanResult r = execute_plan(s, plan, out.record.y_noisy.row(plan.rx - 1).transpose(), ctx.channel,
                                          ctx.power, ctx.noise_variance, ctx.tol);
        for (const auto& [sym, value] : r.symbols) out.decoded(sym) = value;
        out.certificates.desired_rcond.push_back(r.min_rcond);
    }
    return out;
}

// ---------------------------------------------------------------------------
// X channel, delayed output feedback: 4 symbols in 3 slots.
//
// Slots 1 and 2 carry the receiver-1 and receiver-2 symbols. In slot 3 Tx1
// resends Y[2](1) while Tx2 resends Y[1](2).

namespace xfb {

/// u(k, j): symbol from transmitter j to receiver k.
constexpr int symbol_index(int k, int j) { return (k - 1) * 2 + (j - 1); }

inline SlotSchedule schedule() {
    SlotSchedule s;
    s.num_rx = 2;
    s.num_tx = 2;
    for (int k = 1; k <= 2; ++k)
        for (int j = 1; j <= 2; ++j) s.symbols.push_back({j, k});
    s.slots = {
        {Payload::send_symbol(1, symbol_index(1, 1)), Payload::send_symbol(2, symbol_index(1, 2))},
        {Payload::send_symbol(1, symbol_index(2, 1)), Payload::send_symbol(2, symbol_index(2, 2))},
        {Payload::resend(1, 2, 1), Payload::resend(2, 1, 2)},
    };
    return s;
}

inline std::vector<CancellationPlan> plans() {
    return {
        {1, {PeelStep{3, {1, 2}, {2, 1}}, SolveStep{{OutputRef{1, 1}, OutputRef{2, 1}}, {symbol_index(1, 1), symbol_index(1, 2)}}}},
        {2, {PeelStep{3, {2, 1}, {1, 2}}, SolveStep{{OutputRef{2, 2}, OutputRef{1, 2}}, {symbol_index(2, 1), symbol_index(2, 2)}}}},
    };
}

}  // namespace xfb

struct XOutputFb {
    static constexpr std::string_view kName = "x_output_fb";
    static constexpr int kNumRx = 2;
    static constexpr int kNumTx = 2;
    static constexpr int kSlots = 3;
    static constexpr int kSymbols = 4;
    static constexpr int kInterferenceRank = 0;

    static FeedbackModel feedback_model() { return FeedbackModel::delayed_output_full(2, 2); }

    static BlockOutcome run_block(const BlockContext& ctx) {
        static const SlotSchedule s = xfb::schedule();
        static const std::vector<CancellationPlan> p = xfb::plans();
        return run_schedule(s, p, feedback_model(), ctx);
    }
};

// ---------------------------------------------------------------------------
// 3-user interference channel, delayed output feedback to the own transmitter
// only: 6 symbols in 5 slots.
//
//   slot 1: Tx1 u(1,1), Tx2 u(2,1)
//   slot 2: Tx1 u(1,2), Tx3 u(3,1)
//   slot 3: Tx2 u(2,2), Tx3 u(3,2)
//   slot 4: Tx3 Y[3](1), Tx2 Y[2](2)
//   slot 5: Tx3 Y[3](1), Tx1 Y[1](3)

namespace ic3fb {

/// u(k, i): i-th symbol of user k.
constexpr int symbol_index(int k, int i) { return (k - 1) * 2 + (i - 1); }

inline SlotSchedule schedule() {
    SlotSchedule s;
    s.num_rx = 3;
    s.num_tx = 3;
    for (int k = 1; k <= 3; ++k)
        for (int i = 1; i <= 2; ++i) s.symbols.push_back({k, k});
    s.slots = {
        {Payload::send_symbol(1, symbol_index(1, 1)), Payload::send_symbol(2, symbol_index(2, 1))},
        {Payload::send_symbol(1, symbol_index(1, 2)), Payload::send_symbol(3, symbol_index(3, 1))},
        {Payload::send_symbol(2, symbol_index(2, 2)), Payload::send_symbol(3, symbol_index(3, 2))},
        {Payload::resend(3, 3, 1), Payload::resend(2, 2, 2)},
        {Payload::resend(3, 3, 1), Payload::resend(1, 1, 3)},
    };
    return s;
}

inline std::vector<CancellationPlan> plans() {
    const OutputRef y31{3, 1}, y22{2, 2}, y13{1, 3};
    const int u11 = symbol_index(1, 1), u12 = symbol_index(1, 2), u21 = symbol_index(2, 1),
              u22 = symbol_index(2, 2), u31 = symbol_index(3, 1), u32 = symbol_index(3, 2);
    return {
        {1,
         {PeelStep{5, y13, y31}, SolveStep{{OutputRef{1, 1}, y31}, {u11, u21}},
          PeelStep{4, y31, y22}, SolveStep{{OutputRef{1, 2}, y22}, {u12, u31}}}},
        {2,
         {PeelStep{4, y22, y31}, SolveStep{{OutputRef{2, 1}, y31}, {u11, u21}},
          PeelStep{5, y31, y13}, SolveStep{{OutputRef{2, 3}, y13}, {u22, u32}}}},
        {3,
         {PeelStep{4, y31, y22}, SolveStep{{OutputRef{3, 2}, y22}, {u12, u31}},
          PeelStep{5, y31, y13}, SolveStep{{OutputRef{3, 3}, y13}, {u22, u32}}}},
    };
}

}  // namespace ic3fb

struct Ic3OutputFb {
    static constexpr std::string_view kName = "ic3_output_fb";
    static constexpr int kNumRx = 3;
    static constexpr int kNumTx = 3;
    static constexpr int kSlots = 5;
    static constexpr int kSymbols = 6;
    static constexpr int kInterferenceRank = 0;

    static FeedbackModel feedback_model() { return FeedbackModel::delayed_output_own(3); }

    static BlockOutcome run_block(const BlockContext& ctx) {
        static const SlotSchedule s = ic3fb::schedule();
        static const std::vector<CancellationPlan> p = ic3fb::plans();
        return run_schedule(s, p, feedback_model(), ctx);
    }
};

// ---------------------------------------------------------------------------
// Two-antenna broadcast channel with delayed CSIT: 4 symbols in 3 slots.
//
// Slot 1 sends user 1's pair from the two antennas, slot 2 user 2's pair. In
// slot 3 antenna 1 sends L2 + L3, where L2 is what receiver 2 heard in slot 1
// and L3 what receiver 1 heard in slot 2; each receiver removes the half it
// already heard and gains a second equation in its own symbols.

namespace bc {

/// u(k, i): i-th symbol for user k.
constexpr int symbol_index(int k, int i) { return (k - 1) * 2 + (i - 1); }

/// Single transmitter entity with two co-located antennas (tx index = antenna).
class BcTransmitter {
public:
    BcTransmitter(const CVector& symbols, double power) : u_(symbols), power_(power) {}

    Complex transmit(int antenna, const TxInformationView& view) const {
        const double amp = std::sqrt(power_ / 2.0);
        switch (view.slot()) {
            case 1: return amp * u_(symbol_index(1, antenna));
            case 2: return amp * u_(symbol_index(2, antenna));
            case 3: {
                if (antenna != 1) return {0.0, 0.0};
                Complex l2{0.0, 0.0}, l3{0.0, 0.0};
                double pw = 0.0;
                for (int a = 1; a <= 2; ++a) {
                    const Complex h21 = view.channel(2, a, 1), h12 = view.channel(1, a, 2);
                    l2 += h21 * amp * u_(symbol_index(1, a));
                    l3 += h12 * amp * u_(symbol_index(2, a));
                    pw += (std::norm(h21) + std::norm(h12)) * amp * amp;
                }
                return std::sqrt(power_ / pw) * (l2 + l3);
            }
            default: throw std::out_of_range("BcTransmitter: slot outside 1..3");
        }
    }

private:
    CVector u_;
    double power_;
};

/// Slot-3 amplitude; receivers know all CSI and recompute it.
inline double slot3_scale(const ChannelTensor& h, double power) {
    const double amp2 = power / 2.0;
    double pw = 0.0;
    for (int a = 1; a <= 2; ++a) pw += (std::norm(h(2, a, 1)) + std::norm(h(1, a, 2))) * amp2;
    return std::sqrt(power / pw);
}

struct BcDecode {
    std::array<Complex, 2> u{};
    double rcond = 0.0;
};

inline BcDecode bc_decode(int k, const CVector& y, const ChannelTensor& h, double power, const ToleranceSpec& tol = {}) {
    const double amp = std::sqrt(power / 2.0);
    const Complex combined = y(2) / (h(k, 1, 3) * slot3_scale(h, power));
    // Receiver 1 heard L3 in slot 2, receiver 2 heard L2 in slot 1.
    const int own_slot = k == 1 ? 1 : 2;
    const int cross_slot = k == 1 ? 2 : 1;
    const int other = 3 - k;
    const Complex other_heard = combined - y(cross_slot - 1);

    CMatrix a(2, 2);
    CVector b(2);
    for (int ant = 1; ant <= 2; ++ant) {
        a(0, ant - 1) = amp * h(k, ant, own_slot);
        a(1, ant - 1) = amp * h(other, ant, own_slot);
    }
    b << y(own_slot - 1), other_heard;
    BcDecode out;
    out.rcond = inverse_condition(a);
    const CVector sol = solve_square(a, b, tol);
    out.u = {sol(0), sol(1)};
    return out;
}

}  // namespace bc

struct BcMat {
    static constexpr std::string_view kName = "bc_mat";
    static constexpr int kNumRx = 2;
    static constexpr int kNumTx = 2;  // antennas of one transmitter
    static constexpr int kSlots = 3;
    static constexpr int kSymbols = 4;
    static constexpr int kInterferenceRank = 0;

    static FeedbackModel feedback_model() { return FeedbackModel::delayed_csit(); }

    static BlockOutcome run_block(const BlockContext& ctx) {
        const bc::BcTransmitter tx(ctx.symbols, ctx.power);
        BlockOutcome out;
        out.record = retroalign::run_block(
            ctx.channel, feedback_model(), ctx.noise, out.log,
            [&tx](int antenna, const TxInformationView& view) { return tx.transmit(antenna, view); },
            ctx.noise_variance);
        out.decoded = CVector::Zero(kSymbols);
        for (int k = 1; k <= 2; ++k) {
            const auto d = bc::bc_decode(k, out.record.y_noisy.row(k - 1).transpose(), ctx.channel, ctx.power, ctx.tol);
            out.decoded(bc::symbol_index(k, 1)) = d.u[0];
            out.decoded(bc::symbol_index(k, 2)) = d.u[1];
            out.certificates.desired_rcond.push_back(d.rcond);
        }
        return out;
    }
};

static_assert(Scheme<XOutputFb>);
static_assert(Scheme<Ic3OutputFb>);
static_assert(Scheme<BcMat>);

}  // namespace retroalign::outfb
