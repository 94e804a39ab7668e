#include "retroalign/output_feedback.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace retroalign::outfb {
namespace {

template <class S>
BlockContext context(std::uint64_t seed, double power = 1.0) {
    Rng rng(seed);
    BlockContext ctx;
    ctx.channel = generate_channel(S::kNumRx, S::kNumTx, S::kSlots, rng);
    ctx.symbols = sample_complex_gaussian(rng, S::kSymbols);
    ctx.noise = zero_noise(S::kNumRx, S::kSlots);
    ctx.power = power;
    return ctx;
}

double rel_error(const BlockOutcome& out, const BlockContext& ctx) {
    return (out.decoded - ctx.symbols).cwiseAbs().maxCoeff() / ctx.symbols.cwiseAbs().maxCoeff();
}

template <class S>
double worst_over(int trials, std::uint64_t offset) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const BlockContext ctx = context<S>(offset + static_cast<std::uint64_t>(t), 50.0);
        worst = std::max(worst, rel_error(S::run_block(ctx), ctx));
    }
    return worst;
}

template <class S>
void expect_future_independent(std::uint64_t seed) {
    const BlockContext ctx = context<S>(seed);
    const auto base = S::run_block(ctx);
    for (int n = 1; n <= S::kSlots; ++n) {
        Rng rng(seed * 31 + static_cast<std::uint64_t>(n));
        BlockContext p = ctx;
        p.channel = redraw_from_slot(ctx.channel, n, rng);
        const auto replay = S::run_block(p);
        for (int m = 1; m < n; ++m) EXPECT_EQ(replay.record.x.col(m - 1), base.record.x.col(m - 1)) << S::kName;
    }
}

// --- schedule machinery ----------------------------------------------------

TEST(Schedule, BuiltInSchedulesAreLegal) {
    EXPECT_EQ(check_schedule(xfb::schedule(), XOutputFb::feedback_model()), std::nullopt);
    EXPECT_EQ(check_schedule(ic3fb::schedule(), Ic3OutputFb::feedback_model()), std::nullopt);
}

TEST(Schedule, IcScheduleIllegalUnderCrossFeedback) {
    // Own-receiver association is what makes the slot-4/5 resends legal;
    // under a model that routes receiver 3 to Tx1 only, Tx3 cannot resend Y[3](1).
    FeedbackModel m = FeedbackModel::delayed_output_own(3);
    m.output_association[2] = {1};
    EXPECT_NE(check_schedule(ic3fb::schedule(), m), std::nullopt);
}

TEST(Schedule, RejectsForeignSymbolAndFutureOutput) {
    SlotSchedule s = xfb::schedule();
    s.slots[0][0] = Payload::send_symbol(1, xfb::symbol_index(1, 2));  // owned by Tx2
    EXPECT_NE(check_schedule(s, XOutputFb::feedback_model()), std::nullopt);

    SlotSchedule t = xfb::schedule();
    t.slots[2][0] = Payload::resend(1, 2, 3);  // output of the current slot
    EXPECT_NE(check_schedule(t, XOutputFb::feedback_model()), std::nullopt);
}

TEST(Schedule, ForeignSymbolAtRuntimeIsCausalityViolation) {
    SlotSchedule s = xfb::schedule();
    s.slots[0][0] = Payload::send_symbol(1, xfb::symbol_index(1, 2));
    const BlockContext ctx = context<XOutputFb>(1);
    EXPECT_THROW(run_schedule(s, xfb::plans(), XOutputFb::feedback_model(), ctx), CausalityViolation);
}

TEST(Schedule, InvisibleResendAtRuntimeIsCausalityViolation) {
    // Tx2 may not resend Y[3](1) under own-receiver feedback.
    SlotSchedule s = ic3fb::schedule();
    s.slots[3][1] = Payload::resend(2, 3, 1);
    const BlockContext ctx = context<Ic3OutputFb>(2);
    EXPECT_THROW(run_schedule(s, ic3fb::plans(), Ic3OutputFb::feedback_model(), ctx), CausalityViolation);
}

TEST(Plans, BuiltInPlansValidate) {
    for (const auto& p : xfb::plans()) EXPECT_EQ(validate_plan(xfb::schedule(), p), std::nullopt) << p.rx;
    for (const auto& p : ic3fb::plans()) EXPECT_EQ(validate_plan(ic3fb::schedule(), p), std::nullopt) << p.rx;
}

TEST(Plans, UsingAnOutputBeforeHoldingItIsRejected) {
    auto plans = ic3fb::plans();
    // Receiver 1 swaps its two halves: the slot-4 peel needs Y[3](1) first.
    std::swap(plans[0].steps[0], plans[0].steps[2]);
    EXPECT_NE(validate_plan(ic3fb::schedule(), plans[0]), std::nullopt);
}

TEST(Plans, IncompletePlanIsRejected) {
    auto plans = xfb::plans();
    plans[0].steps.pop_back();
    EXPECT_NE(validate_plan(xfb::schedule(), plans[0]), std::nullopt);
}

TEST(Plans, PeeledQuantitiesMatchWhatTheOtherReceiverHeard) {
    // Cancellation soundness on the noiseless path.
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const BlockContext ctx = context<Ic3OutputFb>(seed + 100, 7.0);
        const auto out = Ic3OutputFb::run_block(ctx);
        const auto s = ic3fb::schedule();
        for (const auto& plan : ic3fb::plans()) {
            const auto r = execute_plan(s, plan, out.record.y_clean.row(plan.rx - 1).transpose(), ctx.channel,
                                        ctx.power, 0.0);
            for (const auto& [ref, value] : r.held) {
                const Complex truth = out.record.clean(ref.rx, ref.slot);
                EXPECT_LE(std::abs(value - truth), 1e-10 * std::max(1.0, std::abs(truth)))
                    << "rx " << plan.rx << " " << to_string(ref);
            }
        }
    }
}

TEST(OutputForm, MatchesSimulatedOutputs) {
    const BlockContext ctx = context<Ic3OutputFb>(3, 4.0);
    const auto out = Ic3OutputFb::run_block(ctx);
    const auto s = ic3fb::schedule();
    for (int k = 1; k <= 3; ++k)
        for (int n = 1; n <= 5; ++n) {
            const CVector f = output_form(s, {k, n}, ctx.channel, ctx.power, 0.0);
            EXPECT_LE(std::abs(f.cwiseProduct(ctx.symbols).sum() - out.record.clean(k, n)), 1e-12);
        }
}

TEST(OutputForm, ResendScaleKeepsAveragePower) {
    // A two-payload slot has average output power 2P + sigma^2.
    const SlotSchedule s = xfb::schedule();
    EXPECT_DOUBLE_EQ(resend_scale(s, 1, 10.0, 1.0), std::sqrt(10.0 / 21.0));
}

// --- X channel -------------------------------------------------------------

TEST(XOutputFb, ZeroMessages) {
    BlockContext ctx = context<XOutputFb>(4);
    ctx.symbols.setZero();
    const auto out = XOutputFb::run_block(ctx);
    EXPECT_EQ(out.record.y_clean.norm(), 0.0);
    EXPECT_EQ(out.decoded.norm(), 0.0);
}

TEST(XOutputFb, SlotContents) {
    const BlockContext ctx = context<XOutputFb>(5, 9.0);
    const auto out = XOutputFb::run_block(ctx);
    using xfb::symbol_index;
    EXPECT_EQ(out.record.tx(1, 1), 3.0 * ctx.symbols(symbol_index(1, 1)));
    EXPECT_EQ(out.record.tx(2, 1), 3.0 * ctx.symbols(symbol_index(1, 2)));
    EXPECT_EQ(out.record.tx(1, 2), 3.0 * ctx.symbols(symbol_index(2, 1)));
    EXPECT_EQ(out.record.tx(2, 2), 3.0 * ctx.symbols(symbol_index(2, 2)));
    const double a = resend_scale(xfb::schedule(), 1, 9.0, 0.0);
    EXPECT_EQ(out.record.tx(1, 3), a * out.record.noisy(2, 1));
    EXPECT_EQ(out.record.tx(2, 3), a * out.record.noisy(1, 2));
}

TEST(XOutputFb, ExactRecovery1000) { EXPECT_LE(worst_over<XOutputFb>(1000, 0), 1e-6); }

TEST(XOutputFb, NoCsiReads) {
    const auto out = XOutputFb::run_block(context<XOutputFb>(6));
    const auto audit = audit_feedback_usage(out.log, 3);
    EXPECT_TRUE(audit.csi_slots.empty());
    EXPECT_EQ(audit.output_links, (std::set<std::pair<int, int>>{{1, 2}, {2, 1}}));
}

TEST(XOutputFb, FutureIndependence) { expect_future_independent<XOutputFb>(7); }

// --- 3-user IC -------------------------------------------------------------

TEST(Ic3OutputFb, ZeroMessages) {
    BlockContext ctx = context<Ic3OutputFb>(8);
    ctx.symbols.setZero();
    const auto out = Ic3OutputFb::run_block(ctx);
    EXPECT_EQ(out.record.x.norm(), 0.0);
    EXPECT_EQ(out.decoded.norm(), 0.0);
}

TEST(Ic3OutputFb, SlotContents) {
    const BlockContext ctx = context<Ic3OutputFb>(9, 4.0);
    const auto out = Ic3OutputFb::run_block(ctx);
    using ic3fb::symbol_index;
    const auto& u = ctx.symbols;
    // Slot 2 carries Tx1's second symbol.
    EXPECT_EQ(out.record.tx(1, 1), 2.0 * u(symbol_index(1, 1)));
    EXPECT_EQ(out.record.tx(2, 1), 2.0 * u(symbol_index(2, 1)));
    EXPECT_EQ(out.record.tx(3, 1), Complex{});
    EXPECT_EQ(out.record.tx(1, 2), 2.0 * u(symbol_index(1, 2)));
    EXPECT_EQ(out.record.tx(3, 2), 2.0 * u(symbol_index(3, 1)));
    EXPECT_EQ(out.record.tx(2, 2), Complex{});
    EXPECT_EQ(out.record.tx(2, 3), 2.0 * u(symbol_index(2, 2)));
    EXPECT_EQ(out.record.tx(3, 3), 2.0 * u(symbol_index(3, 2)));
    const double a = resend_scale(ic3fb::schedule(), 1, 4.0, 0.0);
    EXPECT_EQ(out.record.tx(3, 4), a * out.record.noisy(3, 1));
    EXPECT_EQ(out.record.tx(2, 4), a * out.record.noisy(2, 2));
    EXPECT_EQ(out.record.tx(3, 5), a * out.record.noisy(3, 1));
    EXPECT_EQ(out.record.tx(1, 5), a * out.record.noisy(1, 3));
}

TEST(Ic3OutputFb, ExactRecovery1000) { EXPECT_LE(worst_over<Ic3OutputFb>(1000, 5000), 1e-6); }

TEST(Ic3OutputFb, OwnReceiverFeedbackOnly) {
    const auto out = Ic3OutputFb::run_block(context<Ic3OutputFb>(10));
    const auto audit = audit_feedback_usage(out.log, 5);
    EXPECT_TRUE(audit.csi_slots.empty());
    for (const auto& [rx, tx] : audit.output_links) EXPECT_EQ(rx, tx);
    EXPECT_EQ(audit.output_links.size(), 3u);
}

TEST(Ic3OutputFb, FutureIndependence) { expect_future_independent<Ic3OutputFb>(11); }

// --- broadcast baseline ----------------------------------------------------

TEST(BcMat, ZeroMessages) {
    BlockContext ctx = context<BcMat>(12);
    ctx.symbols.setZero();
    EXPECT_EQ(BcMat::run_block(ctx).decoded.norm(), 0.0);
}

TEST(BcMat, SlotThreeIsSumOfOverheardCombinations) {
    const BlockContext ctx = context<BcMat>(13, 8.0);
    const auto out = BcMat::run_block(ctx);
    // L2 = what receiver 2 heard in slot 1, L3 = what receiver 1 heard in slot 2.
    const Complex l2 = out.record.clean(2, 1), l3 = out.record.clean(1, 2);
    EXPECT_LE(std::abs(out.record.tx(1, 3) - bc::slot3_scale(ctx.channel, 8.0) * (l2 + l3)), 1e-12);
    EXPECT_EQ(out.record.tx(2, 3), Complex{});
}

TEST(BcMat, ExactRecovery1000) { EXPECT_LE(worst_over<BcMat>(1000, 9000), 1e-6); }

TEST(BcMat, CsiOfFirstTwoSlots) {
    const auto out = BcMat::run_block(context<BcMat>(14));
    EXPECT_EQ(audit_feedback_usage(out.log, 3).csi_slots, (std::set<int>{1, 2}));
}

TEST(BcMat, FutureIndependence) { expect_future_independent<BcMat>(15); }

TEST(DofCounting, SymbolsPerSlot) {
    EXPECT_EQ(XOutputFb::kSymbols * 3, 4 * XOutputFb::kSlots);
    EXPECT_EQ(Ic3OutputFb::kSymbols * 5, 6 * Ic3OutputFb::kSlots);
    EXPECT_EQ(BcMat::kSymbols * 3, 4 * BcMat::kSlots);
}

}  // namespace
}  // namespace retroalign::outfb
