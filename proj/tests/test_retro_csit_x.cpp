#include "oracle/jacobi_svd.hpp"
#include "retroalign/retro_csit_x.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace retroalign::xchan {
namespace {

struct Draw {
    ChannelTensor h;
    std::uint64_t cb_seed = 0;
    XCodebook cb;
    XMessageSet msgs;
};

Draw draw(std::uint64_t seed) {
    Rng rng(seed);
    Draw d;
    d.h = generate_channel(2, 2, kBlockSlots, rng);
    d.cb_seed = derive_seed(seed, 3);
    d.cb = XCodebook::generate(d.cb_seed);
    d.msgs = XMessageSet::from_vector(sample_complex_gaussian(rng, 8));
    return d;
}

BlockContext context(const Draw& d, double power = 1.0) {
    BlockContext ctx;
    ctx.channel = d.h;
    CVector u(8);
    for (int i = 0; i < 8; ++i) u(i) = d.msgs.u[static_cast<std::size_t>(i)];
    ctx.symbols = u;
    ctx.noise = zero_noise(2, kBlockSlots);
    ctx.power = power;
    ctx.codebook_seed = d.cb_seed;
    return ctx;
}

TEST(XPhase1, ZeroMessagesGiveZeroSignal) {
    const Draw d = draw(1);
    for (int j = 1; j <= 2; ++j)
        for (int n = 1; n <= 3; ++n) EXPECT_EQ(x_phase1_transmit(own_symbols(XMessageSet{}, j), d.cb.phase1, n), Complex{});
}

TEST(XPhase1, SingleSymbolReadout) {
    const Draw d = draw(2);
    XMessageSet m;
    m(1, 1, 1) = 1.0;
    for (int n = 1; n <= 3; ++n) {
        EXPECT_EQ(x_phase1_transmit(own_symbols(m, 1), d.cb.phase1, n), d.cb.phase1(1, 1, 1, n));
        EXPECT_EQ(x_phase1_transmit(own_symbols(m, 2), d.cb.phase1, n), Complex{});
    }
}

TEST(XPhase1, MatchesSummationOracle) {
    const Draw d = draw(3);
    for (int j = 1; j <= 2; ++j)
        for (int n = 1; n <= 3; ++n) {
            Complex expect{};
            for (int k = 1; k <= 2; ++k)
                for (int i = 1; i <= 2; ++i) expect += d.cb.phase1(k, j, i, n) * d.msgs(k, j, i);
            EXPECT_LE(std::abs(x_phase1_transmit(own_symbols(d.msgs, j), d.cb.phase1, n) - expect), 1e-14);
        }
}

TEST(XPhase1, RowsHaveUnitPower) {
    const Draw d = draw(4);
    for (int j = 1; j <= 2; ++j)
        for (int n = 1; n <= 3; ++n) {
            double pw = 0.0;
            for (int k = 1; k <= 2; ++k)
                for (int i = 1; i <= 2; ++i) pw += std::norm(d.cb.phase1(k, j, i, n));
            EXPECT_NEAR(pw, 1.0, 1e-12);
        }
}

TEST(AlignmentConstants, NullVectorCondition) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Draw d = draw(seed);
        const auto c = compute_alignment_constants(d.h, d.cb.phase1);
        CVector v1(4), v2(4);
        v1 << c.gamma(1, 2), 1.0, -c.beta * c.gamma(2, 2), -c.beta;
        v2 << c.gamma(1, 1), 1.0, -c.delta * c.gamma(2, 1), -c.delta;
        const CMatrix a1 = alignment_matrix(1, [&](int k, int j, int n) { return d.h(k, j, n); }, d.cb.phase1);
        const CMatrix a2 = alignment_matrix(2, [&](int k, int j, int n) { return d.h(k, j, n); }, d.cb.phase1);
        EXPECT_LE((a1 * v1).norm() / (a1.norm() * v1.norm()), 1e-8);
        EXPECT_LE((a2 * v2).norm() / (a2.norm() * v2.norm()), 1e-8);
    }
}

TEST(AlignmentConstants, NoDegenerateNormalizationIn1000Trials) {
    int failures = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const Draw d = draw(seed + 5000);
        try {
            compute_alignment_constants(d.h, d.cb.phase1);
        } catch (const DegenerateDraw&) {
            ++failures;
        }
    }
    EXPECT_EQ(failures, 0);
}

TEST(AlignmentConstants, Reproducible) {
    const Draw d = draw(7);
    const auto a = compute_alignment_constants(d.h, d.cb.phase1);
    const auto b = compute_alignment_constants(d.h, d.cb.phase1);
    for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 2; ++k) EXPECT_LE(std::abs(a.gamma(j, k) - b.gamma(j, k)), 1e-9);
    EXPECT_LE(std::abs(a.beta - b.beta), 1e-9);
    EXPECT_LE(std::abs(a.delta - b.delta), 1e-9);
}

TEST(AlignmentConstants, UsesOnlyFirstThreeSlots) {
    Draw d = draw(8);
    const auto a = compute_alignment_constants(d.h, d.cb.phase1);
    Rng rng(99);
    d.h = redraw_from_slot(d.h, 4, rng);
    const auto b = compute_alignment_constants(d.h, d.cb.phase1);
    EXPECT_EQ(a.gamma_, b.gamma_);
    EXPECT_EQ(a.beta, b.beta);
}

TEST(AlignmentConstants, OracleNullVectorGivesSameConstants) {
    // Constants are ratios of null-vector entries, so any null vector of the
    // same line yields the same values.
    const Draw d = draw(9);
    const auto c = compute_alignment_constants(d.h, d.cb.phase1);
    const CMatrix a1 = alignment_matrix(1, [&](int k, int j, int n) { return d.h(k, j, n); }, d.cb.phase1);
    const auto w = oracle::smallest_right_vector(oracle::from(a1));
    EXPECT_LE(std::abs(w[0] / w[1] - c.gamma(1, 2)), 1e-8 * std::abs(c.gamma(1, 2)));
    EXPECT_LE(std::abs(-w[3] / w[1] - c.beta), 1e-8 * std::abs(c.beta));
    EXPECT_LE(std::abs(w[2] / w[3] - c.gamma(2, 2)), 1e-8 * std::abs(c.gamma(2, 2)));
}

TEST(Layer2, Definitions) {
    const Draw d = draw(10);
    const auto c = compute_alignment_constants(d.h, d.cb.phase1);
    const auto s = form_layer2(d.msgs, c);
    EXPECT_EQ(s.s(1, 1), d.msgs(1, 1, 1) - c.gamma(1, 1) * d.msgs(1, 1, 2));
    EXPECT_EQ(s.s(2, 1), d.msgs(1, 2, 1) - c.gamma(2, 1) * d.msgs(1, 2, 2));
    EXPECT_EQ(s.s(1, 2), d.msgs(2, 1, 1) - c.gamma(1, 2) * d.msgs(2, 1, 2));
    EXPECT_EQ(s.s(2, 2), d.msgs(2, 2, 1) - c.gamma(2, 2) * d.msgs(2, 2, 2));
}

TEST(XPhase2, ZeroAndReadout) {
    const Draw d = draw(11);
    for (int n = 4; n <= 7; ++n) {
        EXPECT_EQ(x_phase2_transmit(1, {Complex{}, Complex{}}, d.cb.phase2, n), Complex{});
        EXPECT_EQ(x_phase2_transmit(1, {Complex{1.0, 0.0}, Complex{}}, d.cb.phase2, n), d.cb.phase2(1, 1, n));
    }
}

TEST(XPhase2, AveragePowerIsP) {
    // Monte Carlo over unit-power symbols with fixed constants.
    const Draw d = draw(12);
    const auto c = compute_alignment_constants(d.h, d.cb.phase1);
    Rng rng(1);
    const double power = 10.0;
    const int trials = 40000;
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        const auto m = XMessageSet::from_vector(sample_complex_gaussian(rng, 8));
        const auto s = form_layer2(own_symbols(m, 2), c);
        acc += std::norm(x_phase2_scale(2, 5, d.cb.phase2, c, power) * x_phase2_transmit(2, s, d.cb.phase2, 5));
    }
    EXPECT_NEAR(acc / trials, power, 0.3);
}

TEST(XRetroCsit, ZeroMessagesDecodeToZero) {
    Draw d = draw(13);
    d.msgs = XMessageSet{};
    BlockContext ctx = context(d);
    const auto out = XRetroCsit::run_block(ctx);
    EXPECT_EQ(out.decoded.norm(), 0.0);
}

TEST(XRetroCsit, ExactDecodeAndCertificates1000) {
    double worst = 0.0, min_det = 1e300, worst_ratio = 0.0;
    int rank_failures = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Draw d = draw(seed);
        BlockContext ctx = context(d, 100.0);
        const auto out = XRetroCsit::run_block(ctx);
        worst = std::max(worst, (out.decoded - ctx.symbols).cwiseAbs().maxCoeff() / ctx.symbols.cwiseAbs().maxCoeff());
        for (int r : out.certificates.interference_ranks) rank_failures += r != 1;
        for (double a : out.certificates.alignment_ratios) worst_ratio = std::max(worst_ratio, a);
        min_det = std::min(min_det, out.certificates.det_product);
    }
    EXPECT_LE(worst, 1e-6);
    EXPECT_EQ(rank_failures, 0);
    EXPECT_LE(worst_ratio, 1e-8);
    EXPECT_GT(min_det, 0.0);
}

TEST(XRetroCsit, CsiReadsOnlyFromFirstThreeSlots) {
    Draw d = draw(14);
    BlockContext ctx = context(d);
    const auto out = XRetroCsit::run_block(ctx);
    const auto audit = audit_feedback_usage(out.log, kBlockSlots);
    EXPECT_EQ(audit.csi_slots, (std::set<int>{1, 2, 3}));
    EXPECT_DOUBLE_EQ(audit.csi_fraction(), 3.0 / 7.0);
    for (const auto& e : out.log.entries()) EXPECT_EQ(e.at_slot, 4);  // constants formed once, at slot 4
    EXPECT_TRUE(access_log_is_causal(out.log, XRetroCsit::feedback_model()));
}

TEST(XRetroCsit, DistributedEncodability) {
    // Recompute transmitter j's whole sequence from its own 4 symbols, the
    // shared codebook and slot 1-3 CSI only.
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Draw d = draw(seed + 300);
        BlockContext ctx = context(d, 3.0);
        const auto out = XRetroCsit::run_block(ctx);
        const XCodebook& cb = d.cb;
        for (int j = 1; j <= 2; ++j) {
            const XTxSymbols own = own_symbols(d.msgs, j);
            const auto early = [&](int k, int jj, int n) {
                if (n > 3) throw std::logic_error("future CSI");
                return d.h(k, jj, n);
            };
            const auto c = compute_alignment_constants(early, cb.phase1);
            const auto s = form_layer2(own, c);
            for (int n = 1; n <= 7; ++n) {
                const Complex x = n <= 3 ? std::sqrt(3.0) * x_phase1_transmit(own, cb.phase1, n)
                                         : x_phase2_scale(j, n, cb.phase2, c, 3.0) * x_phase2_transmit(j, s, cb.phase2, n);
                EXPECT_EQ(x, out.record.tx(j, n));
            }
        }
    }
}

TEST(XRetroCsit, FutureIndependence) {
    Draw d = draw(15);
    BlockContext ctx = context(d);
    const auto base = XRetroCsit::run_block(ctx);
    for (int n = 1; n <= kBlockSlots; ++n) {
        Rng rng(1000 + static_cast<std::uint64_t>(n));
        BlockContext p = ctx;
        p.channel = redraw_from_slot(ctx.channel, n, rng);
        const auto replay = XRetroCsit::run_block(p);
        for (int m = 1; m < n; ++m) EXPECT_EQ(replay.record.x.col(m - 1), base.record.x.col(m - 1)) << n << "," << m;
    }
    // Perturbing slots 4-7 changes nothing at all.
    Rng rng(2000);
    BlockContext p = ctx;
    p.channel = redraw_from_slot(ctx.channel, 4, rng);
    EXPECT_EQ(XRetroCsit::run_block(p).record.x, base.record.x);
}

TEST(XRetroCsit, DofByCounting) { EXPECT_EQ(XRetroCsit::kSymbols * 7, 8 * XRetroCsit::kSlots); }

}  // namespace
}  // namespace retroalign::xchan
