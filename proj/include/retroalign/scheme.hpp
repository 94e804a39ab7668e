// Shared per-block inputs and outputs for every transmission scheme, and the
// compile-time contract the Monte Carlo harness relies on.

#pragma once

#include "retroalign/channel.hpp"
#include "retroalign/numerics.hpp"

#include <concepts>
#include <cstdint>
#include <string_view>
#include <vector>

namespace retroalign {

/// Everything one codeblock needs. Symbols are in the scheme's canonical order
/// and are assumed unit-variance; `noise` is K x T and already scaled.
struct BlockContext {
    ChannelTensor channel;
    CVector symbols;
    CMatrix noise;
    double power = 1.0;           ///< average transmit power per transmitter per slot
    double noise_variance = 0.0;  ///< nominal receiver noise variance
    std::uint64_t codebook_seed = 0;
    ToleranceSpec tol{};
};

/// Numerical evidence for the rank conditions a scheme relies on.
struct Certificates {
    /// Numerical rank of the interference seen by each receiver.
    std::vector<int> interference_ranks;
    /// sigma_{r+1} / sigma_1 of each receiver's interference matrix, r the
    /// designed interference dimension. Near machine epsilon when aligned.
    std::vector<double> alignment_ratios;
    /// sigma_min / sigma_max of each receiver's [desired | interference] matrix.
    std::vector<double> desired_rcond;
    /// Product of the per-receiver desired-signal determinants (0 if unused).
    double det_product = 0.0;
};

struct BlockOutcome {
    SignalRecord record;
    AccessLog log;
    CVector decoded;  ///< same order as BlockContext::symbols
    Certificates certificates;
};

template <class S>
concept Scheme = requires(const BlockContext& ctx) {
    { S::kName } -> std::convertible_to<std::string_view>;
    { S::kNumRx } -> std::convertible_to<int>;
    { S::kNumTx } -> std::convertible_to<int>;
    { S::kSlots } -> std::convertible_to<int>;
    { S::kSymbols } -> std::convertible_to<int>;
    { S::kInterferenceRank } -> std::convertible_to<int>;
    { S::feedback_model() } -> std::same_as<FeedbackModel>;
    { S::run_block(ctx) } -> std::same_as<BlockOutcome>;
};

inline CMatrix zero_noise(int num_rx, int num_slots) { return CMatrix::Zero(num_rx, num_slots); }

}  // namespace retroalign
