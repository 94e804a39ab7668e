// Fading channel realizations and the delayed-feedback views transmitters
// see, with an access audit that enforces causality.
//
// Indices in this header are 1-based to match the usual (receiver k,
// transmitter j, slot n) labelling: k in [1, K], j in [1, J], n in [1, T].

#pragma once

#include "retroalign/numerics.hpp"

#include <algorithm>
#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace retroalign {

/// A transmitter tried to read something its feedback model does not expose.
/// This is a construction bug in a scheme, never a statistical event.
class CausalityViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct MagnitudeBounds {
    double min = 1e-3;
    double max = 1e3;
};

/// h(k, j, n): coefficient from transmitter j to receiver k at slot n.
class ChannelTensor {
public:
    ChannelTensor() = default;
    ChannelTensor(int num_rx, int num_tx, int num_slots)
        : num_rx_(num_rx), num_tx_(num_tx), num_slots_(num_slots),
          h_(static_cast<std::size_t>(num_rx) * num_tx * num_slots) {
        if (num_rx < 1 || num_tx < 1 || num_slots < 1)
            throw std::invalid_argument("ChannelTensor: dimensions must be positive");
    }

    [[nodiscard]] int num_rx() const noexcept { return num_rx_; }
    [[nodiscard]] int num_tx() const noexcept { return num_tx_; }
    [[nodiscard]] int num_slots() const noexcept { return num_slots_; }
    [[nodiscard]] std::size_t size() const noexcept { return h_.size(); }

    Complex operator()(int k, int j, int n) const { return h_[index(k, j, n)]; }
    Complex& operator()(int k, int j, int n) { return h_[index(k, j, n)]; }

    /// Rejection-sampling statistics from generate_channel.
    std::size_t rejected_draws = 0;

private:
    [[nodiscard]] std::size_t index(int k, int j, int n) const {
        if (k < 1 || k > num_rx_ || j < 1 || j > num_tx_ || n < 1 || n > num_slots_)
            throw std::out_of_range("ChannelTensor index (" + std::to_string(k) + "," +
                                    std::to_string(j) + "," + std::to_string(n) + ")");
        return (static_cast<std::size_t>(n - 1) * num_rx_ + (k - 1)) * num_tx_ + (j - 1);
    }

    int num_rx_ = 0;
    int num_tx_ = 0;
    int num_slots_ = 0;
    std::vector<Complex> h_;
};

namespace detail {

inline Complex bounded_draw(Rng& rng, const MagnitudeBounds& bounds, std::size_t& rejected) {
    constexpr int kMaxRejections = 1000;
    for (int attempt = 0; attempt <= kMaxRejections; ++attempt) {
        const Complex z = rng.complex_gaussian();
        const double mag = std::abs(z);
        if (mag >= bounds.min && mag <= bounds.max) return z;
        ++rejected;
    }
    throw std::runtime_error("generate_channel: 1000 consecutive rejections; bounds [" +
                             std::to_string(bounds.min) + ", " + std::to_string(bounds.max) +
                             "] exclude almost all of CN(0,1)");
}

}  // namespace detail

/// i.i.d. CN(0,1) coefficients conditioned on min <= |h| <= max. Slot-major
/// draw order, so slot n's coefficients depend only on the seed and n.
inline ChannelTensor generate_channel(int num_rx, int num_tx, int num_slots, Rng& rng,
                                      const MagnitudeBounds& bounds = {}) {
    if (!(bounds.min > 0.0 && bounds.min < bounds.max && std::isfinite(bounds.max)))
        throw std::invalid_argument("generate_channel: need 0 < min < max < inf");
    ChannelTensor h(num_rx, num_tx, num_slots);
    for (int n = 1; n <= num_slots; ++n)
        for (int k = 1; k <= num_rx; ++k)
            for (int j = 1; j <= num_tx; ++j) h(k, j, n) = detail::bounded_draw(rng, bounds, h.rejected_draws);
    return h;
}

/// Copy of h with every coefficient at slot >= from_slot redrawn.
inline ChannelTensor redraw_from_slot(const ChannelTensor& h, int from_slot, Rng& rng,
                                      const MagnitudeBounds& bounds = {}) {
    ChannelTensor out = h;
    for (int n = std::max(from_slot, 1); n <= h.num_slots(); ++n)
        for (int k = 1; k <= h.num_rx(); ++k)
            for (int j = 1; j <= h.num_tx(); ++j) out(k, j, n) = detail::bounded_draw(rng, bounds, out.rejected_draws);
    return out;
}

// ---------------------------------------------------------------------------
// Feedback models

enum class FeedbackKind { None, DelayedCSIT, DelayedOutput, DelayedShannon };

inline const char* to_string(FeedbackKind k) noexcept {
    switch (k) {
        case FeedbackKind::None: return "none";
        case FeedbackKind::DelayedCSIT: return "delayed_csit";
        case FeedbackKind::DelayedOutput: return "delayed_output";
        case FeedbackKind::DelayedShannon: return "delayed_shannon";
    }
    return "unknown";
}

struct FeedbackModel {
    FeedbackKind kind = FeedbackKind::None;
    /// Information visible at slot n covers slots <= n - delay_slots.
    int delay_slots = 1;
    /// output_association[k-1] lists the transmitters that receive Y^[k].
    std::vector<std::vector<int>> output_association;

    [[nodiscard]] bool exposes_csi() const noexcept {
        return kind == FeedbackKind::DelayedCSIT || kind == FeedbackKind::DelayedShannon;
    }
    [[nodiscard]] bool exposes_outputs() const noexcept {
        return kind == FeedbackKind::DelayedOutput || kind == FeedbackKind::DelayedShannon;
    }
    [[nodiscard]] bool output_reaches(int rx, int tx) const {
        if (!exposes_outputs() || rx < 1 || rx > static_cast<int>(output_association.size()))
            return false;
        const auto& txs = output_association[static_cast<std::size_t>(rx - 1)];
        return std::find(txs.begin(), txs.end(), tx) != txs.end();
    }

    static FeedbackModel none() { return {}; }
    static FeedbackModel delayed_csit(int delay = 1) {
        return {FeedbackKind::DelayedCSIT, delay, {}};
    }
    /// Every receiver's output reaches every transmitter.
    static FeedbackModel delayed_output_full(int num_rx, int num_tx, int delay = 1) {
        std::vector<int> all(static_cast<std::size_t>(num_tx));
        for (int j = 0; j < num_tx; ++j) all[static_cast<std::size_t>(j)] = j + 1;
        return {FeedbackKind::DelayedOutput, delay,
                std::vector<std::vector<int>>(static_cast<std::size_t>(num_rx), all)};
    }
    /// Receiver k feeds back to transmitter k only.
    static FeedbackModel delayed_output_own(int num_users, int delay = 1) {
        FeedbackModel m{FeedbackKind::DelayedOutput, delay, {}};
        for (int k = 1; k <= num_users; ++k) m.output_association.push_back({k});
        return m;
    }
    static FeedbackModel delayed_shannon_full(int num_rx, int num_tx, int delay = 1) {
        auto m = delayed_output_full(num_rx, num_tx, delay);
        m.kind = FeedbackKind::DelayedShannon;
        return m;
    }
};

// ---------------------------------------------------------------------------
// Access audit

enum class AccessItem { ChannelState, Output };

struct AccessEntry {
    int tx;         ///< reading transmitter
    int at_slot;    ///< slot whose transmission the read serves
    AccessItem item;
    int rx;         ///< receiver index of the coefficient or output
    int item_tx;    ///< transmitter index of the coefficient (0 for outputs)
    int item_slot;  ///< slot the item refers to

    friend bool operator==(const AccessEntry&, const AccessEntry&) = default;
};

class AccessLog {
public:
    void record(const AccessEntry& e) { entries_.push_back(e); }
    [[nodiscard]] const std::vector<AccessEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    void clear() noexcept { entries_.clear(); }

private:
    std::vector<AccessEntry> entries_;
};

/// Everything transmitter j may know when forming its slot-n transmission.
/// Reads outside the model's window throw CausalityViolation; permitted reads
/// are appended to the access log.
class TxInformationView {
public:
    TxInformationView(int tx, int slot, const ChannelTensor& h, const CMatrix& outputs,
                      const FeedbackModel& model, AccessLog& log)
        : tx_(tx), slot_(slot), h_(&h), outputs_(&outputs), model_(&model), log_(&log) {}

    [[nodiscard]] int transmitter() const noexcept { return tx_; }
    [[nodiscard]] int slot() const noexcept { return slot_; }
    /// Most recent slot whose feedback has arrived (0 when none).
    [[nodiscard]] int latest_visible_slot() const noexcept {
        return std::max(0, slot_ - model_->delay_slots);
    }

    [[nodiscard]] bool can_read_channel(int item_slot) const noexcept {
        return model_->exposes_csi() && item_slot >= 1 && item_slot <= latest_visible_slot();
    }
    [[nodiscard]] bool can_read_output(int rx, int item_slot) const {
        return model_->output_reaches(rx, tx_) && item_slot >= 1 &&
               item_slot <= latest_visible_slot();
    }

    Complex channel(int rx, int tx, int item_slot) const {
        if (!can_read_channel(item_slot))
            throw CausalityViolation("transmitter " + std::to_string(tx_) + " at slot " +
                                     std::to_string(slot_) + " read h(" + std::to_string(rx) +
                                     "," + std::to_string(tx) + "," + std::to_string(item_slot) +
                                     ") under " + to_string(model_->kind));
        log_->record({tx_, slot_, AccessItem::ChannelState, rx, tx, item_slot});
        return (*h_)(rx, tx, item_slot);
    }

    Complex output(int rx, int item_slot) const {
        if (!can_read_output(rx, item_slot))
            throw CausalityViolation("transmitter " + std::to_string(tx_) + " at slot " +
                                     std::to_string(slot_) + " read Y[" + std::to_string(rx) +
                                     "](" + std::to_string(item_slot) + ") under " +
                                     to_string(model_->kind));
        log_->record({tx_, slot_, AccessItem::Output, rx, 0, item_slot});
        return (*outputs_)(rx - 1, item_slot - 1);
    }

private:
    int tx_;
    int slot_;
    const ChannelTensor* h_;
    const CMatrix* outputs_;
    const FeedbackModel* model_;
    AccessLog* log_;
};

/// `outputs` is the K x T matrix of noisy outputs observed so far; entries of
/// slots that have not happened yet are never reachable through the view.
inline TxInformationView make_tx_view(int tx, int slot, const ChannelTensor& h,
                                      const CMatrix& outputs, const FeedbackModel& model,
                                      AccessLog& log) {
    if (slot < 1) throw std::invalid_argument("make_tx_view: slot must be >= 1");
    if (model.delay_slots < 1) throw std::invalid_argument("make_tx_view: delay must be >= 1");
    return {tx, slot, h, outputs, model, log};
}

struct FeedbackAudit {
    std::set<int> csi_slots;                 ///< slots whose CSI any transmitter read
    std::set<std::pair<int, int>> output_links;  ///< (receiver, transmitter) pairs used
    int num_slots = 0;

    [[nodiscard]] double csi_fraction() const {
        return num_slots > 0 ? static_cast<double>(csi_slots.size()) / num_slots : 0.0;
    }
};

inline FeedbackAudit audit_feedback_usage(const AccessLog& log, int num_slots) {
    FeedbackAudit a;
    a.num_slots = num_slots;
    for (const auto& e : log.entries()) {
        if (e.item == AccessItem::ChannelState)
            a.csi_slots.insert(e.item_slot);
        else
            a.output_links.emplace(e.rx, e.tx);
    }
    return a;
}

/// True iff every entry respects the delay window and association of `model`.
inline bool access_log_is_causal(const AccessLog& log, const FeedbackModel& model) {
    return std::all_of(log.entries().begin(), log.entries().end(), [&](const AccessEntry& e) {
        if (e.item_slot < 1 || e.item_slot > e.at_slot - model.delay_slots) return false;
        if (e.item == AccessItem::ChannelState) return model.exposes_csi();
        return model.output_reaches(e.rx, e.tx);
    });
}

// ---------------------------------------------------------------------------
// Physical channel

struct SignalRecord {
    CMatrix x;        ///< J x T transmitted scalars
    CMatrix y_clean;  ///< K x T noiseless outputs
    CMatrix y_noisy;  ///< K x T outputs with additive noise
    double noise_variance = 0.0;

    [[nodiscard]] Complex tx(int j, int n) const { return x(j - 1, n - 1); }
    [[nodiscard]] Complex clean(int k, int n) const { return y_clean(k - 1, n - 1); }
    [[nodiscard]] Complex noisy(int k, int n) const { return y_noisy(k - 1, n - 1); }
};

struct ReceivedSlot {
    CVector clean;
    CVector noisy;
};

/// y_clean(k) = sum_j h(k, j, n) x(j); y_noisy = y_clean + noise.
inline ReceivedSlot apply_channel(const CVector& x, const ChannelTensor& h, int n,
                                  const CVector& noise) {
    if (x.size() != h.num_tx() || noise.size() != h.num_rx())
        throw std::invalid_argument("apply_channel: shape mismatch");
    ReceivedSlot r{CVector::Zero(h.num_rx()), CVector::Zero(h.num_rx())};
    for (int k = 1; k <= h.num_rx(); ++k) {
        Complex acc{0.0, 0.0};
        for (int j = 1; j <= h.num_tx(); ++j) acc += h(k, j, n) * x(j - 1);
        r.clean(k - 1) = acc;
        r.noisy(k - 1) = acc + noise(k - 1);
    }
    return r;
}

inline ReceivedSlot apply_channel(const CVector& x, const ChannelTensor& h, int n,
                                  double noise_variance, Rng& rng) {
    CVector z = sample_complex_gaussian(rng, static_cast<std::size_t>(h.num_rx()));
    z *= std::sqrt(noise_variance);
    return apply_channel(x, h, n, z);
}

/// Drives one codeblock slot by slot. `step(j, view)` returns transmitter j's
/// scalar for the view's slot; `noise` is the K x T additive noise (already
/// scaled). Transmitters see only what `model` exposes through their view.
template <class Step>
SignalRecord run_block(const ChannelTensor& h, const FeedbackModel& model, const CMatrix& noise,
                       AccessLog& log, Step&& step, double noise_variance = 0.0) {
    const int K = h.num_rx(), J = h.num_tx(), T = h.num_slots();
    if (noise.rows() != K || noise.cols() != T)
        throw std::invalid_argument("run_block: noise must be K x T");

    SignalRecord rec{CMatrix::Zero(J, T), CMatrix::Zero(K, T), CMatrix::Zero(K, T), noise_variance};
    for (int n = 1; n <= T; ++n) {
        CVector xn(J);
        for (int j = 1; j <= J; ++j) {
            const TxInformationView view = make_tx_view(j, n, h, rec.y_noisy, model, log);
            xn(j - 1) = step(j, view);
        }
        const ReceivedSlot r = apply_channel(xn, h, n, CVector(noise.col(n - 1)));
        rec.x.col(n - 1) = xn;
        rec.y_clean.col(n - 1) = r.clean;
        rec.y_noisy.col(n - 1) = r.noisy;
    }
    return rec;
}

}  // namespace retroalign
