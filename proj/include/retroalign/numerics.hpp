// Complex dense linear algebra shared by the schemes, plus seeded Gaussian
// sampling.
//
// All routines are pure functions of their arguments. Degenerate inputs are
// reported with DegenerateDraw so the Monte Carlo harness can discard the
// channel realization; they are never patched up here.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace retroalign {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

struct ToleranceSpec {
    /// Singular values at or below rank_rel_tol * sigma_max count as zero.
    double rank_rel_tol = 1e-8;
    /// Relative residual accepted for null vectors and linear solves.
    double residual_rel_tol = 1e-8;

    [[nodiscard]] bool valid() const noexcept {
        return rank_rel_tol > 0.0 && rank_rel_tol < 1.0 && residual_rel_tol > 0.0 &&
               residual_rel_tol < 1.0;
    }
};

/// Reasons a random draw is rejected. All of them are probability-zero events
/// for continuous distributions.
enum class DegenerateReason {
    RankDeficient,
    Singular,
    DegenerateNormalization,
    DegenerateCoefficients,
};

inline const char* to_string(DegenerateReason r) noexcept {
    switch (r) {
        case DegenerateReason::RankDeficient: return "RankDeficient";
        case DegenerateReason::Singular: return "Singular";
        case DegenerateReason::DegenerateNormalization: return "DegenerateNormalization";
        case DegenerateReason::DegenerateCoefficients: return "DegenerateCoefficients";
    }
    return "Unknown";
}

/// Recoverable: the caller discards the trial and redraws.
class DegenerateDraw : public std::runtime_error {
public:
    DegenerateDraw(DegenerateReason reason, const std::string& what)
        : std::runtime_error(std::string(to_string(reason)) + ": " + what), reason_(reason) {}

    [[nodiscard]] DegenerateReason reason() const noexcept { return reason_; }

private:
    DegenerateReason reason_;
};

/// Fatal: a structural property that must hold for every draw did not.
class SchemeFailure : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

inline bool all_finite(const CMatrix& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const Complex z = a.data()[i];
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    }
    return true;
}

inline void require_finite(const CMatrix& a, const char* who) {
    if (a.rows() < 1 || a.cols() < 1) throw std::invalid_argument(std::string(who) + ": empty matrix");
    if (!all_finite(a)) throw std::invalid_argument(std::string(who) + ": non-finite entry");
}

inline std::size_t count_above(const RVector& sv, double rel_tol) {
    if (sv.size() == 0 || sv(0) <= 0.0) return 0;
    const double cutoff = rel_tol * sv(0);
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++r;
    return r;
}

// Rotate v so that its first entry with magnitude above `floor` is real and
// positive. Makes SVD output reproducible up to the inherent phase freedom.
inline void canonicalize_phase(CVector& v, double floor) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double mag = std::abs(v(i));
        if (mag > floor) {
            v *= std::conj(v(i)) / mag;
            v(i) = Complex(mag, 0.0);
            return;
        }
    }
}

}  // namespace detail

/// Singular values in decreasing order.
inline RVector singular_values(const CMatrix& a) {
    detail::require_finite(a, "singular_values");
    return Eigen::JacobiSVD<CMatrix>(a).singularValues();
}

inline std::size_t numerical_rank(const CMatrix& a, const ToleranceSpec& tol = {}) {
    return detail::count_above(singular_values(a), tol.rank_rel_tol);
}

/// sigma_min / sigma_max; 0 for a zero matrix.
inline double inverse_condition(const CMatrix& a) {
    const RVector sv = singular_values(a);
    if (sv(0) <= 0.0) return 0.0;
    return sv(sv.size() - 1) / sv(0);
}

/// Unit-norm right singular vector of the smallest singular value of a wide
/// matrix. Throws DegenerateDraw(RankDeficient) unless A has full row rank.
inline CVector null_vector(const CMatrix& a, const ToleranceSpec& tol = {}) {
    detail::require_finite(a, "null_vector");
    if (a.rows() >= a.cols()) throw std::invalid_argument("null_vector: need rows < cols");

    Eigen::JacobiSVD<CMatrix> svd(a, Eigen::ComputeFullV);
    const std::size_t rank = detail::count_above(svd.singularValues(), tol.rank_rel_tol);
    if (rank < static_cast<std::size_t>(a.rows()))
        throw DegenerateDraw(DegenerateReason::RankDeficient,
                             "null space of a " + std::to_string(a.rows()) + "x" +
                                 std::to_string(a.cols()) + " matrix has rank " +
                                 std::to_string(rank));

    CVector v = svd.matrixV().col(a.cols() - 1);
    v.normalize();
    detail::canonicalize_phase(v, tol.rank_rel_tol);

    const double residual = (a * v).norm();
    if (residual > tol.residual_rel_tol * a.norm())
        throw DegenerateDraw(DegenerateReason::RankDeficient,
                             "null vector residual " + std::to_string(residual));
    return v;
}

/// Orthonormal basis N of the left null space: N^H A = 0. Has zero columns
/// when A has full row rank.
inline CMatrix left_null_basis(const CMatrix& a, const ToleranceSpec& tol = {}) {
    detail::require_finite(a, "left_null_basis");
    Eigen::JacobiSVD<CMatrix> svd(a, Eigen::ComputeFullU);
    const auto rank = static_cast<Eigen::Index>(
        detail::count_above(svd.singularValues(), tol.rank_rel_tol));
    return svd.matrixU().rightCols(a.rows() - rank);
}

/// Orthonormal basis of the column space (leading left singular vectors).
inline CMatrix column_space_basis(const CMatrix& a, const ToleranceSpec& tol = {}) {
    detail::require_finite(a, "column_space_basis");
    Eigen::JacobiSVD<CMatrix> svd(a, Eigen::ComputeFullU);
    const auto rank = static_cast<Eigen::Index>(
        detail::count_above(svd.singularValues(), tol.rank_rel_tol));
    return svd.matrixU().leftCols(rank);
}

/// Solves A x = b for square A. Throws DegenerateDraw(Singular) when the
/// condition number exceeds 1 / rank_rel_tol.
inline CVector solve_square(const CMatrix& a, const CVector& b, const ToleranceSpec& tol = {}) {
    detail::require_finite(a, "solve_square");
    if (a.rows() != a.cols() || b.size() != a.rows())
        throw std::invalid_argument("solve_square: shape mismatch");

    const double rcond = inverse_condition(a);
    if (rcond <= tol.rank_rel_tol)
        throw DegenerateDraw(DegenerateReason::Singular,
                             "condition number " + std::to_string(1.0 / rcond));
    return a.fullPivLu().solve(b);
}

// ---------------------------------------------------------------------------
// Random sampling

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Pure function of its arguments; order of the salts matters.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept {
    return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0xD6E8FEB86659FD93ULL));
}

/// Deterministic generator state for one trial. Never shared across trials.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Circularly-symmetric complex Gaussian with E|z|^2 = 1.
    Complex complex_gaussian() {
        return {normal_(engine_) * kHalfSqrt, normal_(engine_) * kHalfSqrt};
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

private:
    static constexpr double kHalfSqrt = 0.70710678118654752440;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline CVector sample_complex_gaussian(Rng& rng, std::size_t count) {
    CVector v(static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.complex_gaussian();
    return v;
}

inline CMatrix sample_complex_gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    CMatrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.complex_gaussian();
    return m;
}

}  // namespace retroalign
