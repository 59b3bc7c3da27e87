#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "glmperm/error.hpp"
#include "glmperm/parallel.hpp"
#include "glmperm/rng.hpp"

namespace glmperm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

/// Householder QR of a tall full-rank matrix, kept around so the same design
/// can be solved against many right-hand sides (permutation loops).
class LeastSquares {
public:
    static constexpr double rank_tolerance = 1e-10;

    explicit LeastSquares(const Matrix& a) : qr_(a) {
        require(a.rows() >= 1 && a.cols() >= 1, ErrorKind::InvalidInput, "empty least-squares system");
        if (a.rows() < a.cols())
            fail(ErrorKind::RankDeficient, "system has fewer rows (" + std::to_string(a.rows()) +
                                               ") than columns (" + std::to_string(a.cols()) + ")");
        require(a.allFinite(), ErrorKind::DomainError, "non-finite entry in least-squares matrix");
        const auto k = a.cols();
        const Matrix r = qr_.matrixQR().topRows(k).triangularView<Eigen::Upper>();
        const Vector sv = Eigen::JacobiSVD<Matrix>(r).singularValues();
        const double largest = sv(0);
        const double smallest = sv(k - 1);
        if (!(largest > 0.0) || smallest < rank_tolerance * largest)
            fail(ErrorKind::RankDeficient, "numerical rank below " + std::to_string(k) +
                                               " (condition estimate " + std::to_string(largest / smallest) + ")");
    }

    Eigen::Index rows() const { return qr_.rows(); }
    Eigen::Index cols() const { return qr_.cols(); }

    Matrix solve(const Matrix& b) const {
        require(b.rows() == rows(), ErrorKind::InvalidInput, "right-hand side row count mismatch");
        return qr_.solve(b);
    }

private:
    Eigen::HouseholderQR<Matrix> qr_;
};

inline Matrix solve_least_squares(const Matrix& a, const Matrix& b) {
    return LeastSquares(a).solve(b);
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition
// ---------------------------------------------------------------------------

struct SymEig {
    Vector values;  // descending
    Matrix vectors; // columns match values
};

inline SymEig sym_eig(const Matrix& s) {
    require(s.rows() == s.cols() && s.rows() >= 1, ErrorKind::InvalidInput, "sym_eig needs a square matrix");
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        fail(ErrorKind::NotSymmetric, "matrix is not symmetric within 1e-12");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
    require(solver.info() == Eigen::Success, ErrorKind::NonConvergence, "eigensolver did not converge");
    const auto k = s.rows();
    SymEig out{Vector(k), Matrix(k, k)};
    // Eigen returns ascending order.
    for (Eigen::Index j = 0; j < k; ++j) {
        out.values(j) = solver.eigenvalues()(k - 1 - j);
        out.vectors.col(j) = solver.eigenvectors().col(k - 1 - j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

namespace detail {

// Modified Lentz evaluation of the incomplete beta continued fraction.
inline double beta_continued_fraction(double x, double a, double b) {
    constexpr int max_iter = 10000;
    constexpr double eps = 1e-16;
    constexpr double tiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    fail(ErrorKind::NonConvergence, "incomplete beta continued fraction");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double reg_incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
        fail(ErrorKind::DomainError, "incomplete beta needs a > 0 and b > 0");
    if (!(x >= 0.0 && x <= 1.0)) fail(ErrorKind::DomainError, "incomplete beta needs 0 <= x <= 1");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                             b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return std::clamp(front * detail::beta_continued_fraction(x, a, b) / a, 0.0, 1.0);
    return std::clamp(1.0 - front * detail::beta_continued_fraction(1.0 - x, b, a) / b, 0.0, 1.0);
}

/// Inverse of I_x(a, b) in x, by bisection (monotone, 1e-15 in x).
inline double inverse_incomplete_beta(double p, double a, double b) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::DomainError, "probability outside [0,1]");
    if (p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (reg_incomplete_beta(mid, a, b) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Regularized lower incomplete gamma P(a, x).
inline double reg_lower_gamma(double a, double x) {
    require(a > 0.0 && x >= 0.0, ErrorKind::DomainError, "incomplete gamma needs a > 0, x >= 0");
    if (x == 0.0) return 0.0;
    const double log_front = -x + a * std::log(x) - std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int n = 0; n < 10000; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-16) return std::min(1.0, sum * std::exp(log_front));
        }
        fail(ErrorKind::NonConvergence, "incomplete gamma series");
    }
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) return std::max(0.0, 1.0 - std::exp(log_front) * h);
    }
    fail(ErrorKind::NonConvergence, "incomplete gamma continued fraction");
}

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Upper tail of F(d1, d2) at f.
inline double f_upper_tail(double f, double d1, double d2) {
    if (!(f > 0.0)) return 1.0;
    if (std::isinf(f)) return 0.0;
    return reg_incomplete_beta(d2 / (d2 + d1 * f), 0.5 * d2, 0.5 * d1);
}

inline double f_quantile(double p, double d1, double d2) {
    const double x = inverse_incomplete_beta(p, 0.5 * d1, 0.5 * d2);
    if (x >= 1.0) return std::numeric_limits<double>::infinity();
    return d2 * x / (d1 * (1.0 - x));
}

/// Two-sided p-value of Student's t with df degrees of freedom.
inline double t_two_sided(double t, double df) {
    if (std::isnan(t)) return 1.0;
    if (std::isinf(t)) return 0.0;
    return reg_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5);
}

inline double chi2_quantile(double p, double df) {
    require(p >= 0.0 && p < 1.0 && df > 0.0, ErrorKind::DomainError, "chi-squared quantile arguments");
    if (p == 0.0) return 0.0;
    double hi = std::max(1.0, df);
    while (reg_lower_gamma(0.5 * df, 0.5 * hi) < p) hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++i) {
        const double mid = 0.5 * (lo + hi);
        if (reg_lower_gamma(0.5 * df, 0.5 * mid) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace glmperm
