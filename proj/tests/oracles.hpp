#pragma once

// Independent reference computations used by the tests. None of these call
// into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

namespace oracle {

using Real = long double;
using Table = std::vector<std::vector<Real>>;

/// Solves (A'A) x = A'b in long double by Gaussian elimination with partial pivoting.
inline std::vector<Real> normal_equations(const Table& a, const std::vector<Real>& b) {
    const std::size_t n = a.size(), k = a[0].size();
    Table m(k, std::vector<Real>(k + 1, 0.0L));
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t i = 0; i < n; ++i) m[r][c] += a[i][r] * a[i][c];
        for (std::size_t i = 0; i < n; ++i) m[r][k] += a[i][r] * b[i];
    }
    for (std::size_t col = 0; col < k; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < k; ++r)
            if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
        std::swap(m[col], m[piv]);
        for (std::size_t r = 0; r < k; ++r) {
            if (r == col) continue;
            const Real f = m[r][col] / m[col][col];
            for (std::size_t c = col; c <= k; ++c) m[r][c] -= f * m[col][c];
        }
    }
    std::vector<Real> x(k);
    for (std::size_t r = 0; r < k; ++r) x[r] = m[r][k] / m[r][r];
    return x;
}

/// Regularized incomplete beta by tanh-sinh quadrature of the beta density.
inline double incomplete_beta(double x, double a, double b) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    boost::math::quadrature::tanh_sinh<Real> integrator;
    const Real la = a, lb = b;
    const Real log_beta = std::lgamma(la) + std::lgamma(lb) - std::lgamma(la + lb);
    auto density = [&](Real t, Real complement) {
        // complement = 1 - t, supplied accurately near the right endpoint
        if (t <= 0.0L || complement <= 0.0L) return 0.0L;
        return std::exp((la - 1.0L) * std::log(t) + (lb - 1.0L) * std::log(complement) - log_beta);
    };
    // Integrate the shorter tail to keep the quadrature well conditioned.
    const Real mode_split = la / (la + lb);
    if (static_cast<Real>(x) <= mode_split) {
        return static_cast<double>(integrator.integrate(
            [&](Real t) { return density(t, 1.0L - t); }, 0.0L, static_cast<Real>(x)));
    }
    const Real upper = integrator.integrate([&](Real t) { return density(t, 1.0L - t); }, static_cast<Real>(x), 1.0L);
    return static_cast<double>(1.0L - upper);
}

/// Standard normal CDF by quadrature of the density from 0.
inline double normal_cdf(double z) {
    boost::math::quadrature::tanh_sinh<Real> integrator;
    const Real half = integrator.integrate(
        [](Real t) { return std::exp(-0.5L * t * t) / std::sqrt(2.0L * 3.14159265358979323846264338327950288L); }, 0.0L,
        static_cast<Real>(std::fabs(z)));
    return static_cast<double>(z >= 0 ? 0.5L + half : 0.5L - half);
}

/// One-way ANOVA F from group sums of squares.
inline double one_way_f(const std::vector<double>& y, const std::vector<int>& group) {
    const int g = *std::max_element(group.begin(), group.end()) + 1;
    std::vector<Real> sum(g, 0.0L), count(g, 0.0L);
    Real grand = 0.0L;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sum[group[i]] += y[i];
        count[group[i]] += 1.0L;
        grand += y[i];
    }
    grand /= static_cast<Real>(y.size());
    Real ssb = 0.0L, ssw = 0.0L;
    for (int k = 0; k < g; ++k) ssb += count[k] * std::pow(sum[k] / count[k] - grand, 2);
    for (std::size_t i = 0; i < y.size(); ++i) ssw += std::pow(y[i] - sum[group[i]] / count[group[i]], 2);
    const Real dfb = g - 1, dfw = static_cast<Real>(y.size()) - g;
    return static_cast<double>((ssb / dfb) / (ssw / dfw));
}

/// BH adjusted p by definition: min over k >= rank(i) of m p_(k) / k, capped at 1.
inline std::vector<double> bh_bruteforce(const std::vector<double>& p, double pi0 = 1.0) {
    const std::size_t m = p.size();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        double best = 1.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (p[j] < p[i]) continue;
            // rank of p[j] among all: count of entries strictly smaller, plus ties placed before j
            std::size_t rank = 0;
            for (std::size_t k = 0; k < m; ++k)
                if (p[k] < p[j] || (p[k] == p[j] && k <= j)) ++rank;
            best = std::min(best, pi0 * static_cast<double>(m) * p[j] / static_cast<double>(rank));
        }
        out[i] = best;
    }
    return out;
}

} // namespace oracle
