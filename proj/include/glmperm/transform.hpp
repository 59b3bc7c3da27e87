#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "glmperm/glm.hpp"

namespace glmperm {

using BoolVector = Eigen::Array<bool, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Box-Cox
// ---------------------------------------------------------------------------

struct BoxCoxFit {
    double lambda = 1.0;
    double log_likelihood = 0.0;
    double shift_applied = 0.0;
};

inline Vector boxcox_apply(const Vector& x, double lambda, double shift = 0.0) {
    Vector y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x(i) + shift;
        if (!(v > 0.0)) fail(ErrorKind::NonPositiveInput, "Box-Cox input " + std::to_string(x(i)) + " is not positive");
        y(i) = lambda == 0.0 ? std::log(v) : std::expm1(lambda * std::log(v)) / lambda;
    }
    return y;
}

namespace detail {

/// Profile log-likelihood from precomputed logs: -(n/2) ln var(y) + (lambda-1) sum ln x.
inline double boxcox_profile(const Vector& logs, double sum_log, double lambda) {
    const auto n = static_cast<double>(logs.size());
    double mean = 0.0, m2 = 0.0;
    for (Eigen::Index i = 0; i < logs.size(); ++i) {
        const double y = lambda == 0.0 ? logs(i) : std::expm1(lambda * logs(i)) / lambda;
        const double delta = y - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (y - mean);
    }
    const double var = m2 / n;
    if (!(var > 0.0)) return -std::numeric_limits<double>::infinity();
    return -0.5 * n * std::log(var) + (lambda - 1.0) * sum_log;
}

} // namespace detail

struct BoxCoxOptions {
    bool allow_shift = false; // shift = 1 - min(x) when min(x) <= 0
    double grid_min = -3.0;
    double grid_max = 3.0;
    double grid_step = 0.01;
    double refine_tol = 1e-4;
};

/// Maximum profile-likelihood lambda: grid search, then golden-section
/// refinement inside the bracketing grid cells.
inline BoxCoxFit boxcox_estimate(const Vector& x, const BoxCoxOptions& opt = {}) {
    if (x.size() < 10) fail(ErrorKind::TooFewObservations, "Box-Cox estimation needs n >= 10, got " + std::to_string(x.size()));
    BoxCoxFit fit;
    const double min_x = x.minCoeff();
    if (!(min_x > 0.0)) {
        if (!opt.allow_shift) fail(ErrorKind::NonPositiveInput, "Box-Cox needs positive data (min " + std::to_string(min_x) + ")");
        fit.shift_applied = 1.0 - min_x;
    }
    const Vector logs = (x.array() + fit.shift_applied).log().matrix();
    const double sum_log = logs.sum();
    auto ll = [&](double lambda) { return detail::boxcox_profile(logs, sum_log, lambda); };

    const int steps = static_cast<int>(std::lround((opt.grid_max - opt.grid_min) / opt.grid_step));
    double best_lambda = opt.grid_min, best_ll = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= steps; ++k) {
        const double lambda = opt.grid_min + k * opt.grid_step;
        const double value = ll(lambda);
        if (value > best_ll) {
            best_ll = value;
            best_lambda = lambda;
        }
    }
    double lo = std::max(opt.grid_min, best_lambda - opt.grid_step);
    double hi = std::min(opt.grid_max, best_lambda + opt.grid_step);
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - ratio * (hi - lo), d = lo + ratio * (hi - lo);
    double fc = ll(c), fd = ll(d);
    while (hi - lo > opt.refine_tol) {
        if (fc > fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = ll(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = ll(d);
        }
    }
    const double refined = 0.5 * (lo + hi);
    const double refined_ll = ll(refined);
    if (refined_ll >= best_ll) {
        fit.lambda = refined;
        fit.log_likelihood = refined_ll;
    } else {
        fit.lambda = best_lambda;
        fit.log_likelihood = best_ll;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Ranks
// ---------------------------------------------------------------------------

struct RankResult {
    Vector ranks;            // masked positions are NaN
    bool degenerate = false; // every observed value tied
};

/// Midranks 1..n_obs over the observed entries.
inline RankResult rank_transform(const Vector& x, const std::optional<BoolVector>& missing = std::nullopt) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!missing || !(*missing)(i)) idx.push_back(i);
    if (idx.size() < 2) fail(ErrorKind::TooFewObservations, "rank transform needs at least 2 observed values");
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x(a) < x(b); });
    RankResult out{Vector::Constant(x.size(), std::numeric_limits<double>::quiet_NaN())};
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x(idx[j + 1]) == x(idx[i])) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) out.ranks(idx[k]) = midrank;
        i = j + 1;
    }
    out.degenerate = x(idx.front()) == x(idx.back());
    return out;
}

// ---------------------------------------------------------------------------
// Autoscaling
// ---------------------------------------------------------------------------

struct Autoscaled {
    Matrix scaled;
    Vector mean;
    Vector sd;
};

inline Autoscaled autoscale(const Matrix& x) {
    require(x.rows() >= 2, ErrorKind::TooFewObservations, "autoscale needs at least 2 rows");
    Autoscaled out;
    out.mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - out.mean.transpose();
    out.sd = (centered.colwise().squaredNorm() / static_cast<double>(x.rows() - 1)).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (!(out.sd(j) > 1e-300) || out.sd(j) <= 1e-14 * std::max(1.0, std::fabs(out.mean(j))))
            fail(ErrorKind::ZeroVariance, "column " + std::to_string(j + 1) + " has zero variance");
    out.scaled = centered.array().rowwise() / out.sd.transpose().array();
    return out;
}

inline Autoscaled autoscale(const ResponseMatrix& x) {
    require(!x.has_missing(), ErrorKind::MissingDataPresent, "autoscale expects complete data");
    return autoscale(x.values);
}

inline ResponseMatrix append_rank(const ResponseMatrix& x) {
    const Eigen::Index n = x.rows(), m = x.cols();
    ResponseMatrix out(Matrix(n, 2 * m), Mask(n, 2 * m), x.names);
    out.values.leftCols(m) = x.values;
    out.missing.leftCols(m) = x.missing;
    out.missing.rightCols(m) = x.missing;
    for (Eigen::Index j = 0; j < m; ++j) {
        const BoolVector col_mask = x.missing.col(j);
        Vector r = rank_transform(x.values.col(j), col_mask).ranks;
        for (Eigen::Index i = 0; i < n; ++i)
            if (col_mask(i)) r(i) = 0.0;
        out.values.col(m + j) = r;
        out.names.push_back(x.names.at(static_cast<std::size_t>(j)) + "_rank");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole-matrix transforms (observed entries only)
// ---------------------------------------------------------------------------

enum class TransformKind { None, BoxCox, Rank, RawPlusRank };

inline std::string to_string(TransformKind t) {
    switch (t) {
    case TransformKind::None: return "none";
    case TransformKind::BoxCox: return "boxcox";
    case TransformKind::Rank: return "rank";
    case TransformKind::RawPlusRank: return "raw+rank";
    }
    return "?";
}

inline TransformKind parse_transform(const std::string& s) {
    if (s == "none" || s == "raw") return TransformKind::None;
    if (s == "boxcox") return TransformKind::BoxCox;
    if (s == "rank") return TransformKind::Rank;
    if (s == "raw+rank") return TransformKind::RawPlusRank;
    fail(ErrorKind::InvalidInput, "unknown transform '" + s + "'");
}

struct TransformResult {
    ResponseMatrix data;
    std::vector<BoxCoxFit> boxcox; // per response, BoxCox only
    std::vector<std::string> warnings;
};

/// Applies the transform column by column on observed entries; masked
/// entries stay masked (their stored values are zeroed).
inline TransformResult apply_transform(const ResponseMatrix& x, TransformKind kind, const BoxCoxOptions& bc = {}) {
    TransformResult out{x, {}, {}};
    if (kind == TransformKind::None) return out;
    if (kind == TransformKind::RawPlusRank) {
        out.data = append_rank(x);
        return out;
    }
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (!x.missing(i, j)) rows.push_back(i);
        Vector obs(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) obs(static_cast<Eigen::Index>(k)) = x.values(rows[k], j);
        Vector y;
        const auto& name = x.names.at(static_cast<std::size_t>(j));
        if (kind == TransformKind::BoxCox) {
            const BoxCoxFit fit = boxcox_estimate(obs, bc);
            if (fit.shift_applied != 0.0)
                out.warnings.push_back("response '" + name + "': Box-Cox shift " + std::to_string(fit.shift_applied) + " applied");
            y = boxcox_apply(obs, fit.lambda, fit.shift_applied);
            out.boxcox.push_back(fit);
        } else {
            const RankResult r = rank_transform(obs);
            if (r.degenerate) out.warnings.push_back("response '" + name + "': all observed values tied");
            y = r.ranks;
        }
        for (Eigen::Index i = 0; i < x.rows(); ++i) out.data.values(i, j) = 0.0;
        for (std::size_t k = 0; k < rows.size(); ++k) out.data.values(rows[k], j) = y(static_cast<Eigen::Index>(k));
    }
    return out;
}

} // namespace glmperm
