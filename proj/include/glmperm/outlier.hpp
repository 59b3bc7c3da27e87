#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "glmperm/transform.hpp"

namespace glmperm {

struct PcaModel {
    int n_components = 0;
    Matrix loadings;        // M x k, orthonormal columns
    Vector score_variances; // k, descending
    Vector column_means;    // M
    Vector column_sds;      // M
    Vector eigenvalues;     // all M, descending
    Eigen::Index n_train = 0;

    double explained_fraction() const {
        const double total = eigenvalues.sum();
        return total > 0.0 ? score_variances.sum() / total : 1.0;
    }
};

/// Either a fixed number of components or the smallest k reaching a
/// cumulative explained-variance fraction.
struct ComponentChoice {
    std::variant<int, double> value = 0.70;

    static ComponentChoice count(int k) { return {k}; }
    static ComponentChoice fraction(double f) { return {f}; }
};

/// PCA on autoscaled columns (covariance with the n-1 denominator).
inline PcaModel fit_pca(const Matrix& x, ComponentChoice choice = {}) {
    const Autoscaled a = autoscale(x);
    const Eigen::Index n = x.rows(), m = x.cols();
    const Matrix cov = (a.scaled.transpose() * a.scaled) / static_cast<double>(n - 1);
    const SymEig eig = sym_eig(0.5 * (cov + cov.transpose()));

    int k;
    if (const int* fixed = std::get_if<int>(&choice.value)) {
        k = *fixed;
    } else {
        const double target = std::get<double>(choice.value);
        require(target > 0.0 && target <= 1.0, ErrorKind::InvalidInput, "variance fraction must be in (0, 1]");
        const double total = eig.values.sum();
        double cumulative = 0.0;
        k = 0;
        while (k < m && cumulative < target * total * (1.0 - 1e-12)) cumulative += eig.values(k++);
        k = std::max(k, 1);
    }
    require(k >= 1 && k <= m, ErrorKind::InvalidInput, "number of components must be in [1, M]");
    if (n <= k) fail(ErrorKind::RankTooLow, "need more observations (" + std::to_string(n) + ") than components (" + std::to_string(k) + ")");
    const double tiny = 1e-12 * std::max(1.0, eig.values(0));
    if (eig.values(k - 1) <= tiny)
        fail(ErrorKind::RankTooLow, "component " + std::to_string(k) + " has zero variance");

    PcaModel model;
    model.n_components = k;
    model.loadings = eig.vectors.leftCols(k);
    model.score_variances = eig.values.head(k);
    model.column_means = a.mean;
    model.column_sds = a.sd;
    model.eigenvalues = eig.values.cwiseMax(0.0);
    model.n_train = n;
    return model;
}

inline Matrix pca_scale(const PcaModel& model, const Matrix& x) {
    require(x.cols() == model.column_means.size(), ErrorKind::InvalidInput, "PCA model column count mismatch");
    return (x.rowwise() - model.column_means.transpose()).array().rowwise() / model.column_sds.transpose().array();
}

inline Matrix pca_scores(const PcaModel& model, const Matrix& x) { return pca_scale(model, x) * model.loadings; }

/// Hotelling T^2 in the PCA subspace.
inline Vector d_statistic(const PcaModel& model, const Matrix& x) {
    const Matrix t = pca_scores(model, x);
    return (t.array().square().rowwise() / model.score_variances.transpose().array()).rowwise().sum().matrix();
}

/// Squared prediction error of the rank-k reconstruction.
inline Vector q_statistic(const PcaModel& model, const Matrix& x) {
    const Matrix z = pca_scale(model, x);
    const Matrix residual = z - (z * model.loadings) * model.loadings.transpose();
    return residual.rowwise().squaredNorm();
}

struct ControlLimits {
    double d_limit = 0.0;
    double q_limit = 0.0;
    bool degenerate_q = false;
};

/// D limit from the F distribution; Q limit by Box's moment-matched
/// g * chi2(h) approximation from the training Q values.
inline ControlLimits control_limits(const PcaModel& model, const Vector& training_q, double alpha) {
    require(alpha > 0.0 && alpha <= 1.0, ErrorKind::InvalidInput, "alpha must be in (0, 1]");
    const double n = static_cast<double>(model.n_train);
    const double k = model.n_components;
    if (n <= k + 1.0) fail(ErrorKind::RankTooLow, "control limits need N > k + 1");
    ControlLimits lim;
    const double level = 1.0 - alpha;
    lim.d_limit = k * (n - 1.0) * (n + 1.0) / (n * (n - k)) * (level <= 0.0 ? 0.0 : f_quantile(level, k, n - k));

    const double mean = training_q.mean();
    const double var = training_q.size() > 1
                           ? (training_q.array() - mean).square().sum() / static_cast<double>(training_q.size() - 1)
                           : 0.0;
    if (!(var > 1e-300) || !(mean > 0.0)) {
        lim.degenerate_q = true;
        lim.q_limit = level <= 0.0 ? 0.0 : training_q.maxCoeff();
        return lim;
    }
    const double g = var / (2.0 * mean);
    const double h = 2.0 * mean * mean / var;
    lim.q_limit = level <= 0.0 ? 0.0 : g * chi2_quantile(level, h);
    return lim;
}

struct OutlierReport {
    Vector d;
    Vector q;
    double d_limit = 0.0;
    double q_limit = 0.0;
    std::vector<Eigen::Index> flagged;
    bool degenerate_q = false;
    int n_components = 0;
};

inline OutlierReport flag_outliers(const Vector& d, const Vector& q, const ControlLimits& lim) {
    OutlierReport r{d, q, lim.d_limit, lim.q_limit, {}, lim.degenerate_q, 0};
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d(i) > lim.d_limit || q(i) > lim.q_limit) r.flagged.push_back(i);
    return r;
}

/// PCA + D/Q + limits + flags on a complete (e.g. residual) matrix.
/// Columns with zero variance are dropped before the PCA.
inline OutlierReport detect_outliers(const Matrix& x, double alpha, ComponentChoice choice = {}) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).mean();
        const double ss = (x.col(j).array() - mean).square().sum();
        if (ss > 1e-24 * std::max(1.0, x.col(j).squaredNorm())) keep.push_back(j);
    }
    if (keep.empty()) fail(ErrorKind::ZeroVariance, "every column is constant");
    Matrix used(x.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) used.col(static_cast<Eigen::Index>(k)) = x.col(keep[k]);
    if (auto* fixed = std::get_if<int>(&choice.value)) *fixed = std::min<int>(*fixed, static_cast<int>(used.cols()));
    const PcaModel model = fit_pca(used, choice);
    const Vector d = d_statistic(model, used);
    const Vector q = q_statistic(model, used);
    OutlierReport r = flag_outliers(d, q, control_limits(model, q, alpha));
    r.n_components = model.n_components;
    return r;
}

} // namespace glmperm
