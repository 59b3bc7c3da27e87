#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "glmperm/glm.hpp"

namespace glmperm {

enum class ImputeMethod { UMR, CMR, TSR };

inline std::string to_string(ImputeMethod m) {
    switch (m) {
    case ImputeMethod::UMR: return "UMR";
    case ImputeMethod::CMR: return "CMR";
    case ImputeMethod::TSR: return "TSR";
    }
    return "?";
}

struct ImputedMatrix {
    Matrix values;        // complete
    Mask provenance_mask; // entries that were imputed
    ImputeMethod method = ImputeMethod::UMR;
    bool converged = true;
    int iterations = 0;

    ResponseMatrix as_response(const std::vector<std::string>& names) const { return ResponseMatrix(values, names); }
};

/// Masks exactly round(fraction * N * M) entries of a complete matrix,
/// uniformly at random among entries whose removal keeps at least one
/// observed value in every (design cell, response).
inline ResponseMatrix induce_missing(const ResponseMatrix& x, const DesignSpec& d, double fraction, RngStream rng) {
    require(fraction >= 0.0 && fraction < 1.0, ErrorKind::InvalidInput, "missing fraction must be in [0, 1)");
    require(!x.has_missing(), ErrorKind::MissingDataPresent, "induce_missing expects complete data");
    require(x.rows() == d.n_obs(), ErrorKind::InvalidInput, "design/response row mismatch");
    const Eigen::Index n = x.rows(), m = x.cols();
    const auto target = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(n * m)));
    ResponseMatrix out = x;
    if (target == 0) return out;

    const CellIndex cells = cell_index(d);
    // observed count per (cell, response)
    Eigen::MatrixXi observed = Eigen::MatrixXi::Zero(cells.n_cells, m);
    for (Eigen::Index i = 0; i < n; ++i) observed.row(cells.cell_of_row[static_cast<std::size_t>(i)]).array() += 1;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n * m));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    shuffle(order.begin(), order.end(), rng);
    Eigen::Index masked = 0;
    for (const auto flat : order) {
        if (masked == target) break;
        const Eigen::Index i = flat / m, j = flat % m;
        int& left = observed(cells.cell_of_row[static_cast<std::size_t>(i)], j);
        if (left <= 1) continue;
        --left;
        out.missing(i, j) = true;
        ++masked;
    }
    if (masked < target)
        fail(ErrorKind::InfeasibleFraction, "only " + std::to_string(masked) + " of " + std::to_string(target) +
                                                " entries can be masked while keeping every cell observed");
    return out;
}

inline ImputedMatrix umr(const ResponseMatrix& x) {
    ImputedMatrix out{x.values, x.missing, ImputeMethod::UMR};
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        double sum = 0.0;
        Eigen::Index count = 0;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (!x.missing(i, j)) {
                sum += x.values(i, j);
                ++count;
            }
        if (count == 0) fail(ErrorKind::EmptyColumn, "response '" + x.names.at(static_cast<std::size_t>(j)) + "' has no observed values");
        const double mean = sum / static_cast<double>(count);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (x.missing(i, j)) out.values(i, j) = mean;
    }
    return out;
}

namespace detail {

/// Cell-mean fill of one column in place; false when a cell that needs a
/// value has no observed entry (reported through empty_cell).
inline bool cell_mean_fill_column(Matrix& values, const Mask& missing, Eigen::Index j, const std::vector<int>& cell_of_row,
                                  std::vector<double>& sum, std::vector<int>& count, int* empty_cell = nullptr) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    const Eigen::Index n = values.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        if (!missing(i, j)) {
            const auto c = static_cast<std::size_t>(cell_of_row[static_cast<std::size_t>(i)]);
            sum[c] += values(i, j);
            ++count[c];
        }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!missing(i, j)) continue;
        const auto c = static_cast<std::size_t>(cell_of_row[static_cast<std::size_t>(i)]);
        if (count[c] == 0) {
            if (empty_cell) *empty_cell = static_cast<int>(c);
            return false;
        }
        values(i, j) = sum[c] / count[c];
    }
    return true;
}

/// In-place cell-mean fill of every column. Returns false (and reports the
/// first empty cell/response) when some cell has no observed value for a
/// response that needs imputing there.
inline bool cell_mean_fill(Matrix& values, const Mask& missing, const std::vector<int>& cell_of_row, int n_cells,
                           int* empty_cell = nullptr, Eigen::Index* empty_col = nullptr) {
    std::vector<double> sum(static_cast<std::size_t>(n_cells));
    std::vector<int> count(static_cast<std::size_t>(n_cells));
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        if (!missing.col(j).any()) continue;
        if (!cell_mean_fill_column(values, missing, j, cell_of_row, sum, count, empty_cell)) {
            if (empty_col) *empty_col = j;
            return false;
        }
    }
    return true;
}

} // namespace detail

/// Conditional (cell) mean replacement. Cells are the joint levels of
/// cell_factors; all factors when empty.
inline ImputedMatrix cmr(const ResponseMatrix& x, const DesignSpec& d, std::vector<std::size_t> cell_factors = {}) {
    require(x.rows() == d.n_obs(), ErrorKind::InvalidInput, "design/response row mismatch");
    const CellIndex cells = cell_index(d, std::move(cell_factors));
    ImputedMatrix out{x.values, x.missing, ImputeMethod::CMR};
    int bad_cell = -1;
    Eigen::Index bad_col = -1;
    if (!detail::cell_mean_fill(out.values, x.missing, cells.cell_of_row, cells.n_cells, &bad_cell, &bad_col))
        fail(ErrorKind::EmptyCell, "no observed value of response '" + x.names.at(static_cast<std::size_t>(bad_col)) +
                                       "' in cell (" + describe_cell(d, cells, bad_cell) + ")");
    return out;
}

/// Trimmed score regression imputation. Starts from UMR and iterates: autoscale
/// the current completion, take its first n_components loadings P, and predict
/// the missing part of each incomplete row from its observed part as
///   z_mis = S_mis,obs P_obs (P_obs' S_obs,obs P_obs)^-1 P_obs' z_obs,
/// with S the covariance of the current completion. n_components = 0 is UMR.
inline ImputedMatrix tsr(const ResponseMatrix& x, int n_components, double tol = 1e-6, int max_iter = 500) {
    require(n_components >= 0, ErrorKind::InvalidInput, "n_components must be >= 0");
    require(n_components == 0 || x.cols() > n_components, ErrorKind::InvalidInput,
            "TSR needs more responses than components");
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        if ((!x.missing.col(j)).count() < 2 && x.missing.col(j).any())
            fail(ErrorKind::EmptyColumn, "response '" + x.names.at(static_cast<std::size_t>(j)) + "' has fewer than 2 observed values");

    ImputedMatrix out = umr(x);
    out.method = ImputeMethod::TSR;
    if (!x.has_missing() || n_components == 0) return out;

    const Eigen::Index n = x.rows(), m = x.cols();
    const Eigen::Index a = std::min<Eigen::Index>(n_components, std::min(n - 1, m));
    std::vector<Eigen::Index> incomplete;
    for (Eigen::Index i = 0; i < n; ++i)
        if (x.missing.row(i).any()) incomplete.push_back(i);

    out.converged = false;
    for (int iter = 1; iter <= max_iter; ++iter) {
        const Eigen::RowVectorXd mean = out.values.colwise().mean();
        Eigen::RowVectorXd sd = ((out.values.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt();
        for (Eigen::Index j = 0; j < m; ++j)
            if (!(sd(j) > 0.0)) sd(j) = 1.0;
        const Matrix z = (out.values.rowwise() - mean).array().rowwise() / sd.array();
        Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinV);
        const Matrix p = svd.matrixV().leftCols(a);

        double max_change = 0.0;
        Matrix next = out.values;
        for (const Eigen::Index i : incomplete) {
            std::vector<Eigen::Index> obs, mis;
            for (Eigen::Index j = 0; j < m; ++j) (x.missing(i, j) ? mis : obs).push_back(j);
            Matrix p_obs(static_cast<Eigen::Index>(obs.size()), a);
            Matrix z_obs_cols(n, static_cast<Eigen::Index>(obs.size()));
            Vector z_row(static_cast<Eigen::Index>(obs.size()));
            for (std::size_t k = 0; k < obs.size(); ++k) {
                p_obs.row(static_cast<Eigen::Index>(k)) = p.row(obs[k]);
                z_obs_cols.col(static_cast<Eigen::Index>(k)) = z.col(obs[k]);
                z_row(static_cast<Eigen::Index>(k)) = z(i, obs[k]);
            }
            Matrix z_mis_cols(n, static_cast<Eigen::Index>(mis.size()));
            for (std::size_t k = 0; k < mis.size(); ++k) z_mis_cols.col(static_cast<Eigen::Index>(k)) = z.col(mis[k]);

            const Matrix t_obs = z_obs_cols * p_obs;                  // N x A trimmed scores
            const Matrix gram = t_obs.transpose() * t_obs;            // (N-1) P'S_oo P
            const Matrix cross = z_mis_cols.transpose() * t_obs;      // (N-1) S_mo P
            const Vector score = p_obs.transpose() * z_row;           // A
            const Vector coef = gram.completeOrthogonalDecomposition().solve(score);
            const Vector z_hat = cross * coef;
            for (std::size_t k = 0; k < mis.size(); ++k) {
                const Eigen::Index j = mis[k];
                const double value = mean(j) + sd(j) * z_hat(static_cast<Eigen::Index>(k));
                max_change = std::max(max_change, std::fabs(value - out.values(i, j)));
                next(i, j) = value;
            }
        }
        out.values = std::move(next);
        out.iterations = iter;
        if (max_change < tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

struct RmdSplit {
    Vector values;
    DesignSpec design;
    std::vector<Eigen::Index> rows; // original row indices kept
};

/// Drops the missing entries of one response along with their design rows.
/// Every design cell must keep at least one observation.
inline RmdSplit rmd_split(const Vector& x, const Eigen::Array<bool, Eigen::Dynamic, 1>& missing, const DesignSpec& d) {
    require(x.size() == d.n_obs() && missing.size() == x.size(), ErrorKind::InvalidInput, "rmd_split shape mismatch");
    RmdSplit out;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!missing(i)) out.rows.push_back(i);
    const CellIndex all = cell_index(d);
    std::vector<int> kept(static_cast<std::size_t>(all.n_cells), 0);
    for (auto i : out.rows) ++kept[static_cast<std::size_t>(all.cell_of_row[static_cast<std::size_t>(i)])];
    for (int c = 0; c < all.n_cells; ++c)
        if (kept[static_cast<std::size_t>(c)] == 0)
            fail(ErrorKind::DegenerateGroup, "group (" + describe_cell(d, all, c) + ") has no observed values");
    out.values.resize(static_cast<Eigen::Index>(out.rows.size()));
    for (std::size_t k = 0; k < out.rows.size(); ++k) out.values(static_cast<Eigen::Index>(k)) = x(out.rows[k]);
    out.design = d.subset_rows(out.rows);
    return out;
}

} // namespace glmperm
