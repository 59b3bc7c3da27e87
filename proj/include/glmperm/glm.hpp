#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glmperm/design.hpp"

namespace glmperm {

struct ResponseMatrix {
    Matrix values;                   // N x M; entries under the mask are ignored
    Mask missing;                    // N x M, true = missing
    std::vector<std::string> names;  // M labels

    ResponseMatrix() = default;

    explicit ResponseMatrix(Matrix v, std::vector<std::string> n = {})
        : values(std::move(v)), missing(Mask::Constant(values.rows(), values.cols(), false)), names(std::move(n)) {
        fill_default_names();
    }

    ResponseMatrix(Matrix v, Mask m, std::vector<std::string> n = {})
        : values(std::move(v)), missing(std::move(m)), names(std::move(n)) {
        fill_default_names();
    }

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
    bool has_missing() const { return missing.any(); }
    Eigen::Index missing_count() const { return missing.count(); }

    void validate() const {
        require(values.rows() >= 1 && values.cols() >= 1, ErrorKind::InvalidInput, "empty response matrix");
        require(missing.rows() == values.rows() && missing.cols() == values.cols(), ErrorKind::InvalidInput,
                "missing mask shape mismatch");
        require(names.size() == static_cast<std::size_t>(values.cols()), ErrorKind::InvalidInput,
                "response name count mismatch");
        for (Eigen::Index j = 0; j < cols(); ++j) {
            bool any_observed = false;
            for (Eigen::Index i = 0; i < rows(); ++i) {
                if (missing(i, j)) continue;
                any_observed = true;
                require(std::isfinite(values(i, j)), ErrorKind::InvalidInput,
                        "non-finite value at row " + std::to_string(i + 1) + ", response '" + names[static_cast<std::size_t>(j)] + "'");
            }
            require(any_observed, ErrorKind::EmptyColumn, "response '" + names[static_cast<std::size_t>(j)] + "' is entirely missing");
        }
    }

    ResponseMatrix column(Eigen::Index j) const {
        return ResponseMatrix(values.col(j), missing.col(j), {names.at(static_cast<std::size_t>(j))});
    }

    ResponseMatrix subset_rows(const std::vector<Eigen::Index>& rows) const {
        ResponseMatrix out(Matrix(static_cast<Eigen::Index>(rows.size()), cols()),
                           Mask(static_cast<Eigen::Index>(rows.size()), cols()), names);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out.values.row(static_cast<Eigen::Index>(r)) = values.row(rows[r]);
            out.missing.row(static_cast<Eigen::Index>(r)) = missing.row(rows[r]);
        }
        return out;
    }

private:
    void fill_default_names() {
        if (names.empty())
            for (Eigen::Index j = 0; j < values.cols(); ++j) names.push_back("y" + std::to_string(j + 1));
    }
};

// ---------------------------------------------------------------------------
// Repeated-fit engine
// ---------------------------------------------------------------------------

enum class Statistic { FRatio, SS };

/// Per-term and residual sums of squares for every response column.
struct TermSums {
    Matrix term;     // T x M
    Vector residual; // M
    Vector scale;    // M; uncentered sum of squares, used for zero tests
};

/// A design factored once and then fitted against many response matrices.
class GlmModel {
public:
    explicit GlmModel(const DesignSpec& d)
        : coding_(coding_matrix_unchecked(d)), solver_(coding_.matrix), dofs_(dof_table_unchecked(d)),
          names_(d.term_names()) {}

    GlmModel(CodingMatrix c, DofTable dofs, std::vector<std::string> names)
        : coding_(std::move(c)), solver_(coding_.matrix), dofs_(std::move(dofs)), names_(std::move(names)) {}

    const CodingMatrix& coding() const { return coding_; }
    const DofTable& dofs() const { return dofs_; }
    const std::vector<std::string>& term_names() const { return names_; }
    std::size_t n_terms() const { return coding_.term_columns.size(); }
    Eigen::Index n_obs() const { return coding_.matrix.rows(); }

    Matrix coefficients(const Matrix& x) const { return solver_.solve(x); }

    TermSums sums(const Matrix& x) const {
        const Matrix theta = solver_.solve(x);
        TermSums s{Matrix(static_cast<Eigen::Index>(n_terms()), x.cols()), Vector(x.cols()),
                   x.colwise().squaredNorm().transpose()};
        Matrix fitted = coding_.matrix * theta;
        s.residual = (x - fitted).colwise().squaredNorm().transpose();
        for (std::size_t t = 0; t < n_terms(); ++t) {
            const auto& r = coding_.term_columns[t];
            s.term.row(static_cast<Eigen::Index>(t)) =
                (coding_.matrix.middleCols(r.begin, r.size) * theta.middleRows(r.begin, r.size)).colwise().squaredNorm();
        }
        return s;
    }

    /// Test statistic for term t in every column. Sums of squares below
    /// 1e-24 of the column's uncentered energy are treated as exact zeros, so
    /// a constant response yields statistic 0 for every permutation.
    Vector statistic(const TermSums& s, std::size_t t, Statistic kind) const {
        const Eigen::Index m = s.term.cols();
        Vector out(m);
        const double df_term = dofs_.term[t];
        const double df_res = dofs_.residual;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double zero = 1e-24 * s.scale(j);
            const double ss_t = s.term(static_cast<Eigen::Index>(t), j) <= zero ? 0.0 : s.term(static_cast<Eigen::Index>(t), j);
            if (kind == Statistic::SS) {
                out(j) = ss_t;
                continue;
            }
            const double ss_e = s.residual(j) <= zero ? 0.0 : s.residual(j);
            if (ss_t == 0.0)
                out(j) = 0.0;
            else if (ss_e == 0.0 || df_res <= 0)
                out(j) = std::numeric_limits<double>::infinity();
            else
                out(j) = (ss_t / df_term) / (ss_e / df_res);
        }
        return out;
    }

private:
    CodingMatrix coding_;
    LeastSquares solver_;
    DofTable dofs_;
    std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

struct Factorization {
    Vector mu;                      // intercept row of theta
    Matrix theta;                   // (1 + sum dof) x M
    std::vector<Matrix> effects;    // per term, N x M
    Matrix residuals;               // N x M
    Vector ss_total_centered;       // M
    std::vector<Vector> ss_terms;   // per term, M
    Vector ss_residual;             // M
    DofTable dofs;
    std::vector<std::string> term_names;
    std::vector<std::string> response_names;
    bool zero_residual_dof = false; // factorization only; inference refuses it
};

inline Factorization fit(const CodingMatrix& c, const ResponseMatrix& x, std::vector<std::string> term_names = {}) {
    require(c.matrix.rows() == x.rows(), ErrorKind::InvalidInput,
            "coding matrix has " + std::to_string(c.matrix.rows()) + " rows, responses have " + std::to_string(x.rows()));
    if (x.has_missing())
        fail(ErrorKind::MissingDataPresent, std::to_string(x.missing_count()) + " missing entries; impute first");
    require(x.values.allFinite(), ErrorKind::InvalidInput, "non-finite response value");

    const LeastSquares solver(c.matrix);
    Factorization f;
    f.theta = solver.solve(x.values);
    f.mu = f.theta.row(0).transpose();
    f.dofs.total = static_cast<int>(x.rows()) - 1;
    int model = 0;
    for (std::size_t t = 0; t < c.term_columns.size(); ++t) {
        const auto& r = c.term_columns[t];
        f.effects.push_back(c.matrix.middleCols(r.begin, r.size) * f.theta.middleRows(r.begin, r.size));
        f.ss_terms.push_back(f.effects.back().colwise().squaredNorm().transpose());
        f.dofs.term.push_back(static_cast<int>(r.size));
        model += static_cast<int>(r.size);
    }
    f.dofs.residual = f.dofs.total - model;
    f.zero_residual_dof = f.dofs.residual < 1;
    f.residuals = x.values - c.matrix * f.theta;
    f.ss_residual = f.residuals.colwise().squaredNorm().transpose();
    const Eigen::RowVectorXd mean = x.values.colwise().mean();
    f.ss_total_centered = (x.values.rowwise() - mean).colwise().squaredNorm().transpose();
    if (term_names.empty())
        for (std::size_t t = 0; t < c.term_columns.size(); ++t) term_names.push_back("term" + std::to_string(t + 1));
    f.term_names = std::move(term_names);
    f.response_names = x.names;
    return f;
}

inline Factorization fit(const DesignSpec& d, const ResponseMatrix& x) {
    return fit(coding_matrix_unchecked(d), x, d.term_names());
}

/// Aggregate SS over responses: one row per term, then Residuals and Total.
struct SsSummary {
    std::vector<std::string> rows;
    std::vector<double> ss;
    std::vector<int> dof;
};

inline SsSummary ss_summary(const Factorization& f) {
    SsSummary s;
    for (std::size_t t = 0; t < f.ss_terms.size(); ++t) {
        s.rows.push_back(f.term_names.at(t));
        s.ss.push_back(f.ss_terms[t].sum());
        s.dof.push_back(f.dofs.term.at(t));
    }
    s.rows.emplace_back("Residuals");
    s.ss.push_back(f.ss_residual.sum());
    s.dof.push_back(f.dofs.residual);
    s.rows.emplace_back("Total");
    s.ss.push_back(f.ss_total_centered.sum());
    s.dof.push_back(f.dofs.total);
    return s;
}

} // namespace glmperm
