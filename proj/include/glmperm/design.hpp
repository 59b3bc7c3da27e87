#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "glmperm/numerics.hpp"

namespace glmperm {

struct FactorSpec {
    std::string name;
    int n_levels = 2;
    std::vector<std::string> level_labels; // optional; size n_levels when present
};

/// A model term: one factor (main effect) or two factors (two-way interaction),
/// stored as sorted factor indices.
struct Term {
    std::vector<std::size_t> factors;

    bool is_main() const { return factors.size() == 1; }
    friend bool operator==(const Term&, const Term&) = default;
};

struct DesignSpec {
    std::vector<FactorSpec> factors;
    Eigen::MatrixXi assignments; // N x F, 1-based level indices
    std::vector<Term> terms;

    Eigen::Index n_obs() const { return assignments.rows(); }
    std::size_t n_factors() const { return factors.size(); }

    std::string term_name(const Term& t) const {
        std::string name;
        for (std::size_t i = 0; i < t.factors.size(); ++i) {
            if (i) name += '*';
            name += factors.at(t.factors[i]).name;
        }
        return name;
    }

    std::vector<std::string> term_names() const {
        std::vector<std::string> names;
        names.reserve(terms.size());
        for (const auto& t : terms) names.push_back(term_name(t));
        return names;
    }

    std::size_t factor_index(const std::string& name) const {
        for (std::size_t f = 0; f < factors.size(); ++f)
            if (factors[f].name == name) return f;
        fail(ErrorKind::InvalidInput, "unknown factor '" + name + "'");
    }

    /// Checks structural invariants (levels in range, unique names, terms
    /// well formed, interaction parents present as main effects).
    void validate() const {
        require(!factors.empty(), ErrorKind::InvalidInput, "design has no factors");
        require(assignments.cols() == static_cast<Eigen::Index>(factors.size()), ErrorKind::InvalidInput,
                "assignment table width does not match factor count");
        std::set<std::string> names;
        for (const auto& f : factors) {
            require(f.n_levels >= 2, ErrorKind::InvalidInput, "factor '" + f.name + "' needs at least 2 levels");
            require(names.insert(f.name).second, ErrorKind::InvalidInput, "duplicate factor name '" + f.name + "'");
        }
        for (Eigen::Index i = 0; i < assignments.rows(); ++i)
            for (Eigen::Index f = 0; f < assignments.cols(); ++f) {
                const int level = assignments(i, f);
                if (level < 1 || level > factors[f].n_levels)
                    fail(ErrorKind::InvalidLevel, "observation " + std::to_string(i + 1) + ", factor '" +
                                                      factors[f].name + "': level " + std::to_string(level) +
                                                      " outside [1, " + std::to_string(factors[f].n_levels) + "]");
            }
        require(!terms.empty(), ErrorKind::InvalidInput, "model has no terms");
        std::set<std::vector<std::size_t>> seen;
        for (const auto& t : terms) {
            require(!t.factors.empty(), ErrorKind::InvalidInput, "empty model term");
            require(t.factors.size() <= 2, ErrorKind::InvalidInput,
                    "only main effects and two-way interactions are supported");
            require(std::is_sorted(t.factors.begin(), t.factors.end()) &&
                        std::adjacent_find(t.factors.begin(), t.factors.end()) == t.factors.end(),
                    ErrorKind::InvalidInput, "malformed term");
            for (auto f : t.factors) require(f < factors.size(), ErrorKind::InvalidInput, "term references unknown factor");
            require(seen.insert(t.factors).second, ErrorKind::InvalidInput, "duplicate term " + term_name(t));
        }
        for (const auto& t : terms) {
            if (t.is_main()) continue;
            for (auto f : t.factors)
                require(seen.count({f}) == 1, ErrorKind::InvalidInput,
                        "interaction " + term_name(t) + " requires main effect " + factors[f].name);
        }
    }

    /// Keeps only the given observation rows (order preserved).
    DesignSpec subset_rows(const std::vector<Eigen::Index>& rows) const {
        DesignSpec out{factors, Eigen::MatrixXi(static_cast<Eigen::Index>(rows.size()), assignments.cols()), terms};
        for (std::size_t r = 0; r < rows.size(); ++r) out.assignments.row(static_cast<Eigen::Index>(r)) = assignments.row(rows[r]);
        return out;
    }
};

inline int term_dof(const DesignSpec& d, const Term& t) {
    int dof = 1;
    for (auto f : t.factors) dof *= d.factors.at(f).n_levels - 1;
    return dof;
}

// ---------------------------------------------------------------------------
// Coding
// ---------------------------------------------------------------------------

struct ColumnRange {
    Eigen::Index begin = 0;
    Eigen::Index size = 0;
};

struct CodingMatrix {
    Matrix matrix;                        // N x (1 + sum of term DoFs), intercept first
    std::vector<ColumnRange> term_columns; // parallel to DesignSpec::terms
};

/// Sum coding: level l < L maps to e_l, the last level to a row of -1.
inline Matrix sum_code_factor(const FactorSpec& f, const Eigen::Ref<const Eigen::VectorXi>& levels) {
    require(f.n_levels >= 2, ErrorKind::InvalidInput, "factor '" + f.name + "' needs at least 2 levels");
    Matrix out = Matrix::Zero(levels.size(), f.n_levels - 1);
    for (Eigen::Index i = 0; i < levels.size(); ++i) {
        const int level = levels(i);
        if (level < 1 || level > f.n_levels)
            fail(ErrorKind::InvalidLevel, "factor '" + f.name + "': level " + std::to_string(level) + " at row " +
                                              std::to_string(i + 1));
        if (level == f.n_levels)
            out.row(i).setConstant(-1.0);
        else
            out(i, level - 1) = 1.0;
    }
    return out;
}

/// Builds the coding matrix without the rank check. Used where the caller
/// wants to factor the matrix itself (the check happens in LeastSquares).
inline CodingMatrix coding_matrix_unchecked(const DesignSpec& d) {
    d.validate();
    const Eigen::Index n = d.n_obs();
    std::vector<Matrix> factor_codes;
    factor_codes.reserve(d.factors.size());
    for (std::size_t f = 0; f < d.factors.size(); ++f)
        factor_codes.push_back(sum_code_factor(d.factors[f], d.assignments.col(static_cast<Eigen::Index>(f))));

    Eigen::Index width = 1;
    for (const auto& t : d.terms) width += term_dof(d, t);

    CodingMatrix c{Matrix(n, width), {}};
    c.matrix.col(0).setOnes();
    Eigen::Index col = 1;
    for (const auto& t : d.terms) {
        const ColumnRange range{col, term_dof(d, t)};
        if (t.is_main()) {
            c.matrix.middleCols(col, range.size) = factor_codes[t.factors[0]];
        } else {
            const Matrix& first = factor_codes[t.factors[0]];
            const Matrix& second = factor_codes[t.factors[1]];
            Eigen::Index k = col;
            for (Eigen::Index a = 0; a < first.cols(); ++a)
                for (Eigen::Index b = 0; b < second.cols(); ++b) c.matrix.col(k++) = first.col(a).cwiseProduct(second.col(b));
        }
        c.term_columns.push_back(range);
        col += range.size;
    }
    return c;
}

inline CodingMatrix build_coding_matrix(const DesignSpec& d) {
    CodingMatrix c = coding_matrix_unchecked(d);
    LeastSquares check(c.matrix); // throws RankDeficient
    (void)check;
    return c;
}

// ---------------------------------------------------------------------------
// Degrees of freedom
// ---------------------------------------------------------------------------

struct DofTable {
    std::vector<int> term; // parallel to DesignSpec::terms
    int residual = 0;
    int total = 0;
};

inline DofTable dof_table_unchecked(const DesignSpec& d) {
    DofTable t;
    t.total = static_cast<int>(d.n_obs()) - 1;
    int model = 0;
    for (const auto& term : d.terms) {
        t.term.push_back(term_dof(d, term));
        model += t.term.back();
    }
    t.residual = t.total - model;
    return t;
}

inline DofTable dof_table(const DesignSpec& d) {
    d.validate();
    DofTable t = dof_table_unchecked(d);
    if (t.residual < 1)
        fail(ErrorKind::InsufficientReplication, "residual DoF " + std::to_string(t.residual) + " with N = " +
                                                     std::to_string(d.n_obs()));
    return t;
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

/// Cell id per observation for the joint levels of the given factors (all
/// factors when the list is empty). Ids are dense, in first-appearance order.
struct CellIndex {
    std::vector<int> cell_of_row;
    int n_cells = 0;
    std::vector<std::vector<int>> levels_of_cell; // 1-based levels of each listed factor
    std::vector<std::size_t> factors;
};

inline CellIndex cell_index(const DesignSpec& d, std::vector<std::size_t> factors = {}) {
    if (factors.empty()) {
        factors.resize(d.n_factors());
        std::iota(factors.begin(), factors.end(), std::size_t{0});
    }
    CellIndex out;
    out.factors = factors;
    std::map<std::vector<int>, int> ids;
    out.cell_of_row.resize(static_cast<std::size_t>(d.n_obs()));
    for (Eigen::Index i = 0; i < d.n_obs(); ++i) {
        std::vector<int> key;
        key.reserve(factors.size());
        for (auto f : factors) key.push_back(d.assignments(i, static_cast<Eigen::Index>(f)));
        auto [it, inserted] = ids.emplace(key, out.n_cells);
        if (inserted) {
            ++out.n_cells;
            out.levels_of_cell.push_back(key);
        }
        out.cell_of_row[static_cast<std::size_t>(i)] = it->second;
    }
    return out;
}

inline std::string describe_cell(const DesignSpec& d, const CellIndex& cells, int cell) {
    std::string s;
    for (std::size_t k = 0; k < cells.factors.size(); ++k) {
        const auto& f = d.factors[cells.factors[k]];
        const int level = cells.levels_of_cell[static_cast<std::size_t>(cell)][k];
        if (k) s += ", ";
        s += f.name + "=";
        s += f.level_labels.size() == static_cast<std::size_t>(f.n_levels) ? f.level_labels[static_cast<std::size_t>(level - 1)]
                                                                            : std::to_string(level);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

/// Full factorial with the given levels per factor and replicates per cell.
/// Rows enumerate cells with the last factor varying fastest, replicates
/// innermost.
inline DesignSpec full_factorial(const std::vector<FactorSpec>& factors, int replicates, std::vector<Term> terms) {
    require(replicates >= 1, ErrorKind::InvalidInput, "replicates must be >= 1");
    Eigen::Index cells = 1;
    for (const auto& f : factors) cells *= f.n_levels;
    DesignSpec d{factors, Eigen::MatrixXi(cells * replicates, static_cast<Eigen::Index>(factors.size())), std::move(terms)};
    for (Eigen::Index c = 0; c < cells; ++c) {
        Eigen::Index rem = c;
        std::vector<int> levels(factors.size());
        for (std::size_t f = factors.size(); f-- > 0;) {
            levels[f] = static_cast<int>(rem % factors[f].n_levels) + 1;
            rem /= factors[f].n_levels;
        }
        for (int r = 0; r < replicates; ++r)
            for (std::size_t f = 0; f < factors.size(); ++f)
                d.assignments(c * replicates + r, static_cast<Eigen::Index>(f)) = levels[f];
    }
    d.validate();
    return d;
}

/// Main effects for every factor, in order.
inline std::vector<Term> main_effects(std::size_t n_factors) {
    std::vector<Term> terms;
    for (std::size_t f = 0; f < n_factors; ++f) terms.push_back(Term{{f}});
    return terms;
}

/// Parses "A+B+A*B" against the design's factor names. Whitespace is ignored.
inline std::vector<Term> parse_model_formula(const std::string& formula, const std::vector<FactorSpec>& factors) {
    auto index_of = [&](const std::string& name) -> std::size_t {
        for (std::size_t f = 0; f < factors.size(); ++f)
            if (factors[f].name == name) return f;
        fail(ErrorKind::InvalidInput, "model formula references unknown factor '" + name + "'");
    };
    std::string compact;
    for (char ch : formula)
        if (!std::isspace(static_cast<unsigned char>(ch))) compact += ch;
    require(!compact.empty(), ErrorKind::InvalidInput, "empty model formula");

    std::vector<Term> terms;
    std::size_t start = 0;
    while (start <= compact.size()) {
        const auto plus = compact.find('+', start);
        const std::string piece = compact.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
        require(!piece.empty(), ErrorKind::InvalidInput, "empty term in model formula '" + formula + "'");
        Term t;
        std::size_t p = 0;
        while (p <= piece.size()) {
            const auto star = piece.find('*', p);
            const std::string name = piece.substr(p, star == std::string::npos ? std::string::npos : star - p);
            require(!name.empty(), ErrorKind::InvalidInput, "malformed interaction in '" + piece + "'");
            t.factors.push_back(index_of(name));
            if (star == std::string::npos) break;
            p = star + 1;
        }
        require(t.factors.size() <= 2, ErrorKind::InvalidInput,
                "term '" + piece + "': only two-way interactions are supported");
        std::sort(t.factors.begin(), t.factors.end());
        require(std::adjacent_find(t.factors.begin(), t.factors.end()) == t.factors.end(), ErrorKind::InvalidInput,
                "term '" + piece + "' repeats a factor");
        terms.push_back(std::move(t));
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    return terms;
}

} // namespace glmperm
