#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "glmperm/impute.hpp"
#include "glmperm/transform.hpp"

namespace glmperm {

enum class PermutationScheme { Raw, ReducedModelResiduals, FullModelResiduals };

inline std::string to_string(PermutationScheme s) {
    switch (s) {
    case PermutationScheme::Raw: return "raw";
    case PermutationScheme::ReducedModelResiduals: return "reduced";
    case PermutationScheme::FullModelResiduals: return "full";
    }
    return "?";
}

inline std::string to_string(Statistic s) { return s == Statistic::FRatio ? "F" : "SS"; }

struct TestConfig {
    Statistic statistic = Statistic::FRatio;
    std::size_t n_permutations = 999;
    PermutationScheme scheme = PermutationScheme::Raw;
    std::uint64_t seed = 0;
    double alpha = 0.05;

    void validate() const {
        require(n_permutations >= 99, ErrorKind::InvalidInput, "need at least 99 permutations");
        require(alpha > 0.0 && alpha < 1.0, ErrorKind::InvalidInput, "alpha must be in (0, 1)");
    }
};

/// p-values (and observed statistics) for every (response, term).
struct PValueTable {
    std::vector<std::string> responses;
    std::vector<std::string> terms;
    Matrix p;         // M x T
    Matrix statistic; // M x T
    std::vector<std::string> warnings;
    std::size_t redraws = 0; // pCMR only
};

/// Smallest positive p reported when the residual variance vanishes while the
/// term does not.
inline constexpr double p_floor_sentinel = std::numeric_limits<double>::min();

// ---------------------------------------------------------------------------
// Parametric ANOVA
// ---------------------------------------------------------------------------

inline PValueTable parametric_anova(const Factorization& f) {
    if (f.dofs.residual < 1)
        fail(ErrorKind::InsufficientReplication, "parametric ANOVA needs residual DoF >= 1 (got " +
                                                     std::to_string(f.dofs.residual) + ")");
    const auto m = f.ss_residual.size();
    const auto t_count = static_cast<Eigen::Index>(f.ss_terms.size());
    PValueTable out{f.response_names, f.term_names, Matrix(m, t_count), Matrix(m, t_count), {}};
    const double n = f.dofs.total + 1.0;
    for (Eigen::Index j = 0; j < m; ++j) {
        const double zero = 1e-24 * (f.ss_total_centered(j) + n * f.mu(j) * f.mu(j));
        const double ss_e = f.ss_residual(j) <= zero ? 0.0 : f.ss_residual(j);
        for (Eigen::Index t = 0; t < t_count; ++t) {
            const double ss_t = f.ss_terms[static_cast<std::size_t>(t)](j) <= zero ? 0.0 : f.ss_terms[static_cast<std::size_t>(t)](j);
            const double df_t = f.dofs.term[static_cast<std::size_t>(t)];
            if (ss_e == 0.0) {
                out.statistic(j, t) = ss_t == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
                out.p(j, t) = ss_t == 0.0 ? 1.0 : p_floor_sentinel;
                out.warnings.push_back("ZeroResidualVariance: response '" + f.response_names.at(static_cast<std::size_t>(j)) + "'");
                continue;
            }
            const double fr = (ss_t / df_t) / (ss_e / f.dofs.residual);
            out.statistic(j, t) = fr;
            out.p(j, t) = std::max(f_upper_tail(fr, df_t, f.dofs.residual), p_floor_sentinel);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Permutation engine
// ---------------------------------------------------------------------------

namespace detail {

inline bool at_least(double permuted, double observed) {
    if (std::isinf(observed)) return permuted == observed;
    return permuted >= observed - 1e-10 * std::fabs(observed);
}

inline void permute_rows(const Matrix& src, const std::vector<Eigen::Index>& perm, Matrix& dst) {
    for (Eigen::Index i = 0; i < src.rows(); ++i) dst.row(i) = src.row(perm[static_cast<std::size_t>(i)]);
}

inline void permute_rows(const Mask& src, const std::vector<Eigen::Index>& perm, Mask& dst) {
    for (Eigen::Index i = 0; i < src.rows(); ++i) dst.row(i) = src.row(perm[static_cast<std::size_t>(i)]);
}

struct MaskedInput {
    const Mask* missing = nullptr;
    const CellIndex* cells = nullptr;
};

constexpr std::size_t permutation_block = 16;
constexpr int max_consecutive_redraws = 100;

/// Counts, for each (term, response), how many permuted statistics reach the
/// observed one. Permutation b always draws from substream b of the seed, and
/// counts are integers, so the result does not depend on the thread count.
inline PValueTable run_permutations(const Matrix& x, const DesignSpec& d, const TestConfig& cfg,
                                    std::vector<std::string> responses, MaskedInput masked = {}) {
    cfg.validate();
    const GlmModel model(d);
    if (model.dofs().residual < 1 && cfg.statistic == Statistic::FRatio)
        fail(ErrorKind::InsufficientReplication, "F statistic needs residual DoF >= 1");
    const Eigen::Index n = x.rows(), m = x.cols();
    const auto t_count = static_cast<Eigen::Index>(model.n_terms());

    // Observed values; for pCMR x holds observed entries, filled by cell means.
    Matrix x_obs = x;
    if (masked.missing) {
        int bad_cell = -1;
        Eigen::Index bad_col = -1;
        if (!cell_mean_fill(x_obs, *masked.missing, masked.cells->cell_of_row, masked.cells->n_cells, &bad_cell, &bad_col))
            fail(ErrorKind::EmptyCell, "no observed value of response '" + responses.at(static_cast<std::size_t>(bad_col)) +
                                           "' in cell (" + describe_cell(d, *masked.cells, bad_cell) + ")");
    }
    const TermSums observed_sums = model.sums(x_obs);
    Matrix observed(t_count, m);
    for (Eigen::Index t = 0; t < t_count; ++t)
        observed.row(t) = model.statistic(observed_sums, static_cast<std::size_t>(t), cfg.statistic).transpose();

    // Residual-permutation schemes: per-term base (fitted) and permuted parts.
    std::vector<Matrix> base, permuted_part;
    if (cfg.scheme == PermutationScheme::FullModelResiduals) {
        const Matrix theta = model.coefficients(x_obs);
        permuted_part.push_back(x_obs - model.coding().matrix * theta);
    } else if (cfg.scheme == PermutationScheme::ReducedModelResiduals) {
        for (Eigen::Index t = 0; t < t_count; ++t) {
            const auto& skip = model.coding().term_columns[static_cast<std::size_t>(t)];
            Matrix reduced(n, model.coding().matrix.cols() - skip.size);
            Eigen::Index col = 0;
            for (Eigen::Index c = 0; c < model.coding().matrix.cols(); ++c)
                if (c < skip.begin || c >= skip.begin + skip.size) reduced.col(col++) = model.coding().matrix.col(c);
            const Matrix fitted = reduced * LeastSquares(reduced).solve(x_obs);
            base.push_back(fitted);
            permuted_part.push_back(x_obs - fitted);
        }
    }

    const std::size_t b_total = cfg.n_permutations;
    const std::size_t blocks = (b_total + permutation_block - 1) / permutation_block;
    std::vector<Eigen::MatrixXi> block_counts(blocks);
    std::vector<std::size_t> block_redraws(blocks, 0);
    const RngStream root(cfg.seed);

    parallel_for(blocks, [&](std::size_t blk) {
        Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(t_count, m);
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
        Matrix xp(n, m);
        Mask mp;
        std::vector<Eigen::Index> alt;
        std::vector<double> cell_sum;
        std::vector<int> cell_count;
        if (masked.missing) {
            mp.resize(n, m);
            alt.resize(static_cast<std::size_t>(n));
            cell_sum.resize(static_cast<std::size_t>(masked.cells->n_cells));
            cell_count.resize(static_cast<std::size_t>(masked.cells->n_cells));
        }
        const std::size_t end = std::min(b_total, (blk + 1) * permutation_block);
        for (std::size_t b = blk * permutation_block; b < end; ++b) {
            RngStream rng = root.substream(b);
            std::iota(perm.begin(), perm.end(), Eigen::Index{0});
            shuffle(perm.begin(), perm.end(), rng);
            if (cfg.scheme == PermutationScheme::Raw) {
                permute_rows(x, perm, xp);
                if (masked.missing) {
                    // Statistics are per response, so an empty cell only
                    // redraws the permutation of the response it occurs in.
                    permute_rows(*masked.missing, perm, mp);
                    for (Eigen::Index j = 0; j < m; ++j) {
                        if (!mp.col(j).any()) continue;
                        int redraws = 0;
                        while (!cell_mean_fill_column(xp, mp, j, masked.cells->cell_of_row, cell_sum, cell_count)) {
                            if (++redraws >= max_consecutive_redraws)
                                fail(ErrorKind::InfeasibleMask, "100 consecutive permutations of response '" +
                                                                    responses.at(static_cast<std::size_t>(j)) +
                                                                    "' left a design cell without observations");
                            ++block_redraws[blk];
                            std::iota(alt.begin(), alt.end(), Eigen::Index{0});
                            shuffle(alt.begin(), alt.end(), rng);
                            for (Eigen::Index i = 0; i < n; ++i) {
                                xp(i, j) = x(alt[static_cast<std::size_t>(i)], j);
                                mp(i, j) = (*masked.missing)(alt[static_cast<std::size_t>(i)], j);
                            }
                        }
                    }
                }
                const TermSums s = model.sums(xp);
                for (Eigen::Index t = 0; t < t_count; ++t) {
                    const Vector stat = model.statistic(s, static_cast<std::size_t>(t), cfg.statistic);
                    for (Eigen::Index j = 0; j < m; ++j)
                        if (at_least(stat(j), observed(t, j))) ++counts(t, j);
                }
            } else if (cfg.scheme == PermutationScheme::FullModelResiduals) {
                permute_rows(permuted_part[0], perm, xp);
                const TermSums s = model.sums(xp);
                for (Eigen::Index t = 0; t < t_count; ++t) {
                    const Vector stat = model.statistic(s, static_cast<std::size_t>(t), cfg.statistic);
                    for (Eigen::Index j = 0; j < m; ++j)
                        if (at_least(stat(j), observed(t, j))) ++counts(t, j);
                }
            } else {
                for (Eigen::Index t = 0; t < t_count; ++t) {
                    permute_rows(permuted_part[static_cast<std::size_t>(t)], perm, xp);
                    xp += base[static_cast<std::size_t>(t)];
                    const Vector stat = model.statistic(model.sums(xp), static_cast<std::size_t>(t), cfg.statistic);
                    for (Eigen::Index j = 0; j < m; ++j)
                        if (at_least(stat(j), observed(t, j))) ++counts(t, j);
                }
            }
        }
        block_counts[blk] = std::move(counts);
    });

    Eigen::MatrixXi total = Eigen::MatrixXi::Zero(t_count, m);
    std::size_t redraws = 0;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        total += block_counts[blk];
        redraws += block_redraws[blk];
    }
    PValueTable out{std::move(responses), model.term_names(), Matrix(m, t_count), observed.transpose(), {}, redraws};
    const double denom = static_cast<double>(b_total) + 1.0;
    for (Eigen::Index t = 0; t < t_count; ++t)
        for (Eigen::Index j = 0; j < m; ++j) out.p(j, t) = (total(t, j) + 1.0) / denom;
    if (redraws > 0) out.warnings.push_back(std::to_string(redraws) + " pCMR response permutations redrawn (empty cell)");
    return out;
}

} // namespace detail

inline PValueTable permutation_test(const ResponseMatrix& x, const DesignSpec& d, const TestConfig& cfg) {
    require(x.rows() == d.n_obs(), ErrorKind::InvalidInput, "design/response row mismatch");
    if (x.has_missing())
        fail(ErrorKind::MissingDataPresent, "permutation_test needs complete data; impute, remove or use pCMR");
    return detail::run_permutations(x.values, d, cfg, x.names);
}

/// Permutation test with the cell-mean imputation redone inside every
/// permutation: rows and their masks move together against the fixed design.
inline PValueTable pcmr_permutation_test(const ResponseMatrix& x, const DesignSpec& d, const TestConfig& cfg) {
    require(x.rows() == d.n_obs(), ErrorKind::InvalidInput, "design/response row mismatch");
    require(cfg.scheme == PermutationScheme::Raw, ErrorKind::InvalidInput, "pCMR permutes raw data rows (scheme raw)");
    const CellIndex cells = cell_index(d);
    return detail::run_permutations(x.values, d, cfg, x.names, {&x.missing, &cells});
}

// ---------------------------------------------------------------------------
// Two-group tests
// ---------------------------------------------------------------------------

struct TestResult {
    double statistic = 0.0;
    double p = 1.0;
    double df = 0.0;
};

inline TestResult t_test(const Vector& g1, const Vector& g2, bool welch = false) {
    const double n1 = static_cast<double>(g1.size()), n2 = static_cast<double>(g2.size());
    if (g1.size() < 2 || g2.size() < 2) fail(ErrorKind::TooFewObservations, "t-test needs at least 2 values per group");
    const double m1 = g1.mean(), m2 = g2.mean();
    const double v1 = (g1.array() - m1).square().sum() / (n1 - 1.0);
    const double v2 = (g2.array() - m2).square().sum() / (n2 - 1.0);
    TestResult r;
    double se2;
    if (welch) {
        se2 = v1 / n1 + v2 / n2;
        const double a = v1 / n1, b = v2 / n2;
        r.df = se2 > 0.0 ? se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0)) : n1 + n2 - 2.0;
    } else {
        r.df = n1 + n2 - 2.0;
        const double pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / r.df;
        se2 = pooled * (1.0 / n1 + 1.0 / n2);
    }
    const double scale = std::max({1.0, std::fabs(m1), std::fabs(m2)});
    if (se2 <= 1e-28 * scale * scale) {
        // ZeroVariance: equal means -> p = 1, otherwise p at the floor sentinel
        if (std::fabs(m1 - m2) <= 1e-14 * scale) return {0.0, 1.0, r.df};
        return {m1 > m2 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity(),
                p_floor_sentinel, r.df};
    }
    r.statistic = (m1 - m2) / std::sqrt(se2);
    r.p = std::max(t_two_sided(r.statistic, r.df), p_floor_sentinel);
    return r;
}

/// Two-sided Wilcoxon rank-sum test; statistic is the rank sum of group 1.
/// Exact over all C(n, n1) rank splits when n1 + n2 <= 12, else normal
/// approximation with tie and continuity corrections.
inline TestResult wilcoxon_rank_sum(const Vector& g1, const Vector& g2) {
    const Eigen::Index n1 = g1.size(), n2 = g2.size(), n = n1 + n2;
    if (n1 < 2 || n2 < 2) fail(ErrorKind::TooFewObservations, "Wilcoxon test needs at least 2 values per group");
    Vector pooled(n);
    pooled << g1, g2;
    const Vector ranks = rank_transform(pooled).ranks;
    const double w = ranks.head(n1).sum();
    const double expected = static_cast<double>(n1) * static_cast<double>(n + 1) / 2.0;
    const double observed_dev = std::fabs(w - expected);
    TestResult r{w, 1.0, 0.0};

    if (n <= 12) {
        std::uint64_t hits = 0, total = 0;
        for (std::uint32_t subset = 0; subset < (1u << n); ++subset) {
            if (std::popcount(subset) != n1) continue;
            double sum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                if (subset & (1u << i)) sum += ranks(i);
            ++total;
            if (std::fabs(sum - expected) >= observed_dev - 1e-9) ++hits;
        }
        r.p = static_cast<double>(hits) / static_cast<double>(total);
        return r;
    }

    // tie correction
    std::vector<double> sorted(ranks.data(), ranks.data() + n);
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    const double nn = static_cast<double>(n);
    const double var = static_cast<double>(n1) * static_cast<double>(n2) / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if (!(var > 0.0)) return r;
    const double z = std::max(0.0, observed_dev - 0.5) / std::sqrt(var);
    r.p = std::clamp(2.0 * std_normal_cdf(-z), p_floor_sentinel, 1.0);
    return r;
}

/// Anderson-Darling normality test with estimated mean and variance; p from
/// Stephens' piecewise approximation for the adjusted statistic.
inline TestResult normality_test(const Vector& residuals) {
    const Eigen::Index n = residuals.size();
    if (n < 8) fail(ErrorKind::TooFewObservations, "normality test needs n >= 8, got " + std::to_string(n));
    std::vector<double> x(residuals.data(), residuals.data() + n);
    std::sort(x.begin(), x.end());
    const double mean = residuals.mean();
    const double sd = std::sqrt((residuals.array() - mean).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) fail(ErrorKind::ZeroVariance, "normality test on constant data");
    const double nn = static_cast<double>(n);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double zi = (x[static_cast<std::size_t>(i)] - mean) / sd;
        const double zr = (x[static_cast<std::size_t>(n - 1 - i)] - mean) / sd;
        const double log_cdf = std::log(std::max(std_normal_cdf(zi), 1e-300));
        const double log_sf = std::log(std::max(std_normal_cdf(-zr), 1e-300));
        s += (2.0 * static_cast<double>(i + 1) - 1.0) * (log_cdf + log_sf);
    }
    const double a2 = -nn - s / nn;
    const double a = a2 * (1.0 + 0.75 / nn + 2.25 / (nn * nn));
    double p;
    if (a < 0.2)
        p = 1.0 - std::exp(-13.436 + 101.14 * a - 223.73 * a * a);
    else if (a < 0.34)
        p = 1.0 - std::exp(-8.318 + 42.796 * a - 59.938 * a * a);
    else if (a < 0.6)
        p = std::exp(0.9177 - 4.279 * a - 1.38 * a * a);
    else
        p = std::exp(1.2937 - 5.709 * a + 0.0186 * a * a);
    return {a, std::clamp(p, p_floor_sentinel, 1.0), 0.0};
}

// ---------------------------------------------------------------------------
// Multiple testing
// ---------------------------------------------------------------------------

enum class MtcMethod { None, Bonferroni, BhFdr, StoreyQ };

inline std::string to_string(MtcMethod m) {
    switch (m) {
    case MtcMethod::None: return "none";
    case MtcMethod::Bonferroni: return "bonferroni";
    case MtcMethod::BhFdr: return "bh";
    case MtcMethod::StoreyQ: return "storey";
    }
    return "?";
}

inline MtcMethod parse_mtc(const std::string& s) {
    if (s == "none") return MtcMethod::None;
    if (s == "bonferroni") return MtcMethod::Bonferroni;
    if (s == "bh" || s == "bh_fdr" || s == "fdr") return MtcMethod::BhFdr;
    if (s == "storey" || s == "storey_q" || s == "q") return MtcMethod::StoreyQ;
    fail(ErrorKind::InvalidInput, "unknown multiple-testing method '" + s + "'");
}

/// Storey's null proportion estimate, capped at 1.
inline double storey_pi0(const std::vector<double>& p, double lambda = 0.5) {
    const auto above = std::count_if(p.begin(), p.end(), [&](double v) { return v > lambda; });
    return std::min(1.0, static_cast<double>(above) / (static_cast<double>(p.size()) * (1.0 - lambda)));
}

inline std::vector<double> adjust_pvalues(const std::vector<double>& p, MtcMethod method, double lambda = 0.5) {
    for (double v : p)
        if (!(v > 0.0 && v <= 1.0)) fail(ErrorKind::InvalidP, "p-value " + std::to_string(v) + " outside (0, 1]");
    const std::size_t m = p.size();
    std::vector<double> out(m);
    if (m <= 1 || method == MtcMethod::None) return p;
    const double md = static_cast<double>(m);
    if (method == MtcMethod::Bonferroni) {
        for (std::size_t i = 0; i < m; ++i) out[i] = std::min(1.0, md * p[i]);
        return out;
    }
    require(lambda > 0.0 && lambda < 1.0, ErrorKind::InvalidInput, "Storey lambda must be in (0, 1)");
    const double pi0 = method == MtcMethod::StoreyQ ? storey_pi0(p, lambda) : 1.0;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const std::size_t i = order[k];
        const double candidate = pi0 * md * p[i] / static_cast<double>(k + 1);
        running = std::min(running, candidate);
        out[i] = running;
    }
    return out;
}

} // namespace glmperm
