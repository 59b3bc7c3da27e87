#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glmperm/infer.hpp"

namespace glmperm {

enum class ResidualDistribution { Normal, Uniform, ExpCubed, NormalOneOutlier };

inline std::string to_string(ResidualDistribution d) {
    switch (d) {
    case ResidualDistribution::Normal: return "normal";
    case ResidualDistribution::Uniform: return "uniform";
    case ResidualDistribution::ExpCubed: return "exp_cubed";
    case ResidualDistribution::NormalOneOutlier: return "normal_one_outlier";
    }
    return "?";
}

inline ResidualDistribution parse_distribution(const std::string& s) {
    if (s == "normal") return ResidualDistribution::Normal;
    if (s == "uniform") return ResidualDistribution::Uniform;
    if (s == "exp_cubed") return ResidualDistribution::ExpCubed;
    if (s == "normal_one_outlier") return ResidualDistribution::NormalOneOutlier;
    fail(ErrorKind::InvalidInput, "unknown residual distribution '" + s + "'");
}

inline const std::vector<ResidualDistribution>& all_distributions() {
    static const std::vector<ResidualDistribution> all{ResidualDistribution::Normal, ResidualDistribution::Uniform,
                                                       ResidualDistribution::ExpCubed,
                                                       ResidualDistribution::NormalOneOutlier};
    return all;
}

struct SimConfig {
    std::vector<FactorSpec> factors{{"A", 4, {}}, {"B", 3, {}}};
    int replicates = 4;                            // per cell
    std::vector<Term> model_terms = main_effects(2); // fitted model
    std::vector<Term> significant_terms{Term{{0}}};
    int n_responses = 400;
    double delta = 1.0;
    ResidualDistribution residual_distribution = ResidualDistribution::Normal;
    double residual_sigma = 1.0;
    double outlier_magnitude = 10.0;
    double grand_mean = 0.0;
    std::uint64_t seed = 0;

    DesignSpec design() const { return full_factorial(factors, replicates, model_terms); }

    void validate() const {
        require(delta >= 0.0, ErrorKind::InvalidInput, "effect scale must be >= 0");
        require(n_responses >= 1, ErrorKind::InvalidInput, "need at least one response");
        require(residual_sigma > 0.0, ErrorKind::InvalidInput, "residual sigma must be positive");
    }
};

struct SimDataset {
    ResponseMatrix data;
    DesignSpec design;
    std::vector<Matrix> true_effects; // per significant term, N x M
};

/// Draws one dataset. Each significant term gets, per response, i.i.d.
/// standard normal level offsets centered to sum to zero (double-centered for
/// interactions) and scaled by delta. Residuals are standardized to mean 0 and
/// sd residual_sigma using the distribution's population moments. With
/// NormalOneOutlier every response has the residual of one uniformly chosen
/// row replaced by outlier_magnitude * sigma.
///
/// Draw order is fixed (offsets, residuals, outlier rows), so Normal and
/// NormalOneOutlier datasets from the same stream differ only in the outliers.
inline SimDataset generate_dataset(const SimConfig& cfg, RngStream rng) {
    cfg.validate();
    SimDataset out{ResponseMatrix(), cfg.design(), {}};
    const DesignSpec& d = out.design;
    const Eigen::Index n = d.n_obs(), m = cfg.n_responses;
    Matrix x = Matrix::Constant(n, m, cfg.grand_mean);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (const Term& term : cfg.significant_terms) {
        Matrix effect = Matrix::Zero(n, m);
        const int l1 = d.factors.at(term.factors[0]).n_levels;
        const int l2 = term.is_main() ? 1 : d.factors.at(term.factors[1]).n_levels;
        for (Eigen::Index j = 0; j < m; ++j) {
            Matrix table(l1, l2);
            for (int a = 0; a < l1; ++a)
                for (int b = 0; b < l2; ++b) table(a, b) = normal(rng);
            table.rowwise() -= table.colwise().mean();
            if (l2 > 1) table.colwise() -= table.rowwise().mean();
            table *= cfg.delta;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int a = d.assignments(i, static_cast<Eigen::Index>(term.factors[0])) - 1;
                const int b = term.is_main() ? 0 : d.assignments(i, static_cast<Eigen::Index>(term.factors[1])) - 1;
                effect(i, j) = table(a, b);
            }
        }
        x += effect;
        out.true_effects.push_back(std::move(effect));
    }

    Matrix e(n, m);
    std::exponential_distribution<double> exponential(1.0);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
            switch (cfg.residual_distribution) {
            case ResidualDistribution::Normal:
            case ResidualDistribution::NormalOneOutlier: e(i, j) = normal(rng); break;
            case ResidualDistribution::Uniform: e(i, j) = std::sqrt(3.0) * (2.0 * rng.uniform() - 1.0); break;
            case ResidualDistribution::ExpCubed: {
                const double v = exponential(rng);
                e(i, j) = (v * v * v - 6.0) / std::sqrt(684.0); // mean 6, variance 720 - 36
                break;
            }
            }
        }
    if (cfg.residual_distribution == ResidualDistribution::NormalOneOutlier)
        for (Eigen::Index j = 0; j < m; ++j)
            e(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))), j) = cfg.outlier_magnitude;
    x += cfg.residual_sigma * e;
    out.data = ResponseMatrix(std::move(x));
    return out;
}

// ---------------------------------------------------------------------------
// Sum-of-squares comparison under missing data
// ---------------------------------------------------------------------------

struct SsTable {
    std::vector<std::string> rows;    // terms..., Residuals, Total
    std::vector<std::string> columns; // Original, Available, UMR, CMR, TSR
    Matrix ss;                        // rows x columns
};

/// SS over observed entries only: each response is fitted on its observed rows.
inline SsSummary available_ss(const ResponseMatrix& x, const DesignSpec& d) {
    SsSummary total;
    const Eigen::Index t_count = static_cast<Eigen::Index>(d.terms.size());
    Vector acc = Vector::Zero(t_count + 2);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const RmdSplit split = rmd_split(x.values.col(j), x.missing.col(j), d);
        const Factorization f = fit(split.design, ResponseMatrix(Matrix(split.values)));
        const SsSummary s = ss_summary(f);
        for (Eigen::Index k = 0; k < t_count + 2; ++k) acc(k) += s.ss[static_cast<std::size_t>(k)];
        if (j == 0) total = s;
    }
    for (Eigen::Index k = 0; k < t_count + 2; ++k) total.ss[static_cast<std::size_t>(k)] = acc(k);
    return total;
}

struct Table1Options {
    int n_sims = 10;
    double missing_fraction = 0.05;
    int tsr_components = 2;
};

inline SsTable table1_experiment(const SimConfig& cfg, const Table1Options& opt = {}) {
    const DesignSpec d = cfg.design();
    const auto n_rows = static_cast<Eigen::Index>(d.terms.size() + 2);
    std::vector<Matrix> per_sim(static_cast<std::size_t>(opt.n_sims));
    const RngStream root(cfg.seed);

    parallel_for(per_sim.size(), [&](std::size_t s) {
        const RngStream rng = root.substream(s);
        const SimDataset ds = generate_dataset(cfg, rng.substream(0));
        const ResponseMatrix masked = induce_missing(ds.data, d, opt.missing_fraction, rng.substream(1));
        Matrix col(n_rows, 5);
        auto put = [&](int c, const SsSummary& s) {
            for (Eigen::Index r = 0; r < n_rows; ++r) col(r, c) = s.ss[static_cast<std::size_t>(r)];
        };
        put(0, ss_summary(fit(d, ds.data)));
        put(1, available_ss(masked, d));
        put(2, ss_summary(fit(d, umr(masked).as_response(masked.names))));
        put(3, ss_summary(fit(d, cmr(masked, d).as_response(masked.names))));
        put(4, ss_summary(fit(d, tsr(masked, opt.tsr_components).as_response(masked.names))));
        per_sim[s] = std::move(col);
    });

    SsTable out;
    for (const auto& t : d.terms) out.rows.push_back("Factor " + d.term_name(t));
    out.rows.emplace_back("Residuals");
    out.rows.emplace_back("Total");
    out.columns = {"Original", "Available", "UMR", "CMR", "TSR"};
    out.ss = Matrix::Zero(n_rows, 5);
    for (const auto& m : per_sim) out.ss += m;
    out.ss /= static_cast<double>(opt.n_sims);
    return out;
}

// ---------------------------------------------------------------------------
// Imputation error curves
// ---------------------------------------------------------------------------

enum class MissingMethod { UMR, CMR, PCMR };

inline std::string to_string(MissingMethod m) {
    switch (m) {
    case MissingMethod::UMR: return "UMR";
    case MissingMethod::CMR: return "CMR";
    case MissingMethod::PCMR: return "pCMR";
    }
    return "?";
}

struct Fig1Options {
    std::vector<double> missing_grid{0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
    int n_replicates = 20;
    std::size_t n_permutations = 200;
};

struct Fig1Result {
    std::vector<double> grid;
    std::vector<MissingMethod> methods{MissingMethod::UMR, MissingMethod::CMR, MissingMethod::PCMR};
    Matrix mean; // grid x methods
    Matrix sd;   // grid x methods
    std::vector<Matrix> per_replicate; // replicate -> grid x methods
};

/// Relative p-value error against the complete data, summed over responses
/// and model terms: sum (p_obs - p_exp) / p_exp.
inline double relative_p_error(const Matrix& p_obs, const Matrix& p_exp, double floor) {
    double err = 0.0;
    for (Eigen::Index j = 0; j < p_obs.rows(); ++j)
        for (Eigen::Index t = 0; t < p_obs.cols(); ++t) {
            const double expected = std::max(p_exp(j, t), floor);
            err += (p_obs(j, t) - expected) / expected;
        }
    return err;
}

inline Fig1Result fig1_experiment(const SimConfig& cfg, const Fig1Options& opt = {}) {
    const DesignSpec d = cfg.design();
    const RngStream root(cfg.seed);
    const std::size_t reps = static_cast<std::size_t>(opt.n_replicates);
    const auto g_count = static_cast<Eigen::Index>(opt.missing_grid.size());
    const double floor = 1.0 / (static_cast<double>(opt.n_permutations) + 1.0);
    Fig1Result out;
    out.grid = opt.missing_grid;
    out.per_replicate.resize(reps);

    parallel_for(reps, [&](std::size_t r) {
        const RngStream rng = root.substream(r);
        const SimDataset ds = generate_dataset(cfg, rng.substream(0));
        TestConfig tc;
        tc.n_permutations = opt.n_permutations;
        tc.seed = rng.substream(1)();
        const Matrix p_exp = permutation_test(ds.data, d, tc).p;
        Matrix err(g_count, 3);
        for (Eigen::Index g = 0; g < g_count; ++g) {
            const ResponseMatrix masked =
                induce_missing(ds.data, d, opt.missing_grid[static_cast<std::size_t>(g)], rng.substream(2 + static_cast<std::uint64_t>(g)));
            err(g, 0) = relative_p_error(permutation_test(umr(masked).as_response(masked.names), d, tc).p, p_exp, floor);
            err(g, 1) = relative_p_error(permutation_test(cmr(masked, d).as_response(masked.names), d, tc).p, p_exp, floor);
            err(g, 2) = relative_p_error(pcmr_permutation_test(masked, d, tc).p, p_exp, floor);
        }
        out.per_replicate[r] = std::move(err);
    });

    out.mean = Matrix::Zero(g_count, 3);
    out.sd = Matrix::Zero(g_count, 3);
    for (const auto& e : out.per_replicate) out.mean += e;
    out.mean /= static_cast<double>(reps);
    if (reps > 1) {
        for (const auto& e : out.per_replicate) out.sd.array() += (e - out.mean).array().square();
        out.sd = (out.sd / static_cast<double>(reps - 1)).cwiseSqrt();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Power curves
// ---------------------------------------------------------------------------

/// Two-level factor A x three-level factor B with interaction, 10 replicates
/// per cell, 14 responses; A is the tested (and, for delta > 0, active) factor.
inline SimConfig power_design_config() {
    SimConfig cfg;
    cfg.factors = {{"A", 2, {}}, {"B", 3, {}}};
    cfg.replicates = 10;
    cfg.model_terms = {Term{{0}}, Term{{1}}, Term{{0, 1}}};
    cfg.significant_terms = {Term{{0}}};
    cfg.n_responses = 14;
    cfg.residual_sigma = 1.0;
    return cfg;
}

struct PowerOptions {
    std::vector<double> effect_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0};
    std::vector<TransformKind> transforms{TransformKind::None, TransformKind::BoxCox, TransformKind::Rank,
                                          TransformKind::RawPlusRank};
    int n_replicates = 300;
    std::size_t n_permutations = 200;
    double alpha = 0.05;
    std::size_t tested_term = 0;
};

struct PowerCurve {
    ResidualDistribution distribution = ResidualDistribution::Normal;
    TransformKind transform = TransformKind::None;
    std::vector<double> effect_grid;
    std::vector<double> power;
    int n_replicates = 0;
    std::size_t n_permutations = 0;
    double alpha = 0.05;
};

/// p-value per original response for the tested term under a transform.
/// raw+rank tests the 2M-column augmented matrix and combines each response's
/// pair as min(1, 2 * min(p_raw, p_rank)).
inline Vector transformed_term_pvalues(const ResponseMatrix& x, const DesignSpec& d, TransformKind kind,
                                       const TestConfig& tc, std::size_t term) {
    BoxCoxOptions bc;
    bc.allow_shift = true;
    const TransformResult tr = apply_transform(x, kind, bc);
    const Matrix p = permutation_test(tr.data, d, tc).p;
    if (kind != TransformKind::RawPlusRank) return p.col(static_cast<Eigen::Index>(term));
    const Eigen::Index m = x.cols();
    Vector out(m);
    for (Eigen::Index j = 0; j < m; ++j)
        out(j) = std::min(1.0, 2.0 * std::min(p(j, static_cast<Eigen::Index>(term)), p(j + m, static_cast<Eigen::Index>(term))));
    return out;
}

/// Rejection fraction of the tested term over replicates and responses, per
/// grid point and transform. Replicate r at grid point g always uses stream
/// (g, r), whatever the distribution, so curves share random numbers.
inline std::vector<PowerCurve> power_curves(const SimConfig& base, const PowerOptions& opt) {
    require(!opt.effect_grid.empty() && opt.effect_grid.front() == 0.0, ErrorKind::InvalidInput,
            "effect grid must start at 0");
    require(std::is_sorted(opt.effect_grid.begin(), opt.effect_grid.end()), ErrorKind::InvalidInput,
            "effect grid must be ascending");
    const DesignSpec d = base.design();
    const std::size_t g_count = opt.effect_grid.size();
    const std::size_t reps = static_cast<std::size_t>(opt.n_replicates);
    const std::size_t tr_count = opt.transforms.size();
    std::vector<Eigen::VectorXi> rejections(g_count * reps);
    const RngStream root(base.seed);

    parallel_for(g_count * reps, [&](std::size_t task) {
        const std::size_t g = task / reps, r = task % reps;
        const RngStream rng = root.substream(g).substream(r);
        SimConfig cfg = base;
        cfg.delta = opt.effect_grid[g];
        const SimDataset ds = generate_dataset(cfg, rng.substream(0));
        TestConfig tc;
        tc.n_permutations = opt.n_permutations;
        tc.alpha = opt.alpha;
        tc.seed = rng.substream(1)();
        Eigen::VectorXi count = Eigen::VectorXi::Zero(static_cast<Eigen::Index>(tr_count));
        for (std::size_t k = 0; k < tr_count; ++k) {
            const Vector p = transformed_term_pvalues(ds.data, d, opt.transforms[k], tc, opt.tested_term);
            count(static_cast<Eigen::Index>(k)) = static_cast<int>((p.array() < opt.alpha).count());
        }
        rejections[task] = std::move(count);
    });

    std::vector<PowerCurve> curves;
    const double denom = static_cast<double>(reps) * static_cast<double>(base.n_responses);
    for (std::size_t k = 0; k < tr_count; ++k) {
        PowerCurve c{base.residual_distribution, opt.transforms[k], opt.effect_grid, {}, opt.n_replicates,
                     opt.n_permutations, opt.alpha};
        for (std::size_t g = 0; g < g_count; ++g) {
            long total = 0;
            for (std::size_t r = 0; r < reps; ++r) total += rejections[g * reps + r](static_cast<Eigen::Index>(k));
            c.power.push_back(static_cast<double>(total) / denom);
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

// ---------------------------------------------------------------------------
// Ordinal checks
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

inline bool all_passed(const std::vector<CheckResult>& checks) {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

} // namespace detail

/// Column order Original, Available, UMR, CMR, TSR; first row is the first term.
inline std::vector<CheckResult> check_table1(const SsTable& t, double missing_fraction) {
    using detail::fmt;
    std::vector<CheckResult> out;
    const Eigen::Index total = t.ss.rows() - 1;
    if (missing_fraction == 0.0) {
        double worst = 0.0;
        for (Eigen::Index r = 0; r < t.ss.rows(); ++r)
            for (Eigen::Index c = 1; c < t.ss.cols(); ++c)
                worst = std::max(worst, std::fabs(t.ss(r, c) - t.ss(r, 0)) / std::max(1.0, std::fabs(t.ss(r, 0))));
        out.push_back({"identical columns without missing data", worst <= 1e-9, "max relative gap " + fmt(worst)});
        return out;
    }
    const double ratio = t.ss(total, 1) / t.ss(total, 0);
    out.push_back({"available total ~ (1 - missing) x original", std::fabs(ratio - (1.0 - missing_fraction)) <= 0.02,
                   "ratio " + fmt(ratio)});
    const double gap_umr = std::fabs(t.ss(total, 2) - t.ss(total, 0));
    const double gap_cmr = std::fabs(t.ss(total, 3) - t.ss(total, 0));
    const double gap_tsr = std::fabs(t.ss(total, 4) - t.ss(total, 0));
    out.push_back({"CMR total closest to original", gap_cmr < gap_umr && gap_cmr < gap_tsr,
                   "gaps UMR " + fmt(gap_umr) + ", CMR " + fmt(gap_cmr) + ", TSR " + fmt(gap_tsr)});
    out.push_back({"UMR first-term SS below available", t.ss(0, 2) < t.ss(0, 1),
                   fmt(t.ss(0, 2)) + " vs " + fmt(t.ss(0, 1))});
    out.push_back({"CMR first-term SS above available", t.ss(0, 3) > t.ss(0, 1),
                   fmt(t.ss(0, 3)) + " vs " + fmt(t.ss(0, 1))});
    return out;
}

/// Methods in order UMR, CMR, pCMR. The ordering checks apply to the model
/// with an interaction term.
inline std::vector<CheckResult> check_fig1(const Fig1Result& r, bool interaction_model) {
    using detail::fmt;
    std::vector<CheckResult> out;
    const auto g_count = static_cast<Eigen::Index>(r.grid.size());
    {
        bool ok = true;
        std::string detail;
        for (Eigen::Index g = 0; g < g_count; ++g) {
            if (r.grid[static_cast<std::size_t>(g)] > 0.20 + 1e-12) continue;
            const bool in = std::fabs(r.mean(g, 2)) <= r.sd(g, 2);
            ok = ok && in;
            detail += "m=" + fmt(r.grid[static_cast<std::size_t>(g)]) + ": " + fmt(r.mean(g, 2)) + " (sd " + fmt(r.sd(g, 2)) + ") ";
        }
        out.push_back({"pCMR |mean Err| <= sd for m <= 0.20", ok, detail});
    }
    {
        bool ok = g_count > 0;
        std::string detail;
        for (Eigen::Index g = 0; g < g_count; ++g) {
            ok = ok && r.mean(g, 1) < 0.0 && (g == 0 || r.mean(g, 1) < r.mean(g - 1, 1));
            detail += fmt(r.mean(g, 1)) + " ";
        }
        out.push_back({"CMR mean Err negative and decreasing", ok, detail});
    }
    if (interaction_model) {
        bool positive = true, ordered = true;
        std::string detail;
        for (Eigen::Index g = 0; g < g_count; ++g) {
            if (r.grid[static_cast<std::size_t>(g)] < 0.20 - 1e-12) continue;
            positive = positive && r.mean(g, 0) > 0.0;
            ordered = ordered && r.mean(g, 1) < r.mean(g, 2) && r.mean(g, 2) < r.mean(g, 0);
            detail += "m=" + fmt(r.grid[static_cast<std::size_t>(g)]) + ": UMR " + fmt(r.mean(g, 0)) + ", CMR " +
                      fmt(r.mean(g, 1)) + ", pCMR " + fmt(r.mean(g, 2)) + " ";
        }
        out.push_back({"UMR mean Err positive for m >= 0.20", positive, detail});
        out.push_back({"CMR < pCMR < UMR for m >= 0.20", ordered, detail});
    }
    return out;
}

inline const PowerCurve* find_curve(const std::vector<PowerCurve>& curves, TransformKind kind) {
    for (const auto& c : curves)
        if (c.transform == kind) return &c;
    return nullptr;
}

/// Rank power at least Box-Cox power (minus margin) at every grid point.
inline CheckResult check_rank_vs_boxcox(const std::vector<PowerCurve>& curves, double margin = 0.03) {
    using detail::fmt;
    const PowerCurve* rank = find_curve(curves, TransformKind::Rank);
    const PowerCurve* bc = find_curve(curves, TransformKind::BoxCox);
    std::string name = "rank >= boxcox - " + fmt(margin);
    if (!rank || !bc) return {name, false, "rank or boxcox curve missing"};
    if (!curves.empty()) name += " (" + to_string(curves.front().distribution) + ")";
    double worst = 1.0;
    for (std::size_t g = 0; g < rank->power.size(); ++g) worst = std::min(worst, rank->power[g] - bc->power[g]);
    return {name, worst >= -margin, "min(rank - boxcox) = " + fmt(worst)};
}

/// Rank curves agree with and without the outlier while raw power drops by
/// more than raw_drop at two or more interior grid points.
inline std::vector<CheckResult> check_outlier_robustness(const std::vector<PowerCurve>& clean,
                                                         const std::vector<PowerCurve>& contaminated,
                                                         double rank_tol = 0.05, double raw_drop = 0.10) {
    using detail::fmt;
    std::vector<CheckResult> out;
    const PowerCurve* rank_a = find_curve(clean, TransformKind::Rank);
    const PowerCurve* rank_d = find_curve(contaminated, TransformKind::Rank);
    const PowerCurve* raw_a = find_curve(clean, TransformKind::None);
    const PowerCurve* raw_d = find_curve(contaminated, TransformKind::None);
    if (!rank_a || !rank_d || !raw_a || !raw_d) return {{"outlier robustness", false, "rank or raw curve missing"}};
    double worst = 0.0;
    for (std::size_t g = 0; g < rank_a->power.size(); ++g)
        worst = std::max(worst, std::fabs(rank_a->power[g] - rank_d->power[g]));
    out.push_back({"rank power unaffected by outlier (<= " + fmt(rank_tol) + ")", worst <= rank_tol,
                   "max |diff| = " + fmt(worst)});
    int drops = 0;
    std::string detail;
    for (std::size_t g = 1; g + 1 < raw_a->power.size(); ++g) {
        const double drop = raw_a->power[g] - raw_d->power[g];
        if (drop > raw_drop) ++drops;
        detail += fmt(drop) + " ";
    }
    out.push_back({"raw power drops > " + fmt(raw_drop) + " at >= 2 interior points", drops >= 2, "drops " + detail});
    return out;
}

} // namespace glmperm
