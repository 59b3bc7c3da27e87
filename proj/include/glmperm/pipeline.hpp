#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "glmperm/io.hpp"
#include "glmperm/outlier.hpp"
#include "glmperm/sim.hpp"

#ifndef GLMPERM_VERSION
#define GLMPERM_VERSION "0.1.0"
#endif

namespace glmperm {

inline constexpr int exit_ok = 0;
inline constexpr int exit_input_error = 2;
inline constexpr int exit_numerical_error = 3;

enum class MissingPolicy { RMD, UMR, CMR, TSR, PCMR };

inline std::string to_string(MissingPolicy m) {
    switch (m) {
    case MissingPolicy::RMD: return "rmd";
    case MissingPolicy::UMR: return "umr";
    case MissingPolicy::CMR: return "cmr";
    case MissingPolicy::TSR: return "tsr";
    case MissingPolicy::PCMR: return "pcmr";
    }
    return "?";
}

inline MissingPolicy parse_missing_policy(const std::string& s) {
    if (s == "rmd") return MissingPolicy::RMD;
    if (s == "umr") return MissingPolicy::UMR;
    if (s == "cmr") return MissingPolicy::CMR;
    if (s == "tsr") return MissingPolicy::TSR;
    if (s == "pcmr") return MissingPolicy::PCMR;
    fail(ErrorKind::InvalidInput, "unknown missing-data method '" + s + "'");
}

enum class TestKind { Parametric, Permutation, Traditional };

inline std::string to_string(TestKind t) {
    switch (t) {
    case TestKind::Parametric: return "parametric";
    case TestKind::Permutation: return "permutation";
    case TestKind::Traditional: return "traditional";
    }
    return "?";
}

inline TestKind parse_test_kind(const std::string& s) {
    if (s == "parametric") return TestKind::Parametric;
    if (s == "permutation") return TestKind::Permutation;
    if (s == "traditional") return TestKind::Traditional;
    fail(ErrorKind::InvalidInput, "unknown test '" + s + "'");
}

inline PermutationScheme parse_scheme(const std::string& s) {
    if (s == "raw") return PermutationScheme::Raw;
    if (s == "reduced") return PermutationScheme::ReducedModelResiduals;
    if (s == "full") return PermutationScheme::FullModelResiduals;
    fail(ErrorKind::InvalidInput, "unknown permutation scheme '" + s + "'");
}

inline Statistic parse_statistic(const std::string& s) {
    if (s == "F" || s == "f") return Statistic::FRatio;
    if (s == "SS" || s == "ss") return Statistic::SS;
    fail(ErrorKind::InvalidInput, "unknown statistic '" + s + "'");
}

struct PipelineConfig {
    std::string data_path;
    std::string design_path;
    std::string model; // empty: all main effects
    MissingPolicy missing = MissingPolicy::PCMR;
    TransformKind transform = TransformKind::None;
    bool boxcox_shift = false;
    TestKind test = TestKind::Permutation;
    TestConfig test_cfg;
    MtcMethod mtc = MtcMethod::BhFdr;
    int tsr_components = 2;
    double outlier_alpha = 0.01;
    bool remove_outliers = false;
    bool dual_pipeline = false;
    std::string out_dir = "glmperm_out";
    std::size_t threads = 0;

    void validate() const {
        require(!data_path.empty(), ErrorKind::InvalidInput, "--data is required");
        require(!design_path.empty(), ErrorKind::InvalidInput, "--design is required");
        require(missing != MissingPolicy::PCMR || test == TestKind::Permutation, ErrorKind::InvalidInput,
                "pcmr requires --test permutation");
        require(missing != MissingPolicy::PCMR || test_cfg.scheme == PermutationScheme::Raw, ErrorKind::InvalidInput,
                "pcmr requires --scheme raw");
        require(outlier_alpha > 0.0 && outlier_alpha < 1.0, ErrorKind::InvalidInput, "outlier alpha must be in (0, 1)");
        require(tsr_components >= 0, ErrorKind::InvalidInput, "TSR components must be >= 0");
        if (test == TestKind::Permutation) test_cfg.validate();
        else require(test_cfg.alpha > 0.0 && test_cfg.alpha < 1.0, ErrorKind::InvalidInput, "alpha must be in (0, 1)");
    }

    nlohmann::json to_json() const {
        return {{"data", data_path},
                {"design", design_path},
                {"model", model},
                {"missing", to_string(missing)},
                {"transform", to_string(transform)},
                {"boxcox_shift", boxcox_shift},
                {"test", to_string(test)},
                {"permutations", test_cfg.n_permutations},
                {"scheme", to_string(test_cfg.scheme)},
                {"statistic", to_string(test_cfg.statistic)},
                {"alpha", test_cfg.alpha},
                {"seed", test_cfg.seed},
                {"mtc", to_string(mtc)},
                {"tsr_components", tsr_components},
                {"outlier_alpha", outlier_alpha},
                {"remove_outliers", remove_outliers},
                {"dual_pipeline", dual_pipeline},
                {"out", out_dir},
                {"threads", threads}};
    }
};

// ---------------------------------------------------------------------------
// One analysis pass
// ---------------------------------------------------------------------------

struct SsRow {
    std::string response;
    std::string source;
    int dof = 0;
    double ss = 0.0;
};

struct AnalysisResult {
    PValueTable p;
    Matrix p_adjusted;                  // M x T
    std::vector<std::string> test_used; // per response
    std::vector<SsRow> ss;
    std::optional<OutlierReport> outliers;
    std::vector<Eigen::Index> removed_rows; // 0-based, in the input numbering
    std::vector<std::string> warnings;
    bool permutation = false;
    std::size_t n_permutations = 0;
};

namespace detail {

inline void append_ss(std::vector<SsRow>& rows, const Factorization& f) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(f.response_names.size()); ++j) {
        const auto& name = f.response_names[static_cast<std::size_t>(j)];
        for (std::size_t t = 0; t < f.term_names.size(); ++t)
            rows.push_back({name, f.term_names[t], f.dofs.term[t], f.ss_terms[t](j)});
        rows.push_back({name, "Residuals", f.dofs.residual, f.ss_residual(j)});
        rows.push_back({name, "Total", f.dofs.total, f.ss_total_centered(j)});
    }
}

/// Two-group comparison of one response: Anderson-Darling on the
/// within-group residuals picks the t-test (normal) or the Wilcoxon test.
inline std::pair<TestResult, std::string> traditional_test(const Vector& y, const Eigen::VectorXi& level) {
    std::vector<double> a, b;
    for (Eigen::Index i = 0; i < y.size(); ++i) (level(i) == 1 ? a : b).push_back(y(i));
    const Vector g1 = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
    const Vector g2 = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    bool normal = true;
    if (y.size() >= 8) {
        Vector resid(y.size());
        resid << (g1.array() - g1.mean()).matrix(), (g2.array() - g2.mean()).matrix();
        const double sd = std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size() - 1));
        if (sd > 0.0) normal = normality_test(resid).p >= 0.05;
    }
    if (normal) return {t_test(g1, g2), "t"};
    return {wilcoxon_rank_sum(g1, g2), "wilcoxon"};
}

/// p-values for one complete response on its own design (RMD and
/// traditional paths).
inline void test_single_response(const Vector& y, const DesignSpec& d, TestKind test, const TestConfig& tc,
                                 Eigen::Index j, PValueTable& out, std::string& used) {
    const ResponseMatrix one(Matrix(y), std::vector<std::string>{out.responses.at(static_cast<std::size_t>(j))});
    if (test == TestKind::Traditional) {
        const auto [r, name] = traditional_test(y, d.assignments.col(static_cast<Eigen::Index>(d.terms.at(0).factors.at(0))));
        out.p(j, 0) = r.p;
        out.statistic(j, 0) = r.statistic;
        used = name;
        return;
    }
    PValueTable single = test == TestKind::Parametric ? parametric_anova(fit(d, one)) : permutation_test(one, d, tc);
    out.p.row(j) = single.p.row(0);
    out.statistic.row(j) = single.statistic.row(0);
    for (auto& w : single.warnings) out.warnings.push_back(std::move(w));
    used = to_string(test);
}

} // namespace detail

/// Imputation (or removal), transform, factorization, inference, correction
/// and residual diagnostics for one dataset.
inline AnalysisResult analyze_data(const ResponseMatrix& input, const DesignSpec& d, const PipelineConfig& cfg,
                                   TransformKind transform, bool remove_outliers) {
    AnalysisResult res;
    const bool has_missing = input.has_missing();
    const auto t_count = static_cast<Eigen::Index>(d.terms.size());
    if (cfg.test == TestKind::Traditional) {
        require(d.terms.size() == 1 && d.terms[0].is_main() && d.factors.at(d.terms[0].factors[0]).n_levels == 2,
                ErrorKind::InvalidInput, "traditional tests need a model with a single two-level factor");
    }

    // Missing data first, then the transform on the completed (or observed) entries.
    ResponseMatrix x = input;
    if (has_missing) {
        switch (cfg.missing) {
        case MissingPolicy::UMR: x = umr(input).as_response(input.names); break;
        case MissingPolicy::CMR: x = cmr(input, d).as_response(input.names); break;
        case MissingPolicy::TSR: {
            const ImputedMatrix imp = tsr(input, cfg.tsr_components);
            if (!imp.converged)
                res.warnings.push_back("NonConvergence: TSR stopped after " + std::to_string(imp.iterations) + " iterations");
            x = imp.as_response(input.names);
            break;
        }
        case MissingPolicy::RMD:
        case MissingPolicy::PCMR: break;
        }
    }
    BoxCoxOptions bc;
    bc.allow_shift = cfg.boxcox_shift;
    TransformResult tr = apply_transform(x, transform, bc);
    for (auto& w : tr.warnings) res.warnings.push_back(std::move(w));
    const ResponseMatrix& xt = tr.data;
    const Eigen::Index m = xt.cols();
    const bool per_response = cfg.test == TestKind::Traditional || (has_missing && cfg.missing == MissingPolicy::RMD);
    res.permutation = cfg.test == TestKind::Permutation;
    res.n_permutations = cfg.test_cfg.n_permutations;

    // Complete matrix used for the SS table and residual diagnostics.
    ResponseMatrix complete = xt;
    if (xt.has_missing()) complete = cmr(xt, d).as_response(xt.names);

    if (per_response) {
        res.p = PValueTable{xt.names, d.term_names(), Matrix(m, t_count), Matrix(m, t_count), {}, 0};
        res.test_used.resize(static_cast<std::size_t>(m));
        for (Eigen::Index j = 0; j < m; ++j) {
            if (xt.missing.col(j).any()) {
                const RmdSplit split = rmd_split(xt.values.col(j), xt.missing.col(j), d);
                detail::test_single_response(split.values, split.design, cfg.test, cfg.test_cfg, j, res.p,
                                             res.test_used[static_cast<std::size_t>(j)]);
                Factorization f = fit(split.design, ResponseMatrix(Matrix(split.values), {xt.names[static_cast<std::size_t>(j)]}));
                detail::append_ss(res.ss, f);
            } else {
                detail::test_single_response(xt.values.col(j), d, cfg.test, cfg.test_cfg, j, res.p,
                                             res.test_used[static_cast<std::size_t>(j)]);
                detail::append_ss(res.ss, fit(d, xt.column(j)));
            }
        }
    } else {
        const Factorization f = fit(d, complete);
        detail::append_ss(res.ss, f);
        if (cfg.test == TestKind::Parametric) {
            res.p = parametric_anova(f);
        } else if (xt.has_missing()) {
            res.p = pcmr_permutation_test(xt, d, cfg.test_cfg);
        } else {
            res.p = permutation_test(xt, d, cfg.test_cfg);
        }
        res.test_used.assign(static_cast<std::size_t>(m), to_string(cfg.test));
    }
    for (auto& w : res.p.warnings) res.warnings.push_back(std::move(w));

    // Multiple-testing correction across responses, per term.
    res.p_adjusted.resize(m, t_count);
    for (Eigen::Index t = 0; t < t_count; ++t) {
        std::vector<double> col(res.p.p.col(t).data(), res.p.p.col(t).data() + m);
        const auto adj = adjust_pvalues(col, cfg.mtc);
        for (Eigen::Index j = 0; j < m; ++j) res.p_adjusted(j, t) = adj[static_cast<std::size_t>(j)];
    }

    // Residual diagnostics.
    try {
        const Factorization f = fit(d, complete);
        res.outliers = detect_outliers(f.residuals, cfg.outlier_alpha);
        if (res.outliers->degenerate_q) res.warnings.push_back("DegenerateQ: Q limit set to the largest training Q");
    } catch (const Error& e) {
        res.warnings.push_back(std::string("outlier diagnostics skipped: ") + e.what());
    }

    if (remove_outliers && res.outliers && !res.outliers->flagged.empty()) {
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < input.rows(); ++i)
            if (std::find(res.outliers->flagged.begin(), res.outliers->flagged.end(), i) == res.outliers->flagged.end())
                keep.push_back(i);
        AnalysisResult again = analyze_data(input.subset_rows(keep), d.subset_rows(keep), cfg, transform, false);
        again.outliers = res.outliers;
        again.removed_rows = res.outliers->flagged;
        res.warnings.push_back(std::to_string(again.removed_rows.size()) + " outlying observation(s) removed");
        for (auto& w : again.warnings) res.warnings.push_back(std::move(w));
        again.warnings = std::move(res.warnings);
        return again;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline std::string display_p(double p, bool permutation, std::size_t n_permutations) {
    if (permutation) {
        const double floor = 1.0 / (static_cast<double>(n_permutations) + 1.0);
        if (p <= floor * (1.0 + 1e-12)) return "<" + io::format_number(floor);
    }
    return io::format_number(p);
}

inline std::string render_pvalues(const AnalysisResult& r, double alpha) {
    io::CsvWriter w({"response", "term", "statistic", "p", "p_display", "p_adjusted", "significant", "test"});
    for (Eigen::Index j = 0; j < r.p.p.rows(); ++j)
        for (Eigen::Index t = 0; t < r.p.p.cols(); ++t)
            w.row({r.p.responses.at(static_cast<std::size_t>(j)), r.p.terms.at(static_cast<std::size_t>(t)),
                   io::format_number(r.p.statistic(j, t)), io::format_number(r.p.p(j, t)),
                   display_p(r.p.p(j, t), r.permutation, r.n_permutations), io::format_number(r.p_adjusted(j, t)),
                   r.p_adjusted(j, t) < alpha ? "1" : "0", r.test_used.at(static_cast<std::size_t>(j))});
    return w.str();
}

inline std::string render_ss_table(const AnalysisResult& r) {
    io::CsvWriter w({"response", "source", "dof", "ss"});
    std::vector<std::string> sources;
    std::map<std::string, double> sum;
    std::map<std::string, int> dof;
    std::map<std::string, bool> dof_consistent;
    for (const auto& row : r.ss) {
        w.row({row.response, row.source, std::to_string(row.dof), io::format_number(row.ss)});
        if (!sum.count(row.source)) {
            sources.push_back(row.source);
            dof[row.source] = row.dof;
            dof_consistent[row.source] = true;
        }
        sum[row.source] += row.ss;
        if (dof[row.source] != row.dof) dof_consistent[row.source] = false;
    }
    for (const auto& s : sources)
        w.row({"ALL", s, dof_consistent[s] ? std::to_string(dof[s]) : "NA", io::format_number(sum[s])});
    return w.str();
}

inline std::string render_outliers(const AnalysisResult& r) {
    io::CsvWriter w({"observation", "D", "Q", "D_limit", "Q_limit", "flagged", "removed"});
    if (!r.outliers) return w.str();
    const OutlierReport& o = *r.outliers;
    for (Eigen::Index i = 0; i < o.d.size(); ++i) {
        const bool flagged = std::find(o.flagged.begin(), o.flagged.end(), i) != o.flagged.end();
        const bool removed = std::find(r.removed_rows.begin(), r.removed_rows.end(), i) != r.removed_rows.end();
        w.row({std::to_string(i + 1), io::format_number(o.d(i)), io::format_number(o.q(i)), io::format_number(o.d_limit),
               io::format_number(o.q_limit), flagged ? "1" : "0", removed ? "1" : "0"});
    }
    return w.str();
}

inline std::string render_outlier_svg(const OutlierReport& o) {
    io::PlotSpec plot{"Residual diagnostics", "D statistic", "Q statistic", {}, false, {o.q_limit}, {o.d_limit}};
    io::PlotSeries inside{"within limits", {}, {}, {}}, flagged{"flagged", {}, {}, {}};
    for (Eigen::Index i = 0; i < o.d.size(); ++i) {
        const bool f = std::find(o.flagged.begin(), o.flagged.end(), i) != o.flagged.end();
        (f ? flagged : inside).x.push_back(o.d(i));
        (f ? flagged : inside).y.push_back(o.q(i));
    }
    plot.series = {inside, flagged};
    return io::render_svg(plot);
}

inline std::string render_consistency(const AnalysisResult& raw, const AnalysisResult& rank, double alpha) {
    io::CsvWriter w({"response", "term", "p_adjusted_raw", "p_adjusted_rank", "significant_raw", "significant_rank",
                     "consistency"});
    for (Eigen::Index j = 0; j < raw.p.p.rows(); ++j)
        for (Eigen::Index t = 0; t < raw.p.p.cols(); ++t) {
            const bool a = raw.p_adjusted(j, t) < alpha, b = rank.p_adjusted(j, t) < alpha;
            w.row({raw.p.responses.at(static_cast<std::size_t>(j)), raw.p.terms.at(static_cast<std::size_t>(t)),
                   io::format_number(raw.p_adjusted(j, t)), io::format_number(rank.p_adjusted(j, t)), a ? "1" : "0",
                   b ? "1" : "0", a == b ? "agree" : "disagree"});
        }
    return w.str();
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

class Manifest {
public:
    explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
        doc_["tool"] = "glmperm";
        doc_["version"] = GLMPERM_VERSION;
        doc_["command"] = std::move(command);
        doc_["warnings"] = nlohmann::json::array();
        doc_["outputs"] = nlohmann::json::array();
        doc_["inputs"] = nlohmann::json::object();
    }

    void config(nlohmann::json c) { doc_["config"] = std::move(c); }
    void seed(std::uint64_t s) { doc_["seed"] = s; }
    void input(const std::string& path) { doc_["inputs"][path] = io::file_checksum(path); }
    void warn(const std::string& w) { doc_["warnings"].push_back(w); }
    void output(const std::string& name) { doc_["outputs"].push_back(name); }
    void set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }

    std::string finish(int exit_code, const std::string& error = {}) {
        doc_["exit_code"] = exit_code;
        doc_["status"] = exit_code == exit_ok ? "ok" : "error";
        if (!error.empty()) doc_["error"] = error;
        doc_["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return doc_.dump(2) + "\n";
    }

private:
    nlohmann::json doc_;
    std::chrono::steady_clock::time_point start_;
};

namespace detail {

inline int exit_code_for(const Error& e) { return is_numerical(e.kind()) ? exit_numerical_error : exit_input_error; }

/// Runs body, maps failures to exit codes and always tries to leave a manifest.
template <class Body>
int run_with_manifest(Manifest& manifest, const std::string& out_dir, std::ostream& err, Body&& body) {
    int code = exit_ok;
    std::string message;
    try {
        body();
    } catch (const Error& e) {
        code = exit_code_for(e);
        message = e.what();
    } catch (const std::filesystem::filesystem_error& e) {
        code = exit_input_error;
        message = e.what();
    }
    if (!message.empty()) err << "error: " << message << "\n";
    try {
        io::write_file_atomic(std::filesystem::path(out_dir) / "manifest.json", manifest.finish(code, message));
    } catch (const std::exception& e) {
        err << "warning: manifest not written: " << e.what() << "\n";
    }
    return code;
}

inline void emit(const std::filesystem::path& dir, const std::string& name, const std::string& content, Manifest& manifest) {
    io::write_file_atomic(dir / name, content);
    manifest.output(name);
}

} // namespace detail

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

inline int run_analyze(const PipelineConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Manifest manifest("analyze");
    manifest.config(cfg.to_json());
    manifest.seed(cfg.test_cfg.seed);
    const std::filesystem::path dir(cfg.out_dir);
    return detail::run_with_manifest(manifest, cfg.out_dir, err, [&] {
        if (!cfg.data_path.empty()) manifest.input(cfg.data_path);
        if (!cfg.design_path.empty()) manifest.input(cfg.design_path);
        cfg.validate();
        set_thread_count(cfg.threads);
        const ResponseMatrix x = io::read_responses(cfg.data_path);
        std::string formula = cfg.model;
        if (formula.empty()) {
            const io::CsvTable header = io::read_csv(cfg.design_path);
            for (std::size_t f = 0; f < header.header.size(); ++f) formula += (f ? "+" : "") + header.header[f];
        }
        const DesignSpec d = io::read_design(cfg.design_path, formula);
        if (x.rows() != d.n_obs())
            fail(ErrorKind::InvalidInput, "row count mismatch: " + cfg.data_path + " has " + std::to_string(x.rows()) +
                                              " observations, " + cfg.design_path + " has " + std::to_string(d.n_obs()));
        dof_table(d);
        build_coding_matrix(d);

        const AnalysisResult r = analyze_data(x, d, cfg, cfg.transform, cfg.remove_outliers);
        for (const auto& w : r.warnings) {
            manifest.warn(w);
            err << "warning: " << w << "\n";
        }
        detail::emit(dir, "pvalues.csv", render_pvalues(r, cfg.test_cfg.alpha), manifest);
        detail::emit(dir, "ss_table.csv", render_ss_table(r), manifest);
        detail::emit(dir, "outliers.csv", render_outliers(r), manifest);
        if (r.outliers) detail::emit(dir, "outliers.svg", render_outlier_svg(*r.outliers), manifest);

        if (cfg.dual_pipeline) {
            const AnalysisResult raw = analyze_data(x, d, cfg, TransformKind::None, cfg.remove_outliers);
            const AnalysisResult rank = analyze_data(x, d, cfg, TransformKind::Rank, false);
            detail::emit(dir, "consistency.csv", render_consistency(raw, rank, cfg.test_cfg.alpha), manifest);
        }

        std::size_t significant = 0;
        for (Eigen::Index j = 0; j < r.p_adjusted.size(); ++j) significant += r.p_adjusted.data()[j] < cfg.test_cfg.alpha;
        out << "analyzed " << r.p.p.rows() << " response(s) x " << r.p.p.cols() << " term(s); " << significant
            << " significant at alpha " << cfg.test_cfg.alpha << " (" << to_string(cfg.mtc) << ")";
        if (r.outliers) out << "; " << r.outliers->flagged.size() << " outlying observation(s)";
        out << "\nresults written to " << cfg.out_dir << "\n";
    });
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidateConfig {
    std::string data_path;
    std::string design_path;
    std::string out_dir; // empty: report to stdout only
    double alpha = 0.05;
};

inline int run_validate(const ValidateConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Manifest manifest("validate");
    manifest.config({{"data", cfg.data_path}, {"design", cfg.design_path}, {"alpha", cfg.alpha}});
    const std::string manifest_dir = cfg.out_dir.empty() ? std::string{} : cfg.out_dir;
    auto body = [&] {
        manifest.input(cfg.data_path);
        manifest.input(cfg.design_path);
        const ResponseMatrix x = io::read_responses(cfg.data_path);
        const io::CsvTable header = io::read_csv(cfg.design_path);
        std::string formula;
        for (std::size_t f = 0; f < header.header.size(); ++f) formula += (f ? "+" : "") + header.header[f];
        const DesignSpec d = io::read_design(cfg.design_path, formula);
        if (x.rows() != d.n_obs())
            fail(ErrorKind::InvalidInput, "row count mismatch: " + cfg.data_path + " has " + std::to_string(x.rows()) +
                                              " observations, " + cfg.design_path + " has " + std::to_string(d.n_obs()));
        const CellIndex cells = cell_index(d);

        io::CsvWriter counts({"response", "cell", "n", "observed"});
        io::CsvWriter normal({"response", "n", "statistic", "p", "flagged", "suggestion"});
        std::vector<std::string> infeasible;
        out << "responses: " << x.cols() << ", observations: " << x.rows() << ", missing entries: " << x.missing_count()
            << " (" << io::format_number(100.0 * static_cast<double>(x.missing_count()) / static_cast<double>(x.values.size()))
            << "%)\n";
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const auto& name = x.names[static_cast<std::size_t>(j)];
            std::vector<int> n_cell(static_cast<std::size_t>(cells.n_cells), 0), obs(static_cast<std::size_t>(cells.n_cells), 0);
            std::vector<double> sum(static_cast<std::size_t>(cells.n_cells), 0.0);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const auto c = static_cast<std::size_t>(cells.cell_of_row[static_cast<std::size_t>(i)]);
                ++n_cell[c];
                if (!x.missing(i, j)) {
                    ++obs[c];
                    sum[c] += x.values(i, j);
                }
            }
            for (int c = 0; c < cells.n_cells; ++c) {
                const auto cu = static_cast<std::size_t>(c);
                counts.row({name, describe_cell(d, cells, c), std::to_string(n_cell[cu]), std::to_string(obs[cu])});
                if (obs[cu] == 0) infeasible.push_back("response '" + name + "', cell (" + describe_cell(d, cells, c) + ")");
            }
            std::vector<double> resid, observed;
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                if (x.missing(i, j)) continue;
                const auto c = static_cast<std::size_t>(cells.cell_of_row[static_cast<std::size_t>(i)]);
                resid.push_back(x.values(i, j) - sum[c] / obs[c]);
                observed.push_back(x.values(i, j));
            }
            const auto n = static_cast<Eigen::Index>(resid.size());
            const double sd = n > 1 ? Eigen::Map<const Vector>(resid.data(), n).norm() : 0.0;
            if (n < 8 || !(sd > 0.0)) {
                normal.row({name, std::to_string(n), "NA", "NA", "0", "insufficient data for screening"});
                continue;
            }
            const TestResult t = normality_test(Eigen::Map<const Vector>(resid.data(), n));
            const bool flagged = t.p < cfg.alpha;
            const bool positive = *std::min_element(observed.begin(), observed.end()) > 0.0;
            normal.row({name, std::to_string(n), io::format_number(t.statistic), io::format_number(t.p), flagged ? "1" : "0",
                        flagged ? (positive ? "boxcox or rank" : "rank") : "none"});
            if (flagged)
                out << "response '" << name << "': non-normal residuals (AD p = " << io::format_number(t.p)
                    << "), consider " << (positive ? "boxcox or rank" : "rank") << " transform\n";
        }
        if (infeasible.empty()) {
            out << "CMR feasible: every cell has observed values for every response\n";
        } else {
            out << "CMR infeasible for " << infeasible.size() << " (cell, response) pair(s):\n";
            for (const auto& s : infeasible) out << "  " << s << "\n";
        }
        if (!cfg.out_dir.empty()) {
            const std::filesystem::path dir(cfg.out_dir);
            detail::emit(dir, "cell_counts.csv", counts.str(), manifest);
            detail::emit(dir, "normality.csv", normal.str(), manifest);
        } else {
            out << "\nnormality screen\n" << normal.str();
        }
    };
    if (!cfg.out_dir.empty()) return detail::run_with_manifest(manifest, manifest_dir, err, body);
    try {
        body();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return detail::exit_code_for(e);
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateConfig {
    std::string study; // table1 | fig1 | power
    bool check = false;
    std::string out_dir = "glmperm_sim";
    std::uint64_t seed = 1;
    std::size_t threads = 0;
    bool svg = false;
    // table1
    int sims = 10;
    double missing = 0.05;
    int tsr_components = 2;
    // fig1 and power
    int replicates = -1; // study default
    std::size_t perms = 200;
    std::vector<double> grid; // missing grid (fig1) or effect grid (power)
    std::string model = "both"; // fig1: main | interaction | both
    std::string dist = "all";   // power
    int responses = -1;         // study default
    double delta = -1.0;        // study default
    double sigma = -1.0;        // study default
    double outlier_magnitude = 10.0;

    nlohmann::json to_json() const {
        return {{"study", study}, {"check", check}, {"out", out_dir}, {"seed", seed}, {"threads", threads},
                {"svg", svg}, {"sims", sims}, {"missing", missing}, {"tsr_components", tsr_components},
                {"replicates", replicates}, {"perms", perms}, {"grid", grid}, {"model", model}, {"dist", dist},
                {"responses", responses}, {"delta", delta}, {"sigma", sigma}, {"outlier_magnitude", outlier_magnitude}};
    }
};

/// Factor A (4 levels) x factor B (3 levels), 4 replicates per cell,
/// 400 responses, A active.
inline SimConfig missing_study_config() {
    SimConfig c;
    c.residual_sigma = 0.6;
    c.delta = 1.0;
    return c;
}

inline std::string render_table1(const SsTable& t) {
    std::vector<std::string> header{"source"};
    header.insert(header.end(), t.columns.begin(), t.columns.end());
    io::CsvWriter w(header);
    for (Eigen::Index r = 0; r < t.ss.rows(); ++r) {
        std::vector<std::string> row{t.rows[static_cast<std::size_t>(r)]};
        for (Eigen::Index c = 0; c < t.ss.cols(); ++c) row.push_back(io::format_number(t.ss(r, c)));
        w.row(row);
    }
    return w.str();
}

inline std::string render_fig1(const Fig1Result& r) {
    io::CsvWriter w({"m", "method", "mean_err", "sd"});
    for (std::size_t g = 0; g < r.grid.size(); ++g)
        for (std::size_t k = 0; k < r.methods.size(); ++k)
            w.row({io::format_number(r.grid[g]), to_string(r.methods[k]),
                   io::format_number(r.mean(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k))),
                   io::format_number(r.sd(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)))});
    return w.str();
}

inline std::string render_fig1_svg(const Fig1Result& r, const std::string& title) {
    io::PlotSpec plot{title, "fraction missing", "Err", {}, true, {0.0}, {}};
    for (std::size_t k = 0; k < r.methods.size(); ++k) {
        io::PlotSeries s{to_string(r.methods[k]), r.grid, {}, {}};
        for (std::size_t g = 0; g < r.grid.size(); ++g) {
            s.y.push_back(r.mean(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)));
            s.band.push_back(r.sd(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)));
        }
        plot.series.push_back(std::move(s));
    }
    return io::render_svg(plot);
}

inline std::string render_power(const std::vector<PowerCurve>& curves) {
    io::CsvWriter w({"delta", "transform", "power"});
    if (curves.empty()) return w.str();
    for (std::size_t g = 0; g < curves.front().effect_grid.size(); ++g)
        for (const auto& c : curves)
            w.row({io::format_number(c.effect_grid[g]), to_string(c.transform), io::format_number(c.power[g])});
    return w.str();
}

inline std::string render_power_svg(const std::vector<PowerCurve>& curves) {
    const std::string dist = curves.empty() ? "" : to_string(curves.front().distribution);
    io::PlotSpec plot{"Power, residuals: " + dist, "effect size", "rejection rate", {}, true,
                      {curves.empty() ? 0.05 : curves.front().alpha}, {}};
    for (const auto& c : curves) plot.series.push_back({to_string(c.transform), c.effect_grid, c.power, {}});
    return io::render_svg(plot);
}

inline std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = io::detail::trim(item);
        if (item.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) fail(ErrorKind::InvalidInput, "cannot parse grid value '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) fail(ErrorKind::InvalidInput, "empty grid");
    return out;
}

namespace detail {

inline void report_checks(const std::string& label, const std::vector<CheckResult>& checks, std::ostream& out,
                          Manifest& manifest, bool& all_ok) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) {
        out << (c.passed ? "PASS " : "FAIL ") << label << ": " << c.name << " [" << c.detail << "]\n";
        arr.push_back({{"check", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        all_ok = all_ok && c.passed;
    }
    manifest.set("checks_" + label, std::move(arr));
}

} // namespace detail

inline int run_simulate(const SimulateConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Manifest manifest("simulate " + cfg.study);
    manifest.config(cfg.to_json());
    manifest.seed(cfg.seed);
    const std::filesystem::path dir(cfg.out_dir);
    bool all_ok = true;
    const int code = detail::run_with_manifest(manifest, cfg.out_dir, err, [&] {
        set_thread_count(cfg.threads);
        require(cfg.perms >= 99, ErrorKind::InvalidInput, "need at least 99 permutations");
        manifest.warn("missing entries are generated completely at random");
        if (cfg.study == "table1") {
            SimConfig sc = missing_study_config();
            sc.seed = cfg.seed;
            if (cfg.responses > 0) sc.n_responses = cfg.responses;
            if (cfg.delta >= 0.0) sc.delta = cfg.delta;
            if (cfg.sigma > 0.0) sc.residual_sigma = cfg.sigma;
            Table1Options opt{cfg.sims, cfg.missing, cfg.tsr_components};
            require(opt.n_sims >= 1, ErrorKind::InvalidInput, "--sims must be >= 1");
            const SsTable t = table1_experiment(sc, opt);
            detail::emit(dir, "table1.csv", render_table1(t), manifest);
            out << render_table1(t);
            if (cfg.check) detail::report_checks("table1", check_table1(t, cfg.missing), out, manifest, all_ok);
        } else if (cfg.study == "fig1") {
            require(cfg.model == "main" || cfg.model == "interaction" || cfg.model == "both", ErrorKind::InvalidInput,
                    "--model must be main, interaction or both");
            Fig1Options opt;
            if (!cfg.grid.empty()) opt.missing_grid = cfg.grid;
            if (cfg.replicates > 0) opt.n_replicates = cfg.replicates;
            opt.n_permutations = cfg.perms;
            require(opt.n_replicates >= 2, ErrorKind::InvalidInput, "--replicates must be >= 2");
            for (const std::string model : {"main", "interaction"}) {
                if (cfg.model != "both" && cfg.model != model) continue;
                SimConfig sc = missing_study_config();
                sc.seed = cfg.seed;
                if (cfg.responses > 0) sc.n_responses = cfg.responses;
                if (cfg.delta >= 0.0) sc.delta = cfg.delta;
                if (cfg.sigma > 0.0) sc.residual_sigma = cfg.sigma;
                const bool inter = model == std::string("interaction");
                if (inter) sc.model_terms = {Term{{0}}, Term{{1}}, Term{{0, 1}}};
                const Fig1Result r = fig1_experiment(sc, opt);
                detail::emit(dir, "fig1_" + std::string(model) + ".csv", render_fig1(r), manifest);
                if (cfg.svg)
                    detail::emit(dir, "fig1_" + std::string(model) + ".svg",
                                 render_fig1_svg(r, std::string("Relative p-value error, model ") + (inter ? "A+B+A*B" : "A+B")),
                                 manifest);
                out << "fig1 (" << model << ")\n" << render_fig1(r);
                if (cfg.check) detail::report_checks(std::string("fig1_") + model, check_fig1(r, inter), out, manifest, all_ok);
            }
        } else if (cfg.study == "power") {
            std::vector<ResidualDistribution> dists;
            if (cfg.dist == "all") dists = all_distributions();
            else dists.push_back(parse_distribution(cfg.dist));
            PowerOptions opt;
            if (!cfg.grid.empty()) opt.effect_grid = cfg.grid;
            if (cfg.replicates > 0) opt.n_replicates = cfg.replicates;
            opt.n_permutations = cfg.perms;
            std::map<ResidualDistribution, std::vector<PowerCurve>> all;
            for (const auto dist : dists) {
                SimConfig sc = power_design_config();
                sc.seed = cfg.seed;
                sc.residual_distribution = dist;
                sc.outlier_magnitude = cfg.outlier_magnitude;
                if (cfg.responses > 0) sc.n_responses = cfg.responses;
                if (cfg.sigma > 0.0) sc.residual_sigma = cfg.sigma;
                const auto curves = power_curves(sc, opt);
                detail::emit(dir, "fig2_" + to_string(dist) + ".csv", render_power(curves), manifest);
                if (cfg.svg) detail::emit(dir, "fig2_" + to_string(dist) + ".svg", render_power_svg(curves), manifest);
                out << "power (" << to_string(dist) << ")\n" << render_power(curves);
                if (cfg.check) detail::report_checks("power_" + to_string(dist), {check_rank_vs_boxcox(curves)}, out, manifest, all_ok);
                all[dist] = curves;
            }
            if (cfg.check && all.count(ResidualDistribution::Normal) && all.count(ResidualDistribution::NormalOneOutlier))
                detail::report_checks("power_outlier",
                                      check_outlier_robustness(all[ResidualDistribution::Normal],
                                                               all[ResidualDistribution::NormalOneOutlier]),
                                      out, manifest, all_ok);
        } else {
            fail(ErrorKind::InvalidInput, "unknown study '" + cfg.study + "' (expected table1, fig1 or power)");
        }
        if (cfg.check) out << (all_ok ? "check: PASS" : "check: FAIL") << "\n";
    });
    return code;
}

} // namespace glmperm
