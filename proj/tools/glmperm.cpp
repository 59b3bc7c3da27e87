#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "glmperm/glmperm.hpp"

namespace {

struct AnalyzeFlags {
    glmperm::PipelineConfig cfg;
    std::string missing = "pcmr";
    std::string transform = "none";
    std::string test = "permutation";
    std::string scheme = "raw";
    std::string stat = "F";
    std::string mtc = "bh";
};

struct SimulateFlags {
    glmperm::SimulateConfig cfg;
    std::string grid;
};

glmperm::PipelineConfig resolve(const AnalyzeFlags& f) {
    glmperm::PipelineConfig cfg = f.cfg;
    cfg.missing = glmperm::parse_missing_policy(f.missing);
    cfg.transform = glmperm::parse_transform(f.transform);
    cfg.test = glmperm::parse_test_kind(f.test);
    cfg.test_cfg.scheme = glmperm::parse_scheme(f.scheme);
    cfg.test_cfg.statistic = glmperm::parse_statistic(f.stat);
    cfg.mtc = glmperm::parse_mtc(f.mtc);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GLM factorization with parametric and permutation inference for multi-response designed experiments"};
    app.set_version_flag("--version", std::string(GLMPERM_VERSION));
    app.require_subcommand(1);

    AnalyzeFlags af;
    auto* analyze = app.add_subcommand("analyze", "Factorize and test a response matrix against a design");
    analyze->add_option("--data", af.cfg.data_path, "Response CSV (header = response names; empty or NA = missing)")->required();
    analyze->add_option("--design", af.cfg.design_path, "Design CSV (header = factor names, cells = level labels)")->required();
    analyze->add_option("--model", af.cfg.model, "Model formula, e.g. \"A+B+A*B\" (default: all main effects)");
    analyze->add_option("--missing", af.missing, "Missing data: rmd, umr, cmr, tsr or pcmr")
        ->check(CLI::IsMember({"rmd", "umr", "cmr", "tsr", "pcmr"}))
        ->capture_default_str();
    analyze->add_option("--tsr-components", af.cfg.tsr_components, "Components used by TSR imputation")->capture_default_str();
    analyze->add_option("--transform", af.transform, "Transform: none, boxcox, rank or raw+rank")
        ->check(CLI::IsMember({"none", "boxcox", "rank", "raw+rank"}))
        ->capture_default_str();
    analyze->add_flag("--boxcox-shift", af.cfg.boxcox_shift, "Shift non-positive responses by 1 - min before Box-Cox");
    analyze->add_option("--test", af.test, "Test: parametric, permutation or traditional")
        ->check(CLI::IsMember({"parametric", "permutation", "traditional"}))
        ->capture_default_str();
    analyze->add_option("--perms", af.cfg.test_cfg.n_permutations, "Number of permutations")->capture_default_str();
    analyze->add_option("--scheme", af.scheme, "Permutation scheme: raw, reduced or full")
        ->check(CLI::IsMember({"raw", "reduced", "full"}))
        ->capture_default_str();
    analyze->add_option("--stat", af.stat, "Permutation statistic: F or SS")->check(CLI::IsMember({"F", "SS"}))->capture_default_str();
    analyze->add_option("--mtc", af.mtc, "Multiple-testing correction: none, bonferroni, bh or storey")
        ->check(CLI::IsMember({"none", "bonferroni", "bh", "storey"}))
        ->capture_default_str();
    analyze->add_option("--alpha", af.cfg.test_cfg.alpha, "Significance level")->capture_default_str();
    analyze->add_option("--seed", af.cfg.test_cfg.seed, "Random seed")->capture_default_str();
    analyze->add_option("--threads", af.cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
    analyze->add_option("--out", af.cfg.out_dir, "Output directory")->capture_default_str();
    analyze->add_option("--outlier-alpha", af.cfg.outlier_alpha, "Control-limit level for D and Q")->capture_default_str();
    analyze->add_flag("--remove-outliers", af.cfg.remove_outliers, "Drop flagged observations and refit once");
    analyze->add_flag("--dual-pipeline", af.cfg.dual_pipeline, "Also run raw and rank analyses and compare them");

    SimulateFlags sf;
    auto* simulate = app.add_subcommand("simulate", "Run a simulation study: table1, fig1 or power");
    simulate->add_option("study", sf.cfg.study, "table1, fig1 or power")
        ->required()
        ->check(CLI::IsMember({"table1", "fig1", "power"}));
    simulate->add_flag("--check", sf.cfg.check, "Report the ordinal checks for the study");
    simulate->add_option("--out", sf.cfg.out_dir, "Output directory")->capture_default_str();
    simulate->add_option("--seed", sf.cfg.seed, "Random seed")->capture_default_str();
    simulate->add_option("--threads", sf.cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
    simulate->add_flag("--svg", sf.cfg.svg, "Also write SVG plots");
    simulate->add_option("--sims", sf.cfg.sims, "table1: number of simulated datasets")->capture_default_str();
    simulate->add_option("--missing", sf.cfg.missing, "table1: fraction of entries made missing")->capture_default_str();
    simulate->add_option("--tsr-components", sf.cfg.tsr_components, "table1: TSR components")->capture_default_str();
    simulate->add_option("--replicates", sf.cfg.replicates, "fig1/power: replicates (default 20 / 300)");
    simulate->add_option("--perms", sf.cfg.perms, "fig1/power: permutations per test")->capture_default_str();
    simulate->add_option("--grid", sf.grid, "fig1: missing fractions; power: effect sizes (comma separated)");
    simulate->add_option("--model", sf.cfg.model, "fig1: main, interaction or both")->capture_default_str();
    simulate->add_option("--dist", sf.cfg.dist, "power: normal, uniform, exp_cubed, normal_one_outlier or all")
        ->check(CLI::IsMember({"normal", "uniform", "exp_cubed", "normal_one_outlier", "all"}))
        ->capture_default_str();
    simulate->add_option("--responses", sf.cfg.responses, "Number of responses (default 400 / 14)");
    simulate->add_option("--delta", sf.cfg.delta, "table1/fig1: effect scale of the active factor");
    simulate->add_option("--sigma", sf.cfg.sigma, "Residual standard deviation");
    simulate->add_option("--outlier-magnitude", sf.cfg.outlier_magnitude, "power: outlier size in residual sd")
        ->capture_default_str();

    glmperm::ValidateConfig vc;
    auto* validate = app.add_subcommand("validate", "Report missingness, CMR feasibility and a normality screen");
    validate->add_option("--data", vc.data_path, "Response CSV")->required();
    validate->add_option("--design", vc.design_path, "Design CSV")->required();
    validate->add_option("--out", vc.out_dir, "Optional output directory for CSV reports");
    validate->add_option("--alpha", vc.alpha, "Normality screen level")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? glmperm::exit_ok : glmperm::exit_input_error;
    }

    try {
        if (*analyze) return glmperm::run_analyze(resolve(af));
        if (*simulate) {
            if (!sf.grid.empty()) sf.cfg.grid = glmperm::parse_grid(sf.grid);
            return glmperm::run_simulate(sf.cfg);
        }
        if (*validate) return glmperm::run_validate(vc);
    } catch (const glmperm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return glmperm::is_numerical(e.kind()) ? glmperm::exit_numerical_error : glmperm::exit_input_error;
    }
    return glmperm::exit_input_error;
}
