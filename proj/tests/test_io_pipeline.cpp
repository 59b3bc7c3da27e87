#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "glmperm/glmperm.hpp"

using namespace glmperm;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("glmperm_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(file(name), std::ios::binary) << content;
        return file(name);
    }

private:
    fs::path path_;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const std::string& log) {
    const std::string cmd = std::string("\"") + GLMPERM_CLI + "\" " + args + " >\"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Writes a simulated dataset as data.csv and design.csv.
std::pair<std::string, std::string> write_dataset(const TempDir& tmp, const ResponseMatrix& x, const DesignSpec& d) {
    io::CsvWriter data(x.names);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<std::string> row;
        for (Eigen::Index j = 0; j < x.cols(); ++j) row.push_back(x.missing(i, j) ? "NA" : io::format_number(x.values(i, j)));
        data.row(row);
    }
    std::vector<std::string> names;
    for (const auto& f : d.factors) names.push_back(f.name);
    io::CsvWriter design(names);
    for (Eigen::Index i = 0; i < d.n_obs(); ++i) {
        std::vector<std::string> row;
        for (Eigen::Index f = 0; f < d.assignments.cols(); ++f) row.push_back("L" + std::to_string(d.assignments(i, f)));
        design.row(row);
    }
    return {tmp.write("data.csv", data.str()), tmp.write("design.csv", design.str())};
}

PipelineConfig base_config(const std::string& data, const std::string& design, const std::string& out) {
    PipelineConfig c;
    c.data_path = data;
    c.design_path = design;
    c.out_dir = out;
    c.test_cfg.n_permutations = 199;
    c.test_cfg.seed = 5;
    return c;
}

} // namespace

TEST(Csv, ReadsQuotesBomBlankLinesAndMissingTokens) {
    TempDir tmp;
    const auto path = tmp.write("d.csv", "\xEF\xBB\xBF\"y 1\",y2\r\n1.5,NA\r\n\n2,\r\n-3e2,7\r\n");
    const ResponseMatrix x = io::read_responses(path);
    ASSERT_EQ(x.rows(), 3);
    EXPECT_EQ(x.names, (std::vector<std::string>{"y 1", "y2"}));
    EXPECT_EQ(x.values(2, 0), -300.0);
    EXPECT_EQ(x.missing_count(), 2);
    EXPECT_TRUE(io::is_missing_token("na"));
    EXPECT_FALSE(io::is_missing_token("nan0"));
    EXPECT_EQ(x.values(2, 1), 7.0);
    EXPECT_TRUE(x.missing(1, 1));
}

TEST(Csv, ErrorsNameFileAndLine) {
    TempDir tmp;
    const auto bad_count = tmp.write("a.csv", "y1,y2\n1,2\n3\n");
    try {
        io::read_responses(bad_count);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
        EXPECT_NE(std::string(e.what()).find(bad_count + ":3"), std::string::npos) << e.what();
    }
    const auto bad_number = tmp.write("b.csv", "y1,y2\n1,2\n3,x4\n");
    try {
        io::read_responses(bad_number);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find(bad_number + ":3"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("y2"), std::string::npos);
    }
    EXPECT_THROW(io::read_responses(tmp.file("missing.csv")), Error);
}

TEST(Csv, DesignLevelsInFirstAppearanceOrder) {
    TempDir tmp;
    const auto path = tmp.write("design.csv", "dose,site\nhigh,x\nlow,x\nhigh,y\nlow,y\n");
    const DesignSpec d = io::read_design(path, "dose+site");
    EXPECT_EQ(d.factors[0].level_labels, (std::vector<std::string>{"high", "low"}));
    EXPECT_EQ(d.assignments(1, 0), 2);
    EXPECT_EQ(d.assignments(2, 1), 2);
    EXPECT_THROW(io::read_design(path, "dose+colour"), Error);
}

TEST(Csv, NumbersRoundTripToTwelveDigits) {
    std::mt19937_64 gen(1);
    std::lognormal_distribution<double> ln(0.0, 5.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = (i % 2 ? -1 : 1) * ln(gen);
        const double back = std::stod(io::format_number(v));
        EXPECT_LE(std::fabs(back - v), 5e-12 * std::fabs(v));
    }
    EXPECT_EQ(io::format_number(std::nan("")), "NA");
    EXPECT_EQ(io::csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(io::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(Csv, ChecksumDependsOnContent) {
    TempDir tmp;
    const auto a = tmp.write("a", "abc"), b = tmp.write("b", "abd"), c = tmp.write("c", "abc");
    EXPECT_EQ(io::file_checksum(a), io::file_checksum(c));
    EXPECT_NE(io::file_checksum(a), io::file_checksum(b));
}

TEST(Svg, RendersSeriesAndEscapesText) {
    io::PlotSpec p{"A & B", "x", "y", {{"s<1>", {0, 1, 2}, {1, 2, 3}, {0.1, 0.1, 0.1}}}, true, {0.0}, {}};
    const std::string svg = io::render_svg(p);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("A &amp; B"), std::string::npos);
    EXPECT_NE(svg.find("s&lt;1&gt;"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Analyze, ParametricMatchesDirectLibraryCalls) {
    TempDir tmp;
    SimConfig sc = power_design_config();
    sc.delta = 0.6;
    const SimDataset ds = generate_dataset(sc, RngStream(3));
    const auto [data, design] = write_dataset(tmp, ds.data, ds.design);
    PipelineConfig cfg = base_config(data, design, tmp.file("out"));
    cfg.model = "A+B+A*B";
    cfg.test = TestKind::Parametric;
    cfg.missing = MissingPolicy::CMR;
    std::ostringstream out, err;
    ASSERT_EQ(run_analyze(cfg, out, err), exit_ok) << err.str();

    const ResponseMatrix reread = io::read_responses(data);
    const PValueTable direct = parametric_anova(fit(ds.design, reread));
    const io::CsvTable table = io::read_csv(tmp.file("out/pvalues.csv"));
    ASSERT_EQ(table.rows.size(), static_cast<std::size_t>(14 * 3));
    for (Eigen::Index t = 0; t < 3; ++t) {
        std::vector<double> p(14);
        for (Eigen::Index j = 0; j < 14; ++j) p[static_cast<std::size_t>(j)] = direct.p(j, t);
        const std::vector<double> adj = adjust_pvalues(p, MtcMethod::BhFdr);
        for (Eigen::Index j = 0; j < 14; ++j) {
            const auto& row = table.rows[static_cast<std::size_t>(j * 3 + t)];
            EXPECT_EQ(row[0], ds.data.names[static_cast<std::size_t>(j)]);
            EXPECT_NEAR(std::stod(row[3]), direct.p(j, t), 1e-11 * direct.p(j, t) + 1e-300);
            EXPECT_NEAR(std::stod(row[5]), adj[static_cast<std::size_t>(j)], 1e-11 * adj[static_cast<std::size_t>(j)]);
            EXPECT_EQ(row[7], "parametric");
        }
    }
    for (const char* f : {"ss_table.csv", "outliers.csv", "manifest.json", "outliers.svg"})
        EXPECT_TRUE(fs::exists(tmp.file(std::string("out/") + f))) << f;
    const auto manifest = nlohmann::json::parse(slurp(tmp.file("out/manifest.json")));
    EXPECT_EQ(manifest["status"], "ok");
    EXPECT_EQ(manifest["inputs"][data], io::file_checksum(data));
    EXPECT_EQ(manifest["config"]["test"], "parametric");
}

TEST(Analyze, SsTableAggregatesAcrossResponses) {
    TempDir tmp;
    SimConfig sc = power_design_config();
    const SimDataset ds = generate_dataset(sc, RngStream(4));
    const auto [data, design] = write_dataset(tmp, ds.data, ds.design);
    PipelineConfig cfg = base_config(data, design, tmp.file("out"));
    cfg.test = TestKind::Parametric;
    cfg.missing = MissingPolicy::CMR;
    std::ostringstream out, err;
    ASSERT_EQ(run_analyze(cfg, out, err), exit_ok);
    const io::CsvTable t = io::read_csv(tmp.file("out/ss_table.csv"));
    double total = 0, all_total = -1, parts = 0;
    for (const auto& row : t.rows) {
        if (row[0] != "ALL" && row[1] == "Total") total += std::stod(row[3]);
        if (row[0] == "ALL" && row[1] == "Total") all_total = std::stod(row[3]);
        if (row[0] == "ALL" && row[1] != "Total") parts += std::stod(row[3]);
    }
    EXPECT_NEAR(all_total, total, 1e-9 * total);
    EXPECT_NEAR(parts, all_total, 1e-8 * all_total);
}

TEST(Analyze, PcmrHandlesMissingDataAndFlagsFloor) {
    TempDir tmp;
    SimConfig sc = power_design_config();
    sc.delta = 3.0;
    const SimDataset ds = generate_dataset(sc, RngStream(6));
    const ResponseMatrix masked = induce_missing(ds.data, ds.design, 0.1, RngStream(7));
    const auto [data, design] = write_dataset(tmp, masked, ds.design);
    PipelineConfig cfg = base_config(data, design, tmp.file("out"));
    std::ostringstream out, err;
    ASSERT_EQ(run_analyze(cfg, out, err), exit_ok) << err.str();
    const std::string csv = slurp(tmp.file("out/pvalues.csv"));
    EXPECT_NE(csv.find("<0.005"), std::string::npos);
    EXPECT_NE(csv.find("permutation"), std::string::npos);
}

TEST(Analyze, RowMismatchIsAnInputError) {
    TempDir tmp;
    const auto data = tmp.write("data.csv", "y\n1\n2\n3\n4\n5\n");
    const auto design = tmp.write("design.csv", "A\na\na\nb\nb\n");
    std::ostringstream out, err;
    EXPECT_EQ(run_analyze(base_config(data, design, tmp.file("out")), out, err), exit_input_error);
    EXPECT_NE(err.str().find(data), std::string::npos);
    EXPECT_NE(err.str().find(design), std::string::npos);
    EXPECT_NE(err.str().find("5"), std::string::npos);
    EXPECT_NE(err.str().find("4"), std::string::npos);
    const auto manifest = nlohmann::json::parse(slurp(tmp.file("out/manifest.json")));
    EXPECT_EQ(manifest["exit_code"], exit_input_error);
    EXPECT_EQ(manifest["status"], "error");
}

TEST(Analyze, EmptyInteractionCellIsANumericalError) {
    TempDir tmp;
    const auto data = tmp.write("data.csv", "y\n1\n2\n3\n4\n5\n6\n7\n8\n");
    const auto design = tmp.write("design.csv", "A,B\na,x\na,x\na,y\na,y\nb,x\nb,x\nb,x\nb,x\n");
    PipelineConfig cfg = base_config(data, design, tmp.file("out"));
    cfg.model = "A+B+A*B";
    cfg.test = TestKind::Parametric;
    cfg.missing = MissingPolicy::CMR;
    std::ostringstream out, err;
    EXPECT_EQ(run_analyze(cfg, out, err), exit_numerical_error) << err.str();
    EXPECT_TRUE(fs::exists(tmp.file("out/manifest.json")));
}

TEST(Analyze, PcmrWithParametricTestIsRejected) {
    TempDir tmp;
    PipelineConfig cfg = base_config(tmp.write("d.csv", "y\n1\n"), tmp.write("e.csv", "A\na\n"), tmp.file("out"));
    cfg.test = TestKind::Parametric;
    std::ostringstream out, err;
    EXPECT_EQ(run_analyze(cfg, out, err), exit_input_error);
    EXPECT_NE(err.str().find("pcmr"), std::string::npos);
}

TEST(Analyze, DualPipelineMarksPlantedOutlierAsDisagreement) {
    int disagree = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        TempDir tmp;
        SimConfig sc = power_design_config();
        sc.delta = 0.0;
        sc.n_responses = 4;
        SimDataset ds = generate_dataset(sc, RngStream(100 + s));
        // response 0: A shifts by 1.2 sd; one A=1 row carries a +40 sd outlier
        for (Eigen::Index i = 0; i < ds.data.rows(); ++i)
            if (ds.design.assignments(i, 0) == 2) ds.data.values(i, 0) += 1.2;
        ds.data.values(s % 30, 0) += 40.0;
        const auto [data, design] = write_dataset(tmp, ds.data, ds.design);
        PipelineConfig cfg = base_config(data, design, tmp.file("out"));
        cfg.model = "A+B+A*B";
        cfg.mtc = MtcMethod::None;
        cfg.dual_pipeline = true;
        cfg.test_cfg.seed = static_cast<std::uint64_t>(s);
        std::ostringstream out, err;
        ASSERT_EQ(run_analyze(cfg, out, err), exit_ok) << err.str();
        const io::CsvTable t = io::read_csv(tmp.file("out/consistency.csv"));
        ASSERT_EQ(t.rows[0][0], "y1");
        ASSERT_EQ(t.rows[0][1], "A");
        disagree += t.rows[0][4] == "0" && t.rows[0][5] == "1" && t.rows[0][6] == "disagree";
    }
    EXPECT_GE(disagree, seeds * 9 / 10);
}

TEST(Analyze, OutlierRemovalRefits) {
    TempDir tmp;
    SimConfig sc = power_design_config();
    SimDataset ds = generate_dataset(sc, RngStream(8));
    ds.data.values.row(5).array() += 25.0;
    const auto [data, design] = write_dataset(tmp, ds.data, ds.design);
    PipelineConfig cfg = base_config(data, design, tmp.file("out"));
    cfg.test = TestKind::Parametric;
    cfg.missing = MissingPolicy::CMR;
    cfg.remove_outliers = true;
    std::ostringstream out, err;
    ASSERT_EQ(run_analyze(cfg, out, err), exit_ok) << err.str();
    const io::CsvTable t = io::read_csv(tmp.file("out/outliers.csv"));
    ASSERT_EQ(t.rows.size(), 60u);
    EXPECT_EQ(t.rows[5][5], "1");
    EXPECT_EQ(t.rows[5][6], "1");
}

TEST(Analyze, TraditionalTestsRouteByNormality) {
    TempDir tmp;
    std::mt19937_64 gen(9);
    std::normal_distribution<double> z;
    std::exponential_distribution<double> e;
    io::CsvWriter data({"gaussian", "skewed"});
    io::CsvWriter design({"G"});
    for (int i = 0; i < 40; ++i) {
        data.row({io::format_number(z(gen)), io::format_number(std::pow(e(gen), 3.0))});
        design.row({i < 20 ? "ctl" : "trt"});
    }
    PipelineConfig cfg = base_config(tmp.write("data.csv", data.str()), tmp.write("design.csv", design.str()), tmp.file("out"));
    cfg.test = TestKind::Traditional;
    cfg.missing = MissingPolicy::RMD;
    std::ostringstream out, err;
    ASSERT_EQ(run_analyze(cfg, out, err), exit_ok) << err.str();
    const io::CsvTable t = io::read_csv(tmp.file("out/pvalues.csv"));
    EXPECT_EQ(t.rows[0][7], "t");
    EXPECT_EQ(t.rows[1][7], "wilcoxon");
}

TEST(Validate, ReportsMissingnessFeasibilityAndNormality) {
    TempDir tmp;
    std::mt19937_64 gen(10);
    std::normal_distribution<double> z;
    std::exponential_distribution<double> e;
    io::CsvWriter data({"ok", "holey", "skewed"});
    io::CsvWriter design({"A"});
    for (int i = 0; i < 40; ++i) {
        data.row({io::format_number(z(gen)), i >= 20 ? "NA" : io::format_number(z(gen)), io::format_number(std::pow(e(gen), 3.0))});
        design.row({i < 20 ? "a1" : "a2"});
    }
    ValidateConfig vc{tmp.write("data.csv", data.str()), tmp.write("design.csv", design.str()), tmp.file("out"), 0.05};
    std::ostringstream out, err;
    EXPECT_EQ(run_validate(vc, out, err), exit_ok) << err.str();
    EXPECT_NE(out.str().find("missing entries: 20"), std::string::npos) << out.str();
    EXPECT_NE(out.str().find("CMR infeasible for 1"), std::string::npos);
    EXPECT_NE(out.str().find("'holey', cell (A=a2)"), std::string::npos) << out.str();
    EXPECT_NE(out.str().find("response 'skewed': non-normal"), std::string::npos);
    const io::CsvTable normal = io::read_csv(tmp.file("out/normality.csv"));
    EXPECT_EQ(normal.rows[2][4], "1");
    EXPECT_TRUE(fs::exists(tmp.file("out/cell_counts.csv")));
    EXPECT_TRUE(fs::exists(tmp.file("out/manifest.json")));
}

TEST(Validate, CompleteDataIsFeasible) {
    TempDir tmp;
    ValidateConfig vc{tmp.write("d.csv", "y\n1\n2\n3\n4\n"), tmp.write("e.csv", "A\na\na\nb\nb\n"), "", 0.05};
    std::ostringstream out, err;
    EXPECT_EQ(run_validate(vc, out, err), exit_ok);
    EXPECT_NE(out.str().find("missing entries: 0"), std::string::npos);
    EXPECT_NE(out.str().find("CMR feasible"), std::string::npos);
}

TEST(Cli, VersionHelpAndBadFlags) {
    TempDir tmp;
    const auto log = tmp.file("log");
    EXPECT_EQ(run_cli("--version", log), 0);
    EXPECT_NE(slurp(log).find(GLMPERM_VERSION), std::string::npos);
    EXPECT_EQ(run_cli("analyze --help", log), 0);
    EXPECT_EQ(run_cli("analyze --data x.csv", log), 2);
    EXPECT_EQ(run_cli("analyze --data x --design y --missing sometimes", log), 2);
    EXPECT_EQ(run_cli("simulate nonsense", log), 2);
}

TEST(Cli, AnalyzeEndToEnd) {
    TempDir tmp;
    SimConfig sc = power_design_config();
    sc.delta = 1.0;
    const SimDataset ds = generate_dataset(sc, RngStream(11));
    const auto [data, design] = write_dataset(tmp, induce_missing(ds.data, ds.design, 0.05, RngStream(12)), ds.design);
    const auto log = tmp.file("log");
    const std::string args = "analyze --data \"" + data + "\" --design \"" + design + "\" --model \"A+B+A*B\" --perms 199 --seed 3 --out \"";
    ASSERT_EQ(run_cli(args + tmp.file("o1") + "\" --threads 1", log), 0) << slurp(log);
    ASSERT_EQ(run_cli(args + tmp.file("o2") + "\" --threads 2", log), 0) << slurp(log);
    EXPECT_EQ(slurp(tmp.file("o1/pvalues.csv")), slurp(tmp.file("o2/pvalues.csv")));
    EXPECT_NE(slurp(log).find("analyzed 14 response(s) x 3 term(s)"), std::string::npos);
    EXPECT_EQ(run_cli("analyze --data \"" + tmp.file("nope.csv") + "\" --design \"" + design + "\" --out \"" + tmp.file("o3") + "\"", log), 2);
    EXPECT_TRUE(fs::exists(tmp.file("o3/manifest.json")));
}

TEST(Cli, SimulateTable1WithoutMissingPassesCheck) {
    TempDir tmp;
    const auto log = tmp.file("log");
    ASSERT_EQ(run_cli("simulate table1 --missing 0 --sims 2 --responses 20 --check --out \"" + tmp.file("s") + "\"", log), 0)
        << slurp(log);
    EXPECT_NE(slurp(log).find("check: PASS"), std::string::npos);
    const io::CsvTable t = io::read_csv(tmp.file("s/table1.csv"));
    EXPECT_EQ(t.header, (std::vector<std::string>{"source", "Original", "Available", "UMR", "CMR", "TSR"}));
    EXPECT_EQ(t.rows.size(), 4u);
}

TEST(Cli, SimulatePowerWritesCurves) {
    TempDir tmp;
    const auto log = tmp.file("log");
    ASSERT_EQ(run_cli("simulate power --dist exp_cubed --replicates 3 --perms 99 --grid 0,0.5 --svg --check --out \"" +
                          tmp.file("p") + "\"",
                      log),
              0)
        << slurp(log);
    EXPECT_TRUE(fs::exists(tmp.file("p/fig2_exp_cubed.csv")));
    EXPECT_TRUE(fs::exists(tmp.file("p/fig2_exp_cubed.svg")));
    EXPECT_NE(slurp(log).find("rank >= boxcox"), std::string::npos);
}
