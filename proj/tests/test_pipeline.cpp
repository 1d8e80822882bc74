#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "support.hpp"

using namespace fairdiff;
namespace fs = std::filesystem;

namespace {

/// Exit status of the CLI run with `args`; output goes to `log`.
int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(FAIRDIFF_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Lines of a report file without the leading meta line.
std::string body(const fs::path& p) {
    const std::string text = fdtest::slurp(p);
    return text.substr(text.find('\n') + 1);
}

/// Small world, model and kappa on disk, built once.
struct Workspace {
    fs::path dir, world, data, model, kappa;
};

const Workspace& workspace() {
    static const Workspace w = [] {
        Workspace r;
        r.dir = fdtest::scratch_dir("pipeline");
        r.world = r.dir / "world.cfg";
        WorldSpec spec = default_world_spec();
        for (auto& c : spec.concepts) c.count = 60;
        with_output_file(r.world.string(), [&](std::ostream& out) { write_world_spec(out, spec); });
        r.data = r.dir / "dataset.csv";
        cmd_synth({r.world.string(), 3, r.data.string()});
        TrainOptions t;
        t.data = r.data.string();
        t.world = r.world.string();
        t.out = (r.dir / "model.ckpt").string();
        t.train.epochs = 20;
        t.train.seed = 3;
        std::ostringstream log;
        cmd_train(t, log);
        r.model = t.out;
        r.kappa = r.dir / "kappa.ckpt";
        cmd_train_kappa({r.data.string(), r.kappa.string(), 3, 30, 0.9}, log);
        return r;
    }();
    return w;
}

GenerateOptions generate_options(const std::string& concept_name, const fs::path& out) {
    GenerateOptions g;
    g.model = workspace().model.string();
    g.concept_name = concept_name;
    g.n = 40;
    g.seed = 5;
    g.threads = 1;
    g.out = out.string();
    return g;
}

}  // namespace

TEST(Synth, DeterministicAndSized) {
    const auto dir = fdtest::scratch_dir("synth");
    cmd_synth({std::nullopt, 9, (dir / "a.csv").string()});
    cmd_synth({std::nullopt, 9, (dir / "b.csv").string()});
    EXPECT_EQ(fdtest::slurp(dir / "a.csv"), fdtest::slurp(dir / "b.csv"));
    std::ifstream in(dir / "a.csv");
    const Dataset ds = read_dataset_csv(in);
    EXPECT_EQ(ds.samples.size(), 2000u);
}

TEST(Synth, MissingWorldFile) {
    const auto dir = fdtest::scratch_dir("synth_missing");
    EXPECT_THROW(cmd_synth({(dir / "nope.cfg").string(), 1, (dir / "a.csv").string()}), IoError);
}

TEST(Train, RefusesToOverwriteInput) {
    TrainOptions t;
    t.data = workspace().data.string();
    t.out = workspace().data.string();
    t.train.epochs = 1;
    std::ostringstream log;
    EXPECT_THROW(cmd_train(t, log), InputError);
}

TEST(Generate, NoMatchingTableEntryEqualsPlain) {
    const auto dir = fdtest::scratch_dir("gen_nomatch");
    fdtest::write_text(dir / "t.tsv", "occ3\tq=0.5;side1=+female:8;side2=+male:8\n");
    cmd_generate(generate_options("occ0", dir / "plain.csv"));
    auto g = generate_options("occ0", dir / "fair.csv");
    g.table = (dir / "t.tsv").string();
    g.direction_log = (dir / "log.csv").string();
    const auto r = cmd_generate(g);
    EXPECT_TRUE(r.draws.empty());
    EXPECT_FALSE(fs::exists(dir / "log.csv"));
    EXPECT_EQ(body(dir / "plain.csv"), body(dir / "fair.csv"));
}

TEST(Generate, QOneLogsSideOneEverywhere) {
    const auto dir = fdtest::scratch_dir("gen_q1");
    auto g = generate_options("occ1", dir / "fair.csv");
    g.table = std::string(FAIRDIFF_PRESETS) + "/table_default.tsv";
    g.q_override = 1.0;
    g.direction_log = (dir / "log.csv").string();
    cmd_generate(g);
    std::istringstream log(body(dir / "log.csv"));
    std::string line;
    std::getline(log, line);
    EXPECT_EQ(line, "id,concept,side,u");
    std::size_t rows = 0;
    while (std::getline(log, line)) {
        EXPECT_EQ(split(line, ',')[2], "1") << line;
        ++rows;
    }
    EXPECT_EQ(rows, 40u);
}

TEST(Generate, WritesRequestedRows) {
    const auto dir = fdtest::scratch_dir("gen_rows");
    auto g = generate_options("occ2", dir / "plain.csv");
    g.n = 250;
    cmd_generate(g);
    std::map<std::string, std::vector<Vector>> m;
    std::ifstream in(dir / "plain.csv");
    read_generated_csv(in, m);
    EXPECT_EQ(m["occ2"].size(), 250u);
    auto bad = generate_options("astronaut", dir / "x.csv");
    EXPECT_THROW(cmd_generate(bad), LookupError);
}

TEST(AuditAndReport, IdenticalReferenceIsReflectedAndInputsUntouched) {
    const auto dir = fdtest::scratch_dir("report");
    const auto& w = workspace();
    const std::string data_before = fdtest::slurp(w.data), kappa_before = fdtest::slurp(w.kappa);
    cmd_audit({w.data.string(), w.world.string(), w.kappa.string(), std::nullopt, (dir / "audit").string(), 3});
    for (const char* f : {"audit.csv", "audit_box.csv", "audit.txt"}) EXPECT_TRUE(fs::exists(dir / "audit" / f)) << f;

    // Feed each prompt's relevant set back as "generated" samples: every rate equals the reference.
    std::ifstream in(w.data);
    const Dataset ds = read_dataset_csv(in);
    std::vector<std::string> plain;
    for (const auto& c : ds.spec.concepts) {
        PromptSpec prompt;
        prompt.concept_name = c.name;
        std::vector<Vector> members;
        for (std::size_t i : filter_relevant(ds.samples, prompt, concept_prototype(ds.spec, c.name)))
            members.push_back(ds.samples[i].features);
        const auto p = dir / (c.name + ".csv");
        with_output_file(p.string(), [&](std::ostream& out) { write_generated_csv(out, c.name, members, {3, "x"}); });
        plain.push_back(p.string());
    }
    ReportOptions rep{(dir / "audit" / "audit.csv").string(), w.kappa.string(), plain, {}, std::nullopt, (dir / "out").string(), 3};
    const auto r = cmd_report(rep);
    EXPECT_EQ(r.summary.reflected, r.summary.total());
    for (const char* f : {"report.csv", "verdicts.csv", "box.csv", "plot.dat", "report.txt"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    EXPECT_EQ(fdtest::slurp(w.data), data_before);
    EXPECT_EQ(fdtest::slurp(w.kappa), kappa_before);

    const std::string first = fdtest::slurp(dir / "out" / "report.csv");
    cmd_report(rep);
    EXPECT_EQ(fdtest::slurp(dir / "out" / "report.csv"), first);
}

TEST(Report, VerdictPercentagesSumToHundred) {
    const auto dir = fdtest::scratch_dir("report_pct");
    const auto& w = workspace();
    cmd_audit({w.data.string(), w.world.string(), w.kappa.string(), std::nullopt, (dir / "audit").string(), 3});
    std::vector<std::string> plain;
    for (const char* c : {"occ0", "occ3", "occ7"}) {
        auto g = generate_options(c, dir / (std::string(c) + ".csv"));
        cmd_generate(g);
        plain.push_back(g.out);
    }
    cmd_report({(dir / "audit" / "audit.csv").string(), w.kappa.string(), plain, {}, std::nullopt, (dir / "out").string(), 3});
    std::istringstream v(body(dir / "out" / "verdicts.csv"));
    std::string line;
    std::getline(v, line);
    std::getline(v, line);
    const auto cells = split(line, ',');
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_NEAR(std::stod(cells[0]) + std::stod(cells[1]) + std::stod(cells[2]), 100.0, 1e-9);
    EXPECT_EQ(cells[3], "3");
}

TEST(Ieat, CommandWritesRow) {
    const auto dir = fdtest::scratch_dir("ieat");
    fdtest::write_text(dir / "x.csv", "id,x0,x1\nx1,1,0.1\nx2,1,0.2\n");
    fdtest::write_text(dir / "y.csv", "id,x0,x1\ny1,0.1,1\ny2,0.2,1\n");
    fdtest::write_text(dir / "a.csv", "id,x0,x1\na1,1,0\n");
    fdtest::write_text(dir / "b.csv", "id,x0,x1\nb1,0,1\n");
    IeatOptions o;
    o.x = (dir / "x.csv").string();
    o.y = (dir / "y.csv").string();
    o.a = (dir / "a.csv").string();
    o.b = (dir / "b.csv").string();
    o.out = (dir / "out.csv").string();
    std::ostringstream printed;
    const IeatResult r = cmd_ieat(o, printed);
    EXPECT_EQ(r.method, PermutationMethod::kExact);
    EXPECT_EQ(r.partitions, 6u);
    EXPECT_GT(r.statistic, 0.0);
    EXPECT_EQ(body(dir / "out.csv"), printed.str());
}

TEST(Repro, SameSeedSameManifest) {
    const auto a = fdtest::scratch_dir("repro_a"), b = fdtest::scratch_dir("repro_b");
    ReproOptions o;
    o.seed = 4;
    o.epochs = 3;
    o.n = 12;
    o.qs = {0.5};
    o.threads = 2;
    std::ostringstream log;
    o.out_dir = a.string();
    const auto ra = cmd_repro(o, log);
    o.out_dir = b.string();
    const auto rb = cmd_repro(o, log);
    EXPECT_EQ(fdtest::slurp(a / "MANIFEST"), fdtest::slurp(b / "MANIFEST"));
    EXPECT_EQ(ra.manifest.size(), rb.manifest.size());
    EXPECT_TRUE(fs::exists(a / "report_q050" / "report.txt"));
    EXPECT_TRUE(fs::exists(a / "generated_fair_q050" / "occ0.directions.csv"));
    ASSERT_EQ(ra.reports.count(0.5), 1u);
    EXPECT_TRUE(ra.reports.at(0.5).pooled_fair_rate.has_value());
}

TEST(Cli, ExitCodes) {
    const auto dir = fdtest::scratch_dir("cli");
    const auto& w = workspace();
    const auto log = dir / "log.txt";
    EXPECT_EQ(run_cli("--version", log), 0);
    EXPECT_EQ(run_cli("synth --seed 1 --out " + q(dir / "d.csv"), log), 0);
    EXPECT_EQ(run_cli("synth --world " + q(dir / "missing.cfg") + " --seed 1 --out " + q(dir / "e.csv"), log), 1);
    EXPECT_NE(fdtest::slurp(log).find("not found"), std::string::npos);
    EXPECT_EQ(run_cli("synth --seed 1 --bogus 3 --out " + q(dir / "e.csv"), log), 2);
    EXPECT_EQ(run_cli("generate --model " + q(w.model) + " --concept astronaut --seed 1 --out " + q(dir / "g.csv"), log), 2);
    EXPECT_EQ(run_cli("train-kappa --data " + q(w.data) + " --seed 1 --epochs 0 --out " + q(dir / "k.ckpt"), log), 3);
    EXPECT_FALSE(fs::exists(dir / "k.ckpt"));
    fdtest::write_text(dir / "bad.cfg", "dim = 8\nsep = banana\n");
    EXPECT_EQ(run_cli("synth --world " + q(dir / "bad.cfg") + " --seed 1 --out " + q(dir / "e.csv"), log), 2);
}

TEST(Cli, ConfigFileSuppliesOptions) {
    const auto dir = fdtest::scratch_dir("cli_config");
    fdtest::write_text(dir / "run.ini", "[synth]\nseed=12\n");
    const auto log = dir / "log.txt";
    ASSERT_EQ(run_cli("--config " + q(dir / "run.ini") + " synth --out " + q(dir / "a.csv"), log), 0);
    ASSERT_EQ(run_cli("synth --seed 12 --out " + q(dir / "b.csv"), log), 0);
    EXPECT_EQ(fdtest::slurp(dir / "a.csv"), fdtest::slurp(dir / "b.csv"));
    ASSERT_EQ(run_cli("--config " + q(dir / "run.ini") + " synth --seed 13 --out " + q(dir / "c.csv"), log), 0);
    EXPECT_NE(fdtest::slurp(dir / "a.csv"), fdtest::slurp(dir / "c.csv"));
}

TEST(Cli, GenerateMatchesLibrary) {
    const auto dir = fdtest::scratch_dir("cli_generate");
    const auto& w = workspace();
    ASSERT_EQ(run_cli("generate --model " + q(w.model) + " --concept occ5 --n 40 --seed 5 --threads 3 --out " + q(dir / "cli.csv"),
                      dir / "log.txt"),
              0);
    cmd_generate(generate_options("occ5", dir / "lib.csv"));
    EXPECT_EQ(fdtest::slurp(dir / "cli.csv"), fdtest::slurp(dir / "lib.csv"));
}
