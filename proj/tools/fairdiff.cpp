#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairdiff/fairdiff.hpp"

namespace fd = fairdiff;

namespace {

int code(fd::ExitCode c) { return static_cast<int>(c); }

template <class T>
void opt_in(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
    app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairdiff: fair guidance for a toy conditional diffusion model, with bias audits"};
    app.set_config("--config", "", "Read options from an INI/TOML file; command-line flags take precedence");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(fd::kToolVersion));

    // synth
    fd::SynthOptions synth;
    auto* c_synth = app.add_subcommand("synth", "Build the synthetic world dataset");
    opt_in(c_synth, "--world", synth.world, "World spec file (default: built-in 8-concept world)");
    c_synth->add_option("--seed", synth.seed, "Seed")->required();
    c_synth->add_option("--out", synth.out, "Output dataset CSV")->required();

    // train
    fd::TrainOptions train;
    auto* c_train = app.add_subcommand("train", "Train the conditional noise-prediction model");
    c_train->add_option("--data", train.data, "Dataset CSV")->required();
    opt_in(c_train, "--world", train.world, "World spec the dataset was built from (attribute names)");
    c_train->add_option("--seed", train.train.seed, "Seed")->required();
    c_train->add_option("--out", train.out, "Output checkpoint")->required();
    c_train->add_option("--epochs", train.train.epochs, "Training epochs")->capture_default_str();
    c_train->add_option("--batch", train.train.batch_size, "Minibatch size")->capture_default_str();
    c_train->add_option("--lr", train.train.learning_rate, "Adam learning rate")->capture_default_str();
    c_train->add_option("--p-uncond", train.train.p_uncond, "Null-token dropout probability")->capture_default_str();
    c_train->add_option("--p-attribute", train.train.p_attribute, "Attribute-token conditioning probability")->capture_default_str();
    c_train->add_option("--steps", train.model.steps, "Diffusion steps T")->capture_default_str();

    // train-kappa
    fd::TrainKappaOptions kappa;
    auto* c_kappa = app.add_subcommand("train-kappa", "Train the attribute classifier kappa");
    c_kappa->add_option("--data", kappa.data, "Dataset CSV")->required();
    c_kappa->add_option("--seed", kappa.seed, "Seed")->required();
    c_kappa->add_option("--out", kappa.out, "Output checkpoint")->required();
    c_kappa->add_option("--epochs", kappa.epochs, "Training epochs")->capture_default_str();
    c_kappa->add_option("--floor", kappa.floor, "Held-out accuracy quality gate")->capture_default_str();

    // generate
    fd::GenerateOptions gen;
    auto* c_gen = app.add_subcommand("generate", "Sample a concept, plain or fair-guided");
    c_gen->add_option("--model", gen.model, "Diffusion checkpoint")->required();
    c_gen->add_option("--concept", gen.concept_name, "Prompt concept")->required();
    c_gen->add_option("--n", gen.n, "Number of samples")->capture_default_str();
    c_gen->add_option("--sg", gen.guidance_scale, "Classifier-free guidance scale")->capture_default_str();
    opt_in(c_gen, "--table", gen.table, "Fair-guidance lookup table (absent: plain sampling)");
    opt_in(c_gen, "--q-override", gen.q_override, "Replace the resolved instruction's q");
    c_gen->add_option("--seed", gen.seed, "Seed")->required();
    c_gen->add_option("--out", gen.out, "Output generated CSV")->required();
    opt_in(c_gen, "--log", gen.direction_log, "Direction-draw log CSV (fair runs only)");
    c_gen->add_option("--threads", gen.threads, "Worker threads (0: hardware concurrency)")->capture_default_str();

    // audit
    fd::AuditOptions audit;
    auto* c_audit = app.add_subcommand("audit", "Audit a dataset's attribute rates per prompt");
    c_audit->add_option("--data", audit.data, "Dataset CSV")->required();
    opt_in(c_audit, "--world", audit.world, "World spec (default: built-in)");
    c_audit->add_option("--kappa", audit.kappa, "Kappa checkpoint")->required();
    opt_in(c_audit, "--prompts", audit.prompts, "Prompt list (default: every concept at threshold 0.27)");
    c_audit->add_option("--seed", audit.seed, "Seed recorded in the reports")->required();
    c_audit->add_option("--out", audit.out_dir, "Output directory")->required();

    // ieat
    fd::IeatOptions ieat;
    auto* c_ieat = app.add_subcommand("ieat", "Embedding association test on four concept-set CSVs");
    c_ieat->add_option("--x", ieat.x, "Target set X")->required();
    c_ieat->add_option("--y", ieat.y, "Target set Y")->required();
    c_ieat->add_option("--a", ieat.a, "Attribute set A")->required();
    c_ieat->add_option("--b", ieat.b, "Attribute set B")->required();
    c_ieat->add_option("--seed", ieat.config.seed, "Seed for the Monte-Carlo fallback")->required();
    c_ieat->add_option("--exact-cap", ieat.config.exact_cap, "Largest partition count enumerated exactly")->capture_default_str();
    c_ieat->add_option("--draws", ieat.config.monte_carlo_draws, "Monte-Carlo permutations")->capture_default_str();
    opt_in(c_ieat, "--out", ieat.out, "Output CSV (the row is always printed)");

    // report
    fd::ReportOptions rep;
    auto* c_rep = app.add_subcommand("report", "Compare generated rates against a reference audit");
    c_rep->add_option("--ref", rep.reference, "Reference audit.csv")->required();
    c_rep->add_option("--kappa", rep.kappa, "Kappa checkpoint")->required();
    c_rep->add_option("--plain", rep.plain, "Plain generated CSVs")->required();
    c_rep->add_option("--fair", rep.fair, "Fair-guided generated CSVs");
    opt_in(c_rep, "--world", rep.world, "World spec supplying concept groups");
    c_rep->add_option("--seed", rep.seed, "Seed recorded in the reports")->required();
    c_rep->add_option("--out", rep.out_dir, "Output directory")->required();

    // repro
    fd::ReproOptions repro;
    auto* c_repro = app.add_subcommand("repro", "Run the full pipeline from one seed and write a MANIFEST");
    c_repro->add_option("--seed", repro.seed, "Seed")->required();
    c_repro->add_option("--out", repro.out_dir, "Output directory")->required();
    opt_in(c_repro, "--world", repro.world, "World spec (default: built-in)");
    c_repro->add_option("--epochs", repro.epochs, "Diffusion training epochs")->capture_default_str();
    c_repro->add_option("--kappa-epochs", repro.kappa_epochs, "Kappa training epochs")->capture_default_str();
    c_repro->add_option("--n", repro.n, "Samples per concept")->capture_default_str();
    c_repro->add_option("--sg", repro.guidance_scale, "Classifier-free guidance scale")->capture_default_str();
    c_repro->add_option("--edit-scale", repro.edit_scale, "Edit scale of the generated lookup tables")->capture_default_str();
    c_repro->add_option("--q", repro.qs, "Target proportions for the fair runs")->capture_default_str();
    c_repro->add_option("--threads", repro.threads, "Worker threads (0: hardware concurrency)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : code(fd::ExitCode::kInvalidInput);
    }

    try {
        if (*c_synth) {
            const auto ds = fd::cmd_synth(synth);
            std::cerr << "wrote " << ds.samples.size() << " rows to " << synth.out << '\n';
        } else if (*c_train) {
            fd::cmd_train(train, std::cout);
        } else if (*c_kappa) {
            fd::cmd_train_kappa(kappa, std::cout);
        } else if (*c_gen) {
            const auto r = fd::cmd_generate(gen);
            std::cerr << "wrote " << r.samples.size() << (r.draws.empty() ? " plain" : " fair-guided") << " samples to " << gen.out << '\n';
        } else if (*c_audit) {
            const auto r = fd::cmd_audit(audit);
            std::cerr << "audited " << r.rows.size() << " prompts into " << audit.out_dir << '\n';
        } else if (*c_ieat) {
            fd::cmd_ieat(ieat, std::cout);
        } else if (*c_rep) {
            const auto r = fd::cmd_report(rep);
            fd::write_verdict_csv(std::cout, r.summary, {rep.seed, ""});
        } else if (*c_repro) {
            const auto r = fd::cmd_repro(repro, std::cerr);
            for (const auto& [q, report] : r.reports)
                if (report.pooled_fair_rate)
                    std::cout << "q=" << fd::format_short(q) << " pooled fair rate " << fd::format_short(*report.pooled_fair_rate) << '\n';
        }
    } catch (const fd::Error& e) {
        std::cerr << "fairdiff: " << e.what() << '\n';
        return code(e.exit_code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "fairdiff: " << e.what() << '\n';
        return code(fd::ExitCode::kIo);
    } catch (const std::exception& e) {
        std::cerr << "fairdiff: " << e.what() << '\n';
        return code(fd::ExitCode::kInvalidInput);
    }
    return 0;
}
