#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fairdiff/audit.hpp"
#include "fairdiff/diffusion.hpp"
#include "fairdiff/digest.hpp"
#include "fairdiff/error.hpp"
#include "fairdiff/fair_guidance.hpp"
#include "fairdiff/ieat.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/report.hpp"
#include "fairdiff/world.hpp"

// Command implementations behind the fairdiff CLI. Every function validates
// its input paths first, never writes to an input path and embeds
// (tool version, seed, config digest) in the reports it emits.

namespace fairdiff {

namespace fs = std::filesystem;

namespace detail {

inline void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw InputError(std::string("missing ") + what + " path");
    if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " file not found: '" + path + "'");
}

inline void require_distinct(const std::string& out, std::initializer_list<std::string> inputs) {
    for (const auto& in : inputs) {
        if (in.empty() || out.empty()) continue;
        std::error_code ec;
        if (fs::exists(out) && fs::equivalent(out, in, ec)) throw InputError("output '" + out + "' would overwrite input '" + in + "'");
    }
}

inline void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

inline std::string digest_of(const std::string& canonical) { return sha256_hex(canonical).substr(0, 16); }

inline WorldSpec load_world(const std::optional<std::string>& path) {
    if (!path) return default_world_spec();
    require_file(*path, "world spec");
    return with_input_file<WorldSpec>(*path, [](std::istream& in) { return parse_world_spec(in); });
}

inline Dataset load_dataset(const std::string& path, const std::optional<WorldSpec>& spec) {
    require_file(path, "dataset");
    Dataset ds = with_input_file<Dataset>(path, [&](std::istream& in) { return read_dataset_csv(in, spec); });
    if (spec) {
        for (const auto& s : ds.samples) spec->require_index(s.concept_name);
        if (!ds.samples.empty() && ds.samples.front().features.size() != spec->dim)
            throw InputError("dataset dimension differs from world spec dim=" + std::to_string(spec->dim));
    }
    return ds;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(1, sep) : "") + parts[i];
    return out;
}

inline std::string q_tag(double q) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "q%03d", static_cast<int>(std::lround(q * 100.0)));
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SynthOptions {
    std::optional<std::string> world;
    std::uint64_t seed = 0;
    std::string out;
};

inline Dataset cmd_synth(const SynthOptions& o) {
    const WorldSpec spec = detail::load_world(o.world);
    detail::require_distinct(o.out, {o.world.value_or("")});
    const Dataset ds = build_world(spec, o.seed);
    detail::ensure_parent(o.out);
    with_output_file(o.out, [&](std::ostream& out) { write_dataset_csv(out, ds); });
    return ds;
}

struct TrainOptions {
    std::string data;
    std::optional<std::string> world;
    std::string out;
    ModelConfig model;
    TrainConfig train;
};

inline TrainResult cmd_train(const TrainOptions& o, std::ostream& log) {
    detail::require_file(o.data, "dataset");
    detail::require_distinct(o.out, {o.data, o.world.value_or("")});
    std::optional<WorldSpec> spec;
    if (o.world) spec = detail::load_world(o.world);
    const Dataset ds = detail::load_dataset(o.data, spec);
    EpsilonModel model = make_epsilon_model(ds, o.model, o.train.seed);
    const TrainResult r = train_epsilon(model, ds, o.train);
    for (std::size_t e = 0; e < r.loss_trace.size(); ++e)
        if (e == 0 || (e + 1) % 20 == 0 || e + 1 == r.loss_trace.size())
            log << "epoch " << e + 1 << " loss " << format_double(r.loss_trace[e]) << '\n';
    detail::ensure_parent(o.out);
    with_output_file(o.out, [&](std::ostream& out) { write_epsilon_checkpoint(out, model); });
    return r;
}

struct TrainKappaOptions {
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t epochs = 30;
    double floor = 0.9;
};

inline ClassifierModel cmd_train_kappa(const TrainKappaOptions& o, std::ostream& log) {
    detail::require_file(o.data, "dataset");
    detail::require_distinct(o.out, {o.data});
    const Dataset ds = detail::load_dataset(o.data, std::nullopt);
    ClassifierConfig cfg;
    cfg.accuracy_floor = o.floor;
    const ClassifierModel kappa = train_kappa(ds, o.seed, o.epochs, cfg);
    log << "kappa held-out accuracy " << format_double(kappa.heldout_accuracy) << '\n';
    detail::ensure_parent(o.out);
    with_output_file(o.out, [&](std::ostream& out) { write_classifier_checkpoint(out, kappa); });
    return kappa;
}

inline EpsilonModel load_epsilon_model(const std::string& path) {
    detail::require_file(path, "model checkpoint");
    return with_input_file<EpsilonModel>(path, [](std::istream& in) { return read_epsilon_checkpoint(in); });
}

inline ClassifierModel load_classifier(const std::string& path) {
    detail::require_file(path, "kappa checkpoint");
    return with_input_file<ClassifierModel>(path, [](std::istream& in) { return read_classifier_checkpoint(in); });
}

inline LookupTable load_lookup_table(const std::string& path) {
    detail::require_file(path, "lookup table");
    return with_input_file<LookupTable>(path, [](std::istream& in) { return parse_lookup_table(in); });
}

struct GenerateOptions {
    std::string model;
    std::string concept_name;
    std::size_t n = 250;
    double guidance_scale = 3.0;
    std::optional<std::string> table;
    std::optional<double> q_override;
    std::uint64_t seed = 0;
    std::string out;
    std::optional<std::string> direction_log;
    std::size_t threads = 0;

    std::string canonical() const {
        std::ostringstream s;
        s << "generate concept=" << concept_name << " n=" << n << " sg=" << format_double(guidance_scale)
          << " table=" << (table ? sha256_file(*table) : "") << " q=" << (q_override ? format_double(*q_override) : "") << " seed=" << seed;
        return s.str();
    }
};

/// Plain sampling, or fair sampling when the table resolves an instruction for
/// the prompt concept.
inline FairSampleResult cmd_generate(const GenerateOptions& o) {
    detail::require_file(o.model, "model checkpoint");
    std::optional<LookupTable> table;
    if (o.table) table = load_lookup_table(*o.table);
    detail::require_distinct(o.out, {o.model, o.table.value_or("")});
    if (o.direction_log) detail::require_distinct(*o.direction_log, {o.model, o.table.value_or("")});
    const EpsilonModel model = load_epsilon_model(o.model);
    model.vocab.lookup(o.concept_name);

    std::optional<FairInstruction> instr;
    if (table) instr = resolve_instruction(o.concept_name, *table);
    if (instr && o.q_override) {
        if (!(*o.q_override >= 0.0 && *o.q_override <= 1.0)) throw InputError("--q-override must lie in [0, 1]");
        instr->q = *o.q_override;
    }
    FairSampleResult r = fair_sample(model, o.concept_name, o.guidance_scale, o.n, o.seed, instr, o.threads);
    const ReportMeta meta{o.seed, detail::digest_of(o.canonical())};
    detail::ensure_parent(o.out);
    with_output_file(o.out, [&](std::ostream& out) { write_generated_csv(out, o.concept_name, r.samples, meta); });
    if (o.direction_log && instr) {
        detail::ensure_parent(*o.direction_log);
        with_output_file(*o.direction_log, [&](std::ostream& out) { write_direction_log(out, o.concept_name, r.draws, meta); });
    }
    return r;
}

struct AuditOptions {
    std::string data;
    std::optional<std::string> world;
    std::string kappa;
    std::optional<std::string> prompts;
    std::string out_dir;
    std::uint64_t seed = 0;

    std::string canonical(const std::vector<PromptSpec>& ps) const {
        std::ostringstream s;
        s << "audit data=" << fs::path(data).filename().string() << " seed=" << seed << " prompts=";
        for (const auto& p : ps) s << p.concept_name << ':' << format_double(p.threshold) << ';';
        return s.str();
    }
};

/// Writes audit.csv, audit_box.csv and audit.txt into out_dir.
inline AuditReport cmd_audit(const AuditOptions& o) {
    detail::require_file(o.data, "dataset");
    detail::require_file(o.kappa, "kappa checkpoint");
    if (o.prompts) detail::require_file(*o.prompts, "prompt list");
    const WorldSpec spec = detail::load_world(o.world);
    const Dataset ds = detail::load_dataset(o.data, spec);
    const ClassifierModel kappa = load_classifier(o.kappa);
    std::vector<PromptSpec> prompts;
    if (o.prompts) {
        prompts = with_input_file<std::vector<PromptSpec>>(*o.prompts, [](std::istream& in) { return parse_prompt_list(in); });
    } else {
        for (const auto& c : spec.concepts) prompts.push_back({c.name});
    }
    const AuditReport report = audit_dataset(ds, prompts, kappa);
    const ReportMeta meta{o.seed, detail::digest_of(o.canonical(prompts))};
    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    with_output_file((dir / "audit.csv").string(), [&](std::ostream& out) { write_audit_csv(out, report, meta); });
    with_output_file((dir / "audit_box.csv").string(), [&](std::ostream& out) { write_box_csv(out, report.groups, meta); });
    with_output_file((dir / "audit.txt").string(), [&](std::ostream& out) { write_audit_summary(out, report, meta); });
    return report;
}

struct IeatOptions {
    std::string x, y, a, b;
    IeatConfig config;
    std::optional<std::string> out;
};

inline IeatResult cmd_ieat(const IeatOptions& o, std::ostream& stdout_stream) {
    for (const auto* p : {&o.x, &o.y, &o.a, &o.b}) detail::require_file(*p, "concept set");
    auto load = [](const std::string& path, const char* label) {
        return with_input_file<ConceptSet>(path, [&](std::istream& in) { return read_concept_set_csv(in, label); });
    };
    const ConceptSet x = load(o.x, "X"), y = load(o.y, "Y"), a = load(o.a, "A"), b = load(o.b, "B");
    const IeatResult r = run_ieat(x, y, a, b, o.config);
    if (o.out) {
        detail::require_distinct(*o.out, {o.x, o.y, o.a, o.b});
        detail::ensure_parent(*o.out);
        std::ostringstream canon;
        canon << "ieat cap=" << o.config.exact_cap << " draws=" << o.config.monte_carlo_draws << " seed=" << o.config.seed;
        const ReportMeta meta{o.config.seed, detail::digest_of(canon.str())};
        with_output_file(*o.out, [&](std::ostream& out) {
            write_meta(out, meta);
            write_ieat_row(out, r);
        });
    }
    write_ieat_row(stdout_stream, r);
    return r;
}

struct ReportOptions {
    std::string reference;  // audit.csv from cmd_audit
    std::string kappa;
    std::vector<std::string> plain;
    std::vector<std::string> fair;
    std::optional<std::string> world;
    std::string out_dir;
    std::uint64_t seed = 0;
};

/// Writes report.csv, verdicts.csv, box.csv, plot.dat and report.txt into out_dir.
inline ComparisonReport cmd_report(const ReportOptions& o) {
    detail::require_file(o.reference, "reference report");
    detail::require_file(o.kappa, "kappa checkpoint");
    if (o.plain.empty()) throw InputError("report: at least one --plain generated file is required");
    for (const auto& p : o.plain) detail::require_file(p, "generated samples");
    for (const auto& p : o.fair) detail::require_file(p, "generated samples");
    std::vector<ConceptGroup> groups;
    if (o.world) groups = detail::load_world(o.world).groups;
    const auto reference = with_input_file<std::vector<RateRecord>>(o.reference, [](std::istream& in) { return read_audit_rates(in); });
    const ClassifierModel kappa = load_classifier(o.kappa);
    auto load_generated = [](const std::vector<std::string>& paths) {
        std::map<std::string, std::vector<Vector>> g;
        for (const auto& p : paths) with_input_file<int>(p, [&](std::istream& in) { read_generated_csv(in, g); return 0; });
        return g;
    };
    const OutcomeReport plain = audit_outcome(load_generated(o.plain), kappa, reference, {}, groups);
    std::optional<OutcomeReport> fair;
    if (!o.fair.empty()) fair = audit_outcome(load_generated(o.fair), kappa, reference, {}, groups);
    const ComparisonReport r = compare_outcomes(reference, plain, fair, groups);

    std::ostringstream canon;
    canon << "report seed=" << o.seed << " plain=" << o.plain.size() << " fair=" << o.fair.size();
    for (const auto& row : reference) canon << ' ' << row.concept_name << '=' << format_double(row.rate);
    const ReportMeta meta{o.seed, detail::digest_of(canon.str())};
    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    with_output_file((dir / "report.csv").string(), [&](std::ostream& out) { write_comparison_csv(out, r, meta); });
    with_output_file((dir / "verdicts.csv").string(), [&](std::ostream& out) { write_verdict_csv(out, r.summary, meta); });
    with_output_file((dir / "box.csv").string(), [&](std::ostream& out) { write_box_csv(out, r.groups, meta); });
    with_output_file((dir / "plot.dat").string(), [&](std::ostream& out) { write_plot_data(out, r, meta); });
    with_output_file((dir / "report.txt").string(), [&](std::ostream& out) { write_comparison_summary(out, r, meta); });
    return r;
}

// ---------------------------------------------------------------------------
// Full reproduction run

struct ReproOptions {
    std::uint64_t seed = 0;
    std::string out_dir;
    std::optional<std::string> world;
    std::size_t epochs = 200;
    std::size_t kappa_epochs = 30;
    std::size_t n = 250;
    double guidance_scale = 3.0;
    double edit_scale = kDefaultEditScale;
    std::vector<double> qs = {0.5, 0.7};
    std::size_t threads = 0;
};

struct ManifestEntry {
    std::string path;  // relative to out_dir
    std::string sha256;
};

struct ReproResult {
    std::vector<ManifestEntry> manifest;
    std::map<double, ComparisonReport> reports;  // keyed by q
    double kappa_accuracy = 0.0;
    std::vector<double> loss_trace;
};

inline std::vector<ManifestEntry> write_manifest(const std::string& out_dir) {
    std::vector<ManifestEntry> entries;
    for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), out_dir).generic_string();
        if (rel == "MANIFEST") continue;
        entries.push_back({rel, sha256_file(e.path().string())});
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    with_output_file((fs::path(out_dir) / "MANIFEST").string(), [&](std::ostream& out) {
        for (const auto& e : entries) out << e.sha256 << "  " << e.path << '\n';
    });
    return entries;
}

/// synth -> train -> train-kappa -> audit -> generate (plain, fair per q) -> report -> MANIFEST
inline ReproResult cmd_repro(const ReproOptions& o, std::ostream& log) {
    if (o.out_dir.empty()) throw InputError("repro: --out directory required");
    const WorldSpec spec = detail::load_world(o.world);
    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    ReproResult result;

    const std::string world_path = (dir / "world.cfg").string();
    with_output_file(world_path, [&](std::ostream& out) { write_world_spec(out, spec); });
    const std::string data_path = (dir / "dataset.csv").string();
    log << "[synth] " << data_path << '\n';
    cmd_synth({world_path, o.seed, data_path});

    log << "[train] diffusion model, " << o.epochs << " epochs\n";
    TrainOptions train;
    train.data = data_path;
    train.world = world_path;
    train.out = (dir / "model.ckpt").string();
    train.train.epochs = o.epochs;
    train.train.seed = o.seed;
    result.loss_trace = cmd_train(train, log).loss_trace;
    with_output_file((dir / "train_loss.csv").string(), [&](std::ostream& out) {
        out << "epoch,loss\n";
        for (std::size_t e = 0; e < result.loss_trace.size(); ++e) out << e + 1 << ',' << format_double(result.loss_trace[e]) << '\n';
    });

    log << "[train-kappa]\n";
    const std::string kappa_path = (dir / "kappa.ckpt").string();
    result.kappa_accuracy = cmd_train_kappa({data_path, kappa_path, o.seed, o.kappa_epochs, 0.9}, log).heldout_accuracy;

    log << "[audit]\n";
    cmd_audit({data_path, world_path, kappa_path, std::nullopt, (dir / "audit").string(), o.seed});
    const std::string reference = (dir / "audit" / "audit.csv").string();

    const std::string model_path = (dir / "model.ckpt").string();
    auto generate_all = [&](const std::string& sub, const std::optional<std::string>& table) {
        std::vector<std::string> files;
        fs::create_directories(dir / sub);
        for (std::size_t k = 0; k < spec.concepts.size(); ++k) {
            const auto& c = spec.concepts[k];
            GenerateOptions g;
            g.model = model_path;
            g.concept_name = c.name;
            g.n = o.n;
            g.guidance_scale = o.guidance_scale;
            g.table = table;
            g.seed = mix64(o.seed ^ mix64(k + 1));  // per concept, shared by plain and fair runs
            g.threads = o.threads;
            g.out = (dir / sub / (c.name + ".csv")).string();
            if (table) g.direction_log = (dir / sub / (c.name + ".directions.csv")).string();
            cmd_generate(g);
            files.push_back(g.out);
        }
        return files;
    };

    log << "[generate] plain\n";
    const auto plain_files = generate_all("generated_plain", std::nullopt);
    for (double q : o.qs) {
        const std::string tag = detail::q_tag(q);
        log << "[generate] fair " << tag << '\n';
        LookupTable table;
        table.entries.push_back({"*", default_instruction(spec.attribute1, spec.attribute0, o.edit_scale, q)});
        const std::string table_path = (dir / ("table_" + tag + ".tsv")).string();
        with_output_file(table_path, [&](std::ostream& out) { write_lookup_table(out, table); });
        const auto fair_files = generate_all("generated_fair_" + tag, table_path);
        log << "[report] " << tag << '\n';
        ReportOptions rep;
        rep.reference = reference;
        rep.kappa = kappa_path;
        rep.plain = plain_files;
        rep.fair = fair_files;
        rep.world = world_path;
        rep.out_dir = (dir / ("report_" + tag)).string();
        rep.seed = o.seed;
        result.reports[q] = cmd_report(rep);
    }
    result.manifest = write_manifest(o.out_dir);
    log << "[manifest] " << result.manifest.size() << " artifacts\n";
    return result;
}

}  // namespace fairdiff
