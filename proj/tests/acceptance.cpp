// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "fairdiff/fairdiff.hpp"

using namespace fairdiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// iEAT oracles

ConceptSet random_set(Rng& rng, const char* label, std::size_t n, std::size_t d) {
    ConceptSet s{label, {}};
    for (std::size_t i = 0; i < n; ++i) {
        Vector v(d);
        for (double& x : v) x = rng.gaussian();
        s.vectors.push_back(v);
    }
    return s;
}

double oracle_cos(const Vector& a, const Vector& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

struct IeatOracle {
    double s = 0, p = 0, d = 0;
};

IeatOracle brute_force(const ConceptSet& x, const ConceptSet& y, const ConceptSet& a, const ConceptSet& b) {
    std::vector<double> w;
    for (const auto* set : {&x, &y})
        for (const auto& v : set->vectors) {
            double ma = 0, mb = 0;
            for (const auto& av : a.vectors) ma += oracle_cos(v, av);
            for (const auto& bv : b.vectors) mb += oracle_cos(v, bv);
            w.push_back(ma / static_cast<double>(a.vectors.size()) - mb / static_cast<double>(b.vectors.size()));
        }
    const std::size_t n = w.size(), nx = x.vectors.size();
    auto stat = [&](unsigned mask) {
        double sx = 0, sy = 0;
        for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? sx : sy) += w[i];
        return sx - sy;
    };
    IeatOracle o;
    o.s = stat((1u << nx) - 1u);
    unsigned greater = 0, total = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != nx) continue;
        ++total;
        greater += stat(mask) > o.s;
    }
    o.p = static_cast<double>(greater) / static_cast<double>(total);
    double mx = 0, my = 0, mean = 0;
    for (std::size_t i = 0; i < n; ++i) (i < nx ? mx : my) += w[i];
    for (double v : w) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0;
    for (double v : w) ss += (v - mean) * (v - mean);
    o.d = (mx / static_cast<double>(nx) - my / static_cast<double>(n - nx)) / std::sqrt(ss / static_cast<double>(n - 1));
    return o;
}

Outcome ieat_oracle() {
    Rng rng(2023);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t mismatches = 0;
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nx = 1 + rng.below(6), ny = 1 + rng.below(12 - nx);
        const std::size_t d = 2 + rng.below(6);
        const auto x = random_set(rng, "X", nx, d), y = random_set(rng, "Y", ny, d);
        const auto a = random_set(rng, "A", 1 + rng.below(4), d), b = random_set(rng, "B", 1 + rng.below(4), d);
        const IeatOracle o = brute_force(x, y, a, b);
        const IeatResult r = run_ieat(x, y, a, b);
        if (r.method != PermutationMethod::kExact || r.p_value != o.p) ++mismatches;
        worst = std::max({worst, std::abs(r.statistic - o.s), std::abs(r.effect_size - o.d)});
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && worst <= 1e-12 && secs < 5.0,
            std::to_string(mismatches) + " p mismatches, max |dS|,|dd| " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome ieat_symmetry() {
    Rng rng(77);
    double worst = 0;
    std::size_t sign_failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = 2 + rng.below(5);
        const auto x = random_set(rng, "X", 1 + rng.below(4), d), y = random_set(rng, "Y", 1 + rng.below(4), d);
        const auto a = random_set(rng, "A", 1 + rng.below(3), d), b = random_set(rng, "B", 1 + rng.below(3), d);
        const IeatResult r = run_ieat(x, y, a, b);
        const IeatResult sxy = run_ieat(y, x, a, b), sab = run_ieat(x, y, b, a);
        worst = std::max({worst, std::abs(sxy.statistic + r.statistic), std::abs(sxy.effect_size + r.effect_size),
                          std::abs(sab.statistic + r.statistic), std::abs(sab.effect_size + r.effect_size)});
        auto scaled = x;
        const double f = 0.1 + 10.0 * rng.uniform();
        for (double& v : scaled.vectors[rng.below(scaled.vectors.size())]) v *= f;
        const IeatResult s = run_ieat(scaled, y, a, b);
        worst = std::max({worst, std::abs(s.statistic - r.statistic), std::abs(s.p_value - r.p_value),
                          std::abs(s.effect_size - r.effect_size)});
        sign_failures += !(r.p_value >= 0.0 && r.p_value <= 1.0);
    }
    return {worst <= 1e-12 && sign_failures == 0, "1000 instances, max deviation " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// Gradients

double sq_loss(const Mlp& m, const Vector& x, const Vector& target) {
    const Vector y = mlp_forward(m, x);
    double l = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) l += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
    return l;
}

double worst_fd_error(std::vector<std::size_t> sizes, std::uint64_t seed) {
    Rng rng(seed);
    Mlp m = Mlp::xavier(sizes, rng);
    for (auto& b : m.biases)
        for (double& v : b) v = 0.1 * rng.gaussian();
    Vector x(sizes.front()), target(sizes.back());
    for (double& v : x) v = rng.gaussian();
    for (double& v : target) v = rng.gaussian();
    const Vector y = mlp_forward(m, x);
    Vector upstream(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) upstream[i] = y[i] - target[i];
    const MlpGradient g = mlp_backward(m, x, upstream);
    const double h = 1e-5;
    double worst = 0.0;
    auto probe = [&](double& slot, double analytic) {
        const double keep = slot;
        slot = keep + h;
        const double up = sq_loss(m, x, target);
        slot = keep - h;
        const double down = sq_loss(m, x, target);
        slot = keep;
        const double numeric = (up - down) / (2.0 * h);
        if (std::abs(numeric) < 1e-7 && std::abs(analytic) < 1e-7) return;
        worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-8, std::abs(numeric) + std::abs(analytic)));
    };
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        auto w = m.weights[l].values();
        const auto gw = g.weights[l].values();
        for (std::size_t i = 0; i < w.size(); ++i) probe(w[i], gw[i]);
        for (std::size_t i = 0; i < m.biases[l].size(); ++i) probe(m.biases[l][i], g.biases[l][i]);
    }
    for (std::size_t i = 0; i < x.size(); ++i) probe(x[i], g.input[i]);
    return worst;
}

Outcome gradients() {
    // Diffusion network, kappa, concept classifier, and a small reference net.
    const ModelConfig mc;
    std::vector<std::size_t> eps_sizes{8 + 8 + mc.embed_width};
    eps_sizes.insert(eps_sizes.end(), mc.hidden.begin(), mc.hidden.end());
    eps_sizes.push_back(8);
    std::vector<std::size_t> clf{8};
    const ClassifierConfig cc;
    clf.insert(clf.end(), cc.hidden.begin(), cc.hidden.end());
    auto kappa_sizes = clf, concept_sizes = clf;
    kappa_sizes.push_back(2);
    concept_sizes.push_back(8);
    double worst = 0;
    std::uint64_t seed = 1;
    for (const auto& sizes : {eps_sizes, kappa_sizes, concept_sizes, std::vector<std::size_t>{2, 4, 2}})
        worst = std::max(worst, worst_fd_error(sizes, seed++));
    return {worst <= 1e-4, "4 configurations, worst relative error " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// Trained default world

struct Fixture {
    Dataset ds;
    EpsilonModel model;
    ClassifierModel kappa;
    double build_seconds = 0;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        const auto t0 = std::chrono::steady_clock::now();
        Fixture r;
        r.ds = build_world(default_world_spec(), 7);
        r.model = make_epsilon_model(r.ds, {}, 7);
        TrainConfig cfg;
        cfg.seed = 7;
        train_epsilon(r.model, r.ds, cfg);
        r.kappa = train_kappa(r.ds, 7, 30);
        r.build_seconds = seconds_since(t0);
        return r;
    }();
    return f;
}

double kappa_rate(const std::vector<Vector>& xs) {
    std::vector<int> labels;
    for (const auto& x : xs) labels.push_back(kappa_label(fixture().kappa, x));
    return attribute_rate(labels);
}

FairInstruction instruction(double q) { return default_instruction("female", "male", kDefaultEditScale, q); }

Outcome fair_identity() {
    const auto& f = fixture();
    const auto plain = sample(f.model, "occ1", 3.0, 32, 99, {}, 1);
    bool ok = fair_sample(f.model, "occ1", 3.0, 32, 99, std::nullopt, 1).samples == plain;
    LookupTable unrelated{{{"occ5", instruction(0.5)}}};
    ok = ok && !resolve_instruction("occ1", unrelated) &&
         fair_sample(f.model, "occ1", 3.0, 32, 99, resolve_instruction("occ1", unrelated), 1).samples == plain;
    FairInstruction warm = instruction(0.5);
    warm.warmup = f.model.schedule.steps;
    ok = ok && fair_sample(f.model, "occ1", 3.0, 32, 99, warm, 1).samples == plain;
    return {ok, "absent, unmatched and T_warm = T instructions vs plain, 32 samples"};
}

Outcome proportion_control() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& f = fixture();
    const double plain = kappa_rate(sample(f.model, "occ1", 3.0, 500, 11, {}, 1));
    const double half = kappa_rate(fair_sample(f.model, "occ1", 3.0, 500, 11, instruction(0.5), 1).samples);
    const double seventy = kappa_rate(fair_sample(f.model, "occ1", 3.0, 500, 12, instruction(0.7), 1).samples);
    const double secs = f.build_seconds + seconds_since(t0);
    const bool ok = !within_boundary(plain) && std::abs(half - 0.5) <= 0.06 && std::abs(seventy - 0.7) <= 0.07 && secs <= 600.0;
    return {ok, "occ1 plain " + fmt("%.3f", plain) + ", q=0.5 " + fmt("%.3f", half) + ", q=0.7 " + fmt("%.3f", seventy) + ", " +
                    fmt("%.0f", secs) + " s single-threaded"};
}

Outcome monotone() {
    const auto& f = fixture();
    std::string detail = "occ1 rates";
    double prev = -1.0;
    bool ok = true;
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const double r = kappa_rate(fair_sample(f.model, "occ1", 3.0, 300, 21, instruction(q), 1).samples);
        ok = ok && r >= prev;
        prev = r;
        detail += " " + fmt("%.3f", r);
    }
    return {ok, detail};
}

Outcome group_medians() {
    const auto& f = fixture();
    std::vector<PromptSpec> prompts;
    for (const auto& c : f.ds.spec.concepts) prompts.push_back({c.name, PromptSpec{}.prompt_template, 0.27});
    const auto reference = audit_dataset(f.ds, prompts, f.kappa).rates();
    std::map<std::string, std::vector<Vector>> plain, fair;
    for (std::size_t k = 0; k < f.ds.spec.concepts.size(); ++k) {
        const std::string& name = f.ds.spec.concepts[k].name;
        plain[name] = sample(f.model, name, 3.0, 500, 100 + k, {}, 1);
        fair[name] = fair_sample(f.model, name, 3.0, 500, 100 + k, instruction(0.5), 1).samples;
    }
    const OutcomeReport p = audit_outcome(plain, f.kappa, reference), q = audit_outcome(fair, f.kappa, reference);
    bool ok = p.groups.size() == 2 && q.groups.size() == 2;
    std::string detail;
    for (std::size_t g = 0; ok && g < 2; ++g) {
        ok = ok && within_boundary(q.groups[g].box.median) && !within_boundary(p.groups[g].box.median);
        detail += q.groups[g].label + ": plain " + fmt("%.3f", p.groups[g].box.median) + " fair " + fmt("%.3f", q.groups[g].box.median) +
                  (g == 0 ? "; " : "");
    }
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// Metrics

Outcome verdict_grid() {
    auto oracle = [](int ref, int out) {
        if (std::abs(out - ref) <= 4) return BiasVerdict::kReflected;
        return std::abs(out - 50) > std::abs(ref - 50) ? BiasVerdict::kAmplified : BiasVerdict::kMitigated;
    };
    std::size_t disagreements = 0, counts[3] = {0, 0, 0};
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            const BiasVerdict v = verdict(i / 100.0, j / 100.0);
            disagreements += v != oracle(i, j);
            ++counts[static_cast<int>(v)];
            if (i == j) disagreements += v != BiasVerdict::kReflected;
        }
    const bool hand = verdict(0.30, 0.32) == BiasVerdict::kReflected && verdict(0.30, 0.20) == BiasVerdict::kAmplified &&
                      verdict(0.30, 0.40) == BiasVerdict::kMitigated;
    return {disagreements == 0 && hand && counts[0] + counts[1] + counts[2] == 101 * 101,
            "amplified " + std::to_string(counts[0]) + ", reflected " + std::to_string(counts[1]) + ", mitigated " +
                std::to_string(counts[2]) + ", " + std::to_string(disagreements) + " disagreements"};
}

Outcome counting_oracle() {
    Rng rng(9);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 20 + rng.below(400);
        std::vector<LabeledRecord> records;
        std::vector<int> labels;
        const double bias = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) {
            records.push_back({rng.below(3) == 0 ? "c" : "o", rng.uniform() < bias ? 1 : 0});
            labels.push_back(records.back().attribute);
        }
        records.push_back({"o", 0});
        records.push_back({"o", 1});
        labels.push_back(0);
        labels.push_back(1);
        long ones = 0, pos[2] = {0, 0}, tot[2] = {0, 0};
        for (const auto& r : records) {
            ones += r.attribute;
            ++tot[r.attribute];
            pos[r.attribute] += r.concept_name == "c";
        }
        const double rate = static_cast<double>(ones) / static_cast<double>(records.size());
        const double gap = std::fabs(static_cast<double>(pos[1]) / static_cast<double>(tot[1]) -
                                     static_cast<double>(pos[0]) / static_cast<double>(tot[0]));
        worst = std::max({worst, std::abs(attribute_rate(labels) - rate), std::abs(parity_gap(records, "c") - gap)});
    }
    return {worst <= 1e-15, "50 datasets, max deviation " + fmt("%.3g", worst)};
}

Outcome filter_edges() {
    auto s = [](Vector v) { return Sample{"s", "c", 0, std::move(v)}; };
    // Norm-100 integer vectors: cosines 0.30, 0.27, 0.26 against e0.
    const std::vector<Sample> samples{s({30, 95, 7, 5, 1, 0, 0, 0}), s({27, 96, 7, 2, 1, 1, 0, 0}), s({26, 96, 10, 2, 2, 0, 0, 0})};
    const Vector e0{1, 0, 0, 0, 0, 0, 0, 0};
    PromptSpec p;
    p.threshold = 0.27;
    bool ok = cosine(samples[1].features, e0) == 0.27 && filter_relevant(samples, p, e0) == std::vector<std::size_t>{0};
    const Dataset ds = build_world(default_world_spec(), 3);
    Rng rng(4);
    for (int trial = 0; trial < 200 && ok; ++trial) {
        double s1 = 2.0 * rng.uniform() - 1.0, s2 = 2.0 * rng.uniform() - 1.0;
        if (s1 > s2) std::swap(s1, s2);
        PromptSpec a, b;
        a.concept_name = b.concept_name = ds.spec.concepts[rng.below(8)].name;
        a.threshold = s1;
        b.threshold = s2;
        const auto proto = concept_prototype(ds.spec, a.concept_name);
        const auto r1 = filter_relevant(ds.samples, a, proto), r2 = filter_relevant(ds.samples, b, proto);
        ok = std::includes(r1.begin(), r1.end(), r2.begin(), r2.end());
    }
    return {ok, "sim = s excluded; R(s2) subset of R(s1) on 200 threshold pairs"};
}

// ---------------------------------------------------------------------------
// Pipeline

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "fairdiff_acceptance";
    fs::remove_all(root);
    ReproOptions o;
    o.seed = 7;
    std::ostringstream log;
    o.out_dir = (root / "a").string();
    const auto ra = cmd_repro(o, log);
    o.out_dir = (root / "b").string();
    cmd_repro(o, log);
    const std::string a = read_file(root / "a" / "MANIFEST"), b = read_file(root / "b" / "MANIFEST");
    std::string detail = std::to_string(ra.manifest.size()) + " artifacts";
    for (const auto& [q, rep] : ra.reports)
        if (rep.pooled_fair_rate) detail += ", q=" + format_short(q) + " pooled " + fmt("%.4f", *rep.pooled_fair_rate);
    fs::remove_all(root);
    return {!a.empty() && a == b, detail};
}

Outcome kappa_gate() {
    const double acc = fixture().kappa.heldout_accuracy;
    Dataset ones = fixture().ds;
    for (auto& s : ones.samples) s.attribute = 1;
    bool degenerate = false;
    try {
        train_kappa(ones, 7, 30);
    } catch (const DegenerateInputError&) {
        degenerate = true;
    }
    return {acc >= 0.95 && degenerate, "held-out accuracy " + fmt("%.4f", acc) + (degenerate ? ", all-one dataset rejected" : "")};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"iEAT exact p/S/d match brute-force oracle", ieat_oracle},
        {"iEAT antisymmetry and scale invariance", ieat_symmetry},
        {"MLP gradients pass finite differences", gradients},
        {"fair guidance identity cases equal plain sampling", fair_identity},
        {"proportion control on planted rate 0.15", proportion_control},
        {"measured rate monotone in q", monotone},
        {"per-group medians repaired by fair guidance", group_medians},
        {"verdict rule grid", verdict_grid},
        {"parity and rate match counting oracle", counting_oracle},
        {"relevance filter monotone and strict", filter_edges},
        {"repro MANIFEST byte-identical across runs", determinism},
        {"kappa quality gate", kappa_gate},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        failures += !r.pass;
        std::printf("%s %2zu %s (%s)\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, r.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures ? 1 : 0;
}
