#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fairdiff/adam.hpp"
#include "fairdiff/error.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/metrics.hpp"
#include "fairdiff/mlp.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/world.hpp"

namespace fairdiff {

// ---------------------------------------------------------------------------
// Classifier (kappa)

/// Feature vector -> class logits. Inputs are standardized per dimension
/// before the network sees them.
struct ClassifierModel {
    Mlp net;
    Vector shift;
    Vector scale;
    double heldout_accuracy = 0.0;
    std::uint64_t seed = 0;
    /// confusion[true][predicted] on the held-out split.
    std::vector<std::vector<std::size_t>> confusion;

    std::size_t classes() const { return net.output_size(); }
    std::size_t dim() const { return shift.size(); }

    Vector logits(std::span<const double> features) const {
        if (features.size() != dim())
            throw InputError("classifier: feature length " + std::to_string(features.size()) + ", expected " + std::to_string(dim()));
        Vector x(features.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = (features[i] - shift[i]) / scale[i];
        return mlp_forward(net, x);
    }
};

/// Argmax; exact ties resolve to the lowest class index.
inline int label_from_logits(std::span<const double> logits) {
    if (logits.empty()) throw InputError("classifier: no logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return static_cast<int>(best);
}

inline int kappa_label(const ClassifierModel& model, std::span<const double> features) {
    return label_from_logits(model.logits(features));
}

/// Label only when the top logit beats the runner-up by at least `min_margin`.
inline std::optional<int> kappa_label_with_margin(const ClassifierModel& model, std::span<const double> features,
                                                  double min_margin) {
    const Vector z = model.logits(features);
    const int best = label_from_logits(z);
    double runner_up = -INFINITY;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (static_cast<int>(i) != best) runner_up = std::max(runner_up, z[i]);
    if (z[static_cast<std::size_t>(best)] - runner_up < min_margin) return std::nullopt;
    return best;
}

struct ClassifierConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-2;
    std::vector<std::size_t> hidden = {16};
    double holdout_fraction = 0.2;
    double accuracy_floor = 0.9;
};

/// Softmax cross-entropy training on a seeded 80/20 split. The output layer
/// starts at zero so an untrained model is at chance level.
inline ClassifierModel train_classifier(std::span<const Vector> features, std::span<const int> labels, std::size_t classes,
                                        std::uint64_t seed, const ClassifierConfig& cfg = {}) {
    if (features.size() != labels.size()) throw InputError("classifier: feature/label count mismatch");
    if (features.size() < 2) throw InputError("classifier: need at least two examples");
    if (classes < 2) throw InputError("classifier: need at least two classes");
    const std::size_t d = features.front().size();
    for (const auto& f : features)
        if (f.size() != d) throw InputError("classifier: inconsistent feature lengths");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes) throw InputError("classifier: label out of range");

    const std::size_t n = features.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(seed, 4);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(n))));
    const std::size_t n_train = n - n_test;
    if (n_train == 0) throw InputError("classifier: empty training split");

    ClassifierModel model;
    model.seed = seed;
    model.shift.assign(d, 0.0);
    model.scale.assign(d, 0.0);
    for (std::size_t k = 0; k < n_train; ++k)
        for (std::size_t i = 0; i < d; ++i) model.shift[i] += features[order[k]][i];
    for (double& v : model.shift) v /= static_cast<double>(n_train);
    for (std::size_t k = 0; k < n_train; ++k)
        for (std::size_t i = 0; i < d; ++i) {
            const double c = features[order[k]][i] - model.shift[i];
            model.scale[i] += c * c;
        }
    for (double& v : model.scale) {
        v = std::sqrt(v / static_cast<double>(n_train));
        if (!(v > 0.0)) v = 1.0;
    }

    std::vector<std::size_t> sizes{d};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(classes);
    Rng init_rng(seed, 5);
    model.net = Mlp::xavier(sizes, init_rng);
    for (double& w : model.net.weights.back().values()) w = 0.0;

    auto standardized = [&](std::size_t idx) {
        Vector x(d);
        for (std::size_t i = 0; i < d; ++i) x[i] = (features[idx][i] - model.shift[i]) / model.scale[i];
        return x;
    };

    AdamState adam(cfg.learning_rate);
    Rng shuffle_rng(seed, 6);
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[shuffle_rng.below(i)]);
        for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(train.size(), start + cfg.batch_size);
            MlpGradient grad = MlpGradient::zeros_like(model.net);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = train[b];
                const ForwardTrace trace = mlp_forward_trace(model.net, standardized(idx));
                const Vector& z = trace.output();
                const double zmax = *std::max_element(z.begin(), z.end());
                double denom = 0.0;
                for (double v : z) denom += std::exp(v - zmax);
                Vector upstream(classes);
                for (std::size_t c = 0; c < classes; ++c) {
                    const double p = std::exp(z[c] - zmax) / denom;
                    upstream[c] = (p - (static_cast<int>(c) == labels[idx] ? 1.0 : 0.0)) / static_cast<double>(stop - start);
                }
                mlp_backward_accumulate(model.net, trace, upstream, grad);
            }
            auto params = parameter_views(model.net);
            auto grads = gradient_views(grad);
            adam.step(params, grads);
        }
    }

    model.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    std::size_t correct = 0;
    for (std::size_t k = n_train; k < n; ++k) {
        const std::size_t idx = order[k];
        const int pred = label_from_logits(mlp_forward(model.net, standardized(idx)));
        ++model.confusion[static_cast<std::size_t>(labels[idx])][static_cast<std::size_t>(pred)];
        correct += pred == labels[idx];
    }
    model.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(n_test);
    return model;
}

/// Attribute classifier. Refuses deployment below `cfg.accuracy_floor`.
inline ClassifierModel train_kappa(const Dataset& ds, std::uint64_t seed, std::size_t epochs, ClassifierConfig cfg = {}) {
    if (ds.samples.empty()) throw DegenerateInputError("kappa: empty dataset");
    std::vector<Vector> x;
    std::vector<int> y;
    std::size_t ones = 0;
    for (const auto& s : ds.samples) {
        x.push_back(s.features);
        y.push_back(s.attribute);
        ones += s.attribute != 0;
    }
    if (ones == 0 || ones == ds.samples.size())
        throw DegenerateInputError("kappa: dataset contains a single attribute value (a=" + std::to_string(ones ? 1 : 0) + ")");
    cfg.epochs = epochs;
    ClassifierModel m = train_classifier(x, y, 2, seed, cfg);
    if (m.heldout_accuracy < cfg.accuracy_floor) {
        throw QualityError("kappa: held-out accuracy " + format_double(m.heldout_accuracy) + " below floor " +
                               format_double(cfg.accuracy_floor),
                           m.heldout_accuracy);
    }
    return m;
}

// Classifier checkpoint: MLP block, then
//   STANDARDIZE <shift...> | <scale...>
//   META accuracy <a> seed <s>
//   CONFUSION <k> <row-major counts>
inline void write_classifier_checkpoint(std::ostream& out, const ClassifierModel& m) {
    write_mlp_checkpoint(out, m.net);
    out << "STANDARDIZE";
    for (double v : m.shift) out << ' ' << format_double(v);
    out << " |";
    for (double v : m.scale) out << ' ' << format_double(v);
    out << "\nMETA accuracy " << format_double(m.heldout_accuracy) << " seed " << m.seed << '\n';
    out << "CONFUSION " << m.confusion.size();
    for (const auto& row : m.confusion)
        for (std::size_t c : row) out << ' ' << c;
    out << '\n';
}

inline ClassifierModel read_classifier_checkpoint(std::istream& in) {
    ClassifierModel m;
    m.net = read_mlp_checkpoint(in);
    std::string line;
    if (!std::getline(in, line)) throw InputError("classifier checkpoint: missing STANDARDIZE");
    auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0] != "STANDARDIZE") throw InputError("classifier checkpoint: expected STANDARDIZE");
    bool second = false;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (tokens[i] == "|") {
            second = true;
            continue;
        }
        (second ? m.scale : m.shift).push_back(parse_double(tokens[i]));
    }
    if (m.shift.size() != m.scale.size() || m.shift.size() != m.net.input_size())
        throw InputError("classifier checkpoint: standardization does not match network input");
    if (!std::getline(in, line)) throw InputError("classifier checkpoint: missing META");
    tokens = split_ws(line);
    if (tokens.size() != 5 || tokens[0] != "META" || tokens[1] != "accuracy" || tokens[3] != "seed")
        throw InputError("classifier checkpoint: malformed META");
    m.heldout_accuracy = parse_double(tokens[2]);
    m.seed = std::stoull(tokens[4]);
    if (!std::getline(in, line)) throw InputError("classifier checkpoint: missing CONFUSION");
    tokens = split_ws(line);
    if (tokens.size() < 2 || tokens[0] != "CONFUSION") throw InputError("classifier checkpoint: malformed CONFUSION");
    const std::size_t k = std::stoull(tokens[1]);
    if (tokens.size() != 2 + k * k) throw InputError("classifier checkpoint: CONFUSION size mismatch");
    m.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < k * k; ++i) m.confusion[i / k][i % k] = std::stoull(tokens[2 + i]);
    return m;
}

// ---------------------------------------------------------------------------
// Relevance filtering

struct PromptSpec {
    std::string concept_name;
    std::string prompt_template = "A photo of the face of a {occ}";
    double threshold = 0.27;

    std::string text() const {
        std::string t = prompt_template;
        if (const auto pos = t.find("{occ}"); pos != std::string::npos) t.replace(pos, 5, concept_name);
        return t;
    }

    void validate() const {
        if (!(threshold >= -1.0 && threshold < 1.0))
            throw SpecError("prompt '" + concept_name + "': threshold must lie in [-1, 1)");
    }
};

/// Indices of samples whose cosine similarity to `prototype` is strictly
/// greater than the prompt threshold.
inline std::vector<std::size_t> filter_relevant(std::span<const Sample> samples, const PromptSpec& prompt,
                                                std::span<const double> prototype) {
    if (norm(prototype) == 0.0) throw NumericError("filter_relevant: zero prototype");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].features.size() != prototype.size()) throw InputError("filter_relevant: dimension mismatch");
        if (norm(samples[i].features) == 0.0) continue;
        if (cosine(samples[i].features, prototype) > prompt.threshold) keep.push_back(i);
    }
    return keep;
}

/// Prompt list: one `concept[,threshold]` per line, '#' comments.
inline std::vector<PromptSpec> parse_prompt_list(std::istream& in) {
    std::vector<PromptSpec> prompts;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto parts = split(line, ',');
        if (parts.size() > 2) throw ParseError("expected concept[,threshold]", line_no, 1);
        PromptSpec p;
        p.concept_name = trim(parts[0]);
        if (p.concept_name.empty()) throw ParseError("empty concept", line_no, 1);
        if (parts.size() == 2) {
            p.threshold = parse_number(trim(parts[1]), line_no, parts[0].size() + 2);
            if (!(p.threshold >= -1.0 && p.threshold < 1.0)) throw ParseError("threshold outside [-1, 1)", line_no, parts[0].size() + 2);
        }
        prompts.push_back(std::move(p));
    }
    return prompts;
}

// ---------------------------------------------------------------------------
// Dataset audit

struct AuditRow {
    std::string concept_name;
    std::string prompt_text;
    double threshold = 0.27;
    std::size_t relevant = 0;
    std::optional<double> rate;            // absent when the relevant set is empty
    std::optional<double> corrected_rate;  // misclassification-corrected, display only
    std::optional<double> parity_gap;
    bool in_boundary = false;
};

struct AuditReport {
    std::vector<AuditRow> rows;
    std::vector<GroupStats> groups;
    double kappa_accuracy = 0.0;
    std::vector<std::vector<std::size_t>> kappa_confusion;

    const AuditRow* find(const std::string& concept_name) const {
        for (const auto& r : rows)
            if (r.concept_name == concept_name) return &r;
        return nullptr;
    }

    std::vector<RateRecord> rates() const {
        std::vector<RateRecord> out;
        for (const auto& r : rows)
            if (r.rate) out.push_back({r.concept_name, *r.rate, r.relevant});
        return out;
    }
};

/// Inverts r = rho * acc + (1 - rho) * (1 - acc), clamped to [0, 1].
inline std::optional<double> misclassification_corrected(double measured, double accuracy) {
    const double denom = 2.0 * accuracy - 1.0;
    if (!(denom > 0.0)) return std::nullopt;
    return std::clamp((measured - (1.0 - accuracy)) / denom, 0.0, 1.0);
}

/// Builds the f/m split plus any user groups as box statistics over `rates`.
inline std::vector<GroupStats> build_group_stats(std::span<const RateRecord> split_by, std::span<const RateRecord> rates,
                                                 const std::vector<ConceptGroup>& extra_groups, const std::string& prefix = "") {
    std::vector<GroupStats> out;
    if (split_by.empty()) return out;
    const GroupSplit split = group_split(split_by);
    auto collect = [&](const std::vector<RateRecord>& members) {
        std::vector<RateRecord> picked;
        for (const auto& m : members)
            for (const auto& r : rates)
                if (r.concept_name == m.concept_name) picked.push_back(r);
        return picked;
    };
    for (const auto& [label, members] : {std::pair{std::string("f"), &split.f}, std::pair{std::string("m"), &split.m}}) {
        const auto picked = collect(*members);
        if (!picked.empty()) out.push_back(group_stats(prefix + label, picked));
    }
    for (const auto& g : extra_groups) {
        std::vector<RateRecord> picked;
        for (const auto& name : g.members)
            for (const auto& r : rates)
                if (r.concept_name == name) picked.push_back(r);
        if (!picked.empty()) out.push_back(group_stats(prefix + g.name, picked));
    }
    return out;
}

/// Filter, label with kappa and measure each prompt's attribute rate. The
/// parity gap uses y = membership in the prompt's relevant set and a = kappa
/// label over the whole dataset.
inline AuditReport audit_dataset(const Dataset& ds, std::span<const PromptSpec> prompts, const ClassifierModel& kappa,
                                 const FairBoundary& boundary = {}) {
    AuditReport report;
    report.kappa_accuracy = kappa.heldout_accuracy;
    report.kappa_confusion = kappa.confusion;
    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) labels.push_back(kappa_label(kappa, s.features));

    for (const auto& prompt : prompts) {
        prompt.validate();
        const Vector prototype = concept_prototype(ds.spec, prompt.concept_name);
        const auto relevant = filter_relevant(ds.samples, prompt, prototype);
        AuditRow row;
        row.concept_name = prompt.concept_name;
        row.prompt_text = prompt.text();
        row.threshold = prompt.threshold;
        row.relevant = relevant.size();
        if (!relevant.empty()) {
            std::vector<int> member_labels;
            for (std::size_t i : relevant) member_labels.push_back(labels[i]);
            row.rate = attribute_rate(member_labels);
            row.corrected_rate = misclassification_corrected(*row.rate, kappa.heldout_accuracy);
            row.in_boundary = within_boundary(*row.rate, boundary);
            std::vector<LabeledRecord> records(ds.samples.size());
            std::vector<bool> member(ds.samples.size(), false);
            for (std::size_t i : relevant) member[i] = true;
            for (std::size_t i = 0; i < ds.samples.size(); ++i) records[i] = {member[i] ? "in" : "out", labels[i]};
            try {
                row.parity_gap = parity_gap(records, "in");
            } catch (const DegenerateInputError&) {
                row.parity_gap.reset();
            }
        }
        report.rows.push_back(std::move(row));
    }
    const auto rates = report.rates();
    report.groups = build_group_stats(rates, rates, ds.spec.groups);
    return report;
}

// ---------------------------------------------------------------------------
// Outcome audit

struct OutcomeRow {
    std::string concept_name;
    double ref_rate = 0.0;
    double out_rate = 0.0;
    std::size_t count = 0;
    BiasVerdict verdict = BiasVerdict::kReflected;
    bool in_boundary = false;
};

struct OutcomeReport {
    std::vector<OutcomeRow> rows;
    VerdictSummary summary;
    std::vector<GroupStats> groups;  // f/m split taken from the reference rates
};

/// Labels generated samples per concept, compares each rate with the
/// reference rate and aggregates verdicts and per-group statistics.
inline OutcomeReport audit_outcome(const std::map<std::string, std::vector<Vector>>& generated, const ClassifierModel& kappa,
                                   std::span<const RateRecord> reference, const FairBoundary& boundary = {},
                                   const std::vector<ConceptGroup>& extra_groups = {}) {
    OutcomeReport report;
    std::vector<RateRecord> out_rates;
    std::vector<RateRecord> ref_used;
    for (const auto& [name, vectors] : generated) {
        const auto ref = std::find_if(reference.begin(), reference.end(), [&](const RateRecord& r) { return r.concept_name == name; });
        if (ref == reference.end()) throw LookupError("audit_outcome: concept '" + name + "' missing from reference");
        if (vectors.empty()) continue;
        std::vector<int> labels;
        for (const auto& v : vectors) labels.push_back(kappa_label(kappa, v));
        OutcomeRow row;
        row.concept_name = name;
        row.ref_rate = ref->rate;
        row.out_rate = attribute_rate(labels);
        row.count = vectors.size();
        row.verdict = verdict(row.ref_rate, row.out_rate, boundary);
        row.in_boundary = within_boundary(row.out_rate, boundary);
        report.summary.add(row.verdict);
        out_rates.push_back({name, row.out_rate, row.count});
        ref_used.push_back(*ref);
        report.rows.push_back(std::move(row));
    }
    report.groups = build_group_stats(ref_used, out_rates, extra_groups);
    return report;
}

}  // namespace fairdiff
