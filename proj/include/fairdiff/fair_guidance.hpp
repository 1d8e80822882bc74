#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fairdiff/diffusion.hpp"
#include "fairdiff/error.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

enum class Polarity { kPositive, kNegative };

/// Edit scale used when an instruction does not specify one.
inline constexpr double kDefaultEditScale = 8.0;

struct EditConcept {
    std::string name;
    double scale = kDefaultEditScale;
    Polarity polarity = Polarity::kPositive;

    double sign() const { return polarity == Polarity::kPositive ? 1.0 : -1.0; }
    friend bool operator==(const EditConcept&, const EditConcept&) = default;
};

enum class Side { kOne = 1, kTwo = 2 };

/// A fair instruction: two edit lists and the probability q of steering
/// toward side one. `warmup` sampling steps receive no edit guidance;
/// `mask` keeps only the top ceil(mask * D) coordinates of each edit term.
struct FairInstruction {
    std::vector<EditConcept> side1;
    std::vector<EditConcept> side2;
    double q = 0.5;
    std::size_t warmup = 0;
    double mask = 1.0;

    const std::vector<EditConcept>& edits(Side s) const { return s == Side::kOne ? side1 : side2; }

    void validate() const {
        if (side1.empty() || side2.empty()) throw SpecError("fair instruction: each side needs at least one edit");
        if (!(q >= 0.0 && q <= 1.0)) throw SpecError("fair instruction: q must lie in [0, 1]");
        if (!(mask > 0.0 && mask <= 1.0)) throw SpecError("fair instruction: mask must lie in (0, 1]");
        for (const auto* side : {&side1, &side2})
            for (const auto& e : *side) {
                if (e.name.empty()) throw SpecError("fair instruction: empty edit concept");
                if (!(e.scale > 0.0) || !std::isfinite(e.scale))
                    throw SpecError("fair instruction: scale of '" + e.name + "' must be finite and > 0");
            }
    }

    void validate_against(const ConditioningVocab& vocab) const {
        validate();
        for (const auto* side : {&side1, &side2})
            for (const auto& e : *side)
                if (!vocab.contains(e.name)) throw LookupError("edit concept '" + e.name + "' not in conditioning vocabulary");
    }

    friend bool operator==(const FairInstruction&, const FairInstruction&) = default;
};

/// Steer toward attribute 1 on side one and toward attribute 0 on side two.
inline FairInstruction default_instruction(const std::string& attr1, const std::string& attr0, double scale = kDefaultEditScale,
                                           double q = 0.5) {
    FairInstruction in;
    in.side1 = {{attr1, scale, Polarity::kPositive}, {attr0, scale, Polarity::kNegative}};
    in.side2 = {{attr0, scale, Polarity::kPositive}, {attr1, scale, Polarity::kNegative}};
    in.q = q;
    return in;
}

struct DirectionDraw {
    Side side = Side::kOne;
    double variate = 0.0;
};

/// Side one iff u < q.
inline DirectionDraw draw_direction(const FairInstruction& instr, Rng& rng) {
    const double u = rng.uniform();
    return {u < instr.q ? Side::kOne : Side::kTwo, u};
}

/// Keeps the ceil(fraction * n) largest-|v| coordinates; ties break toward the lower index.
inline std::vector<bool> magnitude_mask(std::span<const double> v, double fraction) {
    const std::size_t n = v.size();
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    std::vector<bool> mask(n, keep >= n);
    if (keep >= n) return mask;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
    for (std::size_t i = 0; i < keep; ++i) mask[idx[i]] = true;
    return mask;
}

/// Sum of the given edit terms from precomputed predictions:
///   sum_i sign_i * s_i * mask_i .* (eps_i - eps_uncond)
inline Vector gamma_from_predictions(std::span<const double> eps_uncond, const std::vector<Vector>& eps_edits,
                                     const std::vector<EditConcept>& edits, double mask_fraction) {
    if (eps_edits.size() != edits.size()) throw ShapeError("gamma: one prediction per edit required");
    Vector g(eps_uncond.size(), 0.0);
    Vector diff(eps_uncond.size());
    for (std::size_t e = 0; e < edits.size(); ++e) {
        if (eps_edits[e].size() != eps_uncond.size()) throw ShapeError("gamma: prediction length differs");
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = eps_edits[e][i] - eps_uncond[i];
        const auto keep = magnitude_mask(diff, mask_fraction);
        const double w = edits[e].sign() * edits[e].scale;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (keep[i]) g[i] += w * diff[i];
    }
    return g;
}

/// Edit term for one reverse step. Zero during the first `warmup` sampling
/// steps, i.e. for t > T - warmup.
inline Vector gamma(const EpsilonModel& model, std::span<const double> zt, std::size_t t,
                    const std::vector<EditConcept>& active_side, const FairInstruction& instr) {
    model.schedule.index(t);
    if (instr.warmup > 0 && t + instr.warmup > model.schedule.steps) return Vector(zt.size(), 0.0);
    const Vector uncond = model.eps_uncond(zt, t);
    std::vector<Vector> preds;
    preds.reserve(active_side.size());
    for (const auto& e : active_side) preds.push_back(model.eps(zt, t, e.name));
    return gamma_from_predictions(uncond, preds, active_side, instr.mask);
}

struct FairSampleResult {
    std::vector<Vector> samples;
    std::vector<DirectionDraw> draws;  // empty when no instruction applied
};

/// Per sample: one direction draw from Rng(seed, 1).split(i), then the plain
/// sampler's chain i (noise from Rng(seed, 0).split(i)) with gamma of the
/// drawn side. No instruction reproduces plain sampling exactly.
inline FairSampleResult fair_sample(const EpsilonModel& model, const std::string& prompt, double guidance_scale, std::size_t n,
                                    std::uint64_t seed, const std::optional<FairInstruction>& instr,
                                    std::size_t threads = 0) {
    FairSampleResult result;
    if (!instr) {
        result.samples = sample(model, prompt, guidance_scale, n, seed, {}, threads);
        return result;
    }
    instr->validate_against(model.vocab);
    const Rng direction_base(seed, 1);
    result.draws.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r = direction_base.split(i);
        result.draws.push_back(draw_direction(*instr, r));
    }
    const FairInstruction& in = *instr;
    result.samples = sample(model, prompt, guidance_scale, n, seed, [&](std::size_t i) -> GammaProvider {
        const std::vector<EditConcept>* side = &in.edits(result.draws[i].side);
        return [&model, side, &in](std::span<const double> zt, std::size_t t, Rng&) -> Vector {
            if (in.warmup > 0 && t + in.warmup > model.schedule.steps) return {};
            return gamma(model, zt, t, *side, in);
        };
    }, threads);
    return result;
}

// ---------------------------------------------------------------------------
// Lookup table. One entry per line:
//   <key>\tq=<float>;warmup=<int>;mask=<float>;side1=+<c>:<s>[,-<c>:<s>...];side2=...
// Key "*" is the wildcard. q, warmup and mask are optional.

struct LookupEntry {
    std::string key;
    FairInstruction instruction;
};

struct LookupTable {
    std::vector<LookupEntry> entries;

    void validate() const {
        std::size_t wildcards = 0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].key == "*") ++wildcards;
            for (std::size_t j = 0; j < i; ++j)
                if (entries[j].key == entries[i].key) throw SpecError("lookup table: duplicate key '" + entries[i].key + "'");
            entries[i].instruction.validate();
        }
        if (wildcards > 1) throw SpecError("lookup table: more than one wildcard");
    }
};

/// Exact key match, else the wildcard, else nothing.
inline std::optional<FairInstruction> resolve_instruction(const std::string& prompt, const LookupTable& table) {
    const FairInstruction* wildcard = nullptr;
    for (const auto& e : table.entries) {
        if (e.key == prompt) return e.instruction;
        if (e.key == "*") wildcard = &e.instruction;
    }
    if (wildcard) return *wildcard;
    return std::nullopt;
}

namespace detail {

inline std::vector<EditConcept> parse_edits(const std::string& text, std::size_t line, std::size_t col) {
    std::vector<EditConcept> edits;
    std::size_t pos = 0;
    for (const auto& item : split(text, ',')) {
        const std::size_t item_col = col + pos;
        pos += item.size() + 1;
        if (item.empty()) throw ParseError("empty edit concept", line, item_col);
        EditConcept e;
        if (item[0] == '+') {
            e.polarity = Polarity::kPositive;
        } else if (item[0] == '-') {
            e.polarity = Polarity::kNegative;
        } else {
            throw ParseError("edit concept must start with '+' or '-'", line, item_col);
        }
        const auto colon = item.rfind(':');
        if (colon == std::string::npos || colon == 1) throw ParseError("edit concept needs <name>:<scale>", line, item_col);
        e.name = item.substr(1, colon - 1);
        e.scale = parse_number(item.substr(colon + 1), line, item_col + colon + 1);
        if (!(e.scale > 0.0) || !std::isfinite(e.scale)) throw ParseError("edit scale must be finite and > 0", line, item_col + colon + 1);
        edits.push_back(std::move(e));
    }
    return edits;
}

}  // namespace detail

inline LookupTable parse_lookup_table(std::istream& in) {
    LookupTable table;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        if (raw.empty() || raw.front() == '#') continue;
        const auto tab = raw.find('\t');
        if (tab == std::string::npos) throw ParseError("expected <key><TAB><fields>", line_no, raw.size() + 1);
        LookupEntry entry;
        entry.key = raw.substr(0, tab);
        if (entry.key.empty()) throw ParseError("empty key", line_no, 1);
        for (const auto& existing : table.entries)
            if (existing.key == entry.key) throw ParseError("duplicate key '" + entry.key + "'", line_no, 1);
        if (entry.key == "*")
            for (const auto& existing : table.entries)
                if (existing.key == "*") throw ParseError("second wildcard entry", line_no, 1);

        bool has_side1 = false, has_side2 = false;
        std::size_t col = tab + 2;
        for (const auto& field : split(std::string_view(raw).substr(tab + 1), ';')) {
            const std::size_t field_col = col;
            col += field.size() + 1;
            if (field.empty()) continue;
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw ParseError("expected name=value", line_no, field_col);
            const std::string name = field.substr(0, eq);
            const std::string value = field.substr(eq + 1);
            const std::size_t value_col = field_col + eq + 1;
            FairInstruction& ins = entry.instruction;
            if (name == "q") {
                ins.q = parse_number(value, line_no, value_col);
                if (!(ins.q >= 0.0 && ins.q <= 1.0)) throw ParseError("q must lie in [0, 1]", line_no, value_col);
            } else if (name == "warmup") {
                ins.warmup = parse_count(value, line_no, value_col);
            } else if (name == "mask") {
                ins.mask = parse_number(value, line_no, value_col);
                if (!(ins.mask > 0.0 && ins.mask <= 1.0)) throw ParseError("mask must lie in (0, 1]", line_no, value_col);
            } else if (name == "side1") {
                ins.side1 = detail::parse_edits(value, line_no, value_col);
                has_side1 = true;
            } else if (name == "side2") {
                ins.side2 = detail::parse_edits(value, line_no, value_col);
                has_side2 = true;
            } else if (name.rfind("side", 0) == 0) {
                throw ParseError("only side1 and side2 are supported, got '" + name + "'", line_no, field_col);
            } else {
                throw ParseError("unknown field '" + name + "'", line_no, field_col);
            }
        }
        if (!has_side1) throw ParseError("missing side1", line_no, tab + 2);
        if (!has_side2) throw ParseError("missing side2", line_no, tab + 2);
        table.entries.push_back(std::move(entry));
    }
    return table;
}

inline LookupTable parse_lookup_table(const std::string& text) {
    std::istringstream in(text);
    return parse_lookup_table(in);
}

inline void write_edits(std::ostream& out, const std::vector<EditConcept>& edits) {
    for (std::size_t i = 0; i < edits.size(); ++i) {
        if (i) out << ',';
        out << (edits[i].polarity == Polarity::kPositive ? '+' : '-') << edits[i].name << ':' << format_short(edits[i].scale);
    }
}

inline void write_lookup_table(std::ostream& out, const LookupTable& table) {
    for (const auto& e : table.entries) {
        const auto& in = e.instruction;
        out << e.key << "\tq=" << format_short(in.q) << ";warmup=" << in.warmup << ";mask=" << format_short(in.mask)
            << ";side1=";
        write_edits(out, in.side1);
        out << ";side2=";
        write_edits(out, in.side2);
        out << '\n';
    }
}

}  // namespace fairdiff
