#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fairdiff/error.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/mlp.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/tensor.hpp"

namespace fairdiff {

struct ConceptSpec {
    std::string name;
    double rate = 0.5;  // planted probability of attribute 1
    std::size_t count = 250;

    friend bool operator==(const ConceptSpec&, const ConceptSpec&) = default;
};

struct ConceptGroup {
    std::string name;
    std::vector<std::string> members;
};

/// Synthetic world: Gaussian clusters per (concept, attribute) cell.
///
/// With K concepts in D >= K dimensions, concept k sits along the centred
/// simplex direction v_k = normalize(e_k - mean(e_0..e_{K-1})) and the
/// attribute along u = normalize(e_0 + ... + e_{K-1}), which is orthogonal to
/// every v_k. Cell means are `sep * v_k + (a - 1/2) * sep * u`, so the two
/// attribute clusters of a concept are `sep` apart and the concept prototype
/// (their midpoint) carries no attribute component.
struct WorldSpec {
    std::size_t dim = 8;
    double separation = 6.0;
    double cluster_std = 1.0;
    std::vector<ConceptSpec> concepts;
    std::vector<ConceptGroup> groups;
    std::string attribute0 = "male";
    std::string attribute1 = "female";

    std::optional<std::size_t> index_of(const std::string& concept_name) const {
        for (std::size_t i = 0; i < concepts.size(); ++i)
            if (concepts[i].name == concept_name) return i;
        return std::nullopt;
    }

    std::size_t require_index(const std::string& concept_name) const {
        if (auto i = index_of(concept_name)) return *i;
        throw LookupError("unknown concept '" + concept_name + "'");
    }

    void validate() const {
        if (dim == 0) throw SpecError("world: dim must be positive");
        if (concepts.size() < 2) throw SpecError("world: at least two concepts are required");
        if (concepts.size() > dim) {
            throw SpecError("world: " + std::to_string(concepts.size()) + " concepts need dim >= " +
                            std::to_string(concepts.size()));
        }
        if (!(separation > 0.0) || !std::isfinite(separation)) throw SpecError("world: sep must be positive");
        if (!(cluster_std > 0.0) || !std::isfinite(cluster_std)) throw SpecError("world: std must be positive");
        if (attribute0.empty() || attribute1.empty() || attribute0 == attribute1)
            throw SpecError("world: attribute names must be distinct and non-empty");
        std::map<std::string, int> seen;
        for (const auto& c : concepts) {
            if (c.name.empty()) throw SpecError("world: empty concept name");
            if (c.name == attribute0 || c.name == attribute1)
                throw SpecError("world: concept '" + c.name + "' collides with an attribute name");
            if (seen[c.name]++) throw SpecError("world: duplicate concept '" + c.name + "'");
            if (!(c.rate >= 0.0 && c.rate <= 1.0)) throw SpecError("world: rate of '" + c.name + "' outside [0,1]");
            if (c.count < 1) throw SpecError("world: count of '" + c.name + "' must be >= 1");
        }
        for (const auto& g : groups) {
            if (g.members.empty()) throw SpecError("world: group '" + g.name + "' is empty");
            for (const auto& m : g.members)
                if (!index_of(m)) throw SpecError("world: group '" + g.name + "' names unknown concept '" + m + "'");
        }
    }

    Vector concept_direction(std::size_t k) const {
        const double K = static_cast<double>(concepts.size());
        Vector v(dim, 0.0);
        for (std::size_t i = 0; i < concepts.size(); ++i) v[i] = (i == k ? 1.0 : 0.0) - 1.0 / K;
        const double n = norm(v);
        for (double& x : v) x /= n;
        return v;
    }

    Vector attribute_direction() const {
        Vector u(dim, 0.0);
        const double w = 1.0 / std::sqrt(static_cast<double>(concepts.size()));
        for (std::size_t i = 0; i < concepts.size(); ++i) u[i] = w;
        return u;
    }

    Vector cluster_mean(std::size_t k, int attribute) const {
        Vector m = concept_direction(k);
        const Vector u = attribute_direction();
        const double shift = (attribute ? 0.5 : -0.5) * separation;
        for (std::size_t i = 0; i < dim; ++i) m[i] = separation * m[i] + shift * u[i];
        return m;
    }
};

struct Sample {
    std::string id;
    std::string concept_name;
    int attribute = 0;
    Vector features;
};

struct Dataset {
    WorldSpec spec;
    std::vector<Sample> samples;

    std::size_t dim() const { return samples.empty() ? spec.dim : samples.front().features.size(); }
};

/// Mean of the concept's two cluster means: the stand-in prompt embedding.
inline Vector concept_prototype(const WorldSpec& spec, const std::string& concept_name) {
    const std::size_t k = spec.require_index(concept_name);
    const Vector m0 = spec.cluster_mean(k, 0);
    const Vector m1 = spec.cluster_mean(k, 1);
    Vector p(spec.dim);
    for (std::size_t i = 0; i < spec.dim; ++i) p[i] = (m0[i] + m1[i]) / 2.0;
    return p;
}

/// Draws N_k samples per concept: attribute first (1 with probability rate),
/// then features from that cell's isotropic Gaussian. Concept k uses stream
/// split(k) of Rng(seed, 9).
inline Dataset build_world(const WorldSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset ds{spec, {}};
    const Rng base(seed, 9);
    for (std::size_t k = 0; k < spec.concepts.size(); ++k) {
        const auto& c = spec.concepts[k];
        Rng rng = base.split(k);
        const Vector means[2] = {spec.cluster_mean(k, 0), spec.cluster_mean(k, 1)};
        for (std::size_t i = 0; i < c.count; ++i) {
            Sample s;
            s.id = c.name + "-" + std::to_string(i);
            s.concept_name = c.name;
            s.attribute = rng.uniform() < c.rate ? 1 : 0;
            s.features.resize(spec.dim);
            for (std::size_t d = 0; d < spec.dim; ++d) s.features[d] = means[s.attribute][d] + spec.cluster_std * rng.gaussian();
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// WorldSpec text format: key=value lines, '#' comments.
//   dim=<D>  sep=<mean separation>  std=<cluster std>
//   concept=<name>,<rate>,<count>        (repeatable)
//   group=<name>:<concept>,<concept>...  (repeatable)
//   attributes=<name for a=0>,<name for a=1>

inline WorldSpec parse_world_spec(std::istream& in) {
    WorldSpec spec;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value", line_no, 1);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::size_t vcol = eq + 2;
        if (key == "dim") {
            spec.dim = parse_count(value, line_no, vcol);
        } else if (key == "sep") {
            spec.separation = parse_number(value, line_no, vcol);
        } else if (key == "std") {
            spec.cluster_std = parse_number(value, line_no, vcol);
        } else if (key == "concept") {
            const auto parts = split(value, ',');
            if (parts.size() != 3) throw ParseError("concept needs <name>,<rate>,<count>", line_no, vcol);
            spec.concepts.push_back({trim(parts[0]), parse_number(trim(parts[1]), line_no, vcol),
                                     parse_count(trim(parts[2]), line_no, vcol)});
        } else if (key == "group") {
            const auto colon = value.find(':');
            if (colon == std::string::npos) throw ParseError("group needs <name>:<concept,...>", line_no, vcol);
            ConceptGroup g{trim(value.substr(0, colon)), {}};
            for (const auto& m : split(value.substr(colon + 1), ','))
                if (auto t = trim(m); !t.empty()) g.members.push_back(t);
            spec.groups.push_back(std::move(g));
        } else if (key == "attributes") {
            const auto parts = split(value, ',');
            if (parts.size() != 2) throw ParseError("attributes needs <name0>,<name1>", line_no, vcol);
            spec.attribute0 = trim(parts[0]);
            spec.attribute1 = trim(parts[1]);
        } else {
            throw ParseError("unknown key '" + key + "'", line_no, 1);
        }
    }
    spec.validate();
    return spec;
}

inline WorldSpec parse_world_spec(const std::string& text) {
    std::istringstream in(text);
    return parse_world_spec(in);
}

inline void write_world_spec(std::ostream& out, const WorldSpec& spec) {
    out << "dim=" << spec.dim << "\nsep=" << format_short(spec.separation) << "\nstd=" << format_short(spec.cluster_std)
        << "\nattributes=" << spec.attribute0 << ',' << spec.attribute1 << '\n';
    for (const auto& c : spec.concepts) out << "concept=" << c.name << ',' << format_short(c.rate) << ',' << c.count << '\n';
    for (const auto& g : spec.groups) {
        out << "group=" << g.name << ':';
        for (std::size_t i = 0; i < g.members.size(); ++i) out << (i ? "," : "") << g.members[i];
        out << '\n';
    }
}

/// Eight concepts spanning strong, weak and fair planted rates on both sides
/// of one half.
inline constexpr const char* kDefaultWorldText = R"(# default synthetic world
dim=8
sep=6
std=1
attributes=male,female
concept=occ0,0.04,250
concept=occ1,0.15,250
concept=occ2,0.30,250
concept=occ3,0.46,250
concept=occ4,0.54,250
concept=occ5,0.70,250
concept=occ6,0.85,250
concept=occ7,0.96,250
)";

inline WorldSpec default_world_spec() { return parse_world_spec(std::string(kDefaultWorldText)); }

// ---------------------------------------------------------------------------
// Dataset CSV: id,concept,attribute,x0,...,x{D-1}

inline void write_dataset_csv(std::ostream& out, const Dataset& ds) {
    const std::size_t d = ds.dim();
    out << "id,concept,attribute";
    for (std::size_t i = 0; i < d; ++i) out << ",x" << i;
    out << '\n';
    for (const auto& s : ds.samples) {
        out << s.id << ',' << s.concept_name << ',' << s.attribute;
        for (double v : s.features) out << ',' << format_double(v);
        out << '\n';
    }
}

/// Reads samples only; the returned spec is reconstructed from the rows
/// (concept names, counts and empirical rates) unless `spec` is supplied.
inline Dataset read_dataset_csv(std::istream& in, const std::optional<WorldSpec>& spec = std::nullopt) {
    std::string line;
    std::size_t line_no = 0;
    // Skip metadata comments.
    do {
        if (!std::getline(in, line)) throw InputError("dataset: empty file");
        ++line_no;
    } while (!line.empty() && line.front() == '#');
    const auto header = split(trim(line), ',');
    if (header.size() < 4 || header[0] != "id" || header[1] != "concept" || header[2] != "attribute")
        throw ParseError("dataset header must start with id,concept,attribute,x0", line_no, 1);
    const std::size_t dim = header.size() - 3;
    Dataset ds;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = trim(line);
        if (row.empty() || row.front() == '#') continue;
        const auto cells = split(row, ',');
        if (cells.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()),
                             line_no, 1);
        Sample s;
        s.id = cells[0];
        s.concept_name = cells[1];
        if (cells[2] != "0" && cells[2] != "1") throw ParseError("attribute must be 0 or 1", line_no, 1);
        s.attribute = cells[2] == "1";
        s.features.reserve(dim);
        for (std::size_t i = 3; i < cells.size(); ++i) {
            const double v = parse_number(cells[i], line_no, 1);
            if (!std::isfinite(v)) throw ParseError("non-finite feature", line_no, 1);
            s.features.push_back(v);
        }
        ds.samples.push_back(std::move(s));
    }
    if (spec) {
        ds.spec = *spec;
    } else {
        ds.spec = WorldSpec{};
        ds.spec.dim = dim;
        std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
        for (const auto& s : ds.samples) {
            if (!counts.count(s.concept_name)) ds.spec.concepts.push_back({s.concept_name, 0.0, 0});
            auto& c = counts[s.concept_name];
            ++c.first;
            c.second += static_cast<std::size_t>(s.attribute);
        }
        for (auto& c : ds.spec.concepts) {
            c.count = counts[c.name].first;
            c.rate = static_cast<double>(counts[c.name].second) / static_cast<double>(c.count);
        }
    }
    return ds;
}

}  // namespace fairdiff
