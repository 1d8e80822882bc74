#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fairdiff/audit.hpp"
#include "fairdiff/error.hpp"
#include "fairdiff/fair_guidance.hpp"
#include "fairdiff/ieat.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/metrics.hpp"

namespace fairdiff {

inline constexpr const char* kToolVersion = "1.0.0";

/// Provenance embedded as the first line of every emitted report.
struct ReportMeta {
    std::uint64_t seed = 0;
    std::string config_digest;
};

inline void write_meta(std::ostream& out, const ReportMeta& meta) {
    out << "# fairdiff " << kToolVersion << " seed=" << meta.seed << " config=" << meta.config_digest << '\n';
}

namespace detail {

inline std::string opt_num(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

/// Next non-comment, non-blank line.
inline bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no) {
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        return true;
    }
    return false;
}

inline std::map<std::string, std::size_t> header_index(const std::string& line) {
    std::map<std::string, std::size_t> idx;
    const auto cols = split(line, ',');
    for (std::size_t i = 0; i < cols.size(); ++i) idx[trim(cols[i])] = i;
    return idx;
}

inline std::size_t require_column(const std::map<std::string, std::size_t>& idx, const std::string& name, std::size_t line) {
    const auto it = idx.find(name);
    if (it == idx.end()) throw ParseError("missing column '" + name + "'", line, 1);
    return it->second;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset audit report

inline void write_audit_csv(std::ostream& out, const AuditReport& r, const ReportMeta& meta) {
    write_meta(out, meta);
    out << "concept,threshold,relevant,rate,corrected_rate,parity_gap,in_boundary,status\n";
    for (const auto& row : r.rows) {
        out << row.concept_name << ',' << format_double(row.threshold) << ',' << row.relevant << ',' << detail::opt_num(row.rate)
            << ',' << detail::opt_num(row.corrected_rate) << ',' << detail::opt_num(row.parity_gap) << ','
            << (row.rate ? (row.in_boundary ? "1" : "0") : "") << ',' << (row.rate ? "ok" : "missing") << '\n';
    }
}

/// Reference rates from an audit CSV; rows marked missing are skipped.
inline std::vector<RateRecord> read_audit_rates(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!detail::next_data_line(in, line, line_no)) throw InputError("audit report: empty file");
    const auto idx = detail::header_index(line);
    const auto c_concept = detail::require_column(idx, "concept", line_no);
    const auto c_rate = detail::require_column(idx, "rate", line_no);
    const auto c_rel = detail::require_column(idx, "relevant", line_no);
    std::vector<RateRecord> out;
    while (detail::next_data_line(in, line, line_no)) {
        const auto cells = split(line, ',');
        if (cells.size() != idx.size()) throw ParseError("wrong field count", line_no, 1);
        if (cells[c_rate].empty()) continue;
        out.push_back({cells[c_concept], parse_number(cells[c_rate], line_no, 1), parse_count(cells[c_rel], line_no, 1)});
    }
    return out;
}

inline void write_confusion(std::ostream& out, const std::vector<std::vector<std::size_t>>& confusion) {
    out << "kappa held-out confusion (rows = true, cols = predicted):\n";
    for (const auto& row : confusion) {
        out << " ";
        for (std::size_t c : row) out << ' ' << c;
        out << '\n';
    }
}

inline void write_box_csv(std::ostream& out, const std::vector<GroupStats>& groups, const ReportMeta& meta) {
    write_meta(out, meta);
    out << "group,min,q1,median,q3,max,lo_whisker,hi_whisker\n";
    for (const auto& g : groups) {
        const auto& b = g.box;
        out << g.label << ',' << format_double(b.min) << ',' << format_double(b.q1) << ',' << format_double(b.median) << ','
            << format_double(b.q3) << ',' << format_double(b.max) << ',' << format_double(b.lo_whisker) << ','
            << format_double(b.hi_whisker) << '\n';
    }
}

inline void write_audit_summary(std::ostream& out, const AuditReport& r, const ReportMeta& meta, const FairBoundary& boundary = {}) {
    write_meta(out, meta);
    out << "dataset audit\n";
    out << "fair boundary: " << format_double(boundary.target) << " +/- " << format_double(boundary.half_width) << '\n';
    out << "kappa held-out accuracy: " << format_double(r.kappa_accuracy) << '\n';
    write_confusion(out, r.kappa_confusion);
    std::size_t inside = 0, present = 0;
    for (const auto& row : r.rows) {
        out << "  " << row.concept_name << " [" << row.prompt_text << "] |R|=" << row.relevant;
        if (row.rate) {
            ++present;
            inside += row.in_boundary;
            out << " rate=" << format_double(*row.rate);
            if (row.corrected_rate) out << " corrected=" << format_double(*row.corrected_rate);
            out << (row.in_boundary ? " (within boundary)" : " (outside boundary)");
        } else {
            out << " missing: no relevant samples";
        }
        out << '\n';
    }
    out << present << " concepts measured, " << inside << " within the fair boundary\n";
    for (const auto& g : r.groups) out << "group " << g.label << ": median " << format_double(g.box.median) << '\n';
}

// ---------------------------------------------------------------------------
// Generated samples: id,concept,x0,...  Direction log: id,concept,side,u

inline void write_generated_csv(std::ostream& out, const std::string& concept_name, const std::vector<Vector>& samples,
                                const ReportMeta& meta) {
    write_meta(out, meta);
    const std::size_t d = samples.empty() ? 0 : samples.front().size();
    out << "id,concept";
    for (std::size_t i = 0; i < d; ++i) out << ",x" << i;
    out << '\n';
    for (std::size_t k = 0; k < samples.size(); ++k) {
        out << concept_name << "-g" << k << ',' << concept_name;
        for (double v : samples[k]) out << ',' << format_double(v);
        out << '\n';
    }
}

inline void write_direction_log(std::ostream& out, const std::string& concept_name, const std::vector<DirectionDraw>& draws,
                                const ReportMeta& meta) {
    write_meta(out, meta);
    out << "id,concept,side,u\n";
    for (std::size_t k = 0; k < draws.size(); ++k)
        out << concept_name << "-g" << k << ',' << concept_name << ',' << static_cast<int>(draws[k].side) << ','
            << format_double(draws[k].variate) << '\n';
}

/// Generated vectors grouped by concept, appended to `into`.
inline void read_generated_csv(std::istream& in, std::map<std::string, std::vector<Vector>>& into) {
    std::string line;
    std::size_t line_no = 0;
    if (!detail::next_data_line(in, line, line_no)) throw InputError("generated samples: empty file");
    const auto header = split(line, ',');
    if (header.size() < 3 || header[0] != "id" || header[1] != "concept")
        throw ParseError("generated header must start with id,concept,x0", line_no, 1);
    while (detail::next_data_line(in, line, line_no)) {
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) throw ParseError("wrong field count", line_no, 1);
        Vector v;
        for (std::size_t i = 2; i < cells.size(); ++i) v.push_back(parse_number(cells[i], line_no, 1));
        into[cells[1]].push_back(std::move(v));
    }
}

// ---------------------------------------------------------------------------
// Outcome comparison: concept,ref_rate,out_rate,fair_rate,verdict,in_boundary

struct ComparisonRow {
    std::string concept_name;
    double ref_rate = 0.0;
    double out_rate = 0.0;
    std::optional<double> fair_rate;
    BiasVerdict verdict = BiasVerdict::kReflected;
    bool in_boundary = false;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    VerdictSummary summary;
    std::vector<GroupStats> groups;  // ref:*, out:*, fair:* box statistics
    std::optional<double> pooled_fair_rate;
};

inline ComparisonReport compare_outcomes(std::span<const RateRecord> reference, const OutcomeReport& plain,
                                         const std::optional<OutcomeReport>& fair,
                                         const std::vector<ConceptGroup>& extra_groups = {}) {
    ComparisonReport r;
    r.summary = plain.summary;
    std::vector<RateRecord> ref_rates, out_rates, fair_rates;
    double fair_hits = 0.0;
    std::size_t fair_total = 0;
    for (const auto& row : plain.rows) {
        ComparisonRow c;
        c.concept_name = row.concept_name;
        c.ref_rate = row.ref_rate;
        c.out_rate = row.out_rate;
        c.verdict = row.verdict;
        c.in_boundary = row.in_boundary;
        if (fair) {
            for (const auto& f : fair->rows) {
                if (f.concept_name != row.concept_name) continue;
                c.fair_rate = f.out_rate;
                c.in_boundary = f.in_boundary;
                fair_rates.push_back({f.concept_name, f.out_rate, f.count});
                fair_hits += f.out_rate * static_cast<double>(f.count);
                fair_total += f.count;
            }
        }
        ref_rates.push_back({row.concept_name, row.ref_rate, 1});
        out_rates.push_back({row.concept_name, row.out_rate, row.count});
        r.rows.push_back(std::move(c));
    }
    if (fair_total) r.pooled_fair_rate = fair_hits / static_cast<double>(fair_total);
    for (auto& g : build_group_stats(reference, ref_rates, extra_groups, "ref:")) r.groups.push_back(std::move(g));
    for (auto& g : build_group_stats(reference, out_rates, extra_groups, "out:")) r.groups.push_back(std::move(g));
    for (auto& g : build_group_stats(reference, fair_rates, extra_groups, "fair:")) r.groups.push_back(std::move(g));
    return r;
}

inline void write_comparison_csv(std::ostream& out, const ComparisonReport& r, const ReportMeta& meta) {
    write_meta(out, meta);
    out << "concept,ref_rate,out_rate,fair_rate,verdict,in_boundary\n";
    for (const auto& row : r.rows)
        out << row.concept_name << ',' << format_double(row.ref_rate) << ',' << format_double(row.out_rate) << ','
            << detail::opt_num(row.fair_rate) << ',' << to_string(row.verdict) << ',' << (row.in_boundary ? 1 : 0) << '\n';
}

inline void write_verdict_csv(std::ostream& out, const VerdictSummary& s, const ReportMeta& meta) {
    write_meta(out, meta);
    out << "amplified_pct,reflected_pct,mitigated_pct,concepts\n";
    out << format_double(s.percent(s.amplified)) << ',' << format_double(s.percent(s.reflected)) << ','
        << format_double(s.percent(s.mitigated)) << ',' << s.total() << '\n';
}

/// Columnar text for gnuplot: a per-concept block, then a box-statistics block.
inline void write_plot_data(std::ostream& out, const ComparisonReport& r, const ReportMeta& meta) {
    write_meta(out, meta);
    out << "# index concept ref_rate out_rate fair_rate\n";
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        out << i << ' ' << row.concept_name << ' ' << format_double(row.ref_rate) << ' ' << format_double(row.out_rate) << ' '
            << (row.fair_rate ? format_double(*row.fair_rate) : std::string("NaN")) << '\n';
    }
    out << "\n\n# index group min q1 median q3 max lo_whisker hi_whisker\n";
    for (std::size_t i = 0; i < r.groups.size(); ++i) {
        const auto& b = r.groups[i].box;
        out << i << ' ' << r.groups[i].label << ' ' << format_double(b.min) << ' ' << format_double(b.q1) << ' '
            << format_double(b.median) << ' ' << format_double(b.q3) << ' ' << format_double(b.max) << ' '
            << format_double(b.lo_whisker) << ' ' << format_double(b.hi_whisker) << '\n';
    }
}

inline void write_comparison_summary(std::ostream& out, const ComparisonReport& r, const ReportMeta& meta,
                                     const FairBoundary& boundary = {}) {
    write_meta(out, meta);
    out << "outcome report\n";
    out << "fair boundary: " << format_double(boundary.target) << " +/- " << format_double(boundary.half_width) << '\n';
    const auto& s = r.summary;
    out << "verdicts over " << s.total() << " concepts: amplified " << format_double(s.percent(s.amplified)) << "%, reflected "
        << format_double(s.percent(s.reflected)) << "%, mitigated " << format_double(s.percent(s.mitigated)) << "%\n";
    for (const auto& row : r.rows) {
        out << "  " << row.concept_name << ": ref " << format_double(row.ref_rate) << " -> out " << format_double(row.out_rate);
        if (row.fair_rate) out << " -> fair " << format_double(*row.fair_rate);
        out << " [" << to_string(row.verdict) << "]\n";
    }
    if (r.pooled_fair_rate) out << "pooled fair-guided rate: " << format_double(*r.pooled_fair_rate) << '\n';
    for (const auto& g : r.groups)
        out << "group " << g.label << ": median " << format_double(g.box.median)
            << (within_boundary(g.box.median, boundary) ? " (within boundary)" : " (outside boundary)") << '\n';
}

// ---------------------------------------------------------------------------
// iEAT inputs and output

/// Concept-set CSV: id,x0,...,x{D-1}
inline ConceptSet read_concept_set_csv(std::istream& in, std::string label) {
    std::string line;
    std::size_t line_no = 0;
    if (!detail::next_data_line(in, line, line_no)) throw InputError("concept set '" + label + "': empty file");
    const auto header = split(line, ',');
    if (header.size() < 2 || header[0] != "id") throw ParseError("concept-set header must be id,x0,...", line_no, 1);
    ConceptSet set{std::move(label), {}};
    while (detail::next_data_line(in, line, line_no)) {
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) throw ParseError("wrong field count", line_no, 1);
        Vector v;
        for (std::size_t i = 1; i < cells.size(); ++i) v.push_back(parse_number(cells[i], line_no, 1));
        set.vectors.push_back(std::move(v));
    }
    set.validate();
    return set;
}

inline void write_concept_set_csv(std::ostream& out, const ConceptSet& set) {
    const std::size_t d = set.vectors.empty() ? 0 : set.vectors.front().size();
    out << "id";
    for (std::size_t i = 0; i < d; ++i) out << ",x" << i;
    out << '\n';
    for (std::size_t k = 0; k < set.vectors.size(); ++k) {
        out << set.label << k;
        for (double v : set.vectors[k]) out << ',' << format_double(v);
        out << '\n';
    }
}

inline void write_ieat_row(std::ostream& out, const IeatResult& r, bool with_header = true) {
    if (with_header) out << "S,p,d,method,partitions,se\n";
    out << format_double(r.statistic) << ',' << format_double(r.p_value) << ',' << format_double(r.effect_size) << ','
        << to_string(r.method) << ',' << r.partitions << ',' << (r.standard_error ? format_double(*r.standard_error) : "") << '\n';
}

}  // namespace fairdiff
