#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fairdiff/error.hpp"

namespace fairdiff {

/// Comparisons against the boundary half-width tolerate this much rounding
/// so that e.g. |0.46 - 0.5| counts as exactly 0.04.
inline constexpr double kBoundaryTolerance = 1e-9;

struct RateRecord {
    std::string concept_name;
    double rate = 0.0;
    std::size_t count = 0;
};

struct FairBoundary {
    double target = 0.5;
    double half_width = 0.04;

    void validate() const {
        if (!(target >= 0.0 && target <= 1.0)) throw SpecError("boundary target must lie in [0, 1]");
        if (!(half_width >= 0.0 && half_width <= 0.5)) throw SpecError("boundary half-width must lie in [0, 0.5]");
    }
};

enum class BiasVerdict { kAmplified, kReflected, kMitigated };

inline const char* to_string(BiasVerdict v) {
    switch (v) {
        case BiasVerdict::kAmplified: return "amplified";
        case BiasVerdict::kReflected: return "reflected";
        case BiasVerdict::kMitigated: return "mitigated";
    }
    return "?";
}

inline double attribute_rate(std::span<const int> labels) {
    if (labels.empty()) throw InputError("attribute_rate: no labels");
    std::size_t ones = 0;
    for (int l : labels) ones += l != 0;
    return static_cast<double>(ones) / static_cast<double>(labels.size());
}

struct LabeledRecord {
    std::string concept_name;
    int attribute = 0;
};

/// |P(y=1 | a=1) - P(y=1 | a=0)| where y marks membership in `concept_name`.
inline double parity_gap(std::span<const LabeledRecord> records, const std::string& concept_name) {
    std::array<std::size_t, 2> total{}, positive{};
    for (const auto& r : records) {
        const std::size_t a = r.attribute ? 1 : 0;
        ++total[a];
        positive[a] += r.concept_name == concept_name;
    }
    if (total[0] == 0) throw DegenerateInputError("parity_gap: attribute group a=0 is empty");
    if (total[1] == 0) throw DegenerateInputError("parity_gap: attribute group a=1 is empty");
    const double p1 = static_cast<double>(positive[1]) / static_cast<double>(total[1]);
    const double p0 = static_cast<double>(positive[0]) / static_cast<double>(total[0]);
    return std::abs(p1 - p0);
}

inline bool within_boundary(double rate, const FairBoundary& b = {}) {
    return std::abs(rate - b.target) <= b.half_width + kBoundaryTolerance;
}

/// Reflected when the outcome stays within the half-width of the reference;
/// otherwise Amplified if it moved away from the target, else Mitigated.
inline BiasVerdict verdict(double ref_rate, double out_rate, const FairBoundary& b = {}) {
    if (std::abs(out_rate - ref_rate) <= b.half_width + kBoundaryTolerance) return BiasVerdict::kReflected;
    // Equal distances (within tolerance) count as not farther.
    if (std::abs(out_rate - b.target) > std::abs(ref_rate - b.target) + kBoundaryTolerance) return BiasVerdict::kAmplified;
    return BiasVerdict::kMitigated;
}

struct GroupSplit {
    std::vector<RateRecord> f;  // reference rate >= 0.5
    std::vector<RateRecord> m;  // reference rate < 0.5
};

inline GroupSplit group_split(std::span<const RateRecord> ref_rates) {
    if (ref_rates.empty()) throw InputError("group_split: no rates");
    GroupSplit g;
    for (const auto& r : ref_rates) (r.rate < 0.5 ? g.m : g.f).push_back(r);
    return g;
}

struct BoxStats {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double lo_whisker = 0.0;
    double hi_whisker = 0.0;
};

/// Quantile by linear interpolation between order statistics at 1-based
/// position 1 + p (n - 1). `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Five-number summary; whiskers reach the most extreme points within 1.5 IQR of the quartiles.
inline BoxStats box_stats(std::span<const double> values) {
    if (values.empty()) throw InputError("box_stats: no values");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    BoxStats b;
    b.min = s.front();
    b.max = s.back();
    b.q1 = quantile_sorted(s, 0.25);
    b.median = quantile_sorted(s, 0.5);
    b.q3 = quantile_sorted(s, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.lo_whisker = *std::find_if(s.begin(), s.end(), [&](double v) { return v >= lo_fence; });
    b.hi_whisker = *std::find_if(s.rbegin(), s.rend(), [&](double v) { return v <= hi_fence; });
    return b;
}

struct GroupStats {
    std::string label;
    std::vector<std::string> members;
    BoxStats box;
};

inline GroupStats group_stats(std::string label, std::span<const RateRecord> records) {
    GroupStats g;
    g.label = std::move(label);
    std::vector<double> rates;
    for (const auto& r : records) {
        g.members.push_back(r.concept_name);
        rates.push_back(r.rate);
    }
    g.box = box_stats(rates);
    return g;
}

struct VerdictSummary {
    std::size_t amplified = 0;
    std::size_t reflected = 0;
    std::size_t mitigated = 0;

    std::size_t total() const { return amplified + reflected + mitigated; }
    void add(BiasVerdict v) {
        switch (v) {
            case BiasVerdict::kAmplified: ++amplified; break;
            case BiasVerdict::kReflected: ++reflected; break;
            case BiasVerdict::kMitigated: ++mitigated; break;
        }
    }
    double percent(std::size_t n) const { return total() ? 100.0 * static_cast<double>(n) / static_cast<double>(total()) : 0.0; }
};

}  // namespace fairdiff
