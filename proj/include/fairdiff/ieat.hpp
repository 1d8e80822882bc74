#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fairdiff/error.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/tensor.hpp"

namespace fairdiff {

/// A labelled set of embedding vectors with a common, non-zero length.
struct ConceptSet {
    std::string label;
    std::vector<Vector> vectors;

    void validate() const {
        if (vectors.empty()) throw InputError("concept set '" + label + "' is empty");
        for (const auto& v : vectors) {
            if (v.size() != vectors.front().size()) throw InputError("concept set '" + label + "' mixes vector lengths");
            if (norm(v) == 0.0) throw NumericError("concept set '" + label + "' contains a zero vector");
        }
    }
};

struct IeatConfig {
    std::uint64_t exact_cap = 200'000;
    std::size_t monte_carlo_draws = 10'000;
    std::uint64_t seed = 0;
};

enum class PermutationMethod { kExact, kMonteCarlo };

inline const char* to_string(PermutationMethod m) { return m == PermutationMethod::kExact ? "exact" : "monte-carlo"; }

struct IeatResult {
    double statistic = 0.0;
    double p_value = 0.0;
    double effect_size = 0.0;
    PermutationMethod method = PermutationMethod::kExact;
    std::uint64_t partitions = 0;
    std::optional<double> standard_error;
};

/// s(w, A, B) = mean_a cos(w, a) - mean_b cos(w, b)
inline double assoc(std::span<const double> w, const ConceptSet& a, const ConceptSet& b) {
    a.validate();
    b.validate();
    if (w.size() != a.vectors.front().size() || w.size() != b.vectors.front().size())
        throw InputError("assoc: dimension mismatch");
    double sa = 0.0;
    for (const auto& v : a.vectors) sa += cosine(w, v);
    double sb = 0.0;
    for (const auto& v : b.vectors) sb += cosine(w, v);
    return sa / static_cast<double>(a.vectors.size()) - sb / static_cast<double>(b.vectors.size());
}

namespace detail {

/// assoc values of X followed by Y.
inline std::vector<double> pooled_assoc(const ConceptSet& x, const ConceptSet& y, const ConceptSet& a, const ConceptSet& b) {
    x.validate();
    y.validate();
    std::vector<double> s;
    s.reserve(x.vectors.size() + y.vectors.size());
    for (const auto& w : x.vectors) s.push_back(assoc(w, a, b));
    for (const auto& w : y.vectors) s.push_back(assoc(w, a, b));
    return s;
}

/// Sum over members minus sum over non-members, both in ascending index order.
inline double split_statistic(std::span<const double> s, const std::vector<bool>& in_x) {
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) (in_x[i] ? sx : sy) += s[i];
    return sx - sy;
}

/// C(n, k), saturating at `cap + 1`.
inline std::uint64_t binomial_capped(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 c = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        c = c * (n - k + i) / i;
        if (c > cap) return cap + 1;
    }
    return static_cast<std::uint64_t>(c);
}

}  // namespace detail

/// S = sum_{x in X} s(x,A,B) - sum_{y in Y} s(y,A,B)
inline double test_statistic(const ConceptSet& x, const ConceptSet& y, const ConceptSet& a, const ConceptSet& b) {
    const auto s = detail::pooled_assoc(x, y, a, b);
    std::vector<bool> in_x(s.size(), false);
    std::fill(in_x.begin(), in_x.begin() + static_cast<std::ptrdiff_t>(x.vectors.size()), true);
    return detail::split_statistic(s, in_x);
}

struct PValue {
    double p = 0.0;
    PermutationMethod method = PermutationMethod::kExact;
    std::uint64_t partitions = 0;
    std::optional<double> standard_error;
};

/// One-sided permutation p-value Pr[S_i > S] over re-partitions of X u Y that
/// keep |X| and |Y|. Exhaustive when C(|X|+|Y|, |X|) <= cap, else Monte-Carlo.
inline PValue p_value(const ConceptSet& x, const ConceptSet& y, const ConceptSet& a, const ConceptSet& b,
                      const IeatConfig& cfg = {}) {
    if (cfg.exact_cap < 1 || cfg.monte_carlo_draws < 1) throw SpecError("ieat: cap and draws must be >= 1");
    const auto s = detail::pooled_assoc(x, y, a, b);
    const std::size_t n = s.size();
    const std::size_t nx = x.vectors.size();
    std::vector<bool> in_x(n, false);
    std::fill(in_x.begin(), in_x.begin() + static_cast<std::ptrdiff_t>(nx), true);
    const double observed = detail::split_statistic(s, in_x);

    PValue out;
    const std::uint64_t total = detail::binomial_capped(n, nx, cfg.exact_cap);
    if (total <= cfg.exact_cap) {
        // Lexicographic walk over the nx-subsets of {0..n-1}.
        std::vector<std::size_t> pick(nx);
        std::iota(pick.begin(), pick.end(), 0);
        std::uint64_t greater = 0, seen = 0;
        for (;;) {
            std::fill(in_x.begin(), in_x.end(), false);
            for (std::size_t i : pick) in_x[i] = true;
            ++seen;
            if (detail::split_statistic(s, in_x) > observed) ++greater;
            std::size_t i = nx;
            while (i > 0 && pick[i - 1] == n - nx + (i - 1)) --i;
            if (i == 0) break;
            ++pick[i - 1];
            for (std::size_t j = i; j < nx; ++j) pick[j] = pick[j - 1] + 1;
        }
        out.p = static_cast<double>(greater) / static_cast<double>(seen);
        out.method = PermutationMethod::kExact;
        out.partitions = seen;
        return out;
    }

    Rng rng(cfg.seed, 3);
    std::vector<std::size_t> perm(n);
    std::uint64_t greater = 0;
    for (std::size_t draw = 0; draw < cfg.monte_carlo_draws; ++draw) {
        std::iota(perm.begin(), perm.end(), 0);
        // Partial Fisher-Yates: the first nx slots form a uniform nx-subset.
        for (std::size_t i = 0; i < nx; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
        std::fill(in_x.begin(), in_x.end(), false);
        for (std::size_t i = 0; i < nx; ++i) in_x[perm[i]] = true;
        if (detail::split_statistic(s, in_x) > observed) ++greater;
    }
    const double m = static_cast<double>(cfg.monte_carlo_draws);
    out.p = static_cast<double>(greater) / m;
    out.method = PermutationMethod::kMonteCarlo;
    out.partitions = cfg.monte_carlo_draws;
    out.standard_error = std::sqrt(out.p * (1.0 - out.p) / m);
    return out;
}

/// d = (mean_X s - mean_Y s) / sd_{X u Y}(s), sample standard deviation (n - 1).
inline double effect_size(const ConceptSet& x, const ConceptSet& y, const ConceptSet& a, const ConceptSet& b) {
    const auto s = detail::pooled_assoc(x, y, a, b);
    if (s.size() < 2) throw DegenerateInputError("effect_size: need at least two target vectors");
    const std::size_t nx = x.vectors.size();
    // Per-set partial sums combined with one commutative addition, so that
    // swapping X and Y negates d exactly.
    double sum_x = 0.0, sum_y = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) (i < nx ? sum_x : sum_y) += s[i];
    const double mx = sum_x / static_cast<double>(nx);
    const double my = sum_y / static_cast<double>(s.size() - nx);
    const double mean = (sum_x + sum_y) / static_cast<double>(s.size());
    double ss_x = 0.0, ss_y = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) (i < nx ? ss_x : ss_y) += (s[i] - mean) * (s[i] - mean);
    const double ss = ss_x + ss_y;
    const double sd = std::sqrt(ss / static_cast<double>(s.size() - 1));
    if (!(sd > 0.0)) throw DegenerateInputError("effect_size: association scores have zero dispersion");
    return (mx - my) / sd;
}

inline IeatResult run_ieat(const ConceptSet& x, const ConceptSet& y, const ConceptSet& a, const ConceptSet& b,
                           const IeatConfig& cfg = {}) {
    IeatResult r;
    r.statistic = test_statistic(x, y, a, b);
    const PValue p = p_value(x, y, a, b, cfg);
    r.p_value = p.p;
    r.method = p.method;
    r.partitions = p.partitions;
    r.standard_error = p.standard_error;
    r.effect_size = effect_size(x, y, a, b);
    return r;
}

}  // namespace fairdiff
