#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fairdiff/error.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/tensor.hpp"

namespace fairdiff {

enum class Activation { kTanh, kIdentity };

inline std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "identity"; }

inline Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::kTanh;
    if (name == "identity" || name == "linear") return Activation::kIdentity;
    throw SpecError("unknown activation '" + std::string(name) + "'");
}

/// Fully connected network. Layer l maps sizes[l] -> sizes[l+1] with weights
/// stored out x in. Hidden layers use `hidden`; the output layer is identity.
struct Mlp {
    std::vector<std::size_t> sizes;
    std::vector<Tensor2> weights;
    std::vector<Vector> biases;
    Activation hidden = Activation::kTanh;

    std::size_t input_size() const { return sizes.front(); }
    std::size_t output_size() const { return sizes.back(); }
    std::size_t layer_count() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }

    static void validate_sizes(const std::vector<std::size_t>& sizes) {
        if (sizes.size() < 3) throw SpecError("mlp needs at least one hidden layer");
        for (std::size_t s : sizes)
            if (s == 0) throw SpecError("mlp layer size must be positive");
    }

    static Mlp zeros(std::vector<std::size_t> sizes, Activation hidden = Activation::kTanh) {
        validate_sizes(sizes);
        Mlp m;
        m.hidden = hidden;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            m.weights.emplace_back(sizes[l + 1], sizes[l]);
            m.biases.emplace_back(sizes[l + 1], 0.0);
        }
        m.sizes = std::move(sizes);
        return m;
    }

    /// Xavier-uniform weights, bound sqrt(6 / (fan_in + fan_out)); zero biases.
    static Mlp xavier(std::vector<std::size_t> sizes, Rng& rng, Activation hidden = Activation::kTanh) {
        Mlp m = zeros(std::move(sizes), hidden);
        for (auto& w : m.weights) {
            const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
        }
        return m;
    }

    friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Parameter-shaped gradient plus gradient w.r.t. the input.
struct MlpGradient {
    std::vector<Tensor2> weights;
    std::vector<Vector> biases;
    Vector input;

    static MlpGradient zeros_like(const Mlp& m) {
        MlpGradient g;
        for (std::size_t l = 0; l < m.layer_count(); ++l) {
            g.weights.emplace_back(m.weights[l].rows(), m.weights[l].cols());
            g.biases.emplace_back(m.biases[l].size(), 0.0);
        }
        g.input.assign(m.input_size(), 0.0);
        return g;
    }

    void scale(double f) {
        for (auto& w : weights)
            for (double& v : w.values()) v *= f;
        for (auto& b : biases)
            for (double& v : b) v *= f;
        for (double& v : input) v *= f;
    }
};

/// Post-activation values of every layer, front() is the input.
struct ForwardTrace {
    std::vector<Vector> activations;
    const Vector& output() const { return activations.back(); }
};

namespace detail {

inline void check_input(const Mlp& m, std::span<const double> input) {
    if (input.size() != m.input_size()) {
        throw ShapeError("mlp input length " + std::to_string(input.size()) + ", expected " + std::to_string(m.input_size()));
    }
}

}  // namespace detail

inline ForwardTrace mlp_forward_trace(const Mlp& m, std::span<const double> input) {
    detail::check_input(m, input);
    ForwardTrace trace;
    trace.activations.reserve(m.layer_count() + 1);
    trace.activations.emplace_back(input.begin(), input.end());
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        const Tensor2& w = m.weights[l];
        const Vector& in = trace.activations.back();
        Vector out(m.biases[l]);
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const auto row = w.row(r);
            double s = 0.0;
            for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * in[c];
            out[r] += s;
        }
        const bool last = l + 1 == m.layer_count();
        if (!last && m.hidden == Activation::kTanh)
            for (double& v : out) v = std::tanh(v);
        trace.activations.push_back(std::move(out));
    }
    return trace;
}

inline Vector mlp_forward(const Mlp& m, std::span<const double> input) {
    return std::move(mlp_forward_trace(m, input).activations.back());
}

/// Adds the parameter gradients for one example into `acc` and writes the
/// input gradient into acc.input (overwritten, not accumulated).
inline void mlp_backward_accumulate(const Mlp& m, const ForwardTrace& trace, std::span<const double> upstream,
                                    MlpGradient& acc) {
    if (upstream.size() != m.output_size()) {
        throw ShapeError("mlp upstream gradient length " + std::to_string(upstream.size()) + ", expected " +
                         std::to_string(m.output_size()));
    }
    Vector delta(upstream.begin(), upstream.end());
    for (std::size_t l = m.layer_count(); l-- > 0;) {
        const Tensor2& w = m.weights[l];
        const Vector& in = trace.activations[l];
        Tensor2& gw = acc.weights[l];
        Vector& gb = acc.biases[l];
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const double d = delta[r];
            gb[r] += d;
            if (d == 0.0) continue;
            auto grow = gw.row(r);
            for (std::size_t c = 0; c < w.cols(); ++c) grow[c] += d * in[c];
        }
        Vector prev(w.cols(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            const auto row = w.row(r);
            for (std::size_t c = 0; c < w.cols(); ++c) prev[c] += row[c] * d;
        }
        if (l > 0 && m.hidden == Activation::kTanh) {
            for (std::size_t c = 0; c < prev.size(); ++c) prev[c] *= 1.0 - in[c] * in[c];
        }
        delta = std::move(prev);
    }
    acc.input = std::move(delta);
}

inline MlpGradient mlp_backward(const Mlp& m, std::span<const double> input, std::span<const double> upstream) {
    const ForwardTrace trace = mlp_forward_trace(m, input);
    MlpGradient g = MlpGradient::zeros_like(m);
    mlp_backward_accumulate(m, trace, upstream, g);
    return g;
}

/// Mutable views over every parameter tensor, in checkpoint order (W0, b0, W1, b1, ...).
inline std::vector<std::span<double>> parameter_views(Mlp& m) {
    std::vector<std::span<double>> views;
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        views.push_back(m.weights[l].values());
        views.emplace_back(m.biases[l]);
    }
    return views;
}

inline std::vector<std::span<const double>> gradient_views(const MlpGradient& g) {
    std::vector<std::span<const double>> views;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        views.push_back(g.weights[l].values());
        views.emplace_back(g.biases[l]);
    }
    return views;
}

// ---------------------------------------------------------------------------
// Checkpoint text format:
//   MLPCKPT v1
//   <layer sizes>
//   one line per parameter tensor (W0, b0, W1, b1, ...), 17 significant digits
// Callers may append their own blocks after the parameter lines.

/// 17 significant digits; parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

/// Shortest text that parses back to the same double (config files).
inline std::string format_short(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view text) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw InputError("not a number: '" + std::string(text) + "'");
    return v;
}

inline void write_values_line(std::ostream& out, std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out << ' ';
        out << format_double(values[i]);
    }
    out << '\n';
}

inline void write_mlp_checkpoint(std::ostream& out, const Mlp& m) {
    out << "MLPCKPT v1\n";
    for (std::size_t i = 0; i < m.sizes.size(); ++i) out << (i ? " " : "") << m.sizes[i];
    out << '\n';
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        write_values_line(out, m.weights[l].values());
        write_values_line(out, m.biases[l]);
    }
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    for (std::string tok; in >> tok;) tokens.push_back(tok);
    return tokens;
}

inline Mlp read_mlp_checkpoint(std::istream& in, Activation hidden = Activation::kTanh) {
    std::string line;
    if (!std::getline(in, line) || line != "MLPCKPT v1") throw InputError("checkpoint: missing 'MLPCKPT v1' header");
    if (!std::getline(in, line)) throw InputError("checkpoint: missing layer sizes");
    std::vector<std::size_t> sizes;
    for (const auto& tok : split_ws(line)) {
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) throw InputError("checkpoint: bad layer size '" + tok + "'");
        sizes.push_back(v);
    }
    Mlp m = Mlp::zeros(sizes, hidden);
    for (auto view : parameter_views(m)) {
        if (!std::getline(in, line)) throw InputError("checkpoint: truncated parameter block");
        const auto tokens = split_ws(line);
        if (tokens.size() != view.size()) {
            throw InputError("checkpoint: parameter line has " + std::to_string(tokens.size()) + " values, expected " +
                             std::to_string(view.size()));
        }
        for (std::size_t i = 0; i < tokens.size(); ++i) view[i] = parse_double(tokens[i]);
    }
    return m;
}

}  // namespace fairdiff
