#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <istream>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "fairdiff/adam.hpp"
#include "fairdiff/error.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/mlp.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/world.hpp"

namespace fairdiff {

/// Linear-beta DDPM schedule. Timesteps are 1-based: t = 1..T.
/// Sampling walks t = T..1; one reverse step maps z_t to z_{t-1}.
struct NoiseSchedule {
    std::size_t steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    double beta_at(std::size_t t) const { return beta[index(t)]; }
    double alpha_at(std::size_t t) const { return alpha[index(t)]; }
    double alpha_bar_at(std::size_t t) const { return alpha_bar[index(t)]; }
    double sigma_at(std::size_t t) const { return sigma[index(t)]; }

    std::size_t index(std::size_t t) const {
        if (t < 1 || t > steps) throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
        return t - 1;
    }
};

inline NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw SpecError("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw SpecError("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    double running = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        running *= 1.0 - b;
        s.alpha_bar.push_back(running);
        s.sigma.push_back(std::sqrt(b));
    }
    return s;
}

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline Vector forward_diffuse(std::span<const double> z0, std::size_t t, std::span<const double> eps,
                              const NoiseSchedule& sched) {
    if (z0.size() != eps.size()) throw ShapeError("forward_diffuse: z0 and eps lengths differ");
    const double ab = sched.alpha_bar_at(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Vector zt(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) zt[i] = a * z0[i] + b * eps[i];
    return zt;
}

inline constexpr const char* kNullToken = "<null>";

/// Frozen text-encoder stand-in: one fixed embedding per token plus a null
/// embedding (all zeros) used for unconditional prediction.
struct ConditioningVocab {
    std::vector<std::string> names;
    std::vector<Vector> embeddings;
    Vector null_embedding;

    std::size_t width() const { return null_embedding.size(); }

    bool contains(const std::string& name) const {
        return std::find(names.begin(), names.end(), name) != names.end();
    }

    const Vector& lookup(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return embeddings[i];
        throw LookupError("token '" + name + "' not in conditioning vocabulary");
    }

    /// Unit-norm Gaussian directions drawn in name order.
    static ConditioningVocab random(const std::vector<std::string>& names, std::size_t width, Rng& rng) {
        if (width == 0) throw SpecError("vocab: embedding width must be positive");
        ConditioningVocab v;
        v.null_embedding.assign(width, 0.0);
        for (const auto& name : names) {
            if (name.empty() || name == kNullToken || name.find_first_of(" \t\n") != std::string::npos)
                throw SpecError("vocab: invalid token name '" + name + "'");
            if (v.contains(name)) throw SpecError("vocab: duplicate token '" + name + "'");
            Vector e(width);
            double n = 0.0;
            do {
                for (double& x : e) x = rng.gaussian();
                n = norm(e);
            } while (n == 0.0);
            for (double& x : e) x /= n;
            // Gram-Schmidt against earlier tokens while room remains, so that
            // tokens are mutually orthogonal whenever names.size() <= width.
            if (v.embeddings.size() < width) {
                for (;;) {
                    for (const auto& prev : v.embeddings) {
                        const double p = dot(e, prev);
                        for (std::size_t i = 0; i < width; ++i) e[i] -= p * prev[i];
                    }
                    n = norm(e);
                    if (n > 1e-6) break;
                    for (double& x : e) x = rng.gaussian();
                }
                for (double& x : e) x /= n;
            }
            v.names.push_back(name);
            v.embeddings.push_back(std::move(e));
        }
        return v;
    }
};

/// Noise predictor eps_theta(z_t, t, c). The network sees
/// [z_t, tau(t), c] in normalized data coordinates: x_norm = (x - shift) / scale.
struct EpsilonModel {
    Mlp net;
    NoiseSchedule schedule;
    ConditioningVocab vocab;
    std::size_t time_width = 8;
    Vector data_shift;
    double data_scale = 1.0;

    std::size_t dim() const { return data_shift.size(); }

    /// Sinusoidal pairs (sin, cos) of pi * 2^j * t / T.
    Vector time_encoding(std::size_t t) const {
        Vector tau(time_width);
        const double s = static_cast<double>(t) / static_cast<double>(schedule.steps);
        for (std::size_t j = 0; j < time_width / 2; ++j) {
            const double phase = std::numbers::pi * std::ldexp(1.0, static_cast<int>(j)) * s;
            tau[2 * j] = std::sin(phase);
            tau[2 * j + 1] = std::cos(phase);
        }
        return tau;
    }

    Vector network_input(std::span<const double> zt, std::size_t t, std::span<const double> cond) const {
        if (zt.size() != dim()) throw ShapeError("eps: z_t length " + std::to_string(zt.size()) + ", expected " + std::to_string(dim()));
        if (cond.size() != vocab.width()) throw ShapeError("eps: conditioning width mismatch");
        schedule.index(t);
        Vector in;
        in.reserve(net.input_size());
        in.insert(in.end(), zt.begin(), zt.end());
        const Vector tau = time_encoding(t);
        in.insert(in.end(), tau.begin(), tau.end());
        in.insert(in.end(), cond.begin(), cond.end());
        return in;
    }

    Vector eps(std::span<const double> zt, std::size_t t, std::span<const double> cond) const {
        return mlp_forward(net, network_input(zt, t, cond));
    }
    Vector eps(std::span<const double> zt, std::size_t t, const std::string& token) const {
        return eps(zt, t, vocab.lookup(token));
    }
    Vector eps_uncond(std::span<const double> zt, std::size_t t) const { return eps(zt, t, vocab.null_embedding); }

    Vector normalize(std::span<const double> x) const {
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - data_shift[i]) / data_scale;
        return out;
    }
    Vector denormalize(std::span<const double> x) const {
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * data_scale + data_shift[i];
        return out;
    }
};

struct ModelConfig {
    std::size_t steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.2;
    std::vector<std::size_t> hidden = {96, 96};
    std::size_t time_width = 8;
    std::size_t embed_width = 16;
};

/// Fresh model for a dataset. Vocabulary: the world's concepts followed by the
/// two attribute names. Normalization: per-dimension mean shift and one global
/// scale (RMS of the centred data).
inline EpsilonModel make_epsilon_model(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed) {
    if (ds.samples.empty()) throw InputError("diffusion: empty dataset");
    if (cfg.time_width == 0 || cfg.time_width % 2) throw SpecError("diffusion: time encoding width must be even and positive");
    EpsilonModel m;
    m.schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
    m.time_width = cfg.time_width;
    std::vector<std::string> tokens;
    for (const auto& c : ds.spec.concepts) tokens.push_back(c.name);
    tokens.push_back(ds.spec.attribute0);
    tokens.push_back(ds.spec.attribute1);
    Rng vocab_rng(seed, 7);
    m.vocab = ConditioningVocab::random(tokens, cfg.embed_width, vocab_rng);

    const std::size_t d = ds.dim();
    m.data_shift.assign(d, 0.0);
    for (const auto& s : ds.samples)
        for (std::size_t i = 0; i < d; ++i) m.data_shift[i] += s.features[i];
    for (double& v : m.data_shift) v /= static_cast<double>(ds.samples.size());
    double ss = 0.0;
    for (const auto& s : ds.samples)
        for (std::size_t i = 0; i < d; ++i) ss += (s.features[i] - m.data_shift[i]) * (s.features[i] - m.data_shift[i]);
    m.data_scale = std::sqrt(ss / static_cast<double>(ds.samples.size() * d));
    if (!(m.data_scale > 0.0)) m.data_scale = 1.0;

    std::vector<std::size_t> sizes{d + cfg.time_width + cfg.embed_width};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(d);
    Rng init_rng(seed, 8);
    m.net = Mlp::xavier(sizes, init_rng);
    return m;
}

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 128;
    double learning_rate = 3e-3;
    /// Cosine decay from learning_rate to learning_rate * final_lr_fraction.
    double final_lr_fraction = 0.1;
    double p_uncond = 0.1;
    /// Probability that a (non-dropped) example is conditioned on its attribute
    /// token instead of its concept token.
    double p_attribute = 0.2;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> loss_trace;  // mean per-example MSE, one entry per epoch
    std::size_t null_token_uses = 0;
    std::size_t attribute_token_uses = 0;
};

/// Classifier-free epsilon-matching training with Adam.
inline TrainResult train_epsilon(EpsilonModel& model, const Dataset& ds, const TrainConfig& cfg) {
    if (ds.samples.empty()) throw InputError("diffusion: empty dataset");
    if (!(cfg.p_uncond >= 0.0 && cfg.p_uncond < 1.0)) throw SpecError("train: p_uncond must lie in [0, 1)");
    if (!(cfg.p_attribute >= 0.0 && cfg.p_attribute <= 1.0)) throw SpecError("train: p_attribute must lie in [0, 1]");
    if (cfg.batch_size == 0) throw SpecError("train: batch size must be positive");
    if (!(cfg.learning_rate > 0.0) || !(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0))
        throw SpecError("train: need learning_rate > 0 and final_lr_fraction in (0, 1]");
    for (const auto& s : ds.samples) {
        if (s.features.size() != model.dim()) throw ShapeError("train: sample dimension differs from model");
        model.vocab.lookup(s.concept_name);
    }
    const Vector* attr_tokens[2] = {nullptr, nullptr};
    if (cfg.p_attribute > 0.0) {
        attr_tokens[0] = &model.vocab.lookup(ds.spec.attribute0);
        attr_tokens[1] = &model.vocab.lookup(ds.spec.attribute1);
    }

    TrainResult result;
    if (cfg.epochs == 0) return result;

    std::vector<Vector> normalized;
    normalized.reserve(ds.samples.size());
    for (const auto& s : ds.samples) normalized.push_back(model.normalize(s.features));

    Rng rng(cfg.seed, 2);
    AdamState adam(cfg.learning_rate);
    const std::size_t n = ds.samples.size();
    const std::size_t d = model.dim();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    MlpGradient grad = MlpGradient::zeros_like(model.net);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
        adam.learning_rate = cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            grad = MlpGradient::zeros_like(model.net);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = order[b];
                const Sample& s = ds.samples[idx];
                const std::size_t t = 1 + static_cast<std::size_t>(rng.below(model.schedule.steps));
                Vector eps(d);
                for (double& e : eps) e = rng.gaussian();
                const Vector zt = forward_diffuse(normalized[idx], t, eps, model.schedule);
                const Vector* cond = nullptr;
                if (rng.uniform() < cfg.p_uncond) {
                    cond = &model.vocab.null_embedding;
                    ++result.null_token_uses;
                } else if (cfg.p_attribute > 0.0 && rng.uniform() < cfg.p_attribute) {
                    cond = attr_tokens[s.attribute];
                    ++result.attribute_token_uses;
                } else {
                    cond = &model.vocab.lookup(s.concept_name);
                }
                const ForwardTrace trace = mlp_forward_trace(model.net, model.network_input(zt, t, *cond));
                Vector upstream(d);
                double loss = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double r = trace.output()[i] - eps[i];
                    loss += r * r;
                    upstream[i] = 2.0 * r / static_cast<double>(d) * inv_batch;
                }
                epoch_loss += loss / static_cast<double>(d);
                mlp_backward_accumulate(model.net, trace, upstream, grad);
            }
            auto params = parameter_views(model.net);
            auto grads = gradient_views(grad);
            adam.step(params, grads);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
    }
    return result;
}

/// eps_bar = eps(z) + s_g * (eps(z, c_p) - eps(z)) + gamma
inline Vector combine_guidance(std::span<const double> eps_uncond, std::span<const double> eps_cond, double guidance_scale,
                               std::span<const double> gamma) {
    if (eps_uncond.size() != eps_cond.size()) throw ShapeError("guidance: eps lengths differ");
    if (!gamma.empty() && gamma.size() != eps_uncond.size()) throw ShapeError("guidance: gamma length differs");
    Vector out(eps_uncond.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = eps_uncond[i] + guidance_scale * (eps_cond[i] - eps_uncond[i]);
        if (!gamma.empty()) out[i] += gamma[i];
    }
    return out;
}

/// Guided noise estimate for a prompt token. An empty gamma means zero.
inline Vector guided_eps(const EpsilonModel& model, std::span<const double> zt, std::size_t t, const std::string& prompt,
                         double guidance_scale, std::span<const double> gamma = {}) {
    const Vector& cond = model.vocab.lookup(prompt);
    return combine_guidance(model.eps_uncond(zt, t), model.eps(zt, t, cond), guidance_scale, gamma);
}

/// Returns the extra guidance term for one reverse step, in normalized
/// coordinates. An empty vector means zero.
using GammaProvider = std::function<Vector(std::span<const double> zt, std::size_t t, Rng& rng)>;

namespace detail {

inline Vector run_chain(const EpsilonModel& model, const Vector& cond, double guidance_scale, Rng rng,
                        const GammaProvider& provider) {
    const NoiseSchedule& sch = model.schedule;
    Vector z(model.dim());
    for (double& v : z) v = rng.gaussian();
    for (std::size_t t = sch.steps; t >= 1; --t) {
        Vector gamma;
        if (provider) gamma = provider(z, t, rng);
        const Vector e = combine_guidance(model.eps_uncond(z, t), model.eps(z, t, cond), guidance_scale, gamma);
        const double coef = sch.beta_at(t) / std::sqrt(1.0 - sch.alpha_bar_at(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(sch.alpha_at(t));
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = inv_sqrt_alpha * (z[k] - coef * e[k]);
        if (t > 1) {
            const double s = sch.sigma_at(t);
            for (double& v : z) v += s * rng.gaussian();
        }
    }
    return model.denormalize(z);
}

}  // namespace detail

/// Ancestral DDPM sampling. Chain i draws from Rng(seed, 0).split(i), so the
/// result does not depend on `threads` (0 = hardware concurrency). Outputs
/// are in data coordinates. `provider_for(i)` supplies chain i's gamma term
/// and must be safe to call concurrently.
inline std::vector<Vector> sample(const EpsilonModel& model, const std::string& prompt, double guidance_scale, std::size_t n,
                                  std::uint64_t seed, const std::function<GammaProvider(std::size_t)>& provider_for = {},
                                  std::size_t threads = 0) {
    if (n < 1) throw InputError("sample: n must be >= 1");
    const Vector& cond = model.vocab.lookup(prompt);
    const Rng base(seed, 0);
    std::vector<Vector> out(n);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            GammaProvider provider = provider_for ? provider_for(i) : GammaProvider{};
            out[i] = detail::run_chain(model, cond, guidance_scale, base.split(i), provider);
        }
    };
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads == 1) {
        work(0, n);
        return out;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                try {
                    work(n * w / threads, n * (w + 1) / threads);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

/// Convenience overload: one provider shared by every chain.
inline std::vector<Vector> sample(const EpsilonModel& model, const std::string& prompt, double guidance_scale, std::size_t n,
                                  std::uint64_t seed, GammaProvider provider) {
    if (!provider) return sample(model, prompt, guidance_scale, n, seed, std::function<GammaProvider(std::size_t)>{});
    return sample(model, prompt, guidance_scale, n, seed, [&](std::size_t) { return provider; });
}

// ---------------------------------------------------------------------------
// Diffusion checkpoint: the MLP block followed by
//   VOCAB <n>            then n lines "name v0 ... v{E-1}"
//   NULLTOK v0 ... v{E-1}
//   SCHED T beta_start beta_end
//   TIMEW <width>
//   NORM <scale> shift0 ... shift{D-1}

inline void write_epsilon_checkpoint(std::ostream& out, const EpsilonModel& m) {
    write_mlp_checkpoint(out, m.net);
    out << "VOCAB " << m.vocab.names.size() << '\n';
    for (std::size_t i = 0; i < m.vocab.names.size(); ++i) {
        out << m.vocab.names[i] << ' ';
        write_values_line(out, m.vocab.embeddings[i]);
    }
    out << "NULLTOK ";
    write_values_line(out, m.vocab.null_embedding);
    out << "SCHED " << m.schedule.steps << ' ' << format_double(m.schedule.beta_start) << ' '
        << format_double(m.schedule.beta_end) << '\n';
    out << "TIMEW " << m.time_width << '\n';
    out << "NORM " << format_double(m.data_scale);
    for (double v : m.data_shift) out << ' ' << format_double(v);
    out << '\n';
}

inline EpsilonModel read_epsilon_checkpoint(std::istream& in) {
    EpsilonModel m;
    m.net = read_mlp_checkpoint(in);
    std::string line;
    auto next = [&](const char* tag) {
        if (!std::getline(in, line)) throw InputError(std::string("checkpoint: missing ") + tag + " block");
        auto tokens = split_ws(line);
        if (tokens.empty() || tokens[0] != tag) throw InputError(std::string("checkpoint: expected ") + tag);
        return tokens;
    };
    auto numbers = [](const std::vector<std::string>& tokens, std::size_t from) {
        Vector v;
        for (std::size_t i = from; i < tokens.size(); ++i) v.push_back(parse_double(tokens[i]));
        return v;
    };
    auto vocab_head = next("VOCAB");
    if (vocab_head.size() != 2) throw InputError("checkpoint: malformed VOCAB line");
    const std::size_t count = static_cast<std::size_t>(parse_double(vocab_head[1]));
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw InputError("checkpoint: truncated vocabulary");
        auto tokens = split_ws(line);
        if (tokens.size() < 2) throw InputError("checkpoint: malformed vocabulary line");
        m.vocab.names.push_back(tokens[0]);
        m.vocab.embeddings.push_back(numbers(tokens, 1));
    }
    m.vocab.null_embedding = numbers(next("NULLTOK"), 1);
    for (const auto& e : m.vocab.embeddings)
        if (e.size() != m.vocab.width()) throw InputError("checkpoint: inconsistent embedding widths");
    auto sched = next("SCHED");
    if (sched.size() != 4) throw InputError("checkpoint: malformed SCHED line");
    m.schedule = make_schedule(static_cast<std::size_t>(parse_double(sched[1])), parse_double(sched[2]), parse_double(sched[3]));
    auto timew = next("TIMEW");
    if (timew.size() != 2) throw InputError("checkpoint: malformed TIMEW line");
    m.time_width = static_cast<std::size_t>(parse_double(timew[1]));
    auto normline = next("NORM");
    if (normline.size() < 3) throw InputError("checkpoint: malformed NORM line");
    m.data_scale = parse_double(normline[1]);
    m.data_shift = numbers(normline, 2);
    if (m.net.input_size() != m.dim() + m.time_width + m.vocab.width() || m.net.output_size() != m.dim())
        throw InputError("checkpoint: network shape inconsistent with vocabulary/normalization blocks");
    return m;
}

}  // namespace fairdiff
