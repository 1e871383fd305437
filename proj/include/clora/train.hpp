#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clora/config.hpp"
#include "clora/diffusion.hpp"
#include "clora/model.hpp"

namespace clora {

inline const std::string kContentToken = "content_token";
inline const std::string kStyleToken   = "style_token";

struct TrainConfig {
    int total_steps     = 3000;
    int transition_step = 1000;  // N; the loss flips here for transition schemes
    double lr_phase1    = 2e-3;
    double lr_phase2    = 1e-3;
    double adam_beta1   = 0.9;
    double adam_beta2   = 0.999;
    int batch_size      = 1;
    uint64_t seed       = 7;
    LossScheme scheme   = LossScheme::eps_then_x0;
    int lora_rank       = 8;
    double lora_alpha   = 8.0;

    static TrainConfig from(const ExperimentConfig& c) {
        TrainConfig t;
        t.total_steps     = c.train.total_steps;
        t.transition_step = c.train.transition_step;
        t.lr_phase1       = c.train.lr_phase1;
        t.lr_phase2       = c.train.lr_phase2;
        t.adam_beta1      = c.train.adam_beta1;
        t.adam_beta2      = c.train.adam_beta2;
        t.batch_size      = c.train.batch_size;
        t.seed            = c.train.seed;
        t.scheme          = c.train.scheme;
        t.lora_rank       = c.train.lora_rank;
        t.lora_alpha      = c.train.lora_alpha;
        return t;
    }

    void validate() const {
        if (transition_step < 0 || transition_step > total_steps)
            throw std::invalid_argument("train config: transition_step outside [0, total_steps]");
        if (batch_size != 1)
            throw std::invalid_argument("train config: batch_size must be 1 (single-image protocol)");
        if (total_steps < 0) throw std::invalid_argument("train config: negative total_steps");
    }
};

enum class ActiveLoss { epsilon, z0hat };

inline const char* active_loss_name(ActiveLoss a) { return a == ActiveLoss::epsilon ? "epsilon" : "z0hat"; }

// Which loss a given step trains with. N only matters for transition schemes.
inline ActiveLoss active_loss_at(const TrainConfig& cfg, int step) {
    switch (cfg.scheme) {
        case LossScheme::eps_only: return ActiveLoss::epsilon;
        case LossScheme::x0_only: return ActiveLoss::z0hat;
        case LossScheme::eps_then_x0:
            return step < cfg.transition_step ? ActiveLoss::epsilon : ActiveLoss::z0hat;
        case LossScheme::x0_then_eps:
            return step < cfg.transition_step ? ActiveLoss::z0hat : ActiveLoss::epsilon;
    }
    return ActiveLoss::epsilon;
}

// lr_phase1 applies while the epsilon loss is active, lr_phase2 with z0hat;
// for the pure schemes that means one rate throughout.
inline double learning_rate_at(const TrainConfig& cfg, int step) {
    return active_loss_at(cfg, step) == ActiveLoss::epsilon ? cfg.lr_phase1 : cfg.lr_phase2;
}

struct StepRecord {
    int step;
    int t;
    double loss;
    ActiveLoss active;
};

struct TrainReport {
    std::vector<StepRecord> steps;
    uint64_t content_fingerprint = 0;
    uint64_t style_fingerprint   = 0;
    double wall_seconds          = 0.0;  // informational only, never serialized
};

struct TrainResult {
    LoraSet set;
    TrainReport report;
};

// Plain Adam with bias correction. State is ordinary f64 per parameter, so
// runs are bitwise reproducible from the seed.
struct AdamOptimizer {
    double beta1, beta2;
    double eps = 1e-8;
    std::vector<Tensor> params;
    std::vector<std::vector<double>> m1, m2;
    long steps_taken = 0;

    AdamOptimizer(std::vector<Tensor> ps, double b1 = 0.9, double b2 = 0.999)
        : beta1(b1), beta2(b2), params(std::move(ps)) {
        m1.reserve(params.size());
        m2.reserve(params.size());
        for (auto& p : params) {
            m1.emplace_back(static_cast<size_t>(p.size()), 0.0);
            m2.emplace_back(static_cast<size_t>(p.size()), 0.0);
        }
    }

    void step(double lr) {
        ++steps_taken;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_taken));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_taken));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.has_grad()) {
                p.zero_grad();
                continue;
            }
            const auto& g = p.grad();
            for (size_t j = 0; j < g.size(); ++j) {
                m1[i][j] = beta1 * m1[i][j] + (1.0 - beta1) * g[j];
                m2[i][j] = beta2 * m2[i][j] + (1.0 - beta2) * g[j] * g[j];
                p.values()[j] -= lr * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + eps);
            }
            p.zero_grad();
        }
    }
};

namespace detail {

inline void check_image_01(const Tensor& img, const char* who) {
    if (img.rank() != 3 || img.shape()[2] != 3)
        throw std::invalid_argument(std::string(who) + ": image must be [H,W,3], got " + shape_str(img.shape()));
    for (double v : img.values())
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument(std::string(who) + ": image values must lie in [0,1]");
}

inline Tensor to_signal(const Tensor& image01) {
    Tensor z = image01.clone();
    for (auto& v : z.values()) v = 2.0 * v - 1.0;
    return z;
}

// The shared inner loop: one image, one loss schedule, one parameter set.
inline void run_steps(const DenoiserModel& model, const Tensor& z0, const NoiseSchedule& sched,
                      const TrainConfig& cfg, const std::string& cond_name,
                      const AttachedLoras& attached, AdamOptimizer& opt, Rng& rng,
                      TrainReport& report, int step_offset, const char* who) {
    for (int step = 0; step < cfg.total_steps; ++step) {
        const ActiveLoss active = active_loss_at(cfg, step);
        const int t             = rng.uniform_int(1, sched.T);
        Tensor eps              = randn(z0.shape(), rng);
        Tensor zt               = forward_noise(sched, z0, eps, t);

        Tape tape;
        TapeScope scope(tape);
        Tensor pred = model.forward(zt, t, cond_name, &attached);
        Tensor loss = (active == ActiveLoss::epsilon) ? loss_epsilon(eps, pred)
                                                      : loss_z0hat(sched, z0, zt, pred, t);
        const double l = loss.item();
        if (!std::isfinite(l))
            throw std::runtime_error(std::string(who) + ": non-finite loss at step " +
                                     std::to_string(step_offset + step));
        backward(loss);
        opt.step(learning_rate_at(cfg, step));
        report.steps.push_back({step_offset + step, t, l, active});
    }
}

inline void set_adapter_requires_grad(LoraAdapter& ad, bool v) {
    for (auto& e : ad.entries) {
        e.a.set_requires_grad(v);
        e.b.set_requires_grad(v);
    }
}

}  // namespace detail

// Content protocol: adapter on the content block plus its condition vector,
// trained under the configured loss scheme (eps -> z0hat transition by default).
inline TrainResult train_content_lora(DenoiserModel& model, const Tensor& image01,
                                      const NoiseSchedule& sched, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_image_01(image01, "train_content_lora");
    const auto t0 = std::chrono::steady_clock::now();

    Rng rng(cfg.seed);
    LoraSet set;
    set.source_tag    = "content-image";
    set.content       = make_lora_adapter(model, BlockId::content_block, cfg.lora_rank, cfg.lora_alpha, rng);
    set.content_token = Tensor::zeros({model.cfg.embed_dim});
    set.style_token   = Tensor::zeros({model.cfg.embed_dim});
    detail::set_adapter_requires_grad(*set.content, true);
    set.content_token.set_requires_grad(true);
    model.cond.set(kContentToken, set.content_token);

    std::vector<Tensor> params = set.content->parameters();
    params.push_back(set.content_token);
    AdamOptimizer opt(params, cfg.adam_beta1, cfg.adam_beta2);

    AttachedLoras attached;
    attached.add(&*set.content);

    Tensor z0 = detail::to_signal(image01);
    TrainReport report;
    detail::run_steps(model, z0, sched, cfg, kContentToken, attached, opt, rng, report, 0,
                      "train_content_lora");

    report.content_fingerprint = fingerprint(*set.content);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(set), std::move(report)};
}

// Two-step protocol for the style image: first learn a content LoRA with the
// loss transition, then freeze it and train a fresh style-block LoRA from
// scratch with the z0hat loss only, under the style prompt.
inline TrainResult train_style_lora_two_step(DenoiserModel& model, const Tensor& style_image01,
                                             const NoiseSchedule& sched, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_image_01(style_image01, "train_style_lora_two_step");
    const auto t0 = std::chrono::steady_clock::now();

    TrainResult phase_a = train_content_lora(model, style_image01, sched, cfg);
    LoraSet set         = std::move(phase_a.set);
    set.source_tag      = "style-image";
    freeze(set, AdapterRole::content);
    detail::set_adapter_requires_grad(*set.content, false);
    set.content_token.set_requires_grad(false);

    Rng rng(cfg.seed ^ 0x7fb5d329728ea185ULL);  // independent phase-B stream
    set.style = make_lora_adapter(model, BlockId::style_block, cfg.lora_rank, cfg.lora_alpha, rng);
    detail::set_adapter_requires_grad(*set.style, true);
    set.style_token.set_requires_grad(true);
    model.cond.set(kStyleToken, set.style_token);

    std::vector<Tensor> params = set.style->parameters();
    params.push_back(set.style_token);
    AdamOptimizer opt(params, cfg.adam_beta1, cfg.adam_beta2);

    AttachedLoras attached;
    attached.add(&*set.content);
    attached.add(&*set.style);

    TrainConfig phase_b  = cfg;
    phase_b.scheme       = LossScheme::x0_only;  // epsilon loss here would re-capture local content
    Tensor z0            = detail::to_signal(style_image01);
    TrainReport report   = std::move(phase_a.report);
    detail::run_steps(model, z0, sched, phase_b, kStyleToken, attached, opt, rng, report,
                      cfg.total_steps, "train_style_lora_two_step");

    report.content_fingerprint = fingerprint(*set.content);
    report.style_fingerprint   = fingerprint(*set.style);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(set), std::move(report)};
}

// Joint baseline: both adapters trained simultaneously with a single loss;
// the ablation configuration the two-step protocol is compared against.
inline TrainResult train_joint_baseline(DenoiserModel& model, const Tensor& image01,
                                        const NoiseSchedule& sched, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_image_01(image01, "train_joint_baseline");
    const auto t0 = std::chrono::steady_clock::now();

    Rng rng(cfg.seed);
    LoraSet set;
    set.source_tag    = "content-image";
    set.content       = make_lora_adapter(model, BlockId::content_block, cfg.lora_rank, cfg.lora_alpha, rng);
    set.style         = make_lora_adapter(model, BlockId::style_block, cfg.lora_rank, cfg.lora_alpha, rng);
    set.content_token = Tensor::zeros({model.cfg.embed_dim});
    set.style_token   = Tensor::zeros({model.cfg.embed_dim});
    detail::set_adapter_requires_grad(*set.content, true);
    detail::set_adapter_requires_grad(*set.style, true);
    set.content_token.set_requires_grad(true);
    model.cond.set(kContentToken, set.content_token);

    std::vector<Tensor> params = set.content->parameters();
    for (auto& p : set.style->parameters()) params.push_back(p);
    params.push_back(set.content_token);
    AdamOptimizer opt(params, cfg.adam_beta1, cfg.adam_beta2);

    AttachedLoras attached;
    attached.add(&*set.content);
    attached.add(&*set.style);

    Tensor z0 = detail::to_signal(image01);
    TrainReport report;
    detail::run_steps(model, z0, sched, cfg, kContentToken, attached, opt, rng, report, 0,
                      "train_joint_baseline");

    report.content_fingerprint = fingerprint(*set.content);
    report.style_fingerprint   = fingerprint(*set.style);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(set), std::move(report)};
}

// Pretrains every base weight with the plain epsilon loss, unconditioned.
inline TrainReport train_base(DenoiserModel& model, const std::vector<Tensor>& images01,
                              const NoiseSchedule& sched, int steps, double lr, uint64_t seed,
                              double beta1 = 0.9, double beta2 = 0.999) {
    if (images01.empty()) throw std::invalid_argument("train_base: empty dataset");
    for (const auto& img : images01) detail::check_image_01(img, "train_base");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Tensor> signals;
    signals.reserve(images01.size());
    for (const auto& img : images01) signals.push_back(detail::to_signal(img));

    model.set_base_requires_grad(true);
    std::vector<Tensor> params;
    for (auto& [name, t] : model.enumerate_parameters())
        if (name.rfind("cond.", 0) != 0) params.push_back(t);
    AdamOptimizer opt(params, beta1, beta2);

    Rng rng(seed);
    TrainReport report;
    for (int step = 0; step < steps; ++step) {
        const int idx = rng.uniform_int(0, static_cast<int>(signals.size()) - 1);
        const int t   = rng.uniform_int(1, sched.T);
        Tensor eps    = randn(signals[static_cast<size_t>(idx)].shape(), rng);
        Tensor zt     = forward_noise(sched, signals[static_cast<size_t>(idx)], eps, t);

        Tape tape;
        TapeScope scope(tape);
        Tensor pred = model.forward(zt, t, kNullCondition);
        Tensor loss = loss_epsilon(eps, pred);
        const double l = loss.item();
        if (!std::isfinite(l))
            throw std::runtime_error("train_base: non-finite loss at step " + std::to_string(step));
        backward(loss);
        opt.step(lr);
        report.steps.push_back({step, t, l, ActiveLoss::epsilon});
    }
    model.set_base_requires_grad(false);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

inline void write_report_csv(const std::string& path, const TrainReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot open " + path + " for writing");
    os << "step,t,loss,scheme\n";
    char buf[64];
    for (const auto& r : report.steps) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.loss);
        os << r.step << "," << r.t << "," << buf << "," << active_loss_name(r.active) << "\n";
    }
}

}  // namespace clora
