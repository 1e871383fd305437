#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clora/diffusion.hpp"
#include "clora/model.hpp"

namespace clora {

// Per-timestep loss analysis: the diffusion axis split into equal buckets,
// with mean epsilon / direct-x0 / z0hat losses evaluated on the same forward
// passes. Reproduces the characteristic opposite orderings of the two
// parameterizations once the model is trained.
struct LossProfile {
    struct Bucket {
        int t_lo = 0, t_hi = 0;
        int count = 0;
        double mean_eps_loss   = 0.0;
        double mean_x0_loss    = 0.0;  // model output read as a z0 prediction
        double mean_z0hat_loss = 0.0;
    };
    std::vector<Bucket> buckets;
    double max_identity_rel_err = 0.0;  // per-sample z0hat vs scaled-epsilon agreement
};

inline LossProfile timestep_loss_profile(const DenoiserModel& m, const std::vector<Tensor>& dataset01,
                                         const NoiseSchedule& sched, int evals_per_bucket,
                                         uint64_t seed, int num_buckets = 5) {
    if (dataset01.empty()) throw std::invalid_argument("loss profile: empty dataset");
    if (evals_per_bucket < 1) throw std::invalid_argument("loss profile: evals_per_bucket must be >= 1");
    if (num_buckets < 1 || num_buckets > sched.T)
        throw std::invalid_argument("loss profile: bad bucket count");

    std::vector<Tensor> signals;
    signals.reserve(dataset01.size());
    for (const auto& img : dataset01) {
        Tensor z = img.clone();
        for (auto& v : z.values()) v = 2.0 * v - 1.0;
        signals.push_back(std::move(z));
    }

    Rng rng(seed);
    LossProfile profile;
    for (int b = 0; b < num_buckets; ++b) {
        LossProfile::Bucket bucket;
        bucket.t_lo = 1 + b * sched.T / num_buckets;
        bucket.t_hi = (b + 1) * sched.T / num_buckets;
        double acc_eps = 0.0, acc_x0 = 0.0, acc_z0hat = 0.0;
        for (int i = 0; i < evals_per_bucket; ++i) {
            const int idx = rng.uniform_int(0, static_cast<int>(signals.size()) - 1);
            const int t   = rng.uniform_int(bucket.t_lo, bucket.t_hi);
            const Tensor& z0 = signals[static_cast<size_t>(idx)];
            Tensor eps       = randn(z0.shape(), rng);
            Tensor zt        = forward_noise(sched, z0, eps, t);
            Tensor pred      = m.forward(zt, t, kNullCondition);

            const double le  = loss_epsilon(eps, pred).item();
            const double lx  = loss_x0_direct(z0, pred).item();
            const double lz  = loss_z0hat(sched, z0, zt, pred, t).item();
            acc_eps += le;
            acc_x0 += lx;
            acc_z0hat += lz;

            const double ab     = sched.alpha_bar(t);
            const double scaled = (1.0 - ab) / ab * le;
            if (scaled > 0.0) {
                double rel = std::abs(lz - scaled) / scaled;
                profile.max_identity_rel_err = std::max(profile.max_identity_rel_err, rel);
            }
            ++bucket.count;
        }
        bucket.mean_eps_loss   = acc_eps / bucket.count;
        bucket.mean_x0_loss    = acc_x0 / bucket.count;
        bucket.mean_z0hat_loss = acc_z0hat / bucket.count;
        profile.buckets.push_back(bucket);
    }
    return profile;
}

// (t, (1 - abar_t) / abar_t) for t = 1..T; strictly increasing for any valid
// schedule since abar is strictly decreasing.
inline std::vector<std::pair<int, double>> scaling_factor_curve(const NoiseSchedule& sched) {
    std::vector<std::pair<int, double>> out;
    out.reserve(static_cast<size_t>(sched.T));
    for (int t = 1; t <= sched.T; ++t) {
        double ab = sched.alpha_bar(t);
        out.emplace_back(t, (1.0 - ab) / ab);
    }
    return out;
}

namespace detail {

// Per-channel mean and std over non-overlapping 4x4 patches -> 6 feature
// channels; Gram matrix is their normalized second moment across patches.
inline std::vector<double> patch_gram(const Tensor& img) {
    const int H = img.shape()[0], W = img.shape()[1];
    const int ph = H / 4, pw = W / 4;
    if (ph < 1 || pw < 1)
        throw std::invalid_argument("gram_style_distance: image too small for 4x4 patches");
    std::vector<std::array<double, 6>> feats;
    feats.reserve(static_cast<size_t>(ph) * pw);
    for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px) {
            std::array<double, 6> f{};
            for (int c = 0; c < 3; ++c) {
                double sum = 0.0, sq = 0.0;
                for (int y = 0; y < 4; ++y)
                    for (int x = 0; x < 4; ++x) {
                        double v = img.values()[((static_cast<size_t>(py * 4 + y)) * W + (px * 4 + x)) * 3 + c];
                        sum += v;
                        sq += v * v;
                    }
                double mean = sum / 16.0;
                double var  = std::max(0.0, sq / 16.0 - mean * mean);
                f[static_cast<size_t>(c)]     = mean;
                f[static_cast<size_t>(c) + 3] = std::sqrt(var);
            }
            feats.push_back(f);
        }
    std::vector<double> gram(36, 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) gram[static_cast<size_t>(i) * 6 + j] += f[static_cast<size_t>(i)] * f[static_cast<size_t>(j)];
    for (auto& g : gram) g /= static_cast<double>(feats.size());
    return gram;
}

}  // namespace detail

// Proxy style metric: mean squared difference of the patch-statistics Gram
// matrices. Symmetric, non-negative, zero iff the statistics agree.
inline double gram_style_distance(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("gram_style_distance", a, b);
    if (a.rank() != 3 || a.shape()[2] != 3)
        throw std::invalid_argument("gram_style_distance: images must be [H,W,3]");
    auto ga = detail::patch_gram(a);
    auto gb = detail::patch_gram(b);
    double acc = 0.0;
    for (size_t i = 0; i < ga.size(); ++i) {
        double d = ga[i] - gb[i];
        acc += d * d;
    }
    return acc / static_cast<double>(ga.size());
}

// Proxy content metric: pixel MSE on a grayscale 8x8 average-pool, so it
// tracks structure rather than palette.
inline double content_mse(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("content_mse", a, b);
    if (a.rank() != 3 || a.shape()[2] != 3)
        throw std::invalid_argument("content_mse: images must be [H,W,3]");
    const int H = a.shape()[0], W = a.shape()[1];
    if (H % 8 != 0 || W % 8 != 0)
        throw std::invalid_argument("content_mse: dimensions must be divisible by 8, got " +
                                    shape_str(a.shape()));
    const int by = H / 8, bx = W / 8;
    auto pooled_gray = [&](const Tensor& img, int gy, int gx) {
        double acc = 0.0;
        for (int y = gy * by; y < (gy + 1) * by; ++y)
            for (int x = gx * bx; x < (gx + 1) * bx; ++x) {
                size_t base = (static_cast<size_t>(y) * W + x) * 3;
                acc += (img.values()[base] + img.values()[base + 1] + img.values()[base + 2]) / 3.0;
            }
        return acc / static_cast<double>(by * bx);
    };
    double acc = 0.0;
    for (int gy = 0; gy < 8; ++gy)
        for (int gx = 0; gx < 8; ++gx) {
            double d = pooled_gray(a, gy, gx) - pooled_gray(b, gy, gx);
            acc += d * d;
        }
    return acc / 64.0;
}

inline void write_profile_csv(const std::string& path, const LossProfile& profile) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("profile: cannot open " + path + " for writing");
    os << "bucket,t_lo,t_hi,count,eps_loss,x0_loss,z0hat_loss\n";
    char buf[3][64];
    for (size_t b = 0; b < profile.buckets.size(); ++b) {
        const auto& bk = profile.buckets[b];
        std::snprintf(buf[0], sizeof(buf[0]), "%.17g", bk.mean_eps_loss);
        std::snprintf(buf[1], sizeof(buf[1]), "%.17g", bk.mean_x0_loss);
        std::snprintf(buf[2], sizeof(buf[2]), "%.17g", bk.mean_z0hat_loss);
        os << b << "," << bk.t_lo << "," << bk.t_hi << "," << bk.count << "," << buf[0] << ","
           << buf[1] << "," << buf[2] << "\n";
    }
}

}  // namespace clora
