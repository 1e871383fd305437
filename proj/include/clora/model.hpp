#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clora/lora.hpp"
#include "clora/tensor.hpp"

namespace clora {

// Interleaved sin/cos of t over geometric frequencies; all values in [-1, 1].
inline Tensor sinusoidal_timestep_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("timestep embedding: dim must be positive and even, got " +
                                    std::to_string(dim));
    const int half = dim / 2;
    std::vector<double> v(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        double freq        = std::pow(10000.0, -static_cast<double>(i) / half);
        v[2 * static_cast<size_t>(i)]     = std::sin(t * freq);
        v[2 * static_cast<size_t>(i) + 1] = std::cos(t * freq);
    }
    return Tensor({dim}, std::move(v));
}

inline const std::string kNullCondition = "null";

// Named condition vectors standing in for text prompts. The reserved null
// name is always the all-zeros vector.
struct ConditionEmbedding {
    std::map<std::string, Tensor> table;

    const Tensor& get(const std::string& name) const {
        auto it = table.find(name);
        if (it == table.end())
            throw std::invalid_argument("unknown condition '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return table.count(name) != 0; }
    void set(const std::string& name, Tensor t) { table[name] = std::move(t); }
};

struct Conv2dLayer {
    Tensor kernel;  // [Cout, Cin, 3, 3]
    Tensor bias;    // [Cout]
};

struct LinearLayer {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
};

struct ResidualBlock {
    Conv2dLayer conv1;
    Conv2dLayer conv2;
};

struct ModelConfig {
    int height    = 16;
    int width     = 16;
    int channels  = 32;
    int embed_dim = 16;

    bool operator==(const ModelConfig&) const = default;
};

// Adapters attached for a single forward pass. Any number per block; each
// applies to that block's weight applications only.
struct AttachedLoras {
    std::vector<std::pair<const LoraAdapter*, double>> content;
    std::vector<std::pair<const LoraAdapter*, double>> style;

    void add(const LoraAdapter* adapter, double strength = 1.0) {
        if (!adapter) return;
        (adapter->target == BlockId::content_block ? content : style).emplace_back(adapter, strength);
    }
    static AttachedLoras from_set(const LoraSet& set, double content_strength = 1.0,
                                  double style_strength = 1.0) {
        AttachedLoras a;
        if (set.content) a.add(&*set.content, content_strength);
        if (set.style) a.add(&*set.style, style_strength);
        return a;
    }
};

// Small convolutional noise predictor. Timestep and condition embeddings are
// projected to per-channel offsets and enter as a dynamic bias on the input
// convolution (timestep first, then condition). The content block sits before
// the style block; adapters bind to exactly one of the two.
struct DenoiserModel {
    ModelConfig cfg;
    Conv2dLayer conv_in;   // 3 -> C
    LinearLayer time_proj; // E -> C
    LinearLayer cond_proj; // E -> C
    ResidualBlock content_block;
    ResidualBlock style_block;
    Conv2dLayer conv_out;  // C -> 3
    ConditionEmbedding cond;
    mutable uint64_t forward_calls = 0;

    static DenoiserModel init(const ModelConfig& cfg, uint64_t seed) {
        Rng rng(seed);
        auto conv = [&](int cout, int cin) {
            Conv2dLayer l;
            l.kernel       = randn({cout, cin, 3, 3}, rng);
            double s       = 1.0 / std::sqrt(static_cast<double>(cin) * 9.0);
            for (auto& v : l.kernel.values()) v *= s;
            l.bias = Tensor::zeros({cout});
            return l;
        };
        auto linear = [&](int in, int out) {
            LinearLayer l;
            l.w      = randn({in, out}, rng);
            double s = 1.0 / std::sqrt(static_cast<double>(in));
            for (auto& v : l.w.values()) v *= s;
            l.b = Tensor::zeros({out});
            return l;
        };
        DenoiserModel m;
        m.cfg       = cfg;
        m.conv_in   = conv(cfg.channels, 3);
        m.time_proj = linear(cfg.embed_dim, cfg.channels);
        m.cond_proj = linear(cfg.embed_dim, cfg.channels);
        m.content_block = {conv(cfg.channels, cfg.channels), conv(cfg.channels, cfg.channels)};
        m.style_block   = {conv(cfg.channels, cfg.channels), conv(cfg.channels, cfg.channels)};
        m.conv_out  = conv(3, cfg.channels);
        m.cond.set(kNullCondition, Tensor::zeros({cfg.embed_dim}));
        return m;
    }

    std::vector<std::pair<std::string, Tensor>> enumerate_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out = {
            {"conv_in.kernel", conv_in.kernel},
            {"conv_in.bias", conv_in.bias},
            {"time_proj.w", time_proj.w},
            {"time_proj.b", time_proj.b},
            {"cond_proj.w", cond_proj.w},
            {"cond_proj.b", cond_proj.b},
            {"content_block.conv1.kernel", content_block.conv1.kernel},
            {"content_block.conv1.bias", content_block.conv1.bias},
            {"content_block.conv2.kernel", content_block.conv2.kernel},
            {"content_block.conv2.bias", content_block.conv2.bias},
            {"style_block.conv1.kernel", style_block.conv1.kernel},
            {"style_block.conv1.bias", style_block.conv1.bias},
            {"style_block.conv2.kernel", style_block.conv2.kernel},
            {"style_block.conv2.bias", style_block.conv2.bias},
            {"conv_out.kernel", conv_out.kernel},
            {"conv_out.bias", conv_out.bias},
        };
        for (const auto& [name, vec] : cond.table)
            if (name != kNullCondition) out.emplace_back("cond." + name, vec);
        return out;
    }

    long long parameter_count() const {
        long long n = 0;
        for (const auto& [name, t] : enumerate_parameters()) n += t.size();
        return n;
    }

    DenoiserModel clone() const {
        DenoiserModel m = *this;
        auto deep = [](Tensor& t) { t = t.clone(); };
        deep(m.conv_in.kernel); deep(m.conv_in.bias);
        deep(m.time_proj.w); deep(m.time_proj.b);
        deep(m.cond_proj.w); deep(m.cond_proj.b);
        deep(m.content_block.conv1.kernel); deep(m.content_block.conv1.bias);
        deep(m.content_block.conv2.kernel); deep(m.content_block.conv2.bias);
        deep(m.style_block.conv1.kernel); deep(m.style_block.conv1.bias);
        deep(m.style_block.conv2.kernel); deep(m.style_block.conv2.bias);
        deep(m.conv_out.kernel); deep(m.conv_out.bias);
        for (auto& [name, vec] : m.cond.table) vec = vec.clone();
        m.forward_calls = 0;
        return m;
    }

    void set_base_requires_grad(bool v) {
        for (auto& [name, t] : enumerate_parameters()) {
            if (name.rfind("cond.", 0) == 0) continue;
            Tensor p = t;
            p.set_requires_grad(v);
        }
    }

    Tensor forward(const Tensor& zt, int t, const std::string& cond_name,
                   const AttachedLoras* loras = nullptr) const {
        ++forward_calls;
        if (t < 1) throw std::invalid_argument("model forward: timestep must be >= 1, got " + std::to_string(t));
        if (zt.rank() != 3 || zt.shape()[0] != cfg.height || zt.shape()[1] != cfg.width || zt.shape()[2] != 3)
            throw std::invalid_argument("model forward: input " + shape_str(zt.shape()) + " expected [" +
                                        std::to_string(cfg.height) + "," + std::to_string(cfg.width) + ",3]");
        const Tensor& cvec = cond.get(cond_name);

        Tensor temb = sinusoidal_timestep_embedding(t, cfg.embed_dim);
        Tensor tb   = add(matmul(temb, time_proj.w), time_proj.b);
        Tensor cb   = add(matmul(cvec, cond_proj.w), cond_proj.b);
        Tensor bias = add(add(conv_in.bias, tb), cb);

        Tensor h = silu(conv2d_3x3_same(zt, conv_in.kernel, bias));
        h        = add(h, block_forward(h, content_block, loras ? &loras->content : nullptr));
        h        = add(h, block_forward(h, style_block, loras ? &loras->style : nullptr));
        return conv2d_3x3_same(h, conv_out.kernel, conv_out.bias);
    }

private:
    static Tensor adapted_conv(const Tensor& x, const Conv2dLayer& layer,
                               const std::vector<std::pair<const LoraAdapter*, double>>* adapters,
                               size_t entry_idx) {
        Tensor y = conv2d_3x3_same(x, layer.kernel, layer.bias);
        if (adapters)
            for (const auto& [adapter, strength] : *adapters) {
                const AdapterEntry& e = adapter->entries.at(entry_idx);
                Tensor down = conv2d_3x3_same(x, e.a, Tensor::zeros({e.rank}));
                Tensor up   = matmul(down, e.b);
                y           = add(y, scale(up, strength * e.scaling()));
            }
        return y;
    }

    static Tensor block_forward(const Tensor& h, const ResidualBlock& block,
                                const std::vector<std::pair<const LoraAdapter*, double>>* adapters) {
        Tensor a = silu(adapted_conv(h, block.conv1, adapters, 0));
        return adapted_conv(a, block.conv2, adapters, 1);
    }
};

// model_forward per the module contract; thin wrapper over the method.
inline Tensor model_forward(const DenoiserModel& m, const Tensor& zt, int t,
                            const std::string& cond_name, const LoraSet* set = nullptr) {
    if (!set) return m.forward(zt, t, cond_name, nullptr);
    AttachedLoras a = AttachedLoras::from_set(*set);
    return m.forward(zt, t, cond_name, &a);
}

inline LoraAdapter make_lora_adapter(const DenoiserModel& m, BlockId target, int rank, double alpha,
                                     Rng& rng) {
    const int c = m.cfg.channels;
    LoraAdapter ad;
    ad.target = target;
    ad.rank   = rank;
    ad.alpha  = alpha;
    ad.entries.push_back(make_adapter_entry("conv1.kernel", c, c * 9, rank, alpha, rng));
    ad.entries.push_back(make_adapter_entry("conv2.kernel", c, c * 9, rank, alpha, rng));
    return ad;
}

inline uint64_t fingerprint_model(const DenoiserModel& m) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : m.enumerate_parameters()) {
        h = fingerprint_bytes(name.data(), name.size(), h);
        h = fingerprint_bytes(t.values().data(), t.values().size() * sizeof(double), h);
    }
    return h;
}

}  // namespace clora
