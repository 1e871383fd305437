#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clora/tensor.hpp"

namespace clora {

enum class BlockId { content_block, style_block };

inline const char* block_name(BlockId b) {
    return b == BlockId::content_block ? "content_block" : "style_block";
}

// One adapted weight: delta = (alpha / rank) * B * A over the flattened weight
// matrix [d_out, d_in]. `a` is stored as [rank, d_in]; `b` holds the up
// projection transposed, [rank, d_out], so both factors apply through matmul.
struct AdapterEntry {
    std::string weight_name;
    Tensor a;
    Tensor b;
    int rank     = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
    int d_in() const { return a.shape()[1]; }
    int d_out() const { return b.shape()[1]; }
};

// A is N(0, 0.01^2), B is zero: a fresh adapter is an exact no-op.
inline AdapterEntry make_adapter_entry(const std::string& weight_name, int d_out, int d_in, int rank,
                                       double alpha, Rng& rng) {
    if (rank < 1 || rank > std::min(d_in, d_out))
        throw std::invalid_argument("lora: rank " + std::to_string(rank) + " outside [1, min(" +
                                    std::to_string(d_in) + "," + std::to_string(d_out) + ")]");
    AdapterEntry e;
    e.weight_name = weight_name;
    e.rank        = rank;
    e.alpha       = alpha;
    e.a           = randn({rank, d_in}, rng);
    for (auto& v : e.a.values()) v *= 0.01;
    e.b = Tensor::zeros({rank, d_out});
    return e;
}

// Builds an entry from logically shaped factors A [rank, d_in], B [d_out, rank].
inline AdapterEntry adapter_entry_from_logical(const std::string& weight_name, const Tensor& a_logical,
                                               const Tensor& b_logical, double alpha) {
    if (a_logical.rank() != 2 || b_logical.rank() != 2 || a_logical.shape()[0] != b_logical.shape()[1])
        throw std::invalid_argument("lora: inconsistent factor shapes " + shape_str(a_logical.shape()) +
                                    " / " + shape_str(b_logical.shape()));
    AdapterEntry e;
    e.weight_name = weight_name;
    e.rank        = a_logical.shape()[0];
    e.alpha       = alpha;
    e.a           = a_logical.clone();
    const int dout = b_logical.shape()[0];
    e.b            = Tensor::zeros({e.rank, dout});
    for (int r = 0; r < e.rank; ++r)
        for (int o = 0; o < dout; ++o)
            e.b.values()[static_cast<size_t>(r) * dout + o] = b_logical.values()[static_cast<size_t>(o) * e.rank + r];
    return e;
}

// base_weight * x + strength * (alpha/rank) * B (A x); taped when inputs are.
// Matrix path: base [d_out, d_in], x [d_in]. Conv path: base is a 3x3 kernel,
// x [H,W,Cin], A applied as a flat [rank, Cin*9] kernel.
inline Tensor lora_apply(const Tensor& base_weight, const AdapterEntry& e, const Tensor& x,
                         double strength) {
    if (x.rank() == 3) {
        const int cout = base_weight.shape()[0];
        Tensor base    = conv2d_3x3_same(x, base_weight, Tensor::zeros({cout}));
        Tensor down    = conv2d_3x3_same(x, e.a, Tensor::zeros({e.rank}));
        Tensor up      = matmul(down, e.b);
        return add(base, scale(up, strength * e.scaling()));
    }
    Tensor base = matmul(base_weight, x);
    Tensor down = matmul(e.a, x);
    Tensor up   = matmul(down, e.b);
    return add(base, scale(up, strength * e.scaling()));
}

// Materializes base + strength * (alpha/rank) * B A as a plain weight tensor.
inline Tensor merge(const AdapterEntry& e, const Tensor& base_weight, double strength) {
    const int d_out = e.d_out(), d_in = e.d_in();
    if (base_weight.size() != static_cast<long long>(d_out) * d_in)
        throw std::invalid_argument("merge: base weight " + shape_str(base_weight.shape()) +
                                    " does not match adapter [" + std::to_string(d_out) + "," +
                                    std::to_string(d_in) + "]");
    Tensor merged  = base_weight.clone();
    merged.set_requires_grad(false);
    const double s = strength * e.scaling();
    for (int o = 0; o < d_out; ++o)
        for (int j = 0; j < d_in; ++j) {
            double acc = 0.0;
            for (int r = 0; r < e.rank; ++r)
                acc += e.b.values()[static_cast<size_t>(r) * d_out + o] * e.a.values()[static_cast<size_t>(r) * d_in + j];
            merged.values()[static_cast<size_t>(o) * d_in + j] += s * acc;
        }
    return merged;
}

struct LoraAdapter {
    BlockId target = BlockId::content_block;
    int rank       = 4;
    double alpha   = 4.0;
    std::vector<AdapterEntry> entries;

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& e : entries) {
            out.push_back(e.a);
            out.push_back(e.b);
        }
        return out;
    }
};

inline uint64_t fingerprint_bytes(const void* p, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fingerprint(const LoraAdapter& ad) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : ad.entries) {
        h = fingerprint_bytes(e.a.values().data(), e.a.values().size() * sizeof(double), h);
        h = fingerprint_bytes(e.b.values().data(), e.b.values().size() * sizeof(double), h);
    }
    return h;
}

enum class AdapterRole { content, style };

// The unit of training and checkpointing: up to one adapter per designated
// block plus the condition vectors learned alongside them.
struct LoraSet {
    std::optional<LoraAdapter> content;  // targets the content block
    std::optional<LoraAdapter> style;    // targets the style block
    std::string source_tag = "content-image";
    bool content_frozen = false;
    bool style_frozen   = false;
    Tensor content_token;  // [embed_dim]; zeros until trained
    Tensor style_token;

    LoraAdapter& get(AdapterRole which) {
        auto& slot = (which == AdapterRole::content) ? content : style;
        if (!slot) throw std::invalid_argument(std::string("lora set: no ") +
                                               (which == AdapterRole::content ? "content" : "style") +
                                               " adapter");
        return *slot;
    }
    const LoraAdapter& get(AdapterRole which) const { return const_cast<LoraSet*>(this)->get(which); }
    bool frozen(AdapterRole which) const {
        return which == AdapterRole::content ? content_frozen : style_frozen;
    }
};

inline void freeze(LoraSet& set, AdapterRole which) {
    set.get(which);  // must exist
    (which == AdapterRole::content ? set.content_frozen : set.style_frozen) = true;
}

inline bool assert_frozen(const LoraSet& set, AdapterRole which, uint64_t expected_fingerprint) {
    return fingerprint(set.get(which)) == expected_fingerprint;
}

}  // namespace clora
