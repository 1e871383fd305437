#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "clora/lora.hpp"
#include "clora/model.hpp"

namespace clora {

// Binary checkpoint, little-endian throughout:
//   magic "CLORA1" (6 bytes), version u16,
//   header: H u32, W u32, channels u32, embed_dim u32, T u32, kind u8,
//   entry count u32, then per entry:
//   name_len u16, name bytes, dtype u8 (1 = f64), rank u8, dims u32[rank],
//   payload f64[prod(dims)].
// Payloads are uncompressed so round-trips are bitwise.

inline constexpr char kCheckpointMagic[6] = {'C', 'L', 'O', 'R', 'A', '1'};
inline constexpr uint16_t kCheckpointVersion = 1;
inline constexpr uint8_t kDtypeF64 = 1;

enum class CheckpointKind : uint8_t { model = 0, lora_set = 1 };

struct CheckpointHeader {
    uint32_t height = 0, width = 0, channels = 0, embed_dim = 0, timesteps = 0;
    CheckpointKind kind = CheckpointKind::model;
};

struct Checkpoint {
    CheckpointHeader header;
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return t;
        throw std::runtime_error("checkpoint: missing entry '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return true;
        return false;
    }
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    put_bytes(os, b, 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 4);
}
inline void put_f64(std::ostream& os, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    put_bytes(os, b, 8);
}

inline void get_bytes(std::istream& is, void* p, size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw std::runtime_error("checkpoint: truncated file " + path);
}
inline uint16_t get_u16(std::istream& is, const std::string& path) {
    unsigned char b[2];
    get_bytes(is, b, 2, path);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    get_bytes(is, b, 4, path);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
inline double get_f64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    get_bytes(is, b, 8, path);
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointHeader& h,
                            const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    detail::put_bytes(os, kCheckpointMagic, 6);
    detail::put_u16(os, kCheckpointVersion);
    detail::put_u32(os, h.height);
    detail::put_u32(os, h.width);
    detail::put_u32(os, h.channels);
    detail::put_u32(os, h.embed_dim);
    detail::put_u32(os, h.timesteps);
    unsigned char kind = static_cast<unsigned char>(h.kind);
    detail::put_bytes(os, &kind, 1);
    detail::put_u32(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        if (name.size() > 0xffff) throw std::runtime_error("checkpoint: entry name too long");
        detail::put_u16(os, static_cast<uint16_t>(name.size()));
        detail::put_bytes(os, name.data(), name.size());
        unsigned char dtype = kDtypeF64;
        detail::put_bytes(os, &dtype, 1);
        unsigned char rank = static_cast<unsigned char>(t.rank());
        detail::put_bytes(os, &rank, 1);
        for (int d : t.shape()) detail::put_u32(os, static_cast<uint32_t>(d));
        for (double v : t.values()) detail::put_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[6];
    detail::get_bytes(is, magic, 6, path);
    if (std::memcmp(magic, kCheckpointMagic, 6) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint16_t version = detail::get_u16(is, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    Checkpoint ck;
    ck.header.height    = detail::get_u32(is, path);
    ck.header.width     = detail::get_u32(is, path);
    ck.header.channels  = detail::get_u32(is, path);
    ck.header.embed_dim = detail::get_u32(is, path);
    ck.header.timesteps = detail::get_u32(is, path);
    unsigned char kind;
    detail::get_bytes(is, &kind, 1, path);
    if (kind > 1) throw std::runtime_error("checkpoint: bad kind byte in " + path);
    ck.header.kind = static_cast<CheckpointKind>(kind);
    uint32_t count = detail::get_u32(is, path);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = detail::get_u16(is, path);
        std::string name(name_len, '\0');
        detail::get_bytes(is, name.data(), name_len, path);
        unsigned char dtype;
        detail::get_bytes(is, &dtype, 1, path);
        if (dtype != kDtypeF64)
            throw std::runtime_error("checkpoint: unsupported dtype tag in " + path);
        unsigned char rank;
        detail::get_bytes(is, &rank, 1, path);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(detail::get_u32(is, path));
        long long n = shape_numel(shape);
        if (n < 0 || n > (1LL << 28))
            throw std::runtime_error("checkpoint: implausible entry size in " + path);
        std::vector<double> data(static_cast<size_t>(n));
        for (auto& v : data) v = detail::get_f64(is, path);
        ck.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ck;
}

/*================================ model / lora set wrappers ================================*/

inline void save_model(const std::string& path, const DenoiserModel& m, int timesteps) {
    CheckpointHeader h;
    h.height    = static_cast<uint32_t>(m.cfg.height);
    h.width     = static_cast<uint32_t>(m.cfg.width);
    h.channels  = static_cast<uint32_t>(m.cfg.channels);
    h.embed_dim = static_cast<uint32_t>(m.cfg.embed_dim);
    h.timesteps = static_cast<uint32_t>(timesteps);
    h.kind      = CheckpointKind::model;
    save_checkpoint(path, h, m.enumerate_parameters());
}

inline DenoiserModel load_model(const std::string& path, int* timesteps_out = nullptr) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.header.kind != CheckpointKind::model)
        throw std::runtime_error("checkpoint: " + path + " is not a model checkpoint");
    ModelConfig cfg;
    cfg.height    = static_cast<int>(ck.header.height);
    cfg.width     = static_cast<int>(ck.header.width);
    cfg.channels  = static_cast<int>(ck.header.channels);
    cfg.embed_dim = static_cast<int>(ck.header.embed_dim);
    DenoiserModel m    = DenoiserModel::init(cfg, 0);
    size_t base_filled = 0, base_expected = m.enumerate_parameters().size();
    for (const auto& [name, src] : ck.entries) {
        if (name.rfind("cond.", 0) == 0) {
            m.cond.set(name.substr(5), src.clone());
            continue;
        }
        bool found = false;
        for (auto& [pname, dst] : m.enumerate_parameters()) {
            if (pname != name) continue;
            if (dst.shape() != src.shape())
                throw std::runtime_error("checkpoint: shape mismatch for '" + name + "' in " + path);
            Tensor d   = dst;
            d.values() = src.values();
            found      = true;
            ++base_filled;
            break;
        }
        if (!found) throw std::runtime_error("checkpoint: unexpected entry '" + name + "' in " + path);
    }
    if (base_filled != base_expected)
        throw std::runtime_error("checkpoint: " + path + " is missing model parameters");
    if (timesteps_out) *timesteps_out = static_cast<int>(ck.header.timesteps);
    return m;
}

namespace detail {

inline void append_adapter_entries(std::vector<std::pair<std::string, Tensor>>& out,
                                   const std::string& prefix, const LoraAdapter& ad) {
    for (const auto& e : ad.entries) {
        out.emplace_back(prefix + "." + e.weight_name + ".a", e.a);
        out.emplace_back(prefix + "." + e.weight_name + ".b", e.b);
    }
}

}  // namespace detail

inline void save_lora_set(const std::string& path, const LoraSet& set, const ModelConfig& cfg,
                          int timesteps) {
    CheckpointHeader h;
    h.height    = static_cast<uint32_t>(cfg.height);
    h.width     = static_cast<uint32_t>(cfg.width);
    h.channels  = static_cast<uint32_t>(cfg.channels);
    h.embed_dim = static_cast<uint32_t>(cfg.embed_dim);
    h.timesteps = static_cast<uint32_t>(timesteps);
    h.kind      = CheckpointKind::lora_set;

    double flags = 0.0;
    if (set.content) flags += 1;
    if (set.style) flags += 2;
    if (set.content_frozen) flags += 4;
    if (set.style_frozen) flags += 8;
    if (set.source_tag == "style-image") flags += 16;

    const LoraAdapter* any = set.content ? &*set.content : (set.style ? &*set.style : nullptr);
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.emplace_back("meta.flags", Tensor::scalar(flags));
    entries.emplace_back("meta.rank", Tensor::scalar(any ? static_cast<double>(any->rank) : 0.0));
    entries.emplace_back("meta.alpha", Tensor::scalar(any ? any->alpha : 0.0));
    if (set.content) detail::append_adapter_entries(entries, "content", *set.content);
    if (set.style) detail::append_adapter_entries(entries, "style", *set.style);
    entries.emplace_back("cond.content_token", set.content_token);
    entries.emplace_back("cond.style_token", set.style_token);
    save_checkpoint(path, h, entries);
}

inline LoraSet load_lora_set(const std::string& path, const ModelConfig& expect) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.header.kind != CheckpointKind::lora_set)
        throw std::runtime_error("checkpoint: " + path + " is not a LoRA set checkpoint");
    if (static_cast<int>(ck.header.channels) != expect.channels ||
        static_cast<int>(ck.header.embed_dim) != expect.embed_dim)
        throw std::runtime_error("checkpoint: " + path + " was trained for a different model config");
    const int flags = static_cast<int>(ck.get("meta.flags").item());
    const int rank  = static_cast<int>(ck.get("meta.rank").item());
    const double alpha = ck.get("meta.alpha").item();

    auto load_adapter = [&](const std::string& prefix, BlockId target) {
        LoraAdapter ad;
        ad.target = target;
        ad.rank   = rank;
        ad.alpha  = alpha;
        for (const char* wn : {"conv1.kernel", "conv2.kernel"}) {
            AdapterEntry e;
            e.weight_name = wn;
            e.rank        = rank;
            e.alpha       = alpha;
            e.a           = ck.get(prefix + "." + wn + ".a").clone();
            e.b           = ck.get(prefix + "." + wn + ".b").clone();
            ad.entries.push_back(std::move(e));
        }
        return ad;
    };

    LoraSet set;
    if (flags & 1) set.content = load_adapter("content", BlockId::content_block);
    if (flags & 2) set.style = load_adapter("style", BlockId::style_block);
    set.content_frozen = (flags & 4) != 0;
    set.style_frozen   = (flags & 8) != 0;
    set.source_tag     = (flags & 16) ? "style-image" : "content-image";
    set.content_token  = ck.get("cond.content_token").clone();
    set.style_token    = ck.get("cond.style_token").clone();
    return set;
}

}  // namespace clora
