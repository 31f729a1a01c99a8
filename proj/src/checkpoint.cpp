#include "mocgvq/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "mocgvq/errors.hpp"

namespace mocgvq {

namespace {

// The build targets little-endian hosts; raw f64/u32/u64 writes below rely on it.
static_assert(std::endian::native == std::endian::little);

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw ParseError("checkpoint: truncated u32");
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw ParseError("checkpoint: truncated u64");
    return v;
}

} // namespace

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StateError("checkpoint: cannot open \"" + tmp + "\" for writing");
        out.write(kCheckpointMagic, 8);
        put_u32(out, data.version);
        put_u32(out, data.input_dim);
        put_u64(out, data.step_count);
        put_u64(out, data.rng_state);
        put_u32(out, static_cast<std::uint32_t>(data.config_json.size()));
        out.write(data.config_json.data(), static_cast<std::streamsize>(data.config_json.size()));
        put_u32(out, static_cast<std::uint32_t>(data.records.size()));
        for (const auto& [name, tensor] : data.records) {
            put_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put_u32(out, static_cast<std::uint32_t>(tensor.rows()));
            put_u32(out, static_cast<std::uint32_t>(tensor.cols()));
            out.write(reinterpret_cast<const char*>(tensor.data()),
                      static_cast<std::streamsize>(tensor.size() * sizeof(double)));
        }
        if (!out) throw StateError("checkpoint: write failed for \"" + tmp + "\"");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw StateError("checkpoint: rename to \"" + path + "\" failed");
    }
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("checkpoint: cannot open \"" + path + "\"");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw ParseError("checkpoint: bad magic in \"" + path + "\"");
    }
    CheckpointData data;
    data.version = get_u32(in);
    if (data.version != 1) {
        throw ParseError("checkpoint: unsupported version " + std::to_string(data.version));
    }
    data.input_dim = get_u32(in);
    data.step_count = get_u64(in);
    data.rng_state = get_u64(in);
    std::uint32_t config_len = get_u32(in);
    data.config_json.resize(config_len);
    if (!in.read(data.config_json.data(), config_len)) {
        throw ParseError("checkpoint: truncated config");
    }
    std::uint32_t count = get_u32(in);
    data.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw ParseError("checkpoint: truncated record name");
        std::uint32_t rows = get_u32(in);
        std::uint32_t cols = get_u32(in);
        Tensor t(static_cast<int>(rows), static_cast<int>(cols));
        if (!in.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw ParseError("checkpoint: truncated data for record \"" + name + "\"");
        }
        data.records.emplace_back(std::move(name), std::move(t));
    }
    return data;
}

std::string checkpoint_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("checkpoint: cannot open \"" + path + "\"");
    std::uint64_t hash = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[hash & 0xf];
        hash >>= 4;
    }
    return out;
}

} // namespace mocgvq
