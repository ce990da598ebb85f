#include "dpcc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

#include "dpcc/rng.hpp"

namespace dpcc {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};
constexpr uint8_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint32_t get_u32(const std::vector<uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw std::runtime_error("checkpoint: truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(in[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), {});
}

// IEEE float32 bit round trip; parameters are stored single precision.
uint32_t f32_bits(float x) {
    uint32_t b;
    std::memcpy(&b, &x, 4);
    return b;
}
float bits_f32(uint32_t b) {
    float x;
    std::memcpy(&x, &b, 4);
    return x;
}

}  // namespace

uint64_t save_checkpoint(const std::string& path, const CodecConfig& cfg,
                         std::span<Parameter* const> params) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);

    const std::string manifest = cfg.serialize();
    put_u32(out, uint32_t(manifest.size()));
    out.insert(out.end(), manifest.begin(), manifest.end());

    put_u32(out, uint32_t(params.size()));
    for (const Parameter* p : params) {
        if (p->name.empty() || p->name.size() > 0xffff)
            throw std::invalid_argument("checkpoint: bad parameter name");
        out.push_back(uint8_t(p->name.size() & 0xff));
        out.push_back(uint8_t(p->name.size() >> 8));
        out.insert(out.end(), p->name.begin(), p->name.end());
        put_u32(out, uint32_t(p->value.rows));
        put_u32(out, uint32_t(p->value.cols));
        for (double e : p->value.v) put_u32(out, f32_bits(float(e)));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
    return fnv1a64(out.data(), out.size());
}

CodecConfig read_checkpoint_config(const std::string& path) {
    const std::vector<uint8_t> in = read_file(path);
    std::size_t pos = 0;
    if (in.size() < 5 || std::memcmp(in.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    if (in[4] != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    pos = 5;
    const uint32_t mlen = get_u32(in, pos);
    if (pos + mlen > in.size()) throw std::runtime_error("checkpoint: truncated manifest");
    const std::string manifest(in.begin() + std::ptrdiff_t(pos), in.begin() + std::ptrdiff_t(pos + mlen));
    return CodecConfig::parse(manifest);
}

uint64_t load_checkpoint_params(const std::string& path, std::span<Parameter* const> params) {
    const std::vector<uint8_t> in = read_file(path);
    std::size_t pos = 0;
    if (in.size() < 5 || std::memcmp(in.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    if (in[4] != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    pos = 5;
    const uint32_t mlen = get_u32(in, pos);
    pos += mlen;

    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : params) {
        if (!by_name.emplace(p->name, p).second)
            throw std::invalid_argument("checkpoint: duplicate parameter name " + p->name);
    }

    const uint32_t count = get_u32(in, pos);
    if (count != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (uint32_t k = 0; k < count; ++k) {
        if (pos + 2 > in.size()) throw std::runtime_error("checkpoint: truncated");
        const std::size_t nlen = std::size_t(in[pos]) | (std::size_t(in[pos + 1]) << 8);
        pos += 2;
        if (pos + nlen > in.size()) throw std::runtime_error("checkpoint: truncated");
        const std::string name(in.begin() + std::ptrdiff_t(pos), in.begin() + std::ptrdiff_t(pos + nlen));
        pos += nlen;
        const uint32_t rows = get_u32(in, pos);
        const uint32_t cols = get_u32(in, pos);

        const auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown parameter " + name);
        Parameter& p = *it->second;
        if (uint32_t(p.value.rows) != rows || uint32_t(p.value.cols) != cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        for (std::size_t i = 0; i < p.value.size(); ++i)
            p.value.v[i] = double(bits_f32(get_u32(in, pos)));
        p.zero_grad();
    }
    if (pos != in.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return fnv1a64(in.data(), in.size());
}

}  // namespace dpcc
