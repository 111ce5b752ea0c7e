#include "caplab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "caplab/error.hpp"

namespace caplab {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'L', 'A', 'B', '0', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

bool get_u32(std::istream& is, uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return true;
}

bool get_u64(std::istream& is, uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return true;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    for (const auto& [name, t] : tensors) {
        put_u64(os, name.size());
        os.write(name.data(), std::streamsize(name.size()));
        put_u64(os, uint64_t(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u64(os, uint64_t(t.dim(i)));
        for (size_t i = 0; i < t.numel(); ++i) put_f32(os, t.data()[i]);
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    uint32_t version = 0;
    if (!get_u32(is, version) || version != kVersion)
        throw IoError("unsupported checkpoint version in " + path);
    std::vector<std::pair<std::string, Tensor>> out;
    for (;;) {
        uint64_t name_len = 0;
        if (!get_u64(is, name_len)) {
            if (is.eof()) break;
            throw IoError("truncated record header in " + path);
        }
        if (name_len == 0 || name_len > (1u << 20))
            throw IoError("implausible tensor name length in " + path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), std::streamsize(name_len)))
            throw IoError("truncated tensor name in " + path);
        uint64_t rank = 0;
        if (!get_u64(is, rank) || rank > 8)
            throw IoError("bad rank for tensor " + name + " in " + path);
        std::vector<int> shape;
        size_t numel = 1;
        for (uint64_t i = 0; i < rank; ++i) {
            uint64_t d = 0;
            if (!get_u64(is, d)) throw IoError("truncated dims for tensor " + name);
            shape.push_back(int(d));
            numel *= size_t(d);
        }
        std::vector<float> data(numel);
        for (size_t i = 0; i < numel; ++i) {
            uint32_t bits = 0;
            if (!get_u32(is, bits)) throw IoError("truncated payload for tensor " + name);
            float f;
            std::memcpy(&f, &bits, 4);
            data[i] = f;
        }
        out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    }
    return out;
}

void load_into(const std::string& path, std::vector<std::pair<std::string, Tensor>>& params,
               const std::string& prefix) {
    auto file = load_checkpoint(path);
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : file) by_name[name] = &t;
    for (auto& [name, p] : params) {
        if (name.rfind(prefix, 0) != 0) continue;
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw IoError("checkpoint " + path + " is missing tensor " + name);
        const Tensor& src = *it->second;
        if (src.shape() != p.shape())
            throw ShapeError("checkpoint tensor " + name + " has shape " +
                             shape_str(src.shape()) + ", model expects " + shape_str(p.shape()));
        std::copy(src.data(), src.data() + src.numel(), p.data());
    }
}

}  // namespace caplab
