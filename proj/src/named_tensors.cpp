#include "glyphdiff/named_tensors.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "glyphdiff/hash.hpp"

namespace glyphdiff {

namespace {
constexpr char kMagic[8] = {'G', 'D', 'N', 'T', '0', '0', '0', '1'};

void put_bytes(std::string& buf, const void* p, size_t n) {
    buf.append((const char*)p, n);
}
void put_u32(std::string& buf, uint32_t v) { put_bytes(buf, &v, 4); }
void put_u64(std::string& buf, uint64_t v) { put_bytes(buf, &v, 8); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void read(void* p, size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("tensor archive truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint32_t u32() { uint32_t v; read(&v, 4); return v; }
    uint64_t u64() { uint64_t v; read(&v, 8); return v; }
};
}  // namespace

const Tensor& NamedTensors::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("missing tensor: " + name);
    return it->second;
}

void NamedTensors::save(const std::string& path) const {
    std::string buf;
    put_bytes(buf, kMagic, 8);
    put_u32(buf, (uint32_t)(tensors.size() + blobs.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(buf, (uint32_t)name.size());
        put_bytes(buf, name.data(), name.size());
        buf.push_back((char)0);  // dtype f32
        put_u32(buf, (uint32_t)t.shape.size());
        for (int d : t.shape) put_u32(buf, (uint32_t)d);
        put_bytes(buf, t.data.data(), t.data.size() * sizeof(float));
    }
    for (const auto& [name, b] : blobs) {
        put_u32(buf, (uint32_t)name.size());
        put_bytes(buf, name.data(), name.size());
        buf.push_back((char)1);  // dtype u8 blob
        put_u32(buf, 1);
        put_u32(buf, (uint32_t)b.size());
        put_bytes(buf, b.data(), b.size());
    }
    Fnv1a64 h;
    h.update(buf.data(), buf.size());
    put_u64(buf, h.digest());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(buf.data(), (std::streamsize)buf.size());
    if (!f) throw std::runtime_error("write failed: " + path);
}

NamedTensors NamedTensors::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 20) throw std::runtime_error("tensor archive too small: " + path);

    Fnv1a64 h;
    h.update(buf.data(), buf.size() - 8);
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (stored != h.digest())
        throw std::runtime_error("checksum failure (corrupt archive): " + path);

    Reader r{buf};
    char magic[8];
    r.read(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("bad magic in tensor archive: " + path);

    NamedTensors out;
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.read(name.data(), name_len);
        char dtype;
        r.read(&dtype, 1);
        const uint32_t ndim = r.u32();
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = (int)r.u32();
        if (dtype == 0) {
            Tensor t(shape);
            r.read(t.data.data(), t.data.size() * sizeof(float));
            out.tensors[name] = std::move(t);
        } else if (dtype == 1) {
            std::vector<uint8_t> b((size_t)shape_numel(shape));
            r.read(b.data(), b.size());
            out.blobs[name] = std::move(b);
        } else {
            throw std::runtime_error("unknown dtype in archive: " + path);
        }
    }
    return out;
}

std::string json_sidecar_path(const std::string& archive_path) {
    return archive_path + ".json";
}

}  // namespace glyphdiff
