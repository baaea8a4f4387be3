#include "lsm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "lsm/error.hpp"

namespace lsm {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'M', 'A'};

class Writer {
public:
    void u8(std::uint8_t v) { out.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& b, std::size_t end) : buf(b), limit(end) {}
    void need(std::size_t n) const {
        if (pos + n > limit) throw Error(ErrorCode::CorruptFile, "checkpoint is truncated");
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos++]) << (8 * i);
        return v;
    }
    const std::vector<std::uint8_t>& buf;
    std::size_t limit;
    std::size_t pos = 0;
};

std::size_t element_size(DType d) {
    switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
    case DType::I64: return 8;
    }
    throw Error(ErrorCode::CorruptFile, "unknown dtype");
}

std::uint64_t elements(const std::vector<std::uint64_t>& dims) {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

void payload(Writer& w, const CheckpointEntry& e) {
    switch (e.dtype) {
    case DType::F64:
        for (double v : e.f64) w.u64(std::bit_cast<std::uint64_t>(v));
        break;
    case DType::F32:
        for (float v : e.f32) w.u32(std::bit_cast<std::uint32_t>(v));
        break;
    case DType::U8: w.bytes(e.u8.data(), e.u8.size()); break;
    case DType::I64:
        for (std::int64_t v : e.i64) w.u64(static_cast<std::uint64_t>(v));
        break;
    }
}

} // namespace

void Checkpoint::put(const std::string& name, const Tensor& t, bool frozen, bool buffer) {
    CheckpointEntry e;
    e.dtype = DType::F64;
    e.frozen = frozen;
    e.buffer = buffer;
    for (int d : t.shape) e.dims.push_back(static_cast<std::uint64_t>(d));
    e.f64 = t.data;
    entries_[name] = std::move(e);
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
    CheckpointEntry e;
    e.dtype = DType::U8;
    e.buffer = true;
    e.dims = {text.size()};
    e.u8.assign(text.begin(), text.end());
    entries_[name] = std::move(e);
}

void Checkpoint::put_i64(const std::string& name, const std::vector<std::int64_t>& values) {
    CheckpointEntry e;
    e.dtype = DType::I64;
    e.buffer = true;
    e.dims = {values.size()};
    e.i64 = values;
    entries_[name] = std::move(e);
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorCode::MissingComponent, "checkpoint has no entry '" + name + "'");
    return it->second;
}

Tensor Checkpoint::tensor(const std::string& name) const {
    const CheckpointEntry& e = entry(name);
    std::vector<int> shape;
    for (std::uint64_t d : e.dims) shape.push_back(static_cast<int>(d));
    if (e.dtype == DType::F64) return Tensor(shape, e.f64);
    if (e.dtype == DType::F32) return Tensor(shape, std::vector<double>(e.f32.begin(), e.f32.end()));
    throw Error(ErrorCode::InvalidArgument, "'" + name + "' is not a floating-point tensor");
}

std::string Checkpoint::text(const std::string& name) const {
    const CheckpointEntry& e = entry(name);
    require(e.dtype == DType::U8, ErrorCode::InvalidArgument, "'" + name + "' is not a byte entry");
    return std::string(e.u8.begin(), e.u8.end());
}

std::vector<std::int64_t> Checkpoint::i64(const std::string& name) const {
    const CheckpointEntry& e = entry(name);
    require(e.dtype == DType::I64, ErrorCode::InvalidArgument, "'" + name + "' is not an i64 entry");
    return e.i64;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    Writer head, body;
    head.bytes(kMagic, 4);
    head.u32(kVersion);
    head.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
        head.u32(static_cast<std::uint32_t>(name.size()));
        head.bytes(name.data(), name.size());
        head.u8(static_cast<std::uint8_t>(e.dtype));
        head.u8(static_cast<std::uint8_t>((e.frozen ? 1 : 0) | (e.buffer ? 2 : 0)));
        head.u32(static_cast<std::uint32_t>(e.dims.size()));
        for (std::uint64_t d : e.dims) head.u64(d);
        head.u64(body.out.size());
        payload(body, e);
    }
    std::vector<std::uint8_t> out = std::move(head.out);
    out.insert(out.end(), body.out.begin(), body.out.end());
    const std::uint32_t c = crc(out.data(), out.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(c >> (8 * i)));
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16) throw Error(ErrorCode::CorruptFile, "checkpoint is truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorCode::CorruptFile, "bad magic");
    const std::size_t body_end = bytes.size() - 4;
    Reader r(bytes, body_end);
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw Error(ErrorCode::VersionMismatch,
                    "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body_end + i]) << (8 * i);
    if (stored != crc(bytes.data(), body_end)) throw Error(ErrorCode::CorruptFile, "checksum mismatch");

    const std::uint32_t count = r.u32();
    struct Pending {
        std::string name;
        CheckpointEntry entry;
        std::uint64_t offset;
    };
    std::vector<Pending> pending;
    for (std::uint32_t i = 0; i < count; ++i) {
        Pending p;
        const std::uint32_t len = r.u32();
        r.need(len);
        p.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
        r.pos += len;
        const std::uint8_t dt = r.u8();
        if (dt > 3) throw Error(ErrorCode::CorruptFile, "unknown dtype code");
        p.entry.dtype = static_cast<DType>(dt);
        const std::uint8_t flags = r.u8();
        p.entry.frozen = flags & 1;
        p.entry.buffer = flags & 2;
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw Error(ErrorCode::CorruptFile, "implausible rank");
        for (std::uint32_t k = 0; k < rank; ++k) p.entry.dims.push_back(r.u64());
        p.offset = r.u64();
        pending.push_back(std::move(p));
    }
    const std::size_t base = r.pos;
    Checkpoint ck;
    for (Pending& p : pending) {
        const std::uint64_t n = elements(p.entry.dims);
        const std::size_t es = element_size(p.entry.dtype);
        if (n > body_end || p.offset > body_end - base || n * es > body_end - base - p.offset)
            throw Error(ErrorCode::CorruptFile, "payload of '" + p.name + "' is out of bounds");
        Reader pr(bytes, body_end);
        pr.pos = base + p.offset;
        CheckpointEntry& e = p.entry;
        switch (e.dtype) {
        case DType::F64:
            e.f64.resize(n);
            for (auto& v : e.f64) v = std::bit_cast<double>(pr.u64());
            break;
        case DType::F32:
            e.f32.resize(n);
            for (auto& v : e.f32) v = std::bit_cast<float>(pr.u32());
            break;
        case DType::U8:
            e.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pr.pos),
                        bytes.begin() + static_cast<std::ptrdiff_t>(pr.pos + n));
            break;
        case DType::I64:
            e.i64.resize(n);
            for (auto& v : e.i64) v = static_cast<std::int64_t>(pr.u64());
            break;
        }
        ck.entries_[p.name] = std::move(e);
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const auto bytes = ckpt.serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot read " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return Checkpoint::deserialize(bytes);
}

} // namespace lsm
