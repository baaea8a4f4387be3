#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsm/tensor.hpp"

namespace lsm {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2, I64 = 3 };

struct CheckpointEntry {
    DType dtype = DType::F64;
    bool frozen = false;
    bool buffer = false; // non-trainable state such as prototypes or optimizer moments
    std::vector<std::uint64_t> dims;
    std::vector<double> f64;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
    std::vector<std::int64_t> i64;
};

/// Named tensor container. On disk (little-endian):
///   "LSMA" | u32 version | u32 count
///   count x { u32 name_len | name | u8 dtype | u8 flags | u32 rank | u64 dims[rank] | u64 offset }
///   payloads (offsets relative to the first payload byte) | u32 crc32 of everything before it
/// Entries are written in name order, so equal contents give equal bytes.
class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    void put(const std::string& name, const Tensor& t, bool frozen = false, bool buffer = false);
    void put_text(const std::string& name, const std::string& text);
    void put_i64(const std::string& name, const std::vector<std::int64_t>& values);

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    /// Throws MissingComponent for an absent name, InvalidArgument for the wrong dtype.
    Tensor tensor(const std::string& name) const;
    std::string text(const std::string& name) const;
    std::vector<std::int64_t> i64(const std::string& name) const;
    const CheckpointEntry& entry(const std::string& name) const;
    const std::map<std::string, CheckpointEntry>& entries() const { return entries_; }

    std::vector<std::uint8_t> serialize() const;
    /// Throws VersionMismatch or CorruptFile.
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

private:
    std::map<std::string, CheckpointEntry> entries_;
};

/// Throws IoError on filesystem failure.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace lsm
