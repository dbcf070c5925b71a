#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gsr/common.hpp"
#include "gsr/tensor.hpp"

namespace gsr {

// Named-tensor container, also used as the checkpoint format.
//
// On-disk layout (little-endian):
//   magic "PLAM" | u32 version | u32 config bytes | config ("key=value\n" lines)
//   | u32 tensor count | per tensor: u16 name len, name, u32 dtype, u32 rank,
//   u64 dims[rank], u64 payload offset, u64 payload bytes
//   | u64 payload size | payload | u32 CRC32 of everything before it
//
// Entry order is preserved, so save -> load -> save is byte-identical.
class Bundle {
public:
    enum class DType : uint32_t { F32 = 0, F64 = 1, U32 = 2 };

    struct Entry {
        std::string name;
        DType dtype;
        std::vector<size_t> dims;
        std::vector<uint8_t> bytes;
    };

    static constexpr uint32_t kVersion = 1;

    void put_f32(const std::string& name, std::vector<size_t> dims, const float* data);
    void put_f64(const std::string& name, std::vector<size_t> dims, const double* data);
    void put_u32(const std::string& name, std::vector<size_t> dims, const uint32_t* data);

    template <class S>
    void put_tensor(const std::string& name, const Tensor<S>& t);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Entry& entry(const std::string& name) const;
    std::vector<std::string> names() const;
    size_t tensor_count() const { return entries_.size(); }

    // Reads a tensor, converting between f32/f64 as needed.
    template <class S>
    Tensor<S> get_tensor(const std::string& name) const;
    std::vector<uint32_t> get_u32(const std::string& name) const;

    // Config block: ordered key=value strings.
    void set_config(const std::string& key, const std::string& value);
    bool has_config(const std::string& key) const { return config_.count(key) != 0; }
    const std::string& config(const std::string& key) const;
    const std::map<std::string, std::string>& config_map() const { return config_; }

    std::vector<uint8_t> serialize() const;
    static Bundle deserialize(const std::vector<uint8_t>& bytes);

    void save(const std::string& path) const;
    static Bundle load(const std::string& path);

    // True if the file at path starts with the bundle magic.
    static bool sniff(const std::string& path);

private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
    std::map<std::string, std::string> config_;
};

} // namespace gsr
