#include "gsr/bundle.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace gsr {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'A', 'M'};

void append_raw(std::vector<uint8_t>& out, const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

template <class T>
void append_le(std::vector<uint8_t>& out, T v) {
    // Host is little-endian on every supported target; write bytes directly.
    append_raw(out, &v, sizeof(T));
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw IoError(msg("bundle: truncated while reading ", what, " at offset ", pos));
    }
    template <class T>
    T read(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::vector<uint8_t> read_bytes(size_t n, const char* what) {
        need(n, what);
        std::vector<uint8_t> v(bytes.begin() + pos, bytes.begin() + pos + n);
        pos += n;
        return v;
    }
};

size_t dtype_size(Bundle::DType t) {
    switch (t) {
    case Bundle::DType::F32: return 4;
    case Bundle::DType::F64: return 8;
    case Bundle::DType::U32: return 4;
    }
    throw IoError("bundle: unknown dtype");
}

} // namespace

void Bundle::put_f32(const std::string& name, std::vector<size_t> dims, const float* data) {
    if (index_.count(name)) throw ContractError(msg("bundle: duplicate tensor '", name, "'"));
    Entry e;
    e.name = name;
    e.dtype = DType::F32;
    e.dims = std::move(dims);
    e.bytes.resize(shape_numel(e.dims) * 4);
    std::memcpy(e.bytes.data(), data, e.bytes.size());
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
}

void Bundle::put_f64(const std::string& name, std::vector<size_t> dims, const double* data) {
    if (index_.count(name)) throw ContractError(msg("bundle: duplicate tensor '", name, "'"));
    Entry e;
    e.name = name;
    e.dtype = DType::F64;
    e.dims = std::move(dims);
    e.bytes.resize(shape_numel(e.dims) * 8);
    std::memcpy(e.bytes.data(), data, e.bytes.size());
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
}

void Bundle::put_u32(const std::string& name, std::vector<size_t> dims, const uint32_t* data) {
    if (index_.count(name)) throw ContractError(msg("bundle: duplicate tensor '", name, "'"));
    Entry e;
    e.name = name;
    e.dtype = DType::U32;
    e.dims = std::move(dims);
    e.bytes.resize(shape_numel(e.dims) * 4);
    std::memcpy(e.bytes.data(), data, e.bytes.size());
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
}

template <>
void Bundle::put_tensor<float>(const std::string& name, const Tensor<float>& t) {
    put_f32(name, t.shape(), t.data());
}

template <>
void Bundle::put_tensor<double>(const std::string& name, const Tensor<double>& t) {
    put_f64(name, t.shape(), t.data());
}

const Bundle::Entry& Bundle::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw IoError(msg("bundle: missing tensor '", name, "'"));
    return entries_[it->second];
}

std::vector<std::string> Bundle::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.name);
    return out;
}

template <class S>
Tensor<S> Bundle::get_tensor(const std::string& name) const {
    const Entry& e = entry(name);
    size_t n = shape_numel(e.dims);
    std::vector<S> values(n);
    if (e.dtype == DType::F32) {
        const float* src = reinterpret_cast<const float*>(e.bytes.data());
        for (size_t i = 0; i < n; ++i) values[i] = static_cast<S>(src[i]);
    } else if (e.dtype == DType::F64) {
        const double* src = reinterpret_cast<const double*>(e.bytes.data());
        for (size_t i = 0; i < n; ++i) values[i] = static_cast<S>(src[i]);
    } else {
        throw IoError(msg("bundle: tensor '", name, "' is not floating point"));
    }
    return Tensor<S>(e.dims, std::move(values));
}

template Tensor<float> Bundle::get_tensor<float>(const std::string&) const;
template Tensor<double> Bundle::get_tensor<double>(const std::string&) const;

std::vector<uint32_t> Bundle::get_u32(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != DType::U32)
        throw IoError(msg("bundle: tensor '", name, "' is not u32"));
    size_t n = shape_numel(e.dims);
    std::vector<uint32_t> values(n);
    std::memcpy(values.data(), e.bytes.data(), n * 4);
    return values;
}

void Bundle::set_config(const std::string& key, const std::string& value) {
    config_[key] = value;
}

const std::string& Bundle::config(const std::string& key) const {
    auto it = config_.find(key);
    if (it == config_.end()) throw IoError(msg("bundle: missing config key '", key, "'"));
    return it->second;
}

std::vector<uint8_t> Bundle::serialize() const {
    std::vector<uint8_t> out;
    append_raw(out, kMagic, 4);
    append_le<uint32_t>(out, kVersion);

    std::string cfg;
    for (const auto& [k, v] : config_) cfg += k + "=" + v + "\n";
    append_le<uint32_t>(out, static_cast<uint32_t>(cfg.size()));
    append_raw(out, cfg.data(), cfg.size());

    append_le<uint32_t>(out, static_cast<uint32_t>(entries_.size()));
    uint64_t offset = 0;
    for (const Entry& e : entries_) {
        append_le<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
        append_raw(out, e.name.data(), e.name.size());
        append_le<uint32_t>(out, static_cast<uint32_t>(e.dtype));
        append_le<uint32_t>(out, static_cast<uint32_t>(e.dims.size()));
        for (size_t d : e.dims) append_le<uint64_t>(out, d);
        append_le<uint64_t>(out, offset);
        append_le<uint64_t>(out, e.bytes.size());
        offset += e.bytes.size();
    }
    append_le<uint64_t>(out, offset);
    for (const Entry& e : entries_) append_raw(out, e.bytes.data(), e.bytes.size());

    uint32_t crc = static_cast<uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    append_le<uint32_t>(out, crc);
    return out;
}

Bundle Bundle::deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4 + 4 + 4)
        throw IoError(msg("bundle: truncated header, file is only ", bytes.size(), " bytes"));
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError("bundle: bad magic at offset 0");

    // The trailing CRC covers everything before it.
    if (bytes.size() < 4) throw IoError("bundle: missing checksum");
    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    uint32_t actual_crc = static_cast<uint32_t>(crc32(
        0, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
    if (stored_crc != actual_crc)
        throw IoError(msg("bundle: checksum mismatch at offset ", bytes.size() - 4,
                          " (stored ", stored_crc, ", actual ", actual_crc, ")"));

    Reader r{bytes, 4};
    uint32_t version = r.read<uint32_t>("version");
    if (version != kVersion)
        throw IoError(msg("bundle: unsupported version ", version, " at offset 4"));

    Bundle b;
    uint32_t cfg_len = r.read<uint32_t>("config length");
    std::vector<uint8_t> cfg = r.read_bytes(cfg_len, "config block");
    std::string line;
    for (size_t i = 0; i < cfg.size(); ++i) {
        char c = static_cast<char>(cfg[i]);
        if (c == '\n') {
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw IoError(msg("bundle: malformed config line '", line, "'"));
            b.config_[line.substr(0, eq)] = line.substr(eq + 1);
            line.clear();
        } else {
            line += c;
        }
    }

    uint32_t count = r.read<uint32_t>("tensor count");
    struct Dir {
        std::string name;
        DType dtype;
        std::vector<size_t> dims;
        uint64_t offset, size;
    };
    std::vector<Dir> dir(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = r.read<uint16_t>("name length");
        std::vector<uint8_t> name = r.read_bytes(name_len, "name");
        dir[i].name.assign(name.begin(), name.end());
        uint32_t dtype = r.read<uint32_t>("dtype");
        if (dtype > 2) throw IoError(msg("bundle: unknown dtype ", dtype, " at offset ", r.pos));
        dir[i].dtype = static_cast<DType>(dtype);
        uint32_t rank = r.read<uint32_t>("rank");
        dir[i].dims.resize(rank);
        for (uint32_t d = 0; d < rank; ++d)
            dir[i].dims[d] = static_cast<size_t>(r.read<uint64_t>("dim"));
        dir[i].offset = r.read<uint64_t>("offset");
        dir[i].size = r.read<uint64_t>("size");
    }
    uint64_t payload_size = r.read<uint64_t>("payload size");
    size_t payload_start = r.pos;
    r.need(payload_size, "payload");
    for (const Dir& d : dir) {
        if (d.offset + d.size > payload_size)
            throw IoError(msg("bundle: tensor '", d.name, "' overruns payload at offset ",
                              payload_start + d.offset));
        if (d.size != shape_numel(d.dims) * dtype_size(d.dtype))
            throw IoError(msg("bundle: tensor '", d.name, "' byte size ", d.size,
                              " does not match its dims"));
        Entry e;
        e.name = d.name;
        e.dtype = d.dtype;
        e.dims = d.dims;
        e.bytes.assign(bytes.begin() + payload_start + d.offset,
                       bytes.begin() + payload_start + d.offset + d.size);
        if (b.index_.count(e.name))
            throw IoError(msg("bundle: duplicate tensor '", e.name, "'"));
        b.index_[e.name] = b.entries_.size();
        b.entries_.push_back(std::move(e));
    }
    return b;
}

void Bundle::save(const std::string& path) const {
    std::vector<uint8_t> bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(msg("bundle: cannot open '", path, "' for writing"));
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(msg("bundle: write failed for '", path, "'"));
}

Bundle Bundle::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(msg("bundle: cannot open '", path, "'"));
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    try {
        return deserialize(bytes);
    } catch (const IoError& e) {
        throw IoError(msg("bundle: '", path, "': ", e.what()));
    }
}

bool Bundle::sniff(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return false;
    char magic[4] = {};
    f.read(magic, 4);
    return f && std::memcmp(magic, kMagic, 4) == 0;
}

} // namespace gsr
