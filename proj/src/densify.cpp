#include "gsr/densify.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace gsr {

void DensificationTable::validate() const {
    if (entries.size() < source_count)
        throw ContractError(msg("table: ", entries.size(), " entries but source count is ",
                                source_count));
    for (size_t e = 0; e < entries.size(); ++e) {
        const Entry& en = entries[e];
        double sum = 0;
        for (int i = 0; i < 3; ++i) {
            if (en.parents[i] >= source_count)
                throw ContractError(msg("table: entry ", e, " parent ", en.parents[i],
                                        " out of range ", source_count));
            if (en.weights[i] < 0)
                throw ContractError(msg("table: entry ", e, " has negative weight"));
            sum += en.weights[i];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ContractError(msg("table: entry ", e, " weights sum to ", sum));
    }
    for (size_t e = 0; e < source_count; ++e) {
        const Entry& en = entries[e];
        if (en.parents[0] != e || en.weights[0] != 1.0 || en.weights[1] != 0.0 ||
            en.weights[2] != 0.0)
            throw ContractError(msg("table: entry ", e, " is not an identity entry"));
    }
}

namespace {

// A point inside one original face, with exact dyadic barycentric weights
// num[i] / 2^den_log2 over that face's three original vertices.
struct DyadicPoint {
    std::array<uint64_t, 3> num;
    uint32_t den_log2;
};

// Canonical key for deduplication across faces: zero-weight vertices removed,
// numerators reduced, sorted by vertex index.
using PointKey = std::vector<std::pair<uint32_t, uint64_t>>;

PointKey canonical_key(const DyadicPoint& p, const std::array<uint32_t, 3>& verts,
                       uint32_t* den_out) {
    std::array<uint64_t, 3> num = p.num;
    uint32_t den = p.den_log2;
    bool all_even = true;
    while (den > 0 && all_even) {
        for (uint64_t n : num)
            if (n % 2 != 0) all_even = false;
        if (all_even) {
            for (uint64_t& n : num) n /= 2;
            --den;
        }
    }
    PointKey key;
    for (int i = 0; i < 3; ++i)
        if (num[i] != 0) key.emplace_back(verts[i], num[i]);
    std::sort(key.begin(), key.end());
    *den_out = den;
    return key;
}

} // namespace

SubdivisionResult subdivide(const CanonicalMesh& mesh, double area_threshold, int max_depth) {
    if (area_threshold <= 0)
        throw ContractError(msg("subdivide: area threshold must be > 0, got ", area_threshold));
    if (max_depth < 1)
        throw ContractError(msg("subdivide: max depth must be >= 1, got ", max_depth));

    SubdivisionResult result;
    DensificationTable& table = result.table;
    table.source_count = mesh.vertex_count();
    table.entries.reserve(mesh.vertex_count());
    for (size_t i = 0; i < mesh.vertex_count(); ++i)
        table.entries.push_back({{static_cast<uint32_t>(i), static_cast<uint32_t>(i),
                                  static_cast<uint32_t>(i)},
                                 {1.0, 0.0, 0.0},
                                 0});

    // Key space includes den so e.g. (1,1)/2 and (1,1)/4... cannot collide;
    // the pair (key, den) identifies the point exactly.
    std::map<std::pair<PointKey, uint32_t>, uint32_t> seen;
    for (size_t i = 0; i < mesh.vertex_count(); ++i) {
        PointKey key{{static_cast<uint32_t>(i), 1}};
        seen.emplace(std::make_pair(std::move(key), 0u), static_cast<uint32_t>(i));
    }

    struct Task {
        uint32_t orig_face;
        std::array<DyadicPoint, 3> corners;
        std::array<uint32_t, 3> corner_ids; // global table indices
        uint32_t depth;
    };

    auto corner_position = [&](uint32_t orig_face, const DyadicPoint& p) {
        const auto& tri = mesh.faces[orig_face];
        double inv = 1.0 / static_cast<double>(uint64_t(1) << p.den_log2);
        Vec3 pos{};
        for (int i = 0; i < 3; ++i)
            pos = pos + mesh.vertices[tri[i]] * (static_cast<double>(p.num[i]) * inv);
        return pos;
    };

    auto intern = [&](uint32_t orig_face, const DyadicPoint& p, uint32_t depth) -> uint32_t {
        uint32_t den;
        PointKey key = canonical_key(p, mesh.faces[orig_face], &den);
        auto it = seen.find(std::make_pair(key, den));
        if (it != seen.end()) return it->second;
        uint32_t idx = static_cast<uint32_t>(table.entries.size());
        double inv = 1.0 / static_cast<double>(uint64_t(1) << p.den_log2);
        DensificationTable::Entry entry;
        entry.parents = mesh.faces[orig_face];
        for (int i = 0; i < 3; ++i)
            entry.weights[i] = static_cast<double>(p.num[i]) * inv;
        entry.depth = depth;
        table.entries.push_back(entry);
        seen.emplace(std::make_pair(std::move(key), den), idx);
        return idx;
    };

    std::vector<Task> current;
    current.reserve(mesh.face_count());
    for (size_t f = 0; f < mesh.face_count(); ++f) {
        Task t;
        t.orig_face = static_cast<uint32_t>(f);
        t.corners = {DyadicPoint{{1, 0, 0}, 0}, DyadicPoint{{0, 1, 0}, 0},
                     DyadicPoint{{0, 0, 1}, 0}};
        t.corner_ids = mesh.faces[f];
        t.depth = 0;
        current.push_back(t);
    }

    // Breadth-first over levels so table entries appear in depth order.
    while (!current.empty()) {
        std::vector<Task> next;
        for (const Task& t : current) {
            Vec3 a = corner_position(t.orig_face, t.corners[0]);
            Vec3 b = corner_position(t.orig_face, t.corners[1]);
            Vec3 c = corner_position(t.orig_face, t.corners[2]);
            double area = 0.5 * (b - a).cross(c - a).norm();
            if (area <= area_threshold) {
                result.faces.push_back(t.corner_ids);
                continue;
            }
            if (t.depth >= static_cast<uint32_t>(max_depth)) {
                result.faces.push_back(t.corner_ids);
                ++result.oversized_faces;
                continue;
            }
            auto midpoint = [&](const DyadicPoint& p, const DyadicPoint& q) {
                uint32_t den = std::max(p.den_log2, q.den_log2);
                DyadicPoint m;
                m.den_log2 = den + 1;
                for (int i = 0; i < 3; ++i) {
                    uint64_t pn = p.num[i] << (den - p.den_log2);
                    uint64_t qn = q.num[i] << (den - q.den_log2);
                    m.num[i] = pn + qn;
                }
                return m;
            };
            DyadicPoint m01 = midpoint(t.corners[0], t.corners[1]);
            DyadicPoint m12 = midpoint(t.corners[1], t.corners[2]);
            DyadicPoint m20 = midpoint(t.corners[2], t.corners[0]);
            uint32_t depth = t.depth + 1;
            uint32_t i01 = intern(t.orig_face, m01, depth);
            uint32_t i12 = intern(t.orig_face, m12, depth);
            uint32_t i20 = intern(t.orig_face, m20, depth);

            auto push = [&](const DyadicPoint& pa, uint32_t ia, const DyadicPoint& pb,
                            uint32_t ib, const DyadicPoint& pc, uint32_t ic) {
                next.push_back(Task{t.orig_face, {pa, pb, pc}, {ia, ib, ic}, depth});
            };
            push(t.corners[0], t.corner_ids[0], m01, i01, m20, i20);
            push(t.corners[1], t.corner_ids[1], m12, i12, m01, i01);
            push(t.corners[2], t.corner_ids[2], m20, i20, m12, i12);
            push(m01, i01, m12, i12, m20, i20);
        }
        current = std::move(next);
    }
    return result;
}

DensificationTable cap_table(const DensificationTable& table, size_t max_dense) {
    DensificationTable out;
    out.source_count = table.source_count;
    size_t keep = std::max(table.source_count, std::min(max_dense, table.entries.size()));
    out.entries.assign(table.entries.begin(),
                       table.entries.begin() + static_cast<ptrdiff_t>(keep));
    return out;
}

namespace {

constexpr char kTableMagic[4] = {'P', 'L', 'D', 'T'};
constexpr uint32_t kTableVersion = 1;

} // namespace

void save_table(const std::string& path, const DensificationTable& table) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(msg("table: cannot open '", path, "' for writing"));
    f.write(kTableMagic, 4);
    auto write_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    write_u32(kTableVersion);
    write_u32(static_cast<uint32_t>(table.source_count));
    write_u32(static_cast<uint32_t>(table.entries.size()));
    for (const auto& e : table.entries) {
        for (uint32_t p : e.parents) write_u32(p);
        for (double w : e.weights) {
            float wf = static_cast<float>(w);
            f.write(reinterpret_cast<const char*>(&wf), 4);
        }
    }
    if (!f) throw IoError(msg("table: write failed for '", path, "'"));
}

DensificationTable load_table(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(msg("table: cannot open '", path, "'"));
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kTableMagic, 4) != 0)
        throw IoError(msg("table: '", path, "': bad magic at offset 0"));
    auto read_u32 = [&](const char* what) {
        uint32_t v;
        f.read(reinterpret_cast<char*>(&v), 4);
        if (!f) throw IoError(msg("table: '", path, "': truncated while reading ", what));
        return v;
    };
    uint32_t version = read_u32("version");
    if (version != kTableVersion)
        throw IoError(msg("table: '", path, "': unsupported version ", version));
    DensificationTable table;
    table.source_count = read_u32("source count");
    uint32_t dense = read_u32("dense count");
    table.entries.resize(dense);
    for (uint32_t e = 0; e < dense; ++e) {
        for (int i = 0; i < 3; ++i) table.entries[e].parents[i] = read_u32("parent");
        for (int i = 0; i < 3; ++i) {
            float w;
            f.read(reinterpret_cast<char*>(&w), 4);
            if (!f) throw IoError(msg("table: '", path, "': truncated while reading weight"));
            table.entries[e].weights[i] = w;
        }
        table.entries[e].depth = 0;
    }
    table.validate();
    return table;
}

template <class S>
Tensor<S> densify(const DensificationTable& table, const Tensor<S>& src) {
    if (src.rank() != 2 || src.dim(0) != table.source_count)
        throw ShapeError(msg("densify: source ", shape_str(src.shape()),
                             " does not match table source count ", table.source_count));
    size_t dense = table.dense_count(), channels = src.dim(1);
    std::vector<S> out(dense * channels);
    const S* p = src.data();
    for (size_t e = 0; e < dense; ++e) {
        const auto& en = table.entries[e];
        // Identity entries must reproduce inputs bit-exactly, so the gather
        // short-circuits the weight-1 case.
        if (en.weights[0] == 1.0 && en.weights[1] == 0.0 && en.weights[2] == 0.0) {
            std::copy(p + en.parents[0] * channels, p + (en.parents[0] + 1) * channels,
                      out.begin() + static_cast<ptrdiff_t>(e * channels));
            continue;
        }
        S* row = out.data() + e * channels;
        for (size_t c = 0; c < channels; ++c) {
            row[c] = static_cast<S>(en.weights[0]) * p[en.parents[0] * channels + c] +
                     static_cast<S>(en.weights[1]) * p[en.parents[1] * channels + c] +
                     static_cast<S>(en.weights[2]) * p[en.parents[2] * channels + c];
        }
    }
    Tape<S>* tape = src.tape();
    if (!tape) return Tensor<S>({dense, channels}, std::move(out));
    int ns = src.node();
    // The closure may outlive the caller's table; keep its own copy.
    auto entries =
        std::make_shared<std::vector<DensificationTable::Entry>>(table.entries);
    return tape->record({dense, channels}, std::move(out), {ns},
                        [ns, entries, dense, channels](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            auto& gs = t.grad_buffer(ns);
                            for (size_t e = 0; e < dense; ++e) {
                                const auto& en = (*entries)[e];
                                for (int i = 0; i < 3; ++i) {
                                    S w = static_cast<S>(en.weights[i]);
                                    if (w == S(0)) continue;
                                    S* dst = gs.data() + en.parents[i] * channels;
                                    const S* gr = g.data() + e * channels;
                                    for (size_t c = 0; c < channels; ++c) dst[c] += w * gr[c];
                                }
                            }
                            t.mark_live(ns);
                        });
}

template Tensor<float> densify<float>(const DensificationTable&, const Tensor<float>&);
template Tensor<double> densify<double>(const DensificationTable&, const Tensor<double>&);

} // namespace gsr
