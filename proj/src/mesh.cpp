#include "gsr/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "gsr/bundle.hpp"

namespace gsr {

double CanonicalMesh::face_area(size_t f) const {
    const auto& tri = faces[f];
    Vec3 a = vertices[tri[0]], b = vertices[tri[1]], c = vertices[tri[2]];
    return 0.5 * (b - a).cross(c - a).norm();
}

void CanonicalMesh::validate() const {
    for (size_t f = 0; f < faces.size(); ++f) {
        for (uint32_t idx : faces[f]) {
            if (idx >= vertices.size())
                throw ContractError(msg("mesh: face ", f, " references vertex ", idx,
                                        " but there are only ", vertices.size()));
        }
        if (face_area(f) <= 1e-12)
            throw ContractError(msg("mesh: face ", f, " is degenerate (area <= 1e-12)"));
    }
}

namespace {

CanonicalMesh load_obj(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError(msg("mesh: cannot open '", path, "'"));
    CanonicalMesh mesh;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string head;
        if (!(ss >> head) || head[0] == '#') continue;
        if (head == "v") {
            Vec3 v;
            if (!(ss >> v.x >> v.y >> v.z))
                throw ParseError(msg("mesh: '", path, "' line ", line_no,
                                     ": malformed vertex line"));
            mesh.vertices.push_back(v);
        } else if (head == "f") {
            std::array<uint32_t, 3> tri{};
            std::string tok;
            int n = 0;
            while (ss >> tok) {
                if (n >= 3)
                    throw ParseError(msg("mesh: '", path, "' line ", line_no,
                                         ": only triangles are supported"));
                // Accept "i", "i/t" and "i/t/n" forms; only the vertex index is used.
                size_t slash = tok.find('/');
                std::string idx_str = slash == std::string::npos ? tok : tok.substr(0, slash);
                long idx = 0;
                auto [p, ec] = std::from_chars(idx_str.data(), idx_str.data() + idx_str.size(),
                                               idx);
                if (ec != std::errc() || p != idx_str.data() + idx_str.size())
                    throw ParseError(msg("mesh: '", path, "' line ", line_no,
                                         ": malformed face index '", tok, "'"));
                if (idx < 1 || static_cast<size_t>(idx) > mesh.vertices.size())
                    throw ParseError(msg("mesh: '", path, "' line ", line_no,
                                         ": vertex index ", idx, " out of range 1..",
                                         mesh.vertices.size()));
                tri[static_cast<size_t>(n++)] = static_cast<uint32_t>(idx - 1);
            }
            if (n != 3)
                throw ParseError(msg("mesh: '", path, "' line ", line_no,
                                     ": face needs 3 indices, got ", n));
            mesh.faces.push_back(tri);
        }
        // Other directives (vn, vt, o, g, s, usemtl, ...) are ignored.
    }
    return mesh;
}

CanonicalMesh load_binary(const std::string& path) {
    Bundle b = Bundle::load(path);
    Tensor<double> verts = b.get_tensor<double>("vertices");
    std::vector<uint32_t> faces = b.get_u32("faces");
    if (verts.rank() != 2 || verts.dim(1) != 3)
        throw ParseError(msg("mesh: '", path, "': vertices tensor must be N x 3, got ",
                             shape_str(verts.shape())));
    if (faces.size() % 3 != 0)
        throw ParseError(msg("mesh: '", path, "': face index count ", faces.size(),
                             " is not a multiple of 3"));
    CanonicalMesh mesh;
    mesh.vertices.resize(verts.dim(0));
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
        mesh.vertices[i] = {verts(i, 0), verts(i, 1), verts(i, 2)};
    mesh.faces.resize(faces.size() / 3);
    for (size_t i = 0; i < mesh.faces.size(); ++i)
        mesh.faces[i] = {faces[3 * i], faces[3 * i + 1], faces[3 * i + 2]};
    return mesh;
}

} // namespace

CanonicalMesh load_mesh(const std::string& path) {
    CanonicalMesh mesh = Bundle::sniff(path) ? load_binary(path) : load_obj(path);
    try {
        mesh.validate();
    } catch (const ContractError& e) {
        throw ParseError(msg("mesh: '", path, "': ", e.what()));
    }
    return mesh;
}

void save_mesh_binary(const std::string& path, const CanonicalMesh& mesh) {
    Bundle b;
    std::vector<double> verts(mesh.vertex_count() * 3);
    for (size_t i = 0; i < mesh.vertex_count(); ++i) {
        verts[3 * i] = mesh.vertices[i].x;
        verts[3 * i + 1] = mesh.vertices[i].y;
        verts[3 * i + 2] = mesh.vertices[i].z;
    }
    std::vector<uint32_t> faces(mesh.face_count() * 3);
    for (size_t i = 0; i < mesh.face_count(); ++i)
        for (size_t j = 0; j < 3; ++j) faces[3 * i + j] = mesh.faces[i][j];
    b.put_f64("vertices", {mesh.vertex_count(), 3}, verts.data());
    b.put_u32("faces", {mesh.face_count(), 3}, faces.data());
    b.save(path);
}

CanonicalMesh make_icosphere(int subdivisions, double radius) {
    if (subdivisions < 0 || radius <= 0)
        throw ContractError("icosphere: subdivisions must be >= 0 and radius > 0");
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    CanonicalMesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                  {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                  {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (Vec3& v : m.vertices) v = v.normalized();

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint;
        auto mid = [&](uint32_t a, uint32_t b) -> uint32_t {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 p = ((m.vertices[a] + m.vertices[b]) * 0.5).normalized();
            uint32_t idx = static_cast<uint32_t>(m.vertices.size());
            m.vertices.push_back(p);
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<uint32_t, 3>> next;
        next.reserve(m.faces.size() * 4);
        for (const auto& f : m.faces) {
            uint32_t m01 = mid(f[0], f[1]);
            uint32_t m12 = mid(f[1], f[2]);
            uint32_t m20 = mid(f[2], f[0]);
            next.push_back({f[0], m01, m20});
            next.push_back({f[1], m12, m01});
            next.push_back({f[2], m20, m12});
            next.push_back({m01, m12, m20});
        }
        m.faces = std::move(next);
    }
    for (Vec3& v : m.vertices) v = v * radius;
    return m;
}

} // namespace gsr
