#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gsr/common.hpp"
#include "gsr/vec.hpp"

namespace gsr {

// Vertex count of the full-head template this pipeline is normally driven by.
// The template asset itself is licensed and not bundled; any triangle mesh is
// accepted and all table sizes adapt to it.
inline constexpr size_t kHeadTemplateVertexCount = 5023;

struct CanonicalMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> faces;

    size_t vertex_count() const { return vertices.size(); }
    size_t face_count() const { return faces.size(); }

    double face_area(size_t f) const;

    // Face indices in range and no face with area <= 1e-12.
    void validate() const;
};

// Reads an OBJ subset (v/f lines, 1-based indices, triangles only) or a
// binary mesh bundle with "vertices" (N x 3, f64) and "faces" (F x 3, u32).
CanonicalMesh load_mesh(const std::string& path);
void save_mesh_binary(const std::string& path, const CanonicalMesh& mesh);

// Unit-icosahedron subdivided `subdivisions` times, scaled to `radius`.
// 3 subdivisions give 642 vertices / 1280 faces.
CanonicalMesh make_icosphere(int subdivisions, double radius);

} // namespace gsr
