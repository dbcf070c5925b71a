#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gsr/mesh.hpp"
#include "gsr/tensor.hpp"

namespace gsr {

// Network-free upsampler: each dense point is a barycentric combination of
// three source-mesh vertices. The first source_count entries are identity
// entries so the original points are always preserved.
struct DensificationTable {
    struct Entry {
        std::array<uint32_t, 3> parents;
        std::array<double, 3> weights;
        uint32_t depth; // subdivision level this point first appeared at
    };

    std::vector<Entry> entries;
    size_t source_count = 0; // M_C

    size_t dense_count() const { return entries.size(); } // M_D

    // Weights sum to 1 (1e-9), parents in range, identity prefix intact.
    void validate() const;
};

struct SubdivisionResult {
    DensificationTable table;
    // Implied triangulation over table entries after subdivision.
    std::vector<std::array<uint32_t, 3>> faces;
    // Faces still above the area threshold when max_depth was hit.
    size_t oversized_faces = 0;
};

// 1:4 midpoint subdivision of every face with area > area_threshold, repeated
// until compliant or depth max_depth. New points carry barycentric weights
// composed down to the ORIGINAL mesh vertices, so densification is a single
// gather regardless of depth.
SubdivisionResult subdivide(const CanonicalMesh& mesh, double area_threshold, int max_depth);

// Keeps at most max_dense entries, dropping deepest-last ones. Never drops
// the identity prefix.
DensificationTable cap_table(const DensificationTable& table, size_t max_dense);

// Binary table format: magic "PLDT", version u32, M_C u32, M_D u32, then per
// entry 3 x u32 parents + 3 x f32 weights, little-endian.
void save_table(const std::string& path, const DensificationTable& table);
DensificationTable load_table(const std::string& path);

// Barycentric gather: out[e] = sum_i w_i * src[parent_i]. src is M_C x D;
// the result is M_D x D. Differentiable through src.
template <class S>
Tensor<S> densify(const DensificationTable& table, const Tensor<S>& src);

} // namespace gsr
