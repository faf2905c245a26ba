#include "orthopred/geometry.hpp"

#include <algorithm>
#include <sstream>

#include "orthopred/errors.hpp"

namespace orthopred {

Plane Plane::through(const Vec3& point, const Vec3& direction) {
    const double len = norm(direction);
    if (len <= 1e-12) {
        throw NumericError("plane normal has zero length");
    }
    Plane plane;
    plane.normal = direction / len;
    plane.offset = dot(plane.normal, point);
    return plane;
}

double signed_plane_distance(const Vec3& p, const Plane& plane) {
    return dot(plane.normal, p) - plane.offset;
}

double point_plane_distance(const Vec3& p, const Plane& plane) {
    return std::abs(signed_plane_distance(p, plane));
}

double point_line_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 u = b - a;
    const double len = norm(u);
    if (len <= 1e-9) {
        throw DataError("degenerate line: endpoints coincide");
    }
    const Vec3 unit = u / len;
    const Vec3 w = p - a;
    const Vec3 rejection = w - unit * dot(w, unit);
    return norm(rejection);
}

void validate_mesh(const Mesh& mesh) {
    const int n = mesh.vertex_count();
    for (int i = 0; i < n; ++i) {
        if (!is_finite(mesh.vertices[i])) {
            std::ostringstream os;
            os << "non-finite vertex coordinate at index " << i;
            throw DataError(os.str());
        }
    }
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (int k = 0; k < 3; ++k) {
            if (tri[k] < 0 || tri[k] >= n) {
                std::ostringstream os;
                os << "triangle " << t << " references vertex " << tri[k]
                   << " outside [0," << n << ")";
                throw DataError(os.str());
            }
        }
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
            std::ostringstream os;
            os << "degenerate triangle " << t << " with repeated vertex index";
            throw DataError(os.str());
        }
    }
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size()) {
        throw DataError("color array length differs from vertex count");
    }
}

TriangleNormals triangle_normals(const Mesh& mesh) {
    TriangleNormals out;
    out.normals.reserve(mesh.triangles.size());
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3& a = mesh.vertices[tri[0]];
        const Vec3& b = mesh.vertices[tri[1]];
        const Vec3& c = mesh.vertices[tri[2]];
        const Vec3 n = cross(b - a, c - a);
        const double len = norm(n);
        if (0.5 * len <= 1e-12) {
            out.normals.push_back(Vec3{0.0, 0.0, 0.0});
            out.degenerate.push_back(static_cast<int>(t));
        } else {
            out.normals.push_back(n / len);
        }
    }
    return out;
}

bool RegionMask::contains(int vertex) const {
    return std::binary_search(vertices.begin(), vertices.end(), vertex);
}

RegionMask make_region_mask(std::span<const std::array<int, 3>> triangles,
                            std::vector<int> vertex_indices) {
    RegionMask mask;
    std::sort(vertex_indices.begin(), vertex_indices.end());
    vertex_indices.erase(std::unique(vertex_indices.begin(), vertex_indices.end()),
                         vertex_indices.end());
    mask.vertices = std::move(vertex_indices);
    for (size_t t = 0; t < triangles.size(); ++t) {
        const auto& tri = triangles[t];
        if (mask.contains(tri[0]) && mask.contains(tri[1]) && mask.contains(tri[2])) {
            mask.triangles.push_back(static_cast<int>(t));
        }
    }
    return mask;
}

std::vector<Vec3> masked_points(const Mesh& mesh, const RegionMask& mask) {
    std::vector<Vec3> points;
    points.reserve(mask.vertices.size());
    for (int v : mask.vertices) {
        points.push_back(mesh.vertices[v]);
    }
    return points;
}

} // namespace orthopred
