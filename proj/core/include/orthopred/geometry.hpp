#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace orthopred {

// All coordinates are millimeters unless stated otherwise.
struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double squared_norm(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }
inline bool is_finite(const Vec3& v) {
    return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

// Cubic smoothstep on [0,1]; clamps outside.
inline double smoothstep01(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * (3.0 - 2.0 * t);
}

// Oriented plane {x : dot(normal, x) == offset} with unit normal.
struct Plane {
    Vec3 normal{1.0, 0.0, 0.0};
    double offset = 0.0;

    static Plane through(const Vec3& point, const Vec3& direction);
};

double point_plane_distance(const Vec3& p, const Plane& plane); // unsigned
double signed_plane_distance(const Vec3& p, const Plane& plane);

// Distance from p to the infinite line through a and b. Throws DataError when
// the segment is degenerate (|b-a| <= 1e-9).
double point_line_distance(const Vec3& p, const Vec3& a, const Vec3& b);

// Triangle mesh with optional per-vertex RGB colors in [0,1].
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> colors; // empty or same length as vertices

    bool has_colors() const { return !colors.empty(); }
    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int triangle_count() const { return static_cast<int>(triangles.size()); }
};

// Checks index validity, finiteness, non-degenerate index triples and color
// array size. Throws DataError with a description of the first violation.
void validate_mesh(const Mesh& mesh);

struct TriangleNormals {
    std::vector<Vec3> normals;      // unit; zero vector for degenerate triangles
    std::vector<int> degenerate;    // triangle indices with area <= 1e-12 mm^2
};

// Right-hand-rule unit normals. Degenerate triangles get a zero normal and
// are listed instead of raising.
TriangleNormals triangle_normals(const Mesh& mesh);

// Sorted unique vertex subset of one mesh topology plus the triangles whose
// three corners all lie in the subset.
struct RegionMask {
    std::vector<int> vertices;   // sorted, unique
    std::vector<int> triangles;  // indices into the owning mesh's triangle list

    bool contains(int vertex) const;
    int size() const { return static_cast<int>(vertices.size()); }
};

RegionMask make_region_mask(std::span<const std::array<int, 3>> triangles,
                            std::vector<int> vertex_indices);

// Positions of the masked vertices, in mask order.
std::vector<Vec3> masked_points(const Mesh& mesh, const RegionMask& mask);

} // namespace orthopred
