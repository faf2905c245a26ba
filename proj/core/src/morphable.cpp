#include "orthopred/morphable.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "orthopred/errors.hpp"
#include "orthopred/kdtree.hpp"

namespace orthopred {

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Procedural face shell. Parameters (u, v): u in [-1,1] lateral (0 = midline),
// v in [0,1] from the upper rim down to below the chin. The base surface is an
// ellipsoid patch; facial features displace depth (z) only, so every grid row
// keeps a single y value and the vertical ordering of rows is exact.
// ---------------------------------------------------------------------------

constexpr double kLateralMm = 72.0;
constexpr double kVerticalMm = 95.0;
constexpr double kDepthMm = 78.0;
constexpr double kPhiMax = 1.25;   // azimuth half-range (rad)
constexpr double kTheta0 = 0.45;   // polar angle at the top rim (rad)
constexpr double kTheta1 = 2.75;   // polar angle below the chin (rad)

inline double gauss(double t) { return std::exp(-t * t); }

// Depth offset of the facial features; even in u.
double feature_depth(double u, double v) {
    const double au = std::abs(u);
    double dz = 0.0;
    dz += 7.0 * gauss(u / 0.09) * gauss((v - 0.42) / 0.10);     // nose bridge
    dz += 12.0 * gauss(u / 0.10) * gauss((v - 0.525) / 0.05);   // nose tip and base
    dz += 5.6 * gauss(u / 0.24) * gauss((v - 0.645) / 0.035);   // upper lip band
    dz += -3.5 * gauss(u / 0.26) * gauss((v - 0.672) / 0.016);  // mouth groove
    dz += 5.4 * gauss(u / 0.22) * gauss((v - 0.702) / 0.030);   // lower lip band
    dz += 8.0 * gauss(u / 0.20) * gauss((v - 0.825) / 0.065);   // chin boss
    dz += 3.5 * gauss((au - 0.40) / 0.22) * gauss((v - 0.345) / 0.045); // brow ridge
    dz += -2.5 * gauss((au - 0.40) / 0.15) * gauss((v - 0.425) / 0.035); // eye socket
    dz += 3.0 * gauss((au - 0.52) / 0.18) * gauss((v - 0.54) / 0.09);    // cheekbone
    return dz;
}

Vec3 surface_point(double u, double v) {
    const double phi = u * kPhiMax;
    const double theta = kTheta0 + v * (kTheta1 - kTheta0);
    const double sin_theta = std::sin(theta);
    return {kLateralMm * sin_theta * std::sin(phi),
            kVerticalMm * std::cos(theta),
            kDepthMm * sin_theta * std::cos(phi) + feature_depth(u, v)};
}

inline Vec3 reflect_x(const Vec3& p) { return {-p.x, p.y, p.z}; }

struct Grid {
    int cols = 0, rows = 0, half = 0; // cols = 2*half + 1
    int index(int i, int j) const { return j * cols + i; }
    double u(int i) const { return static_cast<double>(i - half) / half; }
    double v(int j) const { return static_cast<double>(j) / (rows - 1); }
};

// ---------------------------------------------------------------------------
// Landmark anchors. Only midline and right-side (u > 0) anchors are listed;
// left-side landmarks reuse the vertex mirror map so decoded symmetric faces
// have exactly mirrored landmark pairs.
// ---------------------------------------------------------------------------

struct Anchor {
    int landmark;
    double u, v;
};

std::vector<Anchor> midline_anchors() {
    return {
        {8, 0.0, 0.835},   // pogonion / chin point
        {27, 0.0, 0.385}, {28, 0.0, 0.432}, {29, 0.0, 0.478}, {30, 0.0, 0.522},
        {33, 0.0, 0.576},  // subnasale
        {51, 0.0, 0.643}, {57, 0.0, 0.706},
        {62, 0.0, 0.657}, {66, 0.0, 0.690},
    };
}

std::vector<Anchor> right_side_anchors() {
    std::vector<Anchor> anchors;
    for (int k = 9; k <= 16; ++k) { // jawline, chin to ear
        const double s = (k - 8) / 8.0;
        anchors.push_back({k, 0.97 * std::sin(s * kPi / 2.0), 0.835 - 0.40 * std::pow(s, 1.25)});
    }
    anchors.push_back({22, 0.20, 0.352}); // brow, inner to outer
    anchors.push_back({23, 0.31, 0.340});
    anchors.push_back({24, 0.42, 0.336});
    anchors.push_back({25, 0.53, 0.340});
    anchors.push_back({26, 0.64, 0.352});
    anchors.push_back({34, 0.055, 0.572}); // nostril line
    anchors.push_back({35, 0.105, 0.566});
    anchors.push_back({42, 0.26, 0.425}); // eye, inner corner first
    anchors.push_back({43, 0.355, 0.412});
    anchors.push_back({44, 0.465, 0.412});
    anchors.push_back({45, 0.565, 0.428});
    anchors.push_back({46, 0.465, 0.443});
    anchors.push_back({47, 0.355, 0.443});
    anchors.push_back({52, 0.055, 0.645}); // outer mouth
    anchors.push_back({53, 0.13, 0.652});
    anchors.push_back({54, 0.235, 0.673});
    anchors.push_back({55, 0.145, 0.694});
    anchors.push_back({56, 0.06, 0.703});
    anchors.push_back({63, 0.065, 0.659}); // inner mouth
    anchors.push_back({64, 0.185, 0.672});
    anchors.push_back({65, 0.07, 0.687});
    return anchors;
}

// (left, right) landmark pairs of the 68-point convention.
constexpr std::array<std::pair<int, int>, 29> kLandmarkPairs = {{
    {0, 16}, {1, 15}, {2, 14}, {3, 13}, {4, 12}, {5, 11}, {6, 10}, {7, 9},
    {17, 26}, {18, 25}, {19, 24}, {20, 23}, {21, 22},
    {31, 35}, {32, 34},
    {36, 45}, {37, 44}, {38, 43}, {39, 42}, {40, 47}, {41, 46},
    {48, 54}, {49, 53}, {50, 52}, {59, 55}, {58, 56},
    {60, 64}, {61, 63}, {67, 65},
}};

int snap_anchor(const std::vector<Vec3>& vertices, const Vec3& target,
                const std::vector<char>& allowed, std::vector<char>& used) {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < vertices.size(); ++i) {
        if (!allowed[i] || used[i]) continue;
        const double d2 = squared_norm(vertices[i] - target);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    if (best < 0) {
        throw NumericError("landmark anchor snapping exhausted candidate vertices");
    }
    used[best] = 1;
    return best;
}

std::vector<std::vector<int>> vertex_adjacency(int n, const std::vector<std::array<int, 3>>& tris) {
    std::vector<std::vector<int>> adj(n);
    for (const auto& t : tris) {
        for (int e = 0; e < 3; ++e) {
            const int a = t[e];
            const int b = t[(e + 1) % 3];
            adj[a].push_back(b);
            adj[b].push_back(a);
        }
    }
    for (auto& nbrs : adj) {
        std::sort(nbrs.begin(), nbrs.end());
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    }
    return adj;
}

void smooth_field(std::vector<Vec3>& field, const std::vector<std::vector<int>>& adj, int rounds) {
    std::vector<Vec3> next(field.size());
    for (int r = 0; r < rounds; ++r) {
        for (size_t i = 0; i < field.size(); ++i) {
            Vec3 avg{0, 0, 0};
            for (int nb : adj[i]) {
                avg += field[nb];
            }
            if (!adj[i].empty()) {
                avg = avg / static_cast<double>(adj[i].size());
            }
            next[i] = field[i] * 0.5 + avg * 0.5;
        }
        field.swap(next);
    }
}

// Removes the translation + infinitesimal-rotation component of a field as
// seen at the landmark vertices. Landmark-based Procrustes of a decoded face
// against the template then stays near the identity, which lets the fit's
// rigid/ridge alternation converge in a couple of rounds.
class LandmarkRigidProjector {
public:
    LandmarkRigidProjector(const std::vector<Vec3>& verts,
                           const std::array<int, LandmarkSet::kCount>& landmark_vertices)
        : landmark_vertices_(landmark_vertices) {
        centroid_ = {0, 0, 0};
        for (int v : landmark_vertices_) {
            centroid_ += verts[v];
        }
        centroid_ = centroid_ / static_cast<double>(LandmarkSet::kCount);
        Eigen::Matrix3d moment = Eigen::Matrix3d::Zero();
        for (int v : landmark_vertices_) {
            const Vec3 r = verts[v] - centroid_;
            const Eigen::Vector3d re(r.x, r.y, r.z);
            moment += re.squaredNorm() * Eigen::Matrix3d::Identity() - re * re.transpose();
        }
        moment_inv_ = moment.inverse();
        template_verts_ = &verts;
    }

    void project(std::vector<Vec3>& field) const {
        Vec3 mean{0, 0, 0};
        for (int v : landmark_vertices_) {
            mean += field[v];
        }
        mean = mean / static_cast<double>(LandmarkSet::kCount);
        Eigen::Vector3d torque = Eigen::Vector3d::Zero();
        for (int v : landmark_vertices_) {
            const Vec3 r = (*template_verts_)[v] - centroid_;
            const Vec3 t = cross(r, field[v] - mean);
            torque += Eigen::Vector3d(t.x, t.y, t.z);
        }
        const Eigen::Vector3d we = moment_inv_ * torque;
        const Vec3 omega{we.x(), we.y(), we.z()};
        for (size_t i = 0; i < field.size(); ++i) {
            field[i] -= mean + cross(omega, (*template_verts_)[i] - centroid_);
        }
    }

private:
    const std::array<int, LandmarkSet::kCount>& landmark_vertices_;
    const std::vector<Vec3>* template_verts_ = nullptr;
    Vec3 centroid_;
    Eigen::Matrix3d moment_inv_;
};

// Projects onto the mirror-symmetric (even) or antisymmetric (odd) subspace
// and then rewrites the left half from the right half so the relation holds
// bitwise (negation is exact in IEEE arithmetic).
void symmetrize_field(std::vector<Vec3>& field, const std::vector<int>& mirror, bool symmetric) {
    for (size_t i = 0; i < field.size(); ++i) {
        const int m = mirror[i];
        if (static_cast<int>(i) == m) {
            if (symmetric) {
                field[i].x = 0.0;
            } else {
                field[i].y = 0.0;
                field[i].z = 0.0;
            }
        } else if (static_cast<int>(i) < m) {
            const Vec3 a = field[i];
            const Vec3 b = field[m];
            if (symmetric) {
                const Vec3 s = (a + reflect_x(b)) * 0.5;
                field[i] = s;
                field[m] = reflect_x(s);
            } else {
                const Vec3 s = (a - reflect_x(b)) * 0.5;
                field[i] = s;
                field[m] = {s.x, -s.y, -s.z};
            }
        }
    }
}

} // namespace

Mesh MorphableModel::template_mesh() const {
    Mesh mesh;
    const int n = vertex_count();
    mesh.vertices.reserve(n);
    for (int i = 0; i < n; ++i) {
        mesh.vertices.push_back(template_vertex(i));
    }
    mesh.triangles = triangles;
    return mesh;
}

MorphableModel build_synthetic_model(std::uint64_t seed, int modes, int resolution) {
    if (modes < 8) {
        throw ConfigError("model needs at least 8 modes");
    }
    if (resolution < 1) {
        throw ConfigError("model resolution must be positive");
    }
    Grid grid;
    grid.half = resolution;
    grid.cols = 2 * resolution + 1;
    grid.rows = static_cast<int>(std::lround(1.25 * grid.cols));
    const int n = grid.cols * grid.rows;
    if (n < 500) {
        throw ConfigError("model resolution too small: yields " + std::to_string(n) +
                          " vertices, need >= 500");
    }
    if (modes > 3 * n) {
        throw ConfigError("mode count exceeds 3 * vertex count");
    }

    MorphableModel model;
    model.build_seed = seed;
    model.build_resolution = resolution;

    // Template vertices; the left half is an exact reflection of the right.
    std::vector<Vec3> verts(n);
    for (int j = 0; j < grid.rows; ++j) {
        for (int i = grid.half; i < grid.cols; ++i) {
            verts[grid.index(i, j)] = surface_point(grid.u(i), grid.v(j));
        }
        for (int i = 0; i < grid.half; ++i) {
            verts[grid.index(i, j)] = reflect_x(verts[grid.index(2 * grid.half - i, j)]);
        }
    }
    model.template_flat.resize(3 * n);
    for (int i = 0; i < n; ++i) {
        model.template_flat[3 * i] = verts[i].x;
        model.template_flat[3 * i + 1] = verts[i].y;
        model.template_flat[3 * i + 2] = verts[i].z;
    }

    // Outward-facing triangulation of the grid.
    model.triangles.reserve(2 * (grid.cols - 1) * (grid.rows - 1));
    for (int j = 0; j + 1 < grid.rows; ++j) {
        for (int i = 0; i + 1 < grid.cols; ++i) {
            const int a = grid.index(i, j);
            const int b = grid.index(i + 1, j);
            const int c = grid.index(i, j + 1);
            const int d = grid.index(i + 1, j + 1);
            model.triangles.push_back({a, c, b});
            model.triangles.push_back({b, c, d});
        }
    }

    model.mirror.resize(n);
    for (int j = 0; j < grid.rows; ++j) {
        for (int i = 0; i < grid.cols; ++i) {
            model.mirror[grid.index(i, j)] = grid.index(2 * grid.half - i, j);
        }
    }

    // Landmarks: snap analytic anchors to grid vertices; midline anchors stay
    // on the midline column, right-side anchors stay strictly right, and left
    // landmarks are the vertex mirrors of their right partners.
    {
        std::vector<char> midline_ok(n, 0), right_ok(n, 0), used(n, 0);
        for (int j = 0; j < grid.rows; ++j) {
            midline_ok[grid.index(grid.half, j)] = 1;
            for (int i = grid.half + 1; i < grid.cols; ++i) {
                right_ok[grid.index(i, j)] = 1;
            }
        }
        std::array<int, LandmarkSet::kCount> lm{};
        lm.fill(-1);
        for (const Anchor& a : midline_anchors()) {
            lm[a.landmark] = snap_anchor(verts, surface_point(a.u, a.v), midline_ok, used);
        }
        for (const Anchor& a : right_side_anchors()) {
            lm[a.landmark] = snap_anchor(verts, surface_point(a.u, a.v), right_ok, used);
        }
        for (const auto& [left, right] : kLandmarkPairs) {
            lm[left] = model.mirror[lm[right]];
        }
        for (int idx : lm) {
            if (idx < 0) {
                throw NumericError("landmark table incomplete after snapping");
            }
        }
        model.landmark_vertices = lm;
    }

    // Region masks. Rows share one y value, so "below the subnasale" is a row
    // predicate and the lower-face mask matches the augmentation split plane
    // exactly on the template.
    {
        const double y_subnasale = verts[model.landmark_vertices[LandmarkSet::kSubnasale]].y;
        std::vector<int> face, lower, chin;
        for (int j = 0; j < grid.rows; ++j) {
            for (int i = 0; i < grid.cols; ++i) {
                const int idx = grid.index(i, j);
                const double v = grid.v(j);
                const double au = std::abs(grid.u(i));
                if (v >= 0.18) {
                    face.push_back(idx);
                }
                if (verts[idx].y < y_subnasale) {
                    lower.push_back(idx);
                    if (v >= 0.75 && au <= 0.50) {
                        chin.push_back(idx);
                    }
                }
            }
        }
        model.face_mask = make_region_mask(model.triangles, std::move(face));
        model.lower_face_mask = make_region_mask(model.triangles, std::move(lower));
        model.chin_mask = make_region_mask(model.triangles, std::move(chin));
    }

    // Jaw joint and skinning weights: smoothstep of vertical drop below the
    // joint height, so everything above the joint is exactly static.
    {
        const double theta_joint = kTheta0 + 0.60 * (kTheta1 - kTheta0);
        model.jaw_joint = Eigen::Vector3d(0.0, kVerticalMm * std::cos(theta_joint), 0.0);
        const double falloff = 30.0;
        model.jaw_weight.resize(n);
        for (int i = 0; i < n; ++i) {
            model.jaw_weight[i] = smoothstep01((model.jaw_joint.y() - verts[i].y) / falloff);
        }
    }

    // Shape basis: each mode draws a random displacement at every landmark
    // vertex and extends it over the mesh by pinned smoothing (an approximate
    // harmonic interpolation). Modes are therefore determined by their
    // landmark values, which keeps the landmark fitting system full-rank for
    // mode counts up to 3 * 68. Modes alternate mirror-symmetric and
    // antisymmetric and are orthonormalized within each symmetry class (the
    // classes are orthogonal to each other by construction).
    {
        const auto adj = vertex_adjacency(n, model.triangles);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gaussian(0.0, 1.0);
        model.basis.resize(3 * n, modes);
        model.mode_scale_mm.resize(modes);

        std::vector<int> even_cols, odd_cols;
        std::vector<Vec3> field(n), anchors(LandmarkSet::kCount);
        const LandmarkRigidProjector rigid_projector(verts, model.landmark_vertices);
        for (int k = 0; k < modes; ++k) {
            for (auto& a : anchors) {
                a = {gaussian(rng), gaussian(rng), gaussian(rng)};
            }
            auto pin = [&] {
                for (int l = 0; l < LandmarkSet::kCount; ++l) {
                    field[model.landmark_vertices[l]] = anchors[l];
                }
            };
            std::fill(field.begin(), field.end(), Vec3{});
            pin();
            for (int round = 0; round < 20; ++round) {
                smooth_field(field, adj, 1);
                pin();
            }
            smooth_field(field, adj, 2); // soften the pinned spikes
            const bool symmetric = (k % 2 == 0);
            symmetrize_field(field, model.mirror, symmetric);
            rigid_projector.project(field);
            symmetrize_field(field, model.mirror, symmetric);

            Eigen::VectorXd col(3 * n);
            for (int i = 0; i < n; ++i) {
                col[3 * i] = field[i].x;
                col[3 * i + 1] = field[i].y;
                col[3 * i + 2] = field[i].z;
            }
            const auto& prev = symmetric ? even_cols : odd_cols;
            for (int pass = 0; pass < 2; ++pass) {
                for (int c : prev) {
                    col -= model.basis.col(c).dot(col) * model.basis.col(c);
                }
            }
            const double len = col.norm();
            if (len < 1e-10) {
                throw NumericError("degenerate shape basis: mode " + std::to_string(k) +
                                   " collapsed during orthonormalization");
            }
            model.basis.col(k) = col / len;
            (symmetric ? even_cols : odd_cols).push_back(k);
            model.mode_scale_mm[k] = 3.0 * std::pow(0.97, k);
        }
    }

    model.chin_pairing = build_symmetry_pairing(model.mirror, model.chin_mask);
    return model;
}

std::vector<Vec3> decode_vertices(const MorphableModel& model, const LatentCode& code) {
    if (code.size() != model.mode_count()) {
        throw DataError("latent code length " + std::to_string(code.size()) +
                        " does not match model mode count " + std::to_string(model.mode_count()));
    }
    const Eigen::VectorXd flat =
        model.template_flat + model.basis * model.mode_scale_mm.cwiseProduct(code);
    const int n = model.vertex_count();
    std::vector<Vec3> verts(n);
    for (int i = 0; i < n; ++i) {
        verts[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
    }
    return verts;
}

Mesh decode(const MorphableModel& model, const LatentCode& code, const PoseParams& pose) {
    if (std::abs(pose.jaw_angle_rad) > kPi / 4.0 + 1e-12) {
        throw DataError("jaw angle exceeds pi/4");
    }
    Mesh mesh;
    mesh.vertices = decode_vertices(model, code);
    mesh.triangles = model.triangles;
    if (pose.jaw_angle_rad != 0.0) {
        const double ca = std::cos(pose.jaw_angle_rad);
        const double sa = std::sin(pose.jaw_angle_rad);
        const Vec3 joint{model.jaw_joint.x(), model.jaw_joint.y(), model.jaw_joint.z()};
        for (int i = 0; i < mesh.vertex_count(); ++i) {
            const double w = model.jaw_weight[i];
            if (w == 0.0) {
                continue; // static vertices stay bit-identical across poses
            }
            const Vec3 r = mesh.vertices[i] - joint;
            const Vec3 rotated{r.x, ca * r.y - sa * r.z, sa * r.y + ca * r.z};
            mesh.vertices[i] += w * (rotated - r);
        }
    }
    return mesh;
}

LandmarkSet landmark_positions(const MorphableModel& model, const LatentCode& code) {
    const std::vector<Vec3> verts = decode_vertices(model, code);
    LandmarkSet lm;
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        lm[l] = verts[model.landmark_vertices[l]];
    }
    return lm;
}

namespace {

LandmarkSet template_landmarks(const MorphableModel& model) {
    LandmarkSet lm;
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        lm[l] = model.template_vertex(model.landmark_vertices[l]);
    }
    return lm;
}

// Rows of B*diag(sigma) for one vertex.
void scaled_rows(const MorphableModel& model, int vertex, Eigen::MatrixXd& out, int row) {
    const int K = model.mode_count();
    for (int k = 0; k < K; ++k) {
        const double s = model.mode_scale_mm[k];
        out(row, k) = model.basis(3 * vertex, k) * s;
        out(row + 1, k) = model.basis(3 * vertex + 1, k) * s;
        out(row + 2, k) = model.basis(3 * vertex + 2, k) * s;
    }
}

} // namespace

FitResult fit(const MorphableModel& model, const Mesh& scan, const LandmarkSet& landmarks,
              const FitConfig& config) {
    const int K = model.mode_count();
    for (const Vec3& p : landmarks.points) {
        if (!is_finite(p)) {
            throw DataError("fit: non-finite scan landmark");
        }
    }
    if (config.ridge_lambda == 0.0 && 3 * LandmarkSet::kCount < K &&
        config.surface_iterations <= 0) {
        throw NumericError(
            "landmark system rank-deficient (204 equations < mode count); set ridge_lambda > 0");
    }

    FitResult result;

    Eigen::MatrixXd lm_rows(3 * LandmarkSet::kCount, K);
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        scaled_rows(model, model.landmark_vertices[l], lm_rows, 3 * l);
    }
    const Eigen::MatrixXd lm_normal = lm_rows.transpose() * lm_rows;
    const Eigen::MatrixXd ridge = config.ridge_lambda * Eigen::MatrixXd::Identity(K, K);
    const auto lm_solver = (lm_normal + ridge).ldlt();

    // Rigid alignment and the ridge solve are alternated: the first round
    // aligns to the template landmarks, later rounds re-align to the current
    // fitted landmarks, which removes the rigid bias a deformed face induces
    // in the template alignment.
    LatentCode code = LatentCode::Zero(K);
    LandmarkSet aligned_lm;
    Eigen::VectorXd lm_rhs(3 * LandmarkSet::kCount);
    Eigen::VectorXd lm_proj(K);
    for (int round = 0; round <= std::max(0, config.rigid_refinements); ++round) {
        const LandmarkSet reference =
            round == 0 ? template_landmarks(model) : landmark_positions(model, code);
        result.scan_to_model = rigid_align(landmarks, reference);
        aligned_lm = transformed(landmarks, result.scan_to_model);
        for (int l = 0; l < LandmarkSet::kCount; ++l) {
            const Vec3 t = model.template_vertex(model.landmark_vertices[l]);
            lm_rhs[3 * l] = aligned_lm[l].x - t.x;
            lm_rhs[3 * l + 1] = aligned_lm[l].y - t.y;
            lm_rhs[3 * l + 2] = aligned_lm[l].z - t.z;
        }
        lm_proj = lm_rows.transpose() * lm_rhs;
        code = lm_solver.solve(lm_proj);
    }
    int iterations = 0;

    std::optional<double> surface_rms;
    if (config.surface_iterations > 0 && scan.vertex_count() > 0) {
        // ICP-style refinement against a deterministic stride subsample.
        std::vector<Vec3> scan_pts;
        const int stride =
            std::max(1, scan.vertex_count() / std::max(1, config.surface_samples));
        for (int i = 0; i < scan.vertex_count(); i += stride) {
            scan_pts.push_back(result.scan_to_model.apply(scan.vertices[i]));
        }
        const int s = static_cast<int>(scan_pts.size());
        Eigen::MatrixXd surf_rows(3 * s, K);
        Eigen::VectorXd surf_rhs(3 * s);
        std::vector<int> corr(s);
        for (int it = 0; it < config.surface_iterations; ++it) {
            const std::vector<Vec3> current = decode_vertices(model, code);
            const KdTree tree(current);
            for (int i = 0; i < s; ++i) {
                corr[i] = tree.nearest(scan_pts[i]).index;
                scaled_rows(model, corr[i], surf_rows, 3 * i);
                const Vec3 t = model.template_vertex(corr[i]);
                surf_rhs[3 * i] = scan_pts[i].x - t.x;
                surf_rhs[3 * i + 1] = scan_pts[i].y - t.y;
                surf_rhs[3 * i + 2] = scan_pts[i].z - t.z;
            }
            const Eigen::MatrixXd normal = lm_normal +
                                           config.surface_weight *
                                               (surf_rows.transpose() * surf_rows) +
                                           ridge;
            const Eigen::VectorXd proj =
                lm_proj + config.surface_weight * (surf_rows.transpose() * surf_rhs);
            code = normal.ldlt().solve(proj);
            ++iterations;
        }
        const std::vector<Vec3> final_verts = decode_vertices(model, code);
        double sq = 0.0;
        for (int i = 0; i < s; ++i) {
            sq += squared_norm(final_verts[corr[i]] - scan_pts[i]);
        }
        surface_rms = std::sqrt(sq / s);
    }

    FitReport report;
    report.iterations = iterations;
    report.surface_rms_mm = surface_rms;
    const std::vector<Vec3> fitted = decode_vertices(model, code);
    report.landmark_error_mm.resize(LandmarkSet::kCount);
    double sum = 0.0;
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        const double e = distance(fitted[model.landmark_vertices[l]], aligned_lm[l]);
        report.landmark_error_mm[l] = e;
        sum += e;
    }
    report.mean_landmark_error_mm = sum / LandmarkSet::kCount;

    result.code = std::move(code);
    result.report = std::move(report);
    return result;
}

const RegionMask& region_mask(const MorphableModel& model, std::string_view name) {
    if (name == "face") return model.face_mask;
    if (name == "chin") return model.chin_mask;
    if (name == "lower-face") return model.lower_face_mask;
    throw ConfigError("unknown region mask '" + std::string(name) +
                      "' (expected face, chin or lower-face)");
}

// ---------------------------------------------------------------------------
// Serialization: "MM1" text format, whitespace separated, floats at full
// double precision. Mask triangle lists and the chin pairing are derived data
// and get rebuilt on load.
// ---------------------------------------------------------------------------

void save_model(const MorphableModel& model, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write model file: " + path.string());
    }
    const int n = model.vertex_count();
    const int K = model.mode_count();
    std::fprintf(f, "MM1 %d %d %zu %d %llu\n", n, K, model.triangles.size(),
                 model.build_resolution, static_cast<unsigned long long>(model.build_seed));
    auto write_vec = [f](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            std::fprintf(f, "%.17g%c", v[i], (i + 1) % 8 == 0 ? '\n' : ' ');
        }
        std::fprintf(f, "\n");
    };
    write_vec(model.template_flat);
    for (const auto& t : model.triangles) {
        std::fprintf(f, "%d %d %d\n", t[0], t[1], t[2]);
    }
    for (int k = 0; k < K; ++k) {
        write_vec(model.basis.col(k));
    }
    write_vec(model.mode_scale_mm);
    std::fprintf(f, "%.17g %.17g %.17g\n", model.jaw_joint.x(), model.jaw_joint.y(),
                 model.jaw_joint.z());
    write_vec(model.jaw_weight);
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        std::fprintf(f, "%d ", model.landmark_vertices[l]);
    }
    std::fprintf(f, "\n");
    for (int i = 0; i < n; ++i) {
        std::fprintf(f, "%d ", model.mirror[i]);
    }
    std::fprintf(f, "\n");
    auto write_mask = [f](const RegionMask& mask) {
        std::fprintf(f, "%zu\n", mask.vertices.size());
        for (int v : mask.vertices) {
            std::fprintf(f, "%d ", v);
        }
        std::fprintf(f, "\n");
    };
    write_mask(model.face_mask);
    write_mask(model.lower_face_mask);
    write_mask(model.chin_mask);
    std::fclose(f);
}

MorphableModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open model file: " + path.string());
    }
    std::string magic;
    int n = 0, K = 0, resolution = 0;
    size_t ntris = 0;
    unsigned long long seed = 0;
    in >> magic >> n >> K >> ntris >> resolution >> seed;
    if (!in || magic != "MM1" || n <= 0 || K <= 0) {
        throw DataError("not an MM1 model file: " + path.string());
    }

    MorphableModel model;
    model.build_seed = seed;
    model.build_resolution = resolution;

    auto read_vec = [&in, &path](Eigen::VectorXd& v, Eigen::Index size, const char* what) {
        v.resize(size);
        for (Eigen::Index i = 0; i < size; ++i) {
            if (!(in >> v[i])) {
                throw DataError(path.string() + ": truncated " + what);
            }
        }
    };
    read_vec(model.template_flat, 3 * n, "template");
    model.triangles.resize(ntris);
    for (auto& t : model.triangles) {
        if (!(in >> t[0] >> t[1] >> t[2])) {
            throw DataError(path.string() + ": truncated triangle list");
        }
    }
    model.basis.resize(3 * n, K);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd col;
        read_vec(col, 3 * n, "basis column");
        model.basis.col(k) = col;
    }
    read_vec(model.mode_scale_mm, K, "mode scales");
    if (!(in >> model.jaw_joint.x() >> model.jaw_joint.y() >> model.jaw_joint.z())) {
        throw DataError(path.string() + ": truncated jaw joint");
    }
    read_vec(model.jaw_weight, n, "jaw weights");
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        if (!(in >> model.landmark_vertices[l])) {
            throw DataError(path.string() + ": truncated landmark indices");
        }
    }
    model.mirror.resize(n);
    for (int i = 0; i < n; ++i) {
        if (!(in >> model.mirror[i])) {
            throw DataError(path.string() + ": truncated mirror map");
        }
    }
    auto read_mask = [&](RegionMask& mask, const char* what) {
        size_t count = 0;
        if (!(in >> count)) {
            throw DataError(path.string() + ": truncated mask header");
        }
        std::vector<int> ids(count);
        for (size_t i = 0; i < count; ++i) {
            if (!(in >> ids[i])) {
                throw DataError(path.string() + ": truncated " + std::string(what));
            }
        }
        mask = make_region_mask(model.triangles, std::move(ids));
    };
    read_mask(model.face_mask, "face mask");
    read_mask(model.lower_face_mask, "lower-face mask");
    read_mask(model.chin_mask, "chin mask");

    model.chin_pairing = build_symmetry_pairing(model.mirror, model.chin_mask);
    return model;
}

void save_code(const LatentCode& code, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write code file: " + path.string());
    }
    std::fprintf(f, "CODE1 %d\n", static_cast<int>(code.size()));
    for (Eigen::Index k = 0; k < code.size(); ++k) {
        std::fprintf(f, "%.17g\n", code[k]);
    }
    std::fclose(f);
}

LatentCode load_code(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open code file: " + path.string());
    }
    std::string magic;
    int K = 0;
    in >> magic >> K;
    if (!in || magic != "CODE1" || K < 1) {
        throw DataError("not a CODE1 file: " + path.string());
    }
    LatentCode code(K);
    for (int k = 0; k < K; ++k) {
        if (!(in >> code[k])) {
            throw DataError(path.string() + ": truncated code");
        }
    }
    return code;
}

} // namespace orthopred
