#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "orthopred/geometry.hpp"
#include "orthopred/landmarks.hpp"
#include "orthopred/rigid.hpp"
#include "orthopred/symmetry.hpp"

namespace orthopred {

// Shape coefficient vector (dimensionless, roughly unit-variance scale).
using LatentCode = Eigen::VectorXd;

// Jaw rotation about the joint's lateral (x) axis, radians, |angle| <= pi/4.
struct PoseParams {
    double jaw_angle_rad = 0.0;
};

struct FitConfig {
    double ridge_lambda = 1e-3;
    int rigid_refinements = 2;     // re-align to the fitted landmarks and re-solve
    int surface_iterations = 3;    // 0 disables the ICP-style refinement
    double surface_weight = 0.1;
    int surface_samples = 2000;    // scan vertices used per refinement pass
};

struct FitReport {
    std::vector<double> landmark_error_mm; // per landmark, after the final solve
    double mean_landmark_error_mm = 0.0;
    std::optional<double> surface_rms_mm;  // set when surface refinement ran
    int iterations = 0;
};

// Linear morphable head model: symmetric template + orthonormal displacement
// basis + single jaw bone with smooth skinning weights. Immutable after build;
// decode/fit are pure functions of it.
struct MorphableModel {
    Eigen::VectorXd template_flat;              // 3n, vertex i at (3i,3i+1,3i+2)
    std::vector<std::array<int, 3>> triangles;
    Eigen::MatrixXd basis;                      // 3n x K, orthonormal columns
    Eigen::VectorXd mode_scale_mm;              // K, geometric decay
    Eigen::Vector3d jaw_joint;
    Eigen::VectorXd jaw_weight;                 // n, in [0,1], 0 above the joint
    std::array<int, LandmarkSet::kCount> landmark_vertices{};
    std::vector<int> mirror;                    // involution; fixed points on x=0
    RegionMask face_mask, lower_face_mask, chin_mask; // chin ⊂ lower-face ⊂ face
    SymmetryPairing chin_pairing;               // derived from mirror + chin_mask

    std::uint64_t build_seed = 0;
    int build_resolution = 0;

    int vertex_count() const { return static_cast<int>(template_flat.size() / 3); }
    int mode_count() const { return static_cast<int>(basis.cols()); }

    Vec3 template_vertex(int i) const {
        return {template_flat[3 * i], template_flat[3 * i + 1], template_flat[3 * i + 2]};
    }
    Mesh template_mesh() const;
};

// Deterministic procedural model: ellipsoidal face shell with nose/lip/chin
// features, mirrored across x=0 so the mirror map is exact by construction.
// Basis modes are smoothed random fields, orthonormalized, alternating
// mirror-symmetric (even k) and antisymmetric (odd k).
MorphableModel build_synthetic_model(std::uint64_t seed, int modes, int resolution);

// vertices = skin(T + B*diag(sigma)*beta); exactly linear in beta at pose 0.
Mesh decode(const MorphableModel& model, const LatentCode& code, const PoseParams& pose = {});

// Decoded vertex positions only (no topology copy); pose 0.
std::vector<Vec3> decode_vertices(const MorphableModel& model, const LatentCode& code);

LandmarkSet landmark_positions(const MorphableModel& model, const LatentCode& code);

struct FitResult {
    LatentCode code;
    RigidTransform scan_to_model;
    FitReport report;
};

// Three stages: rigid landmark alignment, closed-form ridge least squares on
// the landmark term, then optional ICP-style surface refinement re-solving
// landmark + surface terms jointly.
FitResult fit(const MorphableModel& model, const Mesh& scan, const LandmarkSet& landmarks,
              const FitConfig& config = {});

// name in {"face", "chin", "lower-face"}.
const RegionMask& region_mask(const MorphableModel& model, std::string_view name);

// Text format "MM1", documented in the README.
void save_model(const MorphableModel& model, const std::filesystem::path& path);
MorphableModel load_model(const std::filesystem::path& path);

// Latent code file: "CODE1 K" header then K floats.
void save_code(const LatentCode& code, const std::filesystem::path& path);
LatentCode load_code(const std::filesystem::path& path);

} // namespace orthopred
