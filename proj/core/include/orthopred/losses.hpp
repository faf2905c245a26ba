#pragma once

#include <Eigen/Core>
#include <vector>

#include "orthopred/geometry.hpp"
#include "orthopred/landmarks.hpp"
#include "orthopred/morphable.hpp"
#include "orthopred/symmetry.hpp"

namespace orthopred {

struct LossWeights {
    double alpha_mouth = 5000.0;
    double alpha_asymmetry = 5000.0;
    double alpha_latent = 1.0;
    double alpha_geometry = 1.0;
    double w_normal = 1.0; // balance inside the geometry term

    // Direction reference of the asymmetry loss: the per-case fitted
    // mid-sagittal normal, or the world x-axis.
    enum class AsymmetryNormal { Fitted, WorldX } asymmetry_normal = AsymmetryNormal::Fitted;
};

// Lip protrusion against the s-line (subnasale -> pogonion); distances below
// 3 mm are clinically acceptable and cost nothing.
struct MouthConvexityResult {
    double value = 0.0;
    double upper_distance_mm = 0.0;
    double lower_distance_mm = 0.0;
    Vec3 grad_subnasale, grad_pogonion, grad_upper_lip, grad_lower_lip;
};
MouthConvexityResult mouth_convexity_loss(const LandmarkSet& landmarks);

// Chin asymmetry about a mid-sagittal plane: per mirror pair, midpoint
// distance to the plane plus misalignment of the pair direction with the
// reference normal. Pairs are unordered; the direction is canonicalized so
// dot(n, v) >= 0 before the loss.
struct AsymmetryResult {
    double value = 0.0;
    std::vector<Vec3> vertex_grad; // dense over mesh vertices
    int skipped_pairs = 0;         // coincident pair points
};
AsymmetryResult asymmetry_loss(const Mesh& mesh, const SymmetryPairing& pairing,
                               const Plane& plane,
                               LossWeights::AsymmetryNormal direction =
                                   LossWeights::AsymmetryNormal::Fitted);

struct LatentCodeLossResult {
    double value = 0.0;
    Eigen::VectorXd grad;
};
LatentCodeLossResult latent_code_loss(const LatentCode& pred, const LatentCode& gt);

// Masked point-to-point squared error plus normal misalignment, with vertex
// correspondence by shared index (template topology).
struct GeometryLossResult {
    double value = 0.0;
    double point_term = 0.0;
    double normal_term = 0.0; // already scaled by w
    std::vector<Vec3> vertex_grad;
    int degenerate_triangles = 0; // excluded from the normal sum
};
GeometryLossResult geometry_loss(const Mesh& pred, const Mesh& gt, const RegionMask& face,
                                 double w_normal);

struct LossBreakdown {
    double mouth_convexity = 0.0;
    double asymmetry = 0.0;
    double latent_code = 0.0;
    double geometry = 0.0;
    double total = 0.0;
    Eigen::VectorXd code_grad; // d(total)/d(pred code)
    int skipped_pairs = 0;
    int degenerate_triangles = 0;
};

// Ground-truth side of the loss, reusable across evaluations of one sample.
struct GtCache {
    LatentCode code;
    Mesh mesh;
};
GtCache make_gt_cache(const MorphableModel& model, const LatentCode& gt_code);

// Weighted sum of the four terms on the decoded prediction. The mid-sagittal
// plane is refit from the predicted landmarks on every call unless
// `pinned_plane` is given; either way it is treated as a constant under
// differentiation, so the reported gradient is exact for the pinned
// functional.
LossBreakdown total_loss(const MorphableModel& model, const LatentCode& pred_code,
                         const GtCache& gt, const LossWeights& weights,
                         const Plane* pinned_plane = nullptr);
LossBreakdown total_loss(const MorphableModel& model, const LatentCode& pred_code,
                         const LatentCode& gt_code, const LossWeights& weights);

} // namespace orthopred
