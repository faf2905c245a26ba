#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "orthopred/dataset.hpp"
#include "orthopred/morphable.hpp"

namespace orthopred {

struct AugmentConfig {
    int split_landmark = LandmarkSet::kSubnasale; // anchor of the split plane
    Vec3 vertical_axis{0.0, 1.0, 0.0};            // split plane normal
    double sigma_xi = 0.5;     // std of the latent perturbation, code units
    double band_mm = 5.0;      // blend band half-width around the plane
    double tau_mm = 2.0;       // max mean landmark fitting error to accept
    int factor = 10;           // synthetic pairs attempted per real pair
    int max_retries = 3;       // fresh draws per rejected attempt
    std::uint64_t seed = 0;
    FitConfig fit{.ridge_lambda = 1e-4, .surface_iterations = 2}; // re-encoding settings
};

struct AugmentReport {
    int generated = 0;
    int rejected = 0;
    int shortfall = 0; // draws that stayed rejected after all retries
    std::vector<double> rejection_mean_error_mm;

    int attempts() const { return generated + rejected; }
};

// Horizontal plane through the split landmark.
Plane split_plane(const Mesh& mesh, const LandmarkSet& landmarks, const AugmentConfig& config);

// Per-vertex blend of two same-topology meshes: upper source above the plane,
// lower source below, smoothstep transition across [-band, +band]. The blend
// weight is computed from the upper source's vertex position so stitches that
// share an upper face use identical weights. With band 0 the plane side
// selects hard, the lower source winning at distance exactly 0.
Mesh stitch(const Mesh& upper_source, const Mesh& lower_source, const Plane& plane,
            double band_mm);

struct GeneratedPair {
    bool accepted = false;
    PatientPair pair;                 // valid when accepted
    double pre_fit_error_mm = 0.0;    // re-encoding landmark errors
    double post_fit_error_mm = 0.0;
};

// One augmentation draw: perturb the source's pre code by xi ~ N(0, sigma^2 I),
// decode the generated face, stitch its upper part onto both source faces,
// and re-encode the stitched pair. Accepted iff both fits stay within tau.
GeneratedPair generate_pair(const MorphableModel& model, const PatientPair& source,
                            const AugmentConfig& config, std::uint64_t draw_seed);

// factor draws per source pair, each retried up to max_retries times.
// Deterministic for a fixed seed; draw seeds are split per (pair, draw,
// attempt) so any execution order yields the same dataset.
std::pair<std::vector<PatientPair>, AugmentReport> augment_dataset(
    const MorphableModel& model, std::span<const PatientPair> train_pairs,
    const AugmentConfig& config);

} // namespace orthopred
