#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "orthopred/geometry.hpp"
#include "orthopred/morphable.hpp"

namespace orthopred {

// Per scan vertex: the closest triangle on a fitted model mesh and the
// barycentric coordinates of the closest point (clamped to the triangle, so
// edge and corner feet give boundary coordinates).
struct BarycentricMap {
    struct Entry {
        int triangle = -1;
        double l1 = 0.0, l2 = 0.0, l3 = 0.0;
    };
    std::vector<Entry> entries;
};

// Exact closest point over all target triangles, accelerated by a bounding
// box tree; distance ties resolve to the lower triangle index, matching an
// exhaustive scan.
BarycentricMap build_barycentric_map(const Mesh& scan, const Mesh& target);

// Moves every scan vertex by the barycentric blend of its mapped triangle's
// corner displacements (post - pre). Scan topology and colors are preserved.
Mesh transfer_prediction(const Mesh& scan, const BarycentricMap& map, const Mesh& pre_model,
                         const Mesh& post_model);

// Decoded frames along the straight latent path; the first and last frames
// are bit-exact decodes of the endpoint codes.
std::vector<Mesh> interpolate_codes(const MorphableModel& model, const LatentCode& code_pre,
                                    const LatentCode& code_pred, int steps);

// Writes frame_%04d.obj per frame. With a reference mesh, also writes
// distances.csv (frame,hd_mm,cd) and per-vertex nearest distances to the
// reference as frame_%04d.dist, one float per line in vertex order.
void export_sequence(std::span<const Mesh> frames, const std::filesystem::path& dir,
                     const Mesh* reference = nullptr);

} // namespace orthopred
