#pragma once

#include <span>

#include "orthopred/geometry.hpp"

namespace orthopred {

// max( sup_a inf_b |a-b| , sup_b inf_a |a-b| ), in mm.
double hausdorff_distance(std::span<const Vec3> a, std::span<const Vec3> b);

// SquaredMm2 is the canonical form:
//   (1/|A|) sum_a min_b |a-b|^2 + (1/|B|) sum_b min_a |b-a|^2   [mm^2]
// RootedMm takes per-point roots before averaging, for mm-unit reporting:
//   (1/|A|) sum_a min_b |a-b|   + (1/|B|) sum_b min_a |b-a|     [mm]
enum class ChamferVariant { SquaredMm2, RootedMm };

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b,
                        ChamferVariant variant = ChamferVariant::SquaredMm2);

} // namespace orthopred
