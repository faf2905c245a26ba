#pragma once

#include <array>
#include <filesystem>

#include "orthopred/geometry.hpp"

namespace orthopred {

// 68 facial landmarks following the standard 68-point numbering
// (17 jawline, 10 brows, 9 nose, 12 eyes, 20 mouth). The clinical accessors
// below are the single place where named points map to indices.
struct LandmarkSet {
    static constexpr int kCount = 68;

    static constexpr int kPogonion = 8;       // anterior chin point on the jawline
    static constexpr int kLeftBrowMid = 19;
    static constexpr int kRightBrowMid = 24;
    static constexpr int kSubnasale = 33;     // nose-base midpoint
    static constexpr int kLeftInnerEye = 39;
    static constexpr int kRightInnerEye = 42;
    static constexpr int kUpperLipMid = 51;
    static constexpr int kLowerLipMid = 57;

    std::array<Vec3, kCount> points{};

    const Vec3& operator[](int i) const { return points[static_cast<size_t>(i)]; }
    Vec3& operator[](int i) { return points[static_cast<size_t>(i)]; }

    const Vec3& pogonion() const { return points[kPogonion]; }
    const Vec3& subnasale() const { return points[kSubnasale]; }
    const Vec3& upper_lip_mid() const { return points[kUpperLipMid]; }
    const Vec3& lower_lip_mid() const { return points[kLowerLipMid]; }
    const Vec3& left_inner_eye() const { return points[kLeftInnerEye]; }
    const Vec3& right_inner_eye() const { return points[kRightInnerEye]; }
    const Vec3& left_brow_mid() const { return points[kLeftBrowMid]; }
    const Vec3& right_brow_mid() const { return points[kRightBrowMid]; }
};

// Plain text: 68 lines of "x y z" in mm, line order = landmark index.
LandmarkSet load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path);

// Mid-sagittal plane through the brow midpoint m1 = (leftBrowMid+rightBrowMid)/2
// and the inner-eye midpoint m2 = (leftInnerEye+rightInnerEye)/2. Both anchor
// points lie on the plane; among all such planes the normal is the world
// x-axis projected orthogonal to the m1->m2 line, oriented with positive x.
// If m1 and m2 coincide (within 1e-9) the plane is the x-normal plane through
// that point; if the x-axis is parallel to the m1->m2 line the configuration
// is degenerate and a NumericError is thrown.
Plane fit_midsagittal_plane(const LandmarkSet& landmarks);

} // namespace orthopred
