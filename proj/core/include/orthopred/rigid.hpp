#pragma once

#include <Eigen/Core>
#include <span>

#include "orthopred/geometry.hpp"
#include "orthopred/landmarks.hpp"

namespace orthopred {

// Proper rigid motion x -> R*x + t (no scaling, det(R) = +1).
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Vec3 apply(const Vec3& p) const {
        const Eigen::Vector3d q = rotation * Eigen::Vector3d(p.x, p.y, p.z) + translation;
        return {q.x(), q.y(), q.z()};
    }
    RigidTransform inverse() const {
        RigidTransform inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }
};

// Least-squares rigid alignment (Kabsch): minimizes sum |R*s_i + t - t_i|^2
// over proper rotations. Reflections are never returned. Throws NumericError
// when the source points are collinear or coincident.
RigidTransform rigid_align(std::span<const Vec3> source, std::span<const Vec3> target);
RigidTransform rigid_align(const LandmarkSet& source, const LandmarkSet& target);

Mesh transformed(const Mesh& mesh, const RigidTransform& rt);
LandmarkSet transformed(const LandmarkSet& landmarks, const RigidTransform& rt);

} // namespace orthopred
