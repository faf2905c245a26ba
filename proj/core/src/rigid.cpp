#include "orthopred/rigid.hpp"

#include <Eigen/Dense>

#include "orthopred/errors.hpp"

namespace orthopred {

RigidTransform rigid_align(std::span<const Vec3> source, std::span<const Vec3> target) {
    if (source.size() != target.size() || source.size() < 3) {
        throw DataError("rigid_align needs two equal-size point sets with >= 3 points");
    }
    const int n = static_cast<int>(source.size());

    Eigen::Vector3d cs = Eigen::Vector3d::Zero();
    Eigen::Vector3d ct = Eigen::Vector3d::Zero();
    for (int i = 0; i < n; ++i) {
        cs += Eigen::Vector3d(source[i].x, source[i].y, source[i].z);
        ct += Eigen::Vector3d(target[i].x, target[i].y, target[i].z);
    }
    cs /= n;
    ct /= n;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();      // cross-covariance
    Eigen::Matrix3d spread = Eigen::Matrix3d::Zero();   // source scatter, for degeneracy check
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d s = Eigen::Vector3d(source[i].x, source[i].y, source[i].z) - cs;
        const Eigen::Vector3d t = Eigen::Vector3d(target[i].x, target[i].y, target[i].z) - ct;
        cov += s * t.transpose();
        spread += s * s.transpose();
    }

    // Collinear (or coincident) source points leave the rotation underdetermined.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(spread);
    const Eigen::Vector3d ev = es.eigenvalues(); // ascending
    if (ev(2) <= 1e-12 || ev(1) <= 1e-9 * ev(2)) {
        throw NumericError("rigid_align: singular source configuration (collinear points)");
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;

    RigidTransform rt;
    rt.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    rt.translation = ct - rt.rotation * cs;
    return rt;
}

RigidTransform rigid_align(const LandmarkSet& source, const LandmarkSet& target) {
    return rigid_align(std::span<const Vec3>(source.points),
                       std::span<const Vec3>(target.points));
}

Mesh transformed(const Mesh& mesh, const RigidTransform& rt) {
    Mesh out = mesh;
    for (Vec3& v : out.vertices) {
        v = rt.apply(v);
    }
    return out;
}

LandmarkSet transformed(const LandmarkSet& landmarks, const RigidTransform& rt) {
    LandmarkSet out = landmarks;
    for (Vec3& p : out.points) {
        p = rt.apply(p);
    }
    return out;
}

} // namespace orthopred
