#include "orthopred/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "orthopred/errors.hpp"
#include "orthopred/kdtree.hpp"

namespace orthopred {

namespace {

void require_nonempty(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.empty() || b.empty()) {
        throw DataError("point-set metric on an empty set");
    }
}

double directed_max_dist2(std::span<const Vec3> from, const KdTree& to) {
    double worst = 0.0;
    for (const Vec3& p : from) {
        worst = std::max(worst, to.nearest(p).dist2);
    }
    return worst;
}

double directed_sum(std::span<const Vec3> from, const KdTree& to, bool rooted) {
    double sum = 0.0;
    for (const Vec3& p : from) {
        const double d2 = to.nearest(p).dist2;
        sum += rooted ? std::sqrt(d2) : d2;
    }
    return sum;
}

} // namespace

double hausdorff_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
    require_nonempty(a, b);
    const KdTree tree_a(std::vector<Vec3>(a.begin(), a.end()));
    const KdTree tree_b(std::vector<Vec3>(b.begin(), b.end()));
    const double d2 = std::max(directed_max_dist2(a, tree_b), directed_max_dist2(b, tree_a));
    return std::sqrt(d2);
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b, ChamferVariant variant) {
    require_nonempty(a, b);
    const bool rooted = variant == ChamferVariant::RootedMm;
    const KdTree tree_a(std::vector<Vec3>(a.begin(), a.end()));
    const KdTree tree_b(std::vector<Vec3>(b.begin(), b.end()));
    return directed_sum(a, tree_b, rooted) / static_cast<double>(a.size()) +
           directed_sum(b, tree_a, rooted) / static_cast<double>(b.size());
}

} // namespace orthopred
