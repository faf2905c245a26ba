#include "orthopred/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "orthopred/errors.hpp"

namespace orthopred {

namespace {
inline double coord(const Vec3& v, int axis) {
    return axis == 0 ? v.x : (axis == 1 ? v.y : v.z);
}
} // namespace

KdTree::KdTree(std::vector<Vec3> points, int leaf_size)
    : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
    if (points_.empty()) {
        throw DataError("KdTree over an empty point set");
    }
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / static_cast<size_t>(leaf_size_) + 4);
    root_ = build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});

    if (end - begin <= leaf_size_) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }

    // Split along the axis with the widest extent.
    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        const Vec3& p = points_[order_[i]];
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    const Vec3 extent = hi - lo;
    int axis = 0;
    if (extent.y > extent.x) axis = 1;
    if (extent.z > coord(extent, axis)) axis = 2;

    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         const double ca = coord(points_[a], axis);
                         const double cb = coord(points_[b], axis);
                         return ca < cb || (ca == cb && a < b);
                     });

    nodes_[id].axis = axis;
    nodes_[id].split = coord(points_[order_[mid]], axis);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::search(int node, const Vec3& query, Hit& best) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const int idx = order_[i];
            const double d2 = squared_norm(points_[idx] - query);
            if (d2 < best.dist2 || (d2 == best.dist2 && idx < best.index)) {
                best.dist2 = d2;
                best.index = idx;
            }
        }
        return;
    }
    const double diff = coord(query, n.axis) - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search(near, query, best);
    // The far side may still hold an equal-distance point with a lower index.
    if (diff * diff <= best.dist2) {
        search(far, query, best);
    }
}

KdTree::Hit KdTree::nearest(const Vec3& query) const {
    Hit best;
    best.index = size();
    best.dist2 = std::numeric_limits<double>::infinity();
    search(root_, query, best);
    return best;
}

} // namespace orthopred
