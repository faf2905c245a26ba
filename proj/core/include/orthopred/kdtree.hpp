#pragma once

#include <vector>

#include "orthopred/geometry.hpp"

namespace orthopred {

// Axis-aligned KD-tree over a fixed point set. Nearest-neighbor queries are
// bit-identical to an exhaustive scan with the tie rule "smaller squared
// distance wins, equal distances resolve to the lower point index".
class KdTree {
public:
    explicit KdTree(std::vector<Vec3> points, int leaf_size = 16);

    struct Hit {
        int index = -1;
        double dist2 = 0.0;
    };

    Hit nearest(const Vec3& query) const;

    int size() const { return static_cast<int>(points_.size()); }
    const std::vector<Vec3>& points() const { return points_; }

private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0; // leaf range into order_
    };

    int build(int begin, int end);
    void search(int node, const Vec3& query, Hit& best) const;

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int leaf_size_;
    int root_ = -1;
};

} // namespace orthopred
