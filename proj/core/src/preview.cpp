#include "orthopred/preview.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>

#include "orthopred/errors.hpp"
#include "orthopred/kdtree.hpp"
#include "orthopred/metrics.hpp"
#include "orthopred/obj_io.hpp"

namespace orthopred {

namespace {

struct ClosestPoint {
    Vec3 point;
    double l1 = 0.0, l2 = 0.0, l3 = 0.0; // barycentric w.r.t. (a, b, c)
};

// Closest point on triangle abc to p, with clamped barycentrics
// (region-by-region case analysis).
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                       const Vec3& c) {
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;

    const double d1 = dot(ab, ap);
    const double d2 = dot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        return {a, 1.0, 0.0, 0.0};
    }

    const Vec3 bp = p - b;
    const double d3 = dot(ab, bp);
    const double d4 = dot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) {
        return {b, 0.0, 1.0, 0.0};
    }

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {a + ab * v, 1.0 - v, v, 0.0};
    }

    const Vec3 cp = p - c;
    const double d5 = dot(ab, cp);
    const double d6 = dot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) {
        return {c, 0.0, 0.0, 1.0};
    }

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {a + ac * w, 1.0 - w, 0.0, w};
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {b + (c - b) * w, 0.0, 1.0 - w, w};
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom;
    const double w = vc * denom;
    return {a + ab * v + ac * w, 1.0 - v - w, v, w};
}

// Median-split AABB tree over triangles.
class TriangleTree {
public:
    explicit TriangleTree(const Mesh& mesh) : mesh_(mesh) {
        order_.resize(mesh.triangles.size());
        std::iota(order_.begin(), order_.end(), 0);
        boxes_lo_.resize(mesh.triangles.size());
        boxes_hi_.resize(mesh.triangles.size());
        centroids_.resize(mesh.triangles.size());
        for (size_t t = 0; t < mesh.triangles.size(); ++t) {
            const auto& tri = mesh.triangles[t];
            const Vec3& a = mesh.vertices[tri[0]];
            const Vec3& b = mesh.vertices[tri[1]];
            const Vec3& c = mesh.vertices[tri[2]];
            boxes_lo_[t] = {std::min({a.x, b.x, c.x}), std::min({a.y, b.y, c.y}),
                            std::min({a.z, b.z, c.z})};
            boxes_hi_[t] = {std::max({a.x, b.x, c.x}), std::max({a.y, b.y, c.y}),
                            std::max({a.z, b.z, c.z})};
            centroids_[t] = (a + b + c) / 3.0;
        }
        root_ = build(0, static_cast<int>(order_.size()));
    }

    struct Hit {
        int triangle = -1;
        double dist2 = std::numeric_limits<double>::infinity();
        ClosestPoint cp;
    };

    Hit closest(const Vec3& query) const {
        Hit best;
        best.triangle = static_cast<int>(mesh_.triangles.size());
        search(root_, query, best);
        return best;
    }

private:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1;
        int begin = 0, end = 0; // leaf range when left < 0
    };

    static double box_dist2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double v = q[k];
            const double l = lo[k];
            const double h = hi[k];
            if (v < l) d2 += (l - v) * (l - v);
            else if (v > h) d2 += (v - h) * (v - h);
        }
        return d2;
    }

    int build(int begin, int end) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({});
        Vec3 lo = boxes_lo_[order_[begin]];
        Vec3 hi = boxes_hi_[order_[begin]];
        for (int i = begin + 1; i < end; ++i) {
            const Vec3& bl = boxes_lo_[order_[i]];
            const Vec3& bh = boxes_hi_[order_[i]];
            lo = {std::min(lo.x, bl.x), std::min(lo.y, bl.y), std::min(lo.z, bl.z)};
            hi = {std::max(hi.x, bh.x), std::max(hi.y, bh.y), std::max(hi.z, bh.z)};
        }
        nodes_[id].lo = lo;
        nodes_[id].hi = hi;
        if (end - begin <= 8) {
            nodes_[id].begin = begin;
            nodes_[id].end = end;
            return id;
        }
        const Vec3 extent = hi - lo;
        int axis = 0;
        if (extent.y > extent.x) axis = 1;
        if (extent[axis] < extent.z) axis = 2;
        const int mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) {
                             const double ca = centroids_[a][axis];
                             const double cb = centroids_[b][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(int node, const Vec3& query, Hit& best) const {
        const Node& n = nodes_[node];
        if (n.left < 0) {
            for (int i = n.begin; i < n.end; ++i) {
                const int t = order_[i];
                const auto& tri = mesh_.triangles[t];
                const ClosestPoint cp = closest_point_on_triangle(
                    query, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]], mesh_.vertices[tri[2]]);
                const double d2 = squared_norm(cp.point - query);
                if (d2 < best.dist2 || (d2 == best.dist2 && t < best.triangle)) {
                    best.dist2 = d2;
                    best.triangle = t;
                    best.cp = cp;
                }
            }
            return;
        }
        const double dl = box_dist2(query, nodes_[n.left].lo, nodes_[n.left].hi);
        const double dr = box_dist2(query, nodes_[n.right].lo, nodes_[n.right].hi);
        const int first = dl <= dr ? n.left : n.right;
        const int second = dl <= dr ? n.right : n.left;
        const double dfirst = std::min(dl, dr);
        const double dsecond = std::max(dl, dr);
        if (dfirst <= best.dist2) {
            search(first, query, best);
        }
        if (dsecond <= best.dist2) {
            search(second, query, best);
        }
    }

    const Mesh& mesh_;
    std::vector<int> order_;
    std::vector<Vec3> boxes_lo_, boxes_hi_, centroids_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

} // namespace

BarycentricMap build_barycentric_map(const Mesh& scan, const Mesh& target) {
    if (scan.vertices.empty() || target.triangles.empty()) {
        throw DataError("build_barycentric_map: empty scan or target");
    }
    const TriangleTree tree(target);
    BarycentricMap map;
    map.entries.reserve(scan.vertices.size());
    for (const Vec3& v : scan.vertices) {
        const TriangleTree::Hit hit = tree.closest(v);
        map.entries.push_back({hit.triangle, hit.cp.l1, hit.cp.l2, hit.cp.l3});
    }
    return map;
}

Mesh transfer_prediction(const Mesh& scan, const BarycentricMap& map, const Mesh& pre_model,
                         const Mesh& post_model) {
    if (pre_model.vertices.size() != post_model.vertices.size() ||
        pre_model.triangles != post_model.triangles) {
        throw DataError("transfer_prediction: pre/post models must share topology");
    }
    if (map.entries.size() != scan.vertices.size()) {
        throw DataError("transfer_prediction: map size differs from scan vertex count");
    }
    Mesh out = scan;
    for (size_t i = 0; i < out.vertices.size(); ++i) {
        const auto& e = map.entries[i];
        const auto& tri = pre_model.triangles[e.triangle];
        const Vec3 d1 = post_model.vertices[tri[0]] - pre_model.vertices[tri[0]];
        const Vec3 d2 = post_model.vertices[tri[1]] - pre_model.vertices[tri[1]];
        const Vec3 d3 = post_model.vertices[tri[2]] - pre_model.vertices[tri[2]];
        // d3 + l1*(d1-d3) + l2*(d2-d3): partition of unity holds exactly, so a
        // uniform corner displacement transfers verbatim.
        const Vec3 displacement = d3 + e.l1 * (d1 - d3) + e.l2 * (d2 - d3);
        out.vertices[i] += displacement;
    }
    return out;
}

std::vector<Mesh> interpolate_codes(const MorphableModel& model, const LatentCode& code_pre,
                                    const LatentCode& code_pred, int steps) {
    if (steps < 2) {
        throw ConfigError("interpolation needs at least 2 steps");
    }
    std::vector<Mesh> frames;
    frames.reserve(steps);
    for (int i = 0; i < steps; ++i) {
        if (i == 0) {
            frames.push_back(decode(model, code_pre));
        } else if (i == steps - 1) {
            frames.push_back(decode(model, code_pred));
        } else {
            const double t = static_cast<double>(i) / (steps - 1);
            const LatentCode code = code_pre + t * (code_pred - code_pre);
            frames.push_back(decode(model, code));
        }
    }
    return frames;
}

void export_sequence(std::span<const Mesh> frames, const std::filesystem::path& dir,
                     const Mesh* reference) {
    if (frames.empty()) {
        throw DataError("export_sequence: no frames");
    }
    std::filesystem::create_directories(dir);

    std::unique_ptr<KdTree> ref_tree;
    std::vector<Vec3> ref_points;
    std::FILE* csv = nullptr;
    if (reference != nullptr) {
        ref_points = reference->vertices;
        ref_tree = std::make_unique<KdTree>(ref_points);
        csv = std::fopen((dir / "distances.csv").string().c_str(), "w");
        if (!csv) {
            throw DataError("cannot write distances.csv in " + dir.string());
        }
        std::fprintf(csv, "frame,hd_mm,cd\n");
    }

    char name[32];
    for (size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%04zu.obj", i);
        save_obj(frames[i], dir / name);
        if (reference != nullptr) {
            const double hd = hausdorff_distance(frames[i].vertices, ref_points);
            const double cd = chamfer_distance(frames[i].vertices, ref_points);
            std::fprintf(csv, "%zu,%.9g,%.9g\n", i, hd, cd);

            std::snprintf(name, sizeof(name), "frame_%04zu.dist", i);
            std::FILE* distf = std::fopen((dir / name).string().c_str(), "w");
            if (!distf) {
                if (csv) std::fclose(csv);
                throw DataError("cannot write per-vertex distances in " + dir.string());
            }
            for (const Vec3& v : frames[i].vertices) {
                std::fprintf(distf, "%.9g\n", std::sqrt(ref_tree->nearest(v).dist2));
            }
            std::fclose(distf);
        }
    }
    if (csv) {
        std::fclose(csv);
    }
}

} // namespace orthopred
