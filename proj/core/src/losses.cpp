#include "orthopred/losses.hpp"

#include <cmath>

#include "orthopred/errors.hpp"

namespace orthopred {

namespace {

// L(d) = 0 below 3 mm, (d-3)^2 beyond; dL/dd uses the left subgradient 0 at
// exactly 3 mm.
constexpr double kAcceptableLipMm = 3.0;

double lip_penalty(double d, double& dloss_dd) {
    if (d < kAcceptableLipMm || d == kAcceptableLipMm) {
        dloss_dd = 0.0;
        return 0.0;
    }
    dloss_dd = 2.0 * (d - kAcceptableLipMm);
    const double e = d - kAcceptableLipMm;
    return e * e;
}

// Distance from p to the line through a,b with gradients. r is the rejection
// of (p-a) from the line direction; grad_p = r_hat, and the endpoint gradients
// follow from d^2 = |p-a|^2 - ((p-a)·u_hat)^2.
struct LineDistance {
    double d = 0.0;
    Vec3 grad_p, grad_a, grad_b;
};

LineDistance line_distance_with_grad(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 u = b - a;
    const double ulen = norm(u);
    if (ulen <= 1e-9) {
        throw DataError("degenerate s-line: subnasale and pogonion coincide");
    }
    const Vec3 uhat = u / ulen;
    const Vec3 w = p - a;
    const double s = dot(w, uhat);
    const Vec3 r = w - uhat * s;
    LineDistance out;
    out.d = norm(r);
    if (out.d > 0.0) {
        const Vec3 rhat = r / out.d;
        out.grad_p = rhat;
        out.grad_a = rhat * (s / ulen - 1.0);
        out.grad_b = rhat * (-s / ulen);
    }
    return out;
}

} // namespace

MouthConvexityResult mouth_convexity_loss(const LandmarkSet& landmarks) {
    const Vec3& sn = landmarks.subnasale();
    const Vec3& pg = landmarks.pogonion();

    MouthConvexityResult out;
    const LineDistance du = line_distance_with_grad(landmarks.upper_lip_mid(), sn, pg);
    const LineDistance dl = line_distance_with_grad(landmarks.lower_lip_mid(), sn, pg);
    out.upper_distance_mm = du.d;
    out.lower_distance_mm = dl.d;

    double du_scale = 0.0, dl_scale = 0.0;
    out.value = lip_penalty(du.d, du_scale) + lip_penalty(dl.d, dl_scale);
    out.grad_upper_lip = du.grad_p * du_scale;
    out.grad_lower_lip = dl.grad_p * dl_scale;
    out.grad_subnasale = du.grad_a * du_scale + dl.grad_a * dl_scale;
    out.grad_pogonion = du.grad_b * du_scale + dl.grad_b * dl_scale;
    return out;
}

AsymmetryResult asymmetry_loss(const Mesh& mesh, const SymmetryPairing& pairing,
                               const Plane& plane, LossWeights::AsymmetryNormal direction) {
    AsymmetryResult out;
    out.vertex_grad.assign(mesh.vertices.size(), Vec3{});
    const Vec3 n_dir = direction == LossWeights::AsymmetryNormal::WorldX
                           ? Vec3{1.0, 0.0, 0.0}
                           : plane.normal;

    for (const auto& [pi, qi] : pairing.pairs) {
        const Vec3& p = mesh.vertices[pi];
        const Vec3& q = mesh.vertices[qi];
        const Vec3 e_raw = p - q;
        const double elen = norm(e_raw);
        if (elen < 1e-9) {
            ++out.skipped_pairs;
            continue;
        }

        // Midpoint distance to the plane.
        const Vec3 m = (p + q) * 0.5;
        const double signed_d = signed_plane_distance(m, plane);
        out.value += std::abs(signed_d);
        const double sgn = signed_d > 0.0 ? 1.0 : (signed_d < 0.0 ? -1.0 : 0.0);
        out.vertex_grad[pi] += plane.normal * (0.5 * sgn);
        out.vertex_grad[qi] += plane.normal * (0.5 * sgn);

        // Direction misalignment, pair orientation canonicalized to n·v >= 0.
        const bool flipped = dot(n_dir, e_raw) < 0.0;
        const Vec3 e = flipped ? -e_raw : e_raw;
        const Vec3 vhat = e / elen;
        out.value += 1.0 - dot(n_dir, vhat);
        const Vec3 g_e = (n_dir - vhat * dot(n_dir, vhat)) * (-1.0 / elen);
        if (flipped) {
            out.vertex_grad[pi] -= g_e;
            out.vertex_grad[qi] += g_e;
        } else {
            out.vertex_grad[pi] += g_e;
            out.vertex_grad[qi] -= g_e;
        }
    }
    return out;
}

LatentCodeLossResult latent_code_loss(const LatentCode& pred, const LatentCode& gt) {
    if (pred.size() != gt.size()) {
        throw DataError("latent code length mismatch: " + std::to_string(pred.size()) + " vs " +
                        std::to_string(gt.size()));
    }
    LatentCodeLossResult out;
    const Eigen::VectorXd diff = pred - gt;
    out.value = diff.squaredNorm();
    out.grad = 2.0 * diff;
    return out;
}

GeometryLossResult geometry_loss(const Mesh& pred, const Mesh& gt, const RegionMask& face,
                                 double w_normal) {
    if (pred.vertices.size() != gt.vertices.size() || pred.triangles != gt.triangles) {
        throw DataError("geometry_loss: prediction and ground truth must share topology");
    }
    GeometryLossResult out;
    out.vertex_grad.assign(pred.vertices.size(), Vec3{});

    const double n_pts = static_cast<double>(face.vertices.size());
    if (n_pts > 0.0) {
        for (int v : face.vertices) {
            const Vec3 diff = pred.vertices[v] - gt.vertices[v];
            out.point_term += squared_norm(diff);
            out.vertex_grad[v] += diff * (2.0 / n_pts);
        }
        out.point_term /= n_pts;
    }

    // Normal misalignment over masked triangles; degenerate predicted or
    // ground-truth triangles drop out of the average.
    double normal_sum = 0.0;
    struct TriGrad {
        int tri;
        Vec3 ga, gb, gc;
    };
    std::vector<TriGrad> tri_grads;
    tri_grads.reserve(face.triangles.size());
    int included = 0;
    for (int t : face.triangles) {
        const auto& tri = pred.triangles[t];
        const Vec3& a = pred.vertices[tri[0]];
        const Vec3& b = pred.vertices[tri[1]];
        const Vec3& c = pred.vertices[tri[2]];
        const Vec3 e1 = b - a;
        const Vec3 e2 = c - a;
        const Vec3 n_pred = cross(e1, e2);
        const double pred_len = norm(n_pred);

        const Vec3& ga = gt.vertices[tri[0]];
        const Vec3 n_gt = cross(gt.vertices[tri[1]] - ga, gt.vertices[tri[2]] - ga);
        const double gt_len = norm(n_gt);

        if (0.5 * pred_len <= 1e-12 || 0.5 * gt_len <= 1e-12) {
            ++out.degenerate_triangles;
            continue;
        }
        ++included;
        const Vec3 n_hat = n_pred / pred_len;
        const Vec3 g_hat = n_gt / gt_len;
        normal_sum += 1.0 - dot(n_hat, g_hat);

        // d(-cos)/dn, then chain through n = e1 x e2.
        const Vec3 dcos_dn = (g_hat - n_hat * dot(n_hat, g_hat)) / pred_len;
        const Vec3 g = -dcos_dn;
        const Vec3 grad_e1 = cross(e2, g);
        const Vec3 grad_e2 = cross(g, e1);
        tri_grads.push_back({t, -(grad_e1 + grad_e2), grad_e1, grad_e2});
    }
    if (included > 0) {
        const double scale = w_normal / included;
        out.normal_term = w_normal * normal_sum / included;
        for (const TriGrad& tg : tri_grads) {
            const auto& tri = pred.triangles[tg.tri];
            out.vertex_grad[tri[0]] += tg.ga * scale;
            out.vertex_grad[tri[1]] += tg.gb * scale;
            out.vertex_grad[tri[2]] += tg.gc * scale;
        }
    }

    out.value = out.point_term + out.normal_term;
    return out;
}

GtCache make_gt_cache(const MorphableModel& model, const LatentCode& gt_code) {
    return GtCache{gt_code, decode(model, gt_code)};
}

LossBreakdown total_loss(const MorphableModel& model, const LatentCode& pred_code,
                         const GtCache& gt, const LossWeights& weights,
                         const Plane* pinned_plane) {
    const Mesh pred = decode(model, pred_code);
    LandmarkSet lm;
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        lm[l] = pred.vertices[model.landmark_vertices[l]];
    }
    const Plane plane = pinned_plane ? *pinned_plane : fit_midsagittal_plane(lm);

    const MouthConvexityResult mouth = mouth_convexity_loss(lm);
    const AsymmetryResult asym =
        asymmetry_loss(pred, model.chin_pairing, plane, weights.asymmetry_normal);
    const LatentCodeLossResult latent = latent_code_loss(pred_code, gt.code);
    const GeometryLossResult geom = geometry_loss(pred, gt.mesh, model.face_mask, weights.w_normal);

    LossBreakdown out;
    out.mouth_convexity = mouth.value;
    out.asymmetry = asym.value;
    out.latent_code = latent.value;
    out.geometry = geom.value;
    out.total = weights.alpha_mouth * mouth.value + weights.alpha_asymmetry * asym.value +
                weights.alpha_latent * latent.value + weights.alpha_geometry * geom.value;
    out.skipped_pairs = asym.skipped_pairs;
    out.degenerate_triangles = geom.degenerate_triangles;

    // Assemble the vertex gradient, then chain through the linear decoder:
    // d/d(beta) = diag(sigma) * B^T * d/d(vertices).
    const int n = model.vertex_count();
    Eigen::VectorXd vertex_grad = Eigen::VectorXd::Zero(3 * n);
    auto scatter = [&vertex_grad](int vertex, const Vec3& g) {
        vertex_grad[3 * vertex] += g.x;
        vertex_grad[3 * vertex + 1] += g.y;
        vertex_grad[3 * vertex + 2] += g.z;
    };
    scatter(model.landmark_vertices[LandmarkSet::kSubnasale],
            weights.alpha_mouth * mouth.grad_subnasale);
    scatter(model.landmark_vertices[LandmarkSet::kPogonion],
            weights.alpha_mouth * mouth.grad_pogonion);
    scatter(model.landmark_vertices[LandmarkSet::kUpperLipMid],
            weights.alpha_mouth * mouth.grad_upper_lip);
    scatter(model.landmark_vertices[LandmarkSet::kLowerLipMid],
            weights.alpha_mouth * mouth.grad_lower_lip);
    for (int i = 0; i < n; ++i) {
        const Vec3 g = weights.alpha_asymmetry * asym.vertex_grad[i] +
                       weights.alpha_geometry * geom.vertex_grad[i];
        vertex_grad[3 * i] += g.x;
        vertex_grad[3 * i + 1] += g.y;
        vertex_grad[3 * i + 2] += g.z;
    }
    out.code_grad = model.mode_scale_mm.cwiseProduct(model.basis.transpose() * vertex_grad) +
                    weights.alpha_latent * latent.grad;
    return out;
}

LossBreakdown total_loss(const MorphableModel& model, const LatentCode& pred_code,
                         const LatentCode& gt_code, const LossWeights& weights) {
    return total_loss(model, pred_code, make_gt_cache(model, gt_code), weights, nullptr);
}

} // namespace orthopred
