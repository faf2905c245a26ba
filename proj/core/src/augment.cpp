#include "orthopred/augment.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "orthopred/errors.hpp"

namespace orthopred {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace

Plane split_plane(const Mesh& mesh, const LandmarkSet& landmarks, const AugmentConfig& config) {
    (void)mesh;
    if (config.split_landmark < 0 || config.split_landmark >= LandmarkSet::kCount) {
        throw ConfigError("split landmark index out of range");
    }
    const Vec3& anchor = landmarks[config.split_landmark];
    if (!is_finite(anchor)) {
        throw DataError("split landmark is not finite");
    }
    return Plane::through(anchor, config.vertical_axis);
}

Mesh stitch(const Mesh& upper_source, const Mesh& lower_source, const Plane& plane,
            double band_mm) {
    if (upper_source.vertices.size() != lower_source.vertices.size() ||
        upper_source.triangles != lower_source.triangles) {
        throw DataError("stitch: sources must share topology");
    }
    if (band_mm < 0.0) {
        throw ConfigError("blend band must be >= 0");
    }
    Mesh out = lower_source;
    for (size_t i = 0; i < out.vertices.size(); ++i) {
        const Vec3& up = upper_source.vertices[i];
        const double s = signed_plane_distance(up, plane);
        double weight;
        if (band_mm == 0.0) {
            weight = s > 0.0 ? 1.0 : 0.0;
        } else {
            weight = smoothstep01((s + band_mm) / (2.0 * band_mm));
        }
        // lower + w*(upper-lower): exact at w==0 and for equal sources.
        if (weight >= 1.0) {
            out.vertices[i] = up;
        } else if (weight > 0.0) {
            out.vertices[i] = lower_source.vertices[i] + weight * (up - lower_source.vertices[i]);
        }
    }
    return out;
}

GeneratedPair generate_pair(const MorphableModel& model, const PatientPair& source,
                            const AugmentConfig& config, std::uint64_t draw_seed) {
    const int K = model.mode_count();
    if (source.pre.code.size() != K || source.post.code.size() != K) {
        throw DataError("generate_pair: source codes do not match the model");
    }
    if (config.sigma_xi <= 0.0) {
        throw ConfigError("sigma_xi must be positive");
    }

    std::mt19937_64 rng(draw_seed);
    std::normal_distribution<double> gaussian(0.0, config.sigma_xi);
    LatentCode xi(K);
    for (int k = 0; k < K; ++k) {
        xi[k] = gaussian(rng);
    }

    const LatentCode gen_code = source.pre.code + xi;
    const Mesh generated = decode(model, gen_code);
    const LandmarkSet gen_landmarks = landmark_positions(model, gen_code);
    const Plane plane = split_plane(generated, gen_landmarks, config);

    const Mesh pre_decoded = decode(model, source.pre.code);
    const Mesh post_decoded = decode(model, source.post.code);
    Mesh stitched_pre = stitch(generated, pre_decoded, plane, config.band_mm);
    Mesh stitched_post = stitch(generated, post_decoded, plane, config.band_mm);

    auto stored_landmarks = [&model](const Mesh& mesh) {
        LandmarkSet lm;
        for (int l = 0; l < LandmarkSet::kCount; ++l) {
            lm[l] = mesh.vertices[model.landmark_vertices[l]];
        }
        return lm;
    };
    const LandmarkSet pre_lm = stored_landmarks(stitched_pre);
    const LandmarkSet post_lm = stored_landmarks(stitched_post);

    GeneratedPair out;
    const FitResult pre_fit = fit(model, stitched_pre, pre_lm, config.fit);
    const FitResult post_fit = fit(model, stitched_post, post_lm, config.fit);
    out.pre_fit_error_mm = pre_fit.report.mean_landmark_error_mm;
    out.post_fit_error_mm = post_fit.report.mean_landmark_error_mm;
    // tau may be infinity, in which case every draw passes the cleaning step.
    out.accepted = !(out.pre_fit_error_mm > config.tau_mm) &&
                   !(out.post_fit_error_mm > config.tau_mm);
    if (!out.accepted) {
        return out;
    }

    out.pair.provenance = Provenance::Synthetic;
    out.pair.pre.mesh = std::move(stitched_pre);
    out.pair.post.mesh = std::move(stitched_post);
    out.pair.pre.landmarks = pre_lm;
    out.pair.post.landmarks = post_lm;
    out.pair.pre.code = pre_fit.code;
    out.pair.post.code = post_fit.code;
    out.pair.pre.fit = pre_fit.report;
    out.pair.post.fit = post_fit.report;
    return out;
}

std::pair<std::vector<PatientPair>, AugmentReport> augment_dataset(
    const MorphableModel& model, std::span<const PatientPair> train_pairs,
    const AugmentConfig& config) {
    if (train_pairs.empty()) {
        throw DataError("augment_dataset: empty training set");
    }
    if (config.factor < 1) {
        throw ConfigError("augmentation factor must be >= 1");
    }

    std::vector<PatientPair> synthetic;
    synthetic.reserve(train_pairs.size() * static_cast<size_t>(config.factor));
    AugmentReport report;

    for (size_t src = 0; src < train_pairs.size(); ++src) {
        for (int draw = 0; draw < config.factor; ++draw) {
            bool placed = false;
            for (int attempt = 0; attempt <= config.max_retries && !placed; ++attempt) {
                const std::uint64_t draw_seed = mix_seed(
                    mix_seed(mix_seed(config.seed, src), static_cast<std::uint64_t>(draw)),
                    static_cast<std::uint64_t>(attempt));
                GeneratedPair gen = generate_pair(model, train_pairs[src], config, draw_seed);
                if (gen.accepted) {
                    std::ostringstream os;
                    os << train_pairs[src].id << "-aug" << draw;
                    gen.pair.id = os.str();
                    synthetic.push_back(std::move(gen.pair));
                    ++report.generated;
                    placed = true;
                } else {
                    ++report.rejected;
                    report.rejection_mean_error_mm.push_back(
                        std::max(gen.pre_fit_error_mm, gen.post_fit_error_mm));
                }
            }
            if (!placed) {
                ++report.shortfall;
            }
        }
    }
    return {std::move(synthetic), report};
}

} // namespace orthopred
