#include "orthopred/dataset.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "orthopred/errors.hpp"
#include "orthopred/obj_io.hpp"

namespace orthopred {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Landmarks targeted by the deformity directions.
const std::vector<int> kLipChinLandmarks = {6, 7, 8, 9, 10, 48, 49, 50, 51, 52, 53,
                                            54, 55, 56, 57, 58, 59, 60, 61, 62, 63,
                                            64, 65, 66, 67};
const std::vector<int> kChinLandmarks = {6, 7, 8, 9, 10};

// Solves for the code whose decoded landmark displacement best matches
// `target` (all non-targeted landmark coordinates pinned to zero, with extra
// weight so the rest of the face stays put), restricted to the given mode
// columns, then rescales so the mean displacement of the targeted coordinates
// equals 1 mm.
LatentCode solve_direction(const MorphableModel& model, const std::vector<int>& landmark_ids,
                           int axis, const std::vector<int>& mode_columns) {
    const int K = model.mode_count();
    const int rows = 3 * LandmarkSet::kCount;
    Eigen::MatrixXd jac(rows, static_cast<int>(mode_columns.size()));
    for (int l = 0; l < LandmarkSet::kCount; ++l) {
        const int v = model.landmark_vertices[l];
        for (size_t c = 0; c < mode_columns.size(); ++c) {
            const int k = mode_columns[c];
            const double s = model.mode_scale_mm[k];
            jac(3 * l, c) = model.basis(3 * v, k) * s;
            jac(3 * l + 1, c) = model.basis(3 * v + 1, k) * s;
            jac(3 * l + 2, c) = model.basis(3 * v + 2, k) * s;
        }
    }
    Eigen::VectorXd target = Eigen::VectorXd::Zero(rows);
    Eigen::VectorXd row_weight = Eigen::VectorXd::Constant(rows, 2.0); // pinned rows
    for (int l : landmark_ids) {
        target[3 * l + axis] = 1.0;
        row_weight[3 * l] = 1.0;
        row_weight[3 * l + 1] = 1.0;
        row_weight[3 * l + 2] = 1.0;
    }
    const Eigen::MatrixXd wjac = row_weight.asDiagonal() * jac;
    const Eigen::VectorXd wtarget = row_weight.cwiseProduct(target);
    const Eigen::MatrixXd normal = wjac.transpose() * wjac +
                                   1e-9 * Eigen::MatrixXd::Identity(jac.cols(), jac.cols());
    const Eigen::VectorXd sol = normal.ldlt().solve(wjac.transpose() * wtarget);

    // Calibrate: one unit of the direction = 1 mm mean motion on the targets.
    const Eigen::VectorXd achieved = jac * sol;
    double mean = 0.0;
    for (int l : landmark_ids) {
        mean += achieved[3 * l + axis];
    }
    mean /= static_cast<double>(landmark_ids.size());
    if (std::abs(mean) < 1e-6) {
        throw NumericError("deformity direction solve is rank-deficient for this model");
    }
    LatentCode dir = LatentCode::Zero(K);
    for (size_t c = 0; c < mode_columns.size(); ++c) {
        dir[mode_columns[c]] = sol[c] / mean;
    }
    return dir;
}

} // namespace

DeformityDirections deformity_directions(const MorphableModel& model) {
    const int K = model.mode_count();
    std::vector<int> all_modes(K), odd_modes;
    std::iota(all_modes.begin(), all_modes.end(), 0);
    for (int k = 1; k < K; k += 2) {
        odd_modes.push_back(k);
    }
    DeformityDirections dirs;
    dirs.protrude = solve_direction(model, kLipChinLandmarks, /*axis=*/2, all_modes);
    dirs.lateral = solve_direction(model, kChinLandmarks, /*axis=*/0, odd_modes);
    return dirs;
}

std::vector<PatientPair> generate_synthetic_cohort(const MorphableModel& model, int count,
                                                   const DeformityConfig& config) {
    if (count < 1) {
        throw ConfigError("cohort size must be >= 1");
    }
    if (config.protrusion_min_mm > config.protrusion_max_mm ||
        config.asymmetry_min_mm > config.asymmetry_max_mm ||
        config.correction_min > config.correction_max || config.correction_min <= 0.0 ||
        config.correction_max > 1.0) {
        throw ConfigError("deformity config ranges must be positive and ordered");
    }
    const DeformityDirections dirs = deformity_directions(model);
    const int K = model.mode_count();

    std::vector<PatientPair> pairs;
    pairs.reserve(count);
    for (int p = 0; p < count; ++p) {
        std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(p)));
        std::normal_distribution<double> gaussian(0.0, 0.5);
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        LatentCode base(K);
        for (int k = 0; k < K; ++k) {
            base[k] = gaussian(rng);
        }
        const double protrusion =
            config.protrusion_min_mm + u01(rng) * (config.protrusion_max_mm - config.protrusion_min_mm);
        const double asymmetry =
            config.asymmetry_min_mm + u01(rng) * (config.asymmetry_max_mm - config.asymmetry_min_mm);
        const double correction =
            config.correction_min + u01(rng) * (config.correction_max - config.correction_min);

        const LatentCode deformity = protrusion * dirs.protrude + asymmetry * dirs.lateral;

        PatientPair pair;
        {
            std::ostringstream os;
            os << "p" << std::setw(4) << std::setfill('0') << p;
            pair.id = os.str();
        }
        pair.provenance = Provenance::Real;
        pair.pre.code = base + deformity;
        pair.post.code = base + (1.0 - correction) * deformity;
        pair.pre.mesh = decode(model, pair.pre.code);
        pair.post.mesh = decode(model, pair.post.code);
        pair.pre.landmarks = landmark_positions(model, pair.pre.code);
        pair.post.landmarks = landmark_positions(model, pair.post.code);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::Real: return "real";
        case Provenance::Synthetic: return "synthetic";
        case Provenance::Augmented: return "augmented";
    }
    return "real";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "real") return Provenance::Real;
    if (s == "synthetic") return Provenance::Synthetic;
    if (s == "augmented") return Provenance::Augmented;
    throw DataError("unknown provenance '" + s + "'");
}

namespace {

void write_meta(const PatientPair& pair, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write " + path.string());
    }
    std::fprintf(f, "PAIR1\n");
    std::fprintf(f, "id %s\n", pair.id.c_str());
    std::fprintf(f, "provenance %s\n", to_string(pair.provenance).c_str());
    std::fprintf(f, "K %d\n", static_cast<int>(pair.pre.code.size()));
    std::fprintf(f, "code_pre");
    for (Eigen::Index k = 0; k < pair.pre.code.size(); ++k) {
        std::fprintf(f, " %.17g", pair.pre.code[k]);
    }
    std::fprintf(f, "\ncode_post");
    for (Eigen::Index k = 0; k < pair.post.code.size(); ++k) {
        std::fprintf(f, " %.17g", pair.post.code[k]);
    }
    std::fprintf(f, "\nfit_error_pre %.17g\n", pair.pre.fit.mean_landmark_error_mm);
    std::fprintf(f, "fit_error_post %.17g\n", pair.post.fit.mean_landmark_error_mm);
    std::fclose(f);
}

void read_meta(PatientPair& pair, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string magic;
    in >> magic;
    if (magic != "PAIR1") {
        throw DataError("not a PAIR1 meta file: " + path.string());
    }
    std::string key;
    int K = -1;
    while (in >> key) {
        if (key == "id") {
            in >> pair.id;
        } else if (key == "provenance") {
            std::string s;
            in >> s;
            pair.provenance = provenance_from_string(s);
        } else if (key == "K") {
            in >> K;
            if (K < 1) {
                throw DataError(path.string() + ": bad code length");
            }
        } else if (key == "code_pre" || key == "code_post") {
            if (K < 1) {
                throw DataError(path.string() + ": code before K header");
            }
            LatentCode code(K);
            for (int k = 0; k < K; ++k) {
                if (!(in >> code[k])) {
                    throw DataError(path.string() + ": truncated " + key);
                }
            }
            (key == "code_pre" ? pair.pre.code : pair.post.code) = code;
        } else if (key == "fit_error_pre") {
            in >> pair.pre.fit.mean_landmark_error_mm;
        } else if (key == "fit_error_post") {
            in >> pair.post.fit.mean_landmark_error_mm;
        } else {
            throw DataError(path.string() + ": unknown meta key '" + key + "'");
        }
    }
}

} // namespace

DatasetManifest save_dataset(std::span<const PatientPair> pairs, const MorphableModel& model,
                             std::uint64_t creation_seed, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    DatasetManifest manifest;
    manifest.model_seed = model.build_seed;
    manifest.model_modes = model.mode_count();
    manifest.model_resolution = model.build_resolution;
    manifest.creation_seed = creation_seed;

    std::set<std::string> ids;
    for (const PatientPair& pair : pairs) {
        if (!ids.insert(pair.id).second) {
            throw DataError("duplicate pair id '" + pair.id + "'");
        }
        const std::filesystem::path pdir = dir / pair.id;
        std::filesystem::create_directories(pdir);
        save_obj(pair.pre.mesh, pdir / "pre.obj");
        save_obj(pair.post.mesh, pdir / "post.obj");
        save_landmarks(pair.pre.landmarks, pdir / "pre.landmarks.txt");
        save_landmarks(pair.post.landmarks, pdir / "post.landmarks.txt");
        write_meta(pair, pdir / "meta.txt");
        manifest.entries.push_back({pair.id, pair.id, pair.provenance});
    }

    std::FILE* f = std::fopen((dir / "manifest.txt").string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write manifest in " + dir.string());
    }
    std::fprintf(f, "MANIFEST1\n");
    std::fprintf(f, "model_seed %llu\n", static_cast<unsigned long long>(manifest.model_seed));
    std::fprintf(f, "model_modes %d\n", manifest.model_modes);
    std::fprintf(f, "model_resolution %d\n", manifest.model_resolution);
    std::fprintf(f, "creation_seed %llu\n",
                 static_cast<unsigned long long>(manifest.creation_seed));
    std::fprintf(f, "pairs %zu\n", manifest.entries.size());
    for (const auto& e : manifest.entries) {
        std::fprintf(f, "%s %s %s\n", e.id.c_str(), e.directory.c_str(),
                     to_string(e.provenance).c_str());
    }
    std::fclose(f);
    return manifest;
}

std::vector<PatientPair> load_dataset(const std::filesystem::path& dir,
                                      DatasetManifest* manifest_out) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) {
        throw DataError("cannot open manifest: " + (dir / "manifest.txt").string());
    }
    std::string magic;
    in >> magic;
    if (magic != "MANIFEST1") {
        throw DataError("not a MANIFEST1 file: " + (dir / "manifest.txt").string());
    }
    DatasetManifest manifest;
    size_t count = 0;
    std::string key;
    while (in >> key) {
        if (key == "model_seed") {
            in >> manifest.model_seed;
        } else if (key == "model_modes") {
            in >> manifest.model_modes;
        } else if (key == "model_resolution") {
            in >> manifest.model_resolution;
        } else if (key == "creation_seed") {
            in >> manifest.creation_seed;
        } else if (key == "pairs") {
            in >> count;
            break;
        } else {
            throw DataError("unknown manifest key '" + key + "'");
        }
    }
    std::set<std::string> ids;
    std::vector<PatientPair> pairs;
    pairs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        DatasetManifest::Entry entry;
        std::string prov;
        if (!(in >> entry.id >> entry.directory >> prov)) {
            throw DataError("truncated manifest: expected " + std::to_string(count) + " entries");
        }
        entry.provenance = provenance_from_string(prov);
        if (!ids.insert(entry.id).second) {
            throw DataError("duplicate id in manifest: " + entry.id);
        }
        const std::filesystem::path pdir = dir / entry.directory;
        for (const char* file : {"pre.obj", "post.obj", "pre.landmarks.txt",
                                 "post.landmarks.txt", "meta.txt"}) {
            if (!std::filesystem::exists(pdir / file)) {
                throw DataError("manifest references missing file: " + (pdir / file).string());
            }
        }
        PatientPair pair;
        pair.pre.mesh = load_obj(pdir / "pre.obj");
        pair.post.mesh = load_obj(pdir / "post.obj");
        pair.pre.landmarks = load_landmarks(pdir / "pre.landmarks.txt");
        pair.post.landmarks = load_landmarks(pdir / "post.landmarks.txt");
        read_meta(pair, pdir / "meta.txt");
        if (pair.id != entry.id) {
            throw DataError("meta id '" + pair.id + "' disagrees with manifest id '" + entry.id +
                            "'");
        }
        pair.provenance = entry.provenance;
        manifest.entries.push_back(entry);
        pairs.push_back(std::move(pair));
    }
    if (manifest_out) {
        *manifest_out = manifest;
    }
    return pairs;
}

std::vector<std::vector<int>> split_kfold(int count, int k, std::uint64_t seed) {
    if (k < 2) {
        throw ConfigError("k-fold split needs k >= 2");
    }
    if (k > count) {
        throw DataError("k-fold split needs at least k items");
    }
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    // Consecutive folds; the first (count % k) folds get one extra item.
    std::vector<std::vector<int>> folds(k);
    const int base = count / k;
    const int extra = count % k;
    int cursor = 0;
    for (int f = 0; f < k; ++f) {
        const int size = base + (f < extra ? 1 : 0);
        folds[f].assign(order.begin() + cursor, order.begin() + cursor + size);
        cursor += size;
    }
    return folds;
}

} // namespace orthopred
