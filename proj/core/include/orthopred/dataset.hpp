#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orthopred/landmarks.hpp"
#include "orthopred/morphable.hpp"

namespace orthopred {

// `Real` marks cohort pairs that play the role of clinical scans; `Synthetic`
// marks augmentation output, which must never enter validation folds.
enum class Provenance { Real, Synthetic, Augmented };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct PatientSide {
    Mesh mesh;
    LandmarkSet landmarks;
    LatentCode code;
    FitReport fit;
};

struct PatientPair {
    std::string id;
    PatientSide pre, post;
    Provenance provenance = Provenance::Real;
};

struct DeformityConfig {
    double protrusion_min_mm = 3.0, protrusion_max_mm = 10.0;
    double asymmetry_min_mm = 2.0, asymmetry_max_mm = 8.0;
    double correction_min = 0.7, correction_max = 1.0; // fraction of the deformity removed
    std::uint64_t seed = 0;
};

// Code-space directions calibrated so one unit moves the targeted landmarks
// by 1 mm: `protrude` pushes lips and chin anteriorly, `lateral` shifts the
// chin sideways using the antisymmetric modes only.
struct DeformityDirections {
    LatentCode protrude;
    LatentCode lateral;
};
DeformityDirections deformity_directions(const MorphableModel& model);

// Synthetic patient cohort: base identity plus a sampled deformity before
// surgery, partially corrected after. Pairs carry provenance Real so the
// pipeline treats them exactly like clinical data.
std::vector<PatientPair> generate_synthetic_cohort(const MorphableModel& model, int count,
                                                   const DeformityConfig& config);

struct DatasetManifest {
    std::uint64_t model_seed = 0;
    int model_modes = 0;
    int model_resolution = 0;
    std::uint64_t creation_seed = 0;
    struct Entry {
        std::string id;
        std::string directory; // relative to the dataset root
        Provenance provenance = Provenance::Real;
    };
    std::vector<Entry> entries;
};

// Layout: <dir>/<id>/{pre.obj,post.obj,pre.landmarks.txt,post.landmarks.txt,
// meta.txt} plus <dir>/manifest.txt.
DatasetManifest save_dataset(std::span<const PatientPair> pairs, const MorphableModel& model,
                             std::uint64_t creation_seed, const std::filesystem::path& dir);
std::vector<PatientPair> load_dataset(const std::filesystem::path& dir,
                                      DatasetManifest* manifest_out = nullptr);

// Seeded shuffle then consecutive slices; fold sizes differ by at most one.
std::vector<std::vector<int>> split_kfold(int count, int k, std::uint64_t seed);

} // namespace orthopred
