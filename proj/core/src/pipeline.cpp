#include "orthopred/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "orthopred/errors.hpp"

namespace orthopred {

std::uint64_t component_seed(std::uint64_t master, std::string_view component) {
    // FNV-1a over the component name, then splitmix-style scrambling.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : component) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = master ^ (h + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

PipelineConfig default_pipeline_config() {
    return PipelineConfig{};
}

void resolve_pipeline_config(PipelineConfig& config) {
    config.deformity.seed = component_seed(config.master_seed, "cohort");
    config.augment.seed = component_seed(config.master_seed, "augment");
    config.train.seed = component_seed(config.master_seed, "train");
    config.train.loss = config.loss;
    config.augment.fit = config.fit;
    // Augmentation re-encoding prefers a light ridge so near-basis stitches
    // refit tightly; keep the user's surface settings.
    config.augment.fit.ridge_lambda = std::min(config.fit.ridge_lambda, 1e-4);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    std::istringstream is(value);
    if (!(is >> out) || !is.eof()) {
        throw ConfigError("bad value for " + key + ": '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

void assign(PipelineConfig& c, const std::string& key, const std::string& value) {
    using AsymmetryNormal = LossWeights::AsymmetryNormal;
    if (key == "master_seed") c.master_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "model.k") c.model_modes = parse_number<int>(key, value);
    else if (key == "model.resolution") c.model_resolution = parse_number<int>(key, value);
    else if (key == "cohort.size") c.cohort_size = parse_number<int>(key, value);
    else if (key == "cohort.protrusion_min") c.deformity.protrusion_min_mm = parse_number<double>(key, value);
    else if (key == "cohort.protrusion_max") c.deformity.protrusion_max_mm = parse_number<double>(key, value);
    else if (key == "cohort.asymmetry_min") c.deformity.asymmetry_min_mm = parse_number<double>(key, value);
    else if (key == "cohort.asymmetry_max") c.deformity.asymmetry_max_mm = parse_number<double>(key, value);
    else if (key == "cohort.correction_min") c.deformity.correction_min = parse_number<double>(key, value);
    else if (key == "cohort.correction_max") c.deformity.correction_max = parse_number<double>(key, value);
    else if (key == "loss.alpha_p") c.loss.alpha_mouth = parse_number<double>(key, value);
    else if (key == "loss.alpha_a") c.loss.alpha_asymmetry = parse_number<double>(key, value);
    else if (key == "loss.alpha_f") c.loss.alpha_latent = parse_number<double>(key, value);
    else if (key == "loss.alpha_g") c.loss.alpha_geometry = parse_number<double>(key, value);
    else if (key == "loss.w_normal") c.loss.w_normal = parse_number<double>(key, value);
    else if (key == "loss.asymmetry_normal") {
        if (value == "fitted") c.loss.asymmetry_normal = AsymmetryNormal::Fitted;
        else if (value == "world_x") c.loss.asymmetry_normal = AsymmetryNormal::WorldX;
        else throw ConfigError("loss.asymmetry_normal must be fitted or world_x");
    } else if (key == "train.batch_size") c.train.batch_size = parse_number<int>(key, value);
    else if (key == "train.epochs") c.train.epochs = parse_number<int>(key, value);
    else if (key == "train.lr") c.train.learning_rate = parse_number<double>(key, value);
    else if (key == "train.lr_decay") c.train.lr_decay = parse_number<double>(key, value);
    else if (key == "train.lr_step") c.train.lr_step_epochs = parse_number<int>(key, value);
    else if (key == "train.dropout") c.train.dropout = parse_number<double>(key, value);
    else if (key == "train.optimizer") {
        if (value == "adam") c.train.optimizer = TrainConfig::Optimizer::Adam;
        else if (value == "sgd") c.train.optimizer = TrainConfig::Optimizer::Sgd;
        else throw ConfigError("train.optimizer must be adam or sgd");
    } else if (key == "augment.enabled") c.augment_enabled = parse_bool(key, value);
    else if (key == "augment.factor") c.augment.factor = parse_number<int>(key, value);
    else if (key == "augment.sigma_xi") c.augment.sigma_xi = parse_number<double>(key, value);
    else if (key == "augment.band_mm") c.augment.band_mm = parse_number<double>(key, value);
    else if (key == "augment.tau_mm") {
        if (value == "inf" || value == "infinity") {
            c.augment.tau_mm = std::numeric_limits<double>::infinity();
        } else {
            c.augment.tau_mm = parse_number<double>(key, value);
        }
    } else if (key == "augment.max_retries") c.augment.max_retries = parse_number<int>(key, value);
    else if (key == "fit.ridge_lambda") c.fit.ridge_lambda = parse_number<double>(key, value);
    else if (key == "fit.surface_iterations") c.fit.surface_iterations = parse_number<int>(key, value);
    else if (key == "fit.surface_weight") c.fit.surface_weight = parse_number<double>(key, value);
    else if (key == "fit.surface_samples") c.fit.surface_samples = parse_number<int>(key, value);
    else if (key == "metrics.chamfer") {
        if (value == "squared") c.chamfer = ChamferVariant::SquaredMm2;
        else if (value == "rooted") c.chamfer = ChamferVariant::RootedMm;
        else throw ConfigError("metrics.chamfer must be squared or rooted");
    } else if (key == "cv.folds") c.cv_folds = parse_number<int>(key, value);
    else if (key == "animate.steps") c.animate_steps = parse_number<int>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

void validate(const PipelineConfig& c) {
    if (c.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (c.train.dropout < 0.0 || c.train.dropout >= 1.0)
        throw ConfigError("train.dropout must be in [0,1)");
    if (c.loss.alpha_mouth < 0 || c.loss.alpha_asymmetry < 0 || c.loss.alpha_latent < 0 ||
        c.loss.alpha_geometry < 0 || c.loss.w_normal < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (c.augment.factor < 1) throw ConfigError("augment.factor must be >= 1");
    if (c.augment.sigma_xi <= 0) throw ConfigError("augment.sigma_xi must be positive");
    if (c.augment.band_mm < 0) throw ConfigError("augment.band_mm must be >= 0");
    if (c.cv_folds < 2) throw ConfigError("cv.folds must be >= 2");
    if (c.animate_steps < 2) throw ConfigError("animate.steps must be >= 2");
}

} // namespace

void apply_config_override(PipelineConfig& config, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("expected key=value, got '" + assignment + "'");
    }
    auto trim = [](std::string s) {
        const size_t b = s.find_first_not_of(" \t");
        const size_t e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    if (key.empty() || value.empty()) {
        throw ConfigError("empty key or value in '" + assignment + "'");
    }
    assign(config, key, value);
    validate(config);
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    PipelineConfig config = default_pipeline_config();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            apply_config_override(config, line);
        } catch (const ConfigError& e) {
            std::ostringstream os;
            os << path.string() << ":" << line_no << ": " << e.what();
            throw ConfigError(os.str());
        }
    }
    resolve_pipeline_config(config);
    return config;
}

EvaluateRow evaluate_pairs(const MorphableModel& model, std::span<const PatientPair> pairs,
                           const MlpParams* params, ChamferVariant variant, std::string name) {
    if (pairs.empty()) {
        throw DataError("evaluate: empty dataset");
    }
    std::vector<double> hd, cd;
    hd.reserve(pairs.size());
    cd.reserve(pairs.size());
    for (const PatientPair& p : pairs) {
        const LatentCode pred_code = params ? predict(*params, p.pre.code) : p.pre.code;
        const Mesh pred_mesh = decode(model, pred_code);
        const Mesh gt_mesh = decode(model, p.post.code);
        const auto a = masked_points(pred_mesh, model.face_mask);
        const auto b = masked_points(gt_mesh, model.face_mask);
        hd.push_back(hausdorff_distance(a, b));
        cd.push_back(chamfer_distance(a, b, variant));
    }
    EvaluateRow row;
    row.name = std::move(name);
    row.hd = metric_stats(hd);
    row.cd = metric_stats(cd);
    return row;
}

void print_evaluate_table(std::span<const EvaluateRow> rows) {
    std::printf("%-24s %10s %10s %10s %10s %10s %10s %6s\n", "name", "hd_mean", "hd_min",
                "hd_max", "cd_mean", "cd_min", "cd_max", "n");
    for (const EvaluateRow& r : rows) {
        std::printf("%-24s %10.4f %10.4f %10.4f %10.4f %10.4f %10.4f %6d\n", r.name.c_str(),
                    r.hd.mean, r.hd.min, r.hd.max, r.cd.mean, r.cd.min, r.cd.max, r.hd.count);
    }
}

std::vector<AblationRow> run_ablation(const MorphableModel& model,
                                      std::span<const PatientPair> pairs,
                                      const PipelineConfig& config) {
    std::vector<const PatientPair*> real;
    for (const PatientPair& p : pairs) {
        if (p.provenance == Provenance::Real) {
            real.push_back(&p);
        }
    }
    if (static_cast<int>(real.size()) < config.cv_folds) {
        throw DataError("ablation needs at least cv.folds real pairs");
    }

    // One deterministic held-out split, shared by every variant.
    const auto folds = split_kfold(static_cast<int>(real.size()),
                                   config.cv_folds,
                                   component_seed(config.master_seed, "cv"));
    std::vector<char> in_val(real.size(), 0);
    for (int i : folds[0]) {
        in_val[i] = 1;
    }
    std::vector<PatientPair> train_real;
    std::vector<const PatientPair*> validation;
    for (size_t i = 0; i < real.size(); ++i) {
        (in_val[i] ? (void)validation.push_back(real[i])
                   : (void)train_real.push_back(*real[i]));
    }

    struct Variant {
        std::string name;
        bool augmented;
        std::function<void(LossWeights&)> tweak;
    };
    const std::vector<Variant> variants = {
        {"full", true, [](LossWeights&) {}},
        {"-mouth_convexity", true, [](LossWeights& w) { w.alpha_mouth = 0.0; }},
        {"-asymmetry", true, [](LossWeights& w) { w.alpha_asymmetry = 0.0; }},
        {"-latent_code", true, [](LossWeights& w) { w.alpha_latent = 0.0; }},
        {"-geometry", true, [](LossWeights& w) { w.alpha_geometry = 0.0; }},
        {"-augmentation", false, [](LossWeights&) {}},
    };

    // Augmented pairs are produced once and reused by every augmented variant.
    std::vector<CodePair> base_codes;
    for (const PatientPair& p : train_real) {
        base_codes.push_back({p.pre.code, p.post.code});
    }
    std::vector<CodePair> augmented_codes = base_codes;
    if (config.augment_enabled) {
        const auto [synthetic, report] = augment_dataset(model, train_real, config.augment);
        for (const PatientPair& p : synthetic) {
            augmented_codes.push_back({p.pre.code, p.post.code});
        }
    }

    std::vector<AblationRow> rows;
    for (const Variant& variant : variants) {
        TrainConfig tc = config.train;
        variant.tweak(tc.loss);
        const bool use_aug = variant.augmented && config.augment_enabled;
        const std::vector<CodePair>& codes = use_aug ? augmented_codes : base_codes;

        const TrainOutput trained = train_predictor(model, codes, tc);

        std::vector<double> hd, cd;
        for (const PatientPair* p : validation) {
            const LatentCode pred = predict(trained.params, p->pre.code);
            const Mesh pred_mesh = decode(model, pred);
            const Mesh gt_mesh = decode(model, p->post.code);
            const auto a = masked_points(pred_mesh, model.face_mask);
            const auto b = masked_points(gt_mesh, model.face_mask);
            hd.push_back(hausdorff_distance(a, b));
            cd.push_back(chamfer_distance(a, b, config.chamfer));
        }
        rows.push_back({variant.name, metric_stats(hd).mean, metric_stats(cd).mean,
                        static_cast<int>(codes.size())});
    }
    return rows;
}

void print_ablation_table(std::span<const AblationRow> rows) {
    std::printf("%-20s %12s %12s %12s\n", "name", "hd_mm", "cd", "data_amount");
    for (const AblationRow& r : rows) {
        std::printf("%-20s %12.4f %12.4f %12d\n", r.name.c_str(), r.hd_mean, r.cd_mean,
                    r.data_amount);
    }
}

} // namespace orthopred
