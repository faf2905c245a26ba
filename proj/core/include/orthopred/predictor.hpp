#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "orthopred/losses.hpp"
#include "orthopred/morphable.hpp"

namespace orthopred {

// Residual code-difference predictor:
//   delta = W2 * dropout(relu(batchnorm(W1 * code + b1))) + b2
//   prediction = code + delta
// W2 and b2 start at zero, so an untrained network is the identity.
struct MlpParams {
    static constexpr int kHidden = 100;
    static constexpr double kBnEpsilon = 1e-5;

    Eigen::MatrixXd w1; // kHidden x K
    Eigen::VectorXd b1; // kHidden
    Eigen::VectorXd bn_scale, bn_shift;              // kHidden
    Eigen::VectorXd bn_running_mean, bn_running_var; // kHidden
    Eigen::MatrixXd w2; // K x kHidden
    Eigen::VectorXd b2; // K

    int input_dim() const { return static_cast<int>(w1.cols()); }
};

MlpParams init_mlp(int code_dim, std::uint64_t seed);

enum class RunMode { Train, Eval };

struct ForwardCache {
    Eigen::MatrixXd input;      // K x B
    Eigen::MatrixXd lin1;       // hidden x B
    Eigen::VectorXd batch_mean, batch_var; // biased; valid when batch stats used
    Eigen::VectorXd inv_std;    // 1/sqrt(var + eps) actually used
    Eigen::MatrixXd normalized; // x_hat
    Eigen::MatrixXd activated;  // after BN scale/shift, pre-ReLU
    Eigen::MatrixXd dropout_mask; // inverted-dropout scale factors
    Eigen::MatrixXd hidden;     // post ReLU+dropout
    bool train_mode = false;
    bool used_batch_stats = false;
};

// codes: one column per sample. Train mode normalizes with batch statistics
// (running statistics when the batch has a single sample) and applies
// inverted dropout driven by `rng`; eval mode is deterministic.
Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& codes, RunMode mode,
                            double dropout_p, std::mt19937_64* rng, ForwardCache* cache);

LatentCode predict(const MlpParams& params, const LatentCode& code);

struct MlpGradients {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1, bn_scale, bn_shift;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
    Eigen::MatrixXd input; // gradient w.r.t. the input codes
};

// Exact reverse pass through the train-mode forward, including the batch-norm
// batch-statistics terms. Throws on an eval-mode cache.
MlpGradients mlp_backward(const MlpParams& params, const ForwardCache& cache,
                          const Eigen::MatrixXd& delta_grad);

struct TrainConfig {
    int batch_size = 150;
    int epochs = 500;
    double learning_rate = 1e-3;
    double lr_decay = 0.5;
    int lr_step_epochs = 100;
    double dropout = 0.5;
    enum class Optimizer { Adam, Sgd } optimizer = Optimizer::Adam;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_epsilon = 1e-8;
    double bn_momentum = 0.1;
    std::uint64_t seed = 0;
    LossWeights loss;
};

double learning_rate_at(const TrainConfig& config, int epoch);

struct TrainHistory {
    struct Epoch {
        double lr = 0.0;
        double mouth_convexity = 0.0, asymmetry = 0.0, latent_code = 0.0, geometry = 0.0;
        double total = 0.0;
        std::optional<double> val_hd, val_cd;
    };
    std::vector<Epoch> epochs;
};

// CSV columns: epoch,lr,L_p,L_a,L_f,L_g,total,val_HD,val_CD.
void save_history_csv(const TrainHistory& history, const std::filesystem::path& path);

struct CodePair {
    LatentCode pre, post;
};

struct TrainOutput {
    MlpParams params;
    TrainHistory history;
};

TrainOutput train_predictor(const MorphableModel& model, std::span<const CodePair> pairs,
                            const TrainConfig& config,
                            std::span<const CodePair> validation = {});

// Text checkpoint "MLP1", documented in the README.
void save_mlp(const MlpParams& params, const std::filesystem::path& path);
MlpParams load_mlp(const std::filesystem::path& path);

struct MetricStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    int count = 0;
};
MetricStats metric_stats(std::span<const double> values);

struct CrossValidationReport {
    struct Fold {
        int index = 0;
        MetricStats hd, cd;
        int train_real = 0;
        int train_synthetic = 0;
    };
    std::vector<Fold> folds;
    MetricStats hd, cd; // pooled over every validation pair
};

struct PatientPair;  // dataset.hpp
struct AugmentConfig; // augment.hpp

// Seeded shuffle into k consecutive folds of real pairs; augmentation (when a
// config is given) runs on each fold's training split only, so synthetic pairs
// never reach a validation fold. Validation compares decoded predicted and
// ground-truth post faces with face-masked Hausdorff and Chamfer distances.
CrossValidationReport cross_validate(const MorphableModel& model,
                                     const std::vector<PatientPair>& pairs, int k,
                                     const TrainConfig& config, const AugmentConfig* augment,
                                     std::uint64_t seed);

} // namespace orthopred
