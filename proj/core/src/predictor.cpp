#include "orthopred/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "orthopred/augment.hpp"
#include "orthopred/dataset.hpp"
#include "orthopred/errors.hpp"
#include "orthopred/metrics.hpp"

namespace orthopred {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace

MlpParams init_mlp(int code_dim, std::uint64_t seed) {
    if (code_dim < 1) {
        throw ConfigError("predictor input dimension must be positive");
    }
    MlpParams p;
    std::mt19937_64 rng(seed);
    const double bound = std::sqrt(6.0 / (code_dim + MlpParams::kHidden));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    p.w1.resize(MlpParams::kHidden, code_dim);
    for (int i = 0; i < p.w1.rows(); ++i) {
        for (int j = 0; j < p.w1.cols(); ++j) {
            p.w1(i, j) = uniform(rng);
        }
    }
    p.b1 = Eigen::VectorXd::Zero(MlpParams::kHidden);
    p.bn_scale = Eigen::VectorXd::Ones(MlpParams::kHidden);
    p.bn_shift = Eigen::VectorXd::Zero(MlpParams::kHidden);
    p.bn_running_mean = Eigen::VectorXd::Zero(MlpParams::kHidden);
    p.bn_running_var = Eigen::VectorXd::Ones(MlpParams::kHidden);
    // Zero final layer: the residual predictor starts as the identity map.
    p.w2 = Eigen::MatrixXd::Zero(code_dim, MlpParams::kHidden);
    p.b2 = Eigen::VectorXd::Zero(code_dim);
    return p;
}

Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& codes, RunMode mode,
                            double dropout_p, std::mt19937_64* rng, ForwardCache* cache) {
    if (codes.rows() != params.input_dim()) {
        throw DataError("predictor input dimension mismatch");
    }
    const int batch = static_cast<int>(codes.cols());
    const int hidden = MlpParams::kHidden;
    const bool train = mode == RunMode::Train;

    const Eigen::MatrixXd lin1 = (params.w1 * codes).colwise() + params.b1;

    const bool batch_stats = train && batch > 1;
    Eigen::VectorXd mean, var;
    if (batch_stats) {
        mean = lin1.rowwise().mean();
        var = (lin1.colwise() - mean).array().square().rowwise().mean();
    } else {
        mean = params.bn_running_mean;
        var = params.bn_running_var;
    }
    const Eigen::VectorXd inv_std =
        (var.array() + MlpParams::kBnEpsilon).sqrt().inverse().matrix();
    const Eigen::MatrixXd normalized = (lin1.colwise() - mean).array().colwise() * inv_std.array();
    const Eigen::MatrixXd activated =
        (normalized.array().colwise() * params.bn_scale.array()).colwise() +
        params.bn_shift.array();

    Eigen::MatrixXd hidden_out = activated.cwiseMax(0.0);

    Eigen::MatrixXd mask;
    if (train && dropout_p > 0.0) {
        if (rng == nullptr) {
            throw ConfigError("train-mode forward with dropout needs an rng");
        }
        const double keep = 1.0 - dropout_p;
        if (keep <= 0.0) {
            throw ConfigError("dropout probability must be < 1");
        }
        mask.resize(hidden, batch);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        for (int b = 0; b < batch; ++b) {
            for (int i = 0; i < hidden; ++i) {
                mask(i, b) = uniform(*rng) < keep ? 1.0 / keep : 0.0;
            }
        }
        hidden_out = hidden_out.cwiseProduct(mask);
    } else {
        mask = Eigen::MatrixXd::Ones(hidden, batch);
    }

    if (cache) {
        cache->input = codes;
        cache->lin1 = lin1;
        cache->batch_mean = mean;
        cache->batch_var = var;
        cache->inv_std = inv_std;
        cache->normalized = normalized;
        cache->activated = activated;
        cache->dropout_mask = mask;
        cache->hidden = hidden_out;
        cache->train_mode = train;
        cache->used_batch_stats = batch_stats;
    }

    return (params.w2 * hidden_out).colwise() + params.b2;
}

LatentCode predict(const MlpParams& params, const LatentCode& code) {
    const Eigen::MatrixXd delta =
        mlp_forward(params, code, RunMode::Eval, 0.0, nullptr, nullptr);
    return code + delta.col(0);
}

MlpGradients mlp_backward(const MlpParams& params, const ForwardCache& cache,
                          const Eigen::MatrixXd& delta_grad) {
    if (!cache.train_mode) {
        throw NumericError("mlp_backward requires a train-mode forward cache");
    }
    const int batch = static_cast<int>(cache.input.cols());

    MlpGradients g;
    g.w2 = delta_grad * cache.hidden.transpose();
    g.b2 = delta_grad.rowwise().sum();

    Eigen::MatrixXd d_hidden = params.w2.transpose() * delta_grad;
    d_hidden = d_hidden.cwiseProduct(cache.dropout_mask);
    const Eigen::MatrixXd relu_gate =
        (cache.activated.array() > 0.0).cast<double>().matrix();
    const Eigen::MatrixXd d_act = d_hidden.cwiseProduct(relu_gate);

    g.bn_scale = d_act.cwiseProduct(cache.normalized).rowwise().sum();
    g.bn_shift = d_act.rowwise().sum();

    const Eigen::MatrixXd d_norm = d_act.array().colwise() * params.bn_scale.array();

    Eigen::MatrixXd d_lin1;
    if (cache.used_batch_stats) {
        // Full batch-norm backward with batch statistics.
        const Eigen::MatrixXd centered = cache.lin1.colwise() - cache.batch_mean;
        const Eigen::VectorXd d_var =
            (d_norm.cwiseProduct(centered).rowwise().sum().array() * -0.5 *
             cache.inv_std.array().cube())
                .matrix();
        const Eigen::VectorXd d_mean =
            (-(d_norm.rowwise().sum().array() * cache.inv_std.array())).matrix();
        d_lin1 = (d_norm.array().colwise() * cache.inv_std.array()).matrix() +
                 (centered.array().colwise() * (2.0 / batch * d_var.array())).matrix();
        d_lin1.colwise() += (d_mean / batch).eval();
    } else {
        d_lin1 = (d_norm.array().colwise() * cache.inv_std.array()).matrix();
    }

    g.w1 = d_lin1 * cache.input.transpose();
    g.b1 = d_lin1.rowwise().sum();
    g.input = params.w1.transpose() * d_lin1;
    return g;
}

double learning_rate_at(const TrainConfig& config, int epoch) {
    const int steps = config.lr_step_epochs > 0 ? epoch / config.lr_step_epochs : 0;
    return config.learning_rate * std::pow(config.lr_decay, steps);
}

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write history CSV: " + path.string());
    }
    std::fprintf(f, "epoch,lr,L_p,L_a,L_f,L_g,total,val_HD,val_CD\n");
    for (size_t e = 0; e < history.epochs.size(); ++e) {
        const auto& row = history.epochs[e];
        std::fprintf(f, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", e, row.lr, row.mouth_convexity,
                     row.asymmetry, row.latent_code, row.geometry, row.total);
        if (row.val_hd) {
            std::fprintf(f, ",%.9g", *row.val_hd);
        } else {
            std::fprintf(f, ",");
        }
        if (row.val_cd) {
            std::fprintf(f, ",%.9g", *row.val_cd);
        } else {
            std::fprintf(f, ",");
        }
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

namespace {

struct AdamState {
    Eigen::MatrixXd m, v;
    explicit AdamState(Eigen::Index rows, Eigen::Index cols)
        : m(Eigen::MatrixXd::Zero(rows, cols)), v(Eigen::MatrixXd::Zero(rows, cols)) {}
};

void adam_step(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& grad, AdamState& state,
               const TrainConfig& cfg, double lr, long step) {
    state.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad;
    state.v = cfg.adam_beta2 * state.v.array().matrix() +
              (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
    const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    param -= (lr * (state.m / bias1).array() /
              ((state.v / bias2).array().sqrt() + cfg.adam_epsilon))
                 .matrix();
}

} // namespace

TrainOutput train_predictor(const MorphableModel& model, std::span<const CodePair> pairs,
                            const TrainConfig& config, std::span<const CodePair> validation) {
    if (pairs.empty()) {
        throw DataError("training set is empty");
    }
    const int K = model.mode_count();
    for (const CodePair& p : pairs) {
        if (p.pre.size() != K || p.post.size() != K) {
            throw DataError("training pair code length differs from model mode count");
        }
    }

    TrainOutput out;
    out.params = init_mlp(K, mix_seed(config.seed, 1));
    if (config.epochs <= 0) {
        return out;
    }
    if (config.batch_size < 1) {
        throw ConfigError("batch size must be >= 1");
    }

    std::mt19937_64 shuffle_rng(mix_seed(config.seed, 2));
    std::mt19937_64 dropout_rng(mix_seed(config.seed, 3));

    // Ground-truth decodes are constant across epochs.
    std::vector<GtCache> gt;
    gt.reserve(pairs.size());
    for (const CodePair& p : pairs) {
        gt.push_back(make_gt_cache(model, p.post));
    }

    MlpParams& params = out.params;
    AdamState s_w1(params.w1.rows(), params.w1.cols());
    AdamState s_b1(params.b1.size(), 1);
    AdamState s_scale(params.bn_scale.size(), 1);
    AdamState s_shift(params.bn_shift.size(), 1);
    AdamState s_w2(params.w2.rows(), params.w2.cols());
    AdamState s_b2(params.b2.size(), 1);
    long adam_step_count = 0;

    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = learning_rate_at(config, epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        TrainHistory::Epoch record;
        record.lr = lr;
        int seen = 0;

        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            const int batch =
                static_cast<int>(std::min<size_t>(config.batch_size, order.size() - start));
            Eigen::MatrixXd input(K, batch);
            for (int b = 0; b < batch; ++b) {
                input.col(b) = pairs[order[start + b]].pre;
            }

            ForwardCache cache;
            const Eigen::MatrixXd delta = mlp_forward(params, input, RunMode::Train,
                                                      config.dropout, &dropout_rng, &cache);

            Eigen::MatrixXd delta_grad(K, batch);
            for (int b = 0; b < batch; ++b) {
                const int idx = order[start + b];
                const LatentCode pred = input.col(b) + delta.col(b);
                const LossBreakdown loss = total_loss(model, pred, gt[idx], config.loss);
                if (!std::isfinite(loss.total)) {
                    std::ostringstream os;
                    os << "non-finite training loss at epoch " << epoch << " sample " << idx
                       << " (L_p=" << loss.mouth_convexity << " L_a=" << loss.asymmetry
                       << " L_f=" << loss.latent_code << " L_g=" << loss.geometry << ")";
                    throw NumericError(os.str());
                }
                delta_grad.col(b) = loss.code_grad / batch;
                record.mouth_convexity += loss.mouth_convexity;
                record.asymmetry += loss.asymmetry;
                record.latent_code += loss.latent_code;
                record.geometry += loss.geometry;
                record.total += loss.total;
                ++seen;
            }

            const MlpGradients grads = mlp_backward(params, cache, delta_grad);

            if (cache.used_batch_stats) {
                const double unbias = batch > 1 ? static_cast<double>(batch) / (batch - 1) : 1.0;
                params.bn_running_mean = (1.0 - config.bn_momentum) * params.bn_running_mean +
                                         config.bn_momentum * cache.batch_mean;
                params.bn_running_var = (1.0 - config.bn_momentum) * params.bn_running_var +
                                        config.bn_momentum * (unbias * cache.batch_var);
            }

            if (config.optimizer == TrainConfig::Optimizer::Adam) {
                ++adam_step_count;
                adam_step(params.w1, grads.w1, s_w1, config, lr, adam_step_count);
                adam_step(params.b1, grads.b1, s_b1, config, lr, adam_step_count);
                adam_step(params.bn_scale, grads.bn_scale, s_scale, config, lr, adam_step_count);
                adam_step(params.bn_shift, grads.bn_shift, s_shift, config, lr, adam_step_count);
                adam_step(params.w2, grads.w2, s_w2, config, lr, adam_step_count);
                adam_step(params.b2, grads.b2, s_b2, config, lr, adam_step_count);
            } else {
                params.w1 -= lr * grads.w1;
                params.b1 -= lr * grads.b1;
                params.bn_scale -= lr * grads.bn_scale;
                params.bn_shift -= lr * grads.bn_shift;
                params.w2 -= lr * grads.w2;
                params.b2 -= lr * grads.b2;
            }
        }

        record.mouth_convexity /= seen;
        record.asymmetry /= seen;
        record.latent_code /= seen;
        record.geometry /= seen;
        record.total /= seen;

        if (!validation.empty()) {
            double hd_sum = 0.0, cd_sum = 0.0;
            for (const CodePair& p : validation) {
                const LatentCode pred = predict(params, p.pre);
                const Mesh pred_mesh = decode(model, pred);
                const Mesh gt_mesh = decode(model, p.post);
                const auto a = masked_points(pred_mesh, model.face_mask);
                const auto b = masked_points(gt_mesh, model.face_mask);
                hd_sum += hausdorff_distance(a, b);
                cd_sum += chamfer_distance(a, b);
            }
            record.val_hd = hd_sum / validation.size();
            record.val_cd = cd_sum / validation.size();
        }

        out.history.epochs.push_back(record);
    }
    return out;
}

void save_mlp(const MlpParams& params, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write checkpoint: " + path.string());
    }
    std::fprintf(f, "MLP1 %d\n", params.input_dim());
    auto write_mat = [f](const Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                std::fprintf(f, "%.17g%c", m(i, j), j + 1 == m.cols() ? '\n' : ' ');
            }
        }
    };
    write_mat(params.w1);
    write_mat(params.b1);
    write_mat(params.bn_scale);
    write_mat(params.bn_shift);
    write_mat(params.bn_running_mean);
    write_mat(params.bn_running_var);
    write_mat(params.w2);
    write_mat(params.b2);
    std::fclose(f);
}

MlpParams load_mlp(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open checkpoint: " + path.string());
    }
    std::string magic;
    int K = 0;
    in >> magic >> K;
    if (!in || magic != "MLP1" || K < 1) {
        throw DataError("not an MLP1 checkpoint: " + path.string());
    }
    MlpParams p;
    auto read_mat = [&](Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
        m.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                if (!(in >> m(i, j))) {
                    throw DataError(path.string() + ": truncated checkpoint");
                }
            }
        }
    };
    auto read_vec = [&](Eigen::VectorXd& v, Eigen::Index size) {
        Eigen::MatrixXd m;
        read_mat(m, size, 1);
        v = m.col(0);
    };
    read_mat(p.w1, MlpParams::kHidden, K);
    read_vec(p.b1, MlpParams::kHidden);
    read_vec(p.bn_scale, MlpParams::kHidden);
    read_vec(p.bn_shift, MlpParams::kHidden);
    read_vec(p.bn_running_mean, MlpParams::kHidden);
    read_vec(p.bn_running_var, MlpParams::kHidden);
    read_mat(p.w2, K, MlpParams::kHidden);
    read_vec(p.b2, K);
    return p;
}

MetricStats metric_stats(std::span<const double> values) {
    MetricStats out;
    out.count = static_cast<int>(values.size());
    if (values.empty()) {
        return out;
    }
    out.min = values[0];
    out.max = values[0];
    double sum = 0.0;
    for (double v : values) {
        sum += v;
        out.min = std::min(out.min, v);
        out.max = std::max(out.max, v);
    }
    out.mean = sum / values.size();
    return out;
}

CrossValidationReport cross_validate(const MorphableModel& model,
                                     const std::vector<PatientPair>& pairs, int k,
                                     const TrainConfig& config, const AugmentConfig* augment,
                                     std::uint64_t seed) {
    // Folds index real pairs only; synthetic pairs are produced per fold.
    std::vector<int> real_indices;
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].provenance == Provenance::Real) {
            real_indices.push_back(static_cast<int>(i));
        }
    }
    if (static_cast<int>(real_indices.size()) < k) {
        throw DataError("cross_validate: fewer real pairs than folds");
    }
    const auto folds = split_kfold(static_cast<int>(real_indices.size()), k, seed);

    CrossValidationReport report;
    std::vector<double> all_hd, all_cd;
    for (int f = 0; f < k; ++f) {
        if (folds[f].empty()) {
            throw DataError("cross_validate: empty validation fold");
        }
        std::vector<char> in_val(real_indices.size(), 0);
        for (int i : folds[f]) {
            in_val[i] = 1;
        }
        std::vector<PatientPair> train_real;
        for (size_t i = 0; i < real_indices.size(); ++i) {
            if (!in_val[i]) {
                train_real.push_back(pairs[real_indices[i]]);
            }
        }

        std::vector<CodePair> train_codes;
        for (const PatientPair& p : train_real) {
            train_codes.push_back({p.pre.code, p.post.code});
        }
        int synthetic_count = 0;
        if (augment != nullptr) {
            AugmentConfig fold_aug = *augment;
            fold_aug.seed = mix_seed(augment->seed, static_cast<std::uint64_t>(f));
            const auto [synthetic, aug_report] = augment_dataset(model, train_real, fold_aug);
            synthetic_count = static_cast<int>(synthetic.size());
            for (const PatientPair& p : synthetic) {
                train_codes.push_back({p.pre.code, p.post.code});
            }
        }

        TrainConfig fold_config = config;
        fold_config.seed = mix_seed(config.seed, static_cast<std::uint64_t>(f));
        const TrainOutput trained = train_predictor(model, train_codes, fold_config);

        std::vector<double> fold_hd, fold_cd;
        for (int i : folds[f]) {
            const PatientPair& p = pairs[real_indices[i]];
            const LatentCode pred = predict(trained.params, p.pre.code);
            const Mesh pred_mesh = decode(model, pred);
            const Mesh gt_mesh = decode(model, p.post.code);
            const auto a = masked_points(pred_mesh, model.face_mask);
            const auto b = masked_points(gt_mesh, model.face_mask);
            fold_hd.push_back(hausdorff_distance(a, b));
            fold_cd.push_back(chamfer_distance(a, b));
        }
        all_hd.insert(all_hd.end(), fold_hd.begin(), fold_hd.end());
        all_cd.insert(all_cd.end(), fold_cd.begin(), fold_cd.end());

        CrossValidationReport::Fold fold;
        fold.index = f;
        fold.hd = metric_stats(fold_hd);
        fold.cd = metric_stats(fold_cd);
        fold.train_real = static_cast<int>(train_real.size());
        fold.train_synthetic = synthetic_count;
        report.folds.push_back(fold);
    }
    report.hd = metric_stats(all_hd);
    report.cd = metric_stats(all_cd);
    return report;
}

} // namespace orthopred
