// orthopred command-line front end: builds models, generates cohorts, runs
// augmentation/training, and produces predictions, evaluations, ablations and
// interpolation sequences from one flat config file.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "orthopred/augment.hpp"
#include "orthopred/dataset.hpp"
#include "orthopred/errors.hpp"
#include "orthopred/obj_io.hpp"
#include "orthopred/pipeline.hpp"
#include "orthopred/predictor.hpp"
#include "orthopred/preview.hpp"

namespace op = orthopred;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "pipeline config file (key=value lines)");
    cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set train.epochs=50")
        ->take_all();
}

op::PipelineConfig make_config(const CommonOpts& opts) {
    op::PipelineConfig config = opts.config_path.empty()
                                    ? op::default_pipeline_config()
                                    : op::load_pipeline_config(opts.config_path);
    for (const std::string& o : opts.overrides) {
        op::apply_config_override(config, o);
    }
    op::resolve_pipeline_config(config);
    return config;
}

std::vector<op::PatientPair> load_datasets(const std::vector<std::string>& dirs) {
    std::vector<op::PatientPair> pairs;
    for (const std::string& dir : dirs) {
        auto loaded = op::load_dataset(dir);
        pairs.insert(pairs.end(), std::make_move_iterator(loaded.begin()),
                     std::make_move_iterator(loaded.end()));
    }
    return pairs;
}

std::vector<op::CodePair> to_code_pairs(const std::vector<op::PatientPair>& pairs) {
    std::vector<op::CodePair> codes;
    codes.reserve(pairs.size());
    for (const op::PatientPair& p : pairs) {
        codes.push_back({p.pre.code, p.post.code});
    }
    return codes;
}

void write_fit_report(const op::FitResult& result, const fs::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw op::DataError("cannot write fit report: " + path.string());
    }
    std::fprintf(f, "mean_landmark_error_mm %.9g\n", result.report.mean_landmark_error_mm);
    if (result.report.surface_rms_mm) {
        std::fprintf(f, "surface_rms_mm %.9g\n", *result.report.surface_rms_mm);
    }
    std::fprintf(f, "surface_iterations %d\n", result.report.iterations);
    std::fprintf(f, "rotation");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            std::fprintf(f, " %.17g", result.scan_to_model.rotation(r, c));
        }
    }
    std::fprintf(f, "\ntranslation %.17g %.17g %.17g\n", result.scan_to_model.translation.x(),
                 result.scan_to_model.translation.y(), result.scan_to_model.translation.z());
    std::fprintf(f, "landmark_errors_mm");
    for (double e : result.report.landmark_error_mm) {
        std::fprintf(f, " %.9g", e);
    }
    std::fprintf(f, "\n");
    std::fclose(f);
}

int run(int argc, char** argv) {
    CLI::App app{"orthopred: post-surgery 3D face prediction pipeline"};
    app.require_subcommand(1);

    // --- build-model ---------------------------------------------------
    CommonOpts model_opts;
    std::string model_out;
    auto* cmd_model = app.add_subcommand("build-model", "build the synthetic morphable model");
    add_common(cmd_model, model_opts);
    cmd_model->add_option("--out", model_out, "output model file (MM1)")->required();

    // --- generate-cohort -------------------------------------------------
    CommonOpts cohort_opts;
    std::string cohort_model, cohort_out;
    auto* cmd_cohort = app.add_subcommand("generate-cohort", "generate a synthetic patient cohort");
    add_common(cmd_cohort, cohort_opts);
    cmd_cohort->add_option("--model", cohort_model, "model file")->required();
    cmd_cohort->add_option("--out", cohort_out, "output dataset directory")->required();

    // --- fit -------------------------------------------------------------
    CommonOpts fit_opts;
    std::string fit_model, fit_scan, fit_landmarks, fit_out_code, fit_out_report;
    auto* cmd_fit = app.add_subcommand("fit", "fit the model to a scan and landmarks");
    add_common(cmd_fit, fit_opts);
    cmd_fit->add_option("--model", fit_model)->required();
    cmd_fit->add_option("--scan", fit_scan, "OBJ scan")->required();
    cmd_fit->add_option("--landmarks", fit_landmarks, "68-landmark text file")->required();
    cmd_fit->add_option("--out-code", fit_out_code, "output latent code file")->required();
    cmd_fit->add_option("--out-report", fit_out_report, "optional fit report file");

    // --- augment -----------------------------------------------------------
    CommonOpts aug_opts;
    std::string aug_model, aug_dataset, aug_out;
    auto* cmd_augment = app.add_subcommand("augment", "synthesize training pairs by stitching");
    add_common(cmd_augment, aug_opts);
    cmd_augment->add_option("--model", aug_model)->required();
    cmd_augment->add_option("--dataset", aug_dataset, "source dataset directory")->required();
    cmd_augment->add_option("--out", aug_out, "output dataset directory")->required();

    // --- train -------------------------------------------------------------
    CommonOpts train_opts;
    std::string train_model, train_out, train_history, train_val;
    std::vector<std::string> train_datasets;
    auto* cmd_train = app.add_subcommand("train", "train the residual code predictor");
    add_common(cmd_train, train_opts);
    cmd_train->add_option("--model", train_model)->required();
    cmd_train->add_option("--dataset", train_datasets, "training dataset directory (repeatable)")
        ->required()
        ->take_all();
    cmd_train->add_option("--out", train_out, "output checkpoint (MLP1)")->required();
    cmd_train->add_option("--history", train_history, "optional per-epoch CSV");
    cmd_train->add_option("--val-dataset", train_val, "optional validation dataset directory");

    // --- predict ------------------------------------------------------------
    CommonOpts pred_opts;
    std::string pred_model, pred_ckpt, pred_scan, pred_landmarks, pred_out_dir;
    auto* cmd_predict = app.add_subcommand("predict", "predict a post-surgery face for a scan");
    add_common(cmd_predict, pred_opts);
    cmd_predict->add_option("--model", pred_model)->required();
    cmd_predict->add_option("--checkpoint", pred_ckpt)->required();
    cmd_predict->add_option("--scan", pred_scan)->required();
    cmd_predict->add_option("--landmarks", pred_landmarks)->required();
    cmd_predict->add_option("--out-dir", pred_out_dir)->required();

    // --- evaluate -------------------------------------------------------------
    CommonOpts eval_opts;
    std::string eval_model, eval_dataset, eval_ckpt;
    bool eval_baseline = false;
    auto* cmd_evaluate = app.add_subcommand("evaluate", "masked HD/CD of predictions vs ground truth");
    add_common(cmd_evaluate, eval_opts);
    cmd_evaluate->add_option("--model", eval_model)->required();
    cmd_evaluate->add_option("--dataset", eval_dataset)->required();
    cmd_evaluate->add_option("--checkpoint", eval_ckpt, "trained predictor checkpoint");
    cmd_evaluate->add_flag("--baseline", eval_baseline, "also report the identity baseline");

    // --- ablate ---------------------------------------------------------------
    CommonOpts abl_opts;
    std::string abl_model, abl_dataset, abl_out;
    auto* cmd_ablate = app.add_subcommand("ablate", "loss/augmentation ablation study");
    add_common(cmd_ablate, abl_opts);
    cmd_ablate->add_option("--model", abl_model)->required();
    cmd_ablate->add_option("--dataset", abl_dataset)->required();
    cmd_ablate->add_option("--out", abl_out, "optional CSV output");

    // --- animate ---------------------------------------------------------------
    CommonOpts anim_opts;
    std::string anim_model, anim_pre, anim_pred, anim_out_dir, anim_reference;
    auto* cmd_animate = app.add_subcommand("animate", "latent interpolation frame sequence");
    add_common(cmd_animate, anim_opts);
    cmd_animate->add_option("--model", anim_model)->required();
    cmd_animate->add_option("--code-pre", anim_pre)->required();
    cmd_animate->add_option("--code-pred", anim_pred)->required();
    cmd_animate->add_option("--out-dir", anim_out_dir)->required();
    cmd_animate->add_option("--reference", anim_reference,
                            "reference OBJ for the distance CSV (default: final frame)");

    CLI11_PARSE(app, argc, argv);

    if (cmd_model->parsed()) {
        const op::PipelineConfig config = make_config(model_opts);
        const op::MorphableModel model = op::build_synthetic_model(
            op::component_seed(config.master_seed, "model"), config.model_modes,
            config.model_resolution);
        op::save_model(model, model_out);
        std::printf("model: %d vertices, %d modes -> %s\n", model.vertex_count(),
                    model.mode_count(), model_out.c_str());
    } else if (cmd_cohort->parsed()) {
        const op::PipelineConfig config = make_config(cohort_opts);
        const op::MorphableModel model = op::load_model(cohort_model);
        const auto pairs = op::generate_synthetic_cohort(model, config.cohort_size,
                                                         config.deformity);
        op::save_dataset(pairs, model, config.deformity.seed, cohort_out);
        std::printf("cohort: %zu pairs -> %s\n", pairs.size(), cohort_out.c_str());
    } else if (cmd_fit->parsed()) {
        const op::PipelineConfig config = make_config(fit_opts);
        const op::MorphableModel model = op::load_model(fit_model);
        const op::Mesh scan = op::load_obj(fit_scan);
        const op::LandmarkSet landmarks = op::load_landmarks(fit_landmarks);
        const op::FitResult result = op::fit(model, scan, landmarks, config.fit);
        op::save_code(result.code, fit_out_code);
        if (!fit_out_report.empty()) {
            write_fit_report(result, fit_out_report);
        }
        std::printf("fit: mean landmark error %.4f mm -> %s\n",
                    result.report.mean_landmark_error_mm, fit_out_code.c_str());
    } else if (cmd_augment->parsed()) {
        const op::PipelineConfig config = make_config(aug_opts);
        const op::MorphableModel model = op::load_model(aug_model);
        const auto pairs = op::load_dataset(aug_dataset);
        std::vector<op::PatientPair> real;
        for (const op::PatientPair& p : pairs) {
            if (p.provenance == op::Provenance::Real) {
                real.push_back(p);
            }
        }
        const auto [synthetic, report] = op::augment_dataset(model, real, config.augment);
        op::save_dataset(synthetic, model, config.augment.seed, aug_out);
        std::printf("augment: %d generated, %d rejected, %d shortfall -> %s\n", report.generated,
                    report.rejected, report.shortfall, aug_out.c_str());
    } else if (cmd_train->parsed()) {
        const op::PipelineConfig config = make_config(train_opts);
        const op::MorphableModel model = op::load_model(train_model);
        const auto pairs = load_datasets(train_datasets);
        const auto codes = to_code_pairs(pairs);
        std::vector<op::CodePair> val_codes;
        if (!train_val.empty()) {
            val_codes = to_code_pairs(op::load_dataset(train_val));
        }
        const op::TrainOutput result =
            op::train_predictor(model, codes, config.train, val_codes);
        op::save_mlp(result.params, train_out);
        if (!train_history.empty()) {
            op::save_history_csv(result.history, train_history);
        }
        const double final_loss =
            result.history.epochs.empty() ? 0.0 : result.history.epochs.back().total;
        std::printf("train: %zu pairs, %d epochs, final mean loss %.6g -> %s\n", codes.size(),
                    config.train.epochs, final_loss, train_out.c_str());
    } else if (cmd_predict->parsed()) {
        const op::PipelineConfig config = make_config(pred_opts);
        const op::MorphableModel model = op::load_model(pred_model);
        const op::MlpParams params = op::load_mlp(pred_ckpt);
        const op::Mesh scan = op::load_obj(pred_scan);
        const op::LandmarkSet landmarks = op::load_landmarks(pred_landmarks);

        const op::FitResult fitted = op::fit(model, scan, landmarks, config.fit);
        const op::LatentCode pred_code = op::predict(params, fitted.code);
        const op::Mesh pre_model_mesh = op::decode(model, fitted.code);
        const op::Mesh post_model_mesh = op::decode(model, pred_code);

        const op::Mesh aligned_scan = op::transformed(scan, fitted.scan_to_model);
        const op::BarycentricMap map = op::build_barycentric_map(aligned_scan, pre_model_mesh);
        const op::Mesh deformed_aligned =
            op::transfer_prediction(aligned_scan, map, pre_model_mesh, post_model_mesh);
        const op::Mesh deformed = op::transformed(deformed_aligned,
                                                  fitted.scan_to_model.inverse());

        fs::create_directories(pred_out_dir);
        const fs::path out(pred_out_dir);
        op::save_obj(post_model_mesh, out / "prediction_model.obj");
        op::save_obj(deformed, out / "deformed_scan.obj");
        op::save_code(fitted.code, out / "pre_code.txt");
        op::save_code(pred_code, out / "pred_code.txt");
        write_fit_report(fitted, out / "fit_report.txt");
        std::printf("predict: fit error %.4f mm, outputs in %s\n",
                    fitted.report.mean_landmark_error_mm, pred_out_dir.c_str());
    } else if (cmd_evaluate->parsed()) {
        const op::PipelineConfig config = make_config(eval_opts);
        const op::MorphableModel model = op::load_model(eval_model);
        const auto pairs = op::load_dataset(eval_dataset);
        std::vector<op::EvaluateRow> rows;
        if (!eval_ckpt.empty()) {
            const op::MlpParams params = op::load_mlp(eval_ckpt);
            rows.push_back(op::evaluate_pairs(model, pairs, &params, config.chamfer, "trained"));
        }
        if (eval_baseline || eval_ckpt.empty()) {
            rows.push_back(op::evaluate_pairs(model, pairs, nullptr, config.chamfer, "identity"));
        }
        op::print_evaluate_table(rows);
    } else if (cmd_ablate->parsed()) {
        const op::PipelineConfig config = make_config(abl_opts);
        const op::MorphableModel model = op::load_model(abl_model);
        const auto pairs = op::load_dataset(abl_dataset);
        const auto rows = op::run_ablation(model, pairs, config);
        op::print_ablation_table(rows);
        if (!abl_out.empty()) {
            std::FILE* f = std::fopen(abl_out.c_str(), "w");
            if (!f) {
                throw op::DataError("cannot write " + abl_out);
            }
            std::fprintf(f, "name,hd_mm,cd,data_amount\n");
            for (const auto& r : rows) {
                std::fprintf(f, "%s,%.9g,%.9g,%d\n", r.name.c_str(), r.hd_mean, r.cd_mean,
                             r.data_amount);
            }
            std::fclose(f);
        }
    } else if (cmd_animate->parsed()) {
        const op::PipelineConfig config = make_config(anim_opts);
        const op::MorphableModel model = op::load_model(anim_model);
        const op::LatentCode pre = op::load_code(anim_pre);
        const op::LatentCode pred = op::load_code(anim_pred);
        const auto frames = op::interpolate_codes(model, pre, pred, config.animate_steps);
        if (!anim_reference.empty()) {
            const op::Mesh reference = op::load_obj(anim_reference);
            op::export_sequence(frames, anim_out_dir, &reference);
        } else {
            op::export_sequence(frames, anim_out_dir, &frames.back());
        }
        std::printf("animate: %zu frames -> %s\n", frames.size(), anim_out_dir.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const op::ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const op::DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const op::NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 4;
    }
}
