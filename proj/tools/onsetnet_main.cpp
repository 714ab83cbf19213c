#include <zlib.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "onsetnet/checkpoint.hpp"
#include "onsetnet/dataset.hpp"
#include "onsetnet/evaluation.hpp"
#include "onsetnet/gradcheck_suite.hpp"
#include "onsetnet/runconfig.hpp"
#include "onsetnet/synth.hpp"
#include "onsetnet/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace onsetnet;

namespace {

constexpr const char* kToolVersion = "onsetnet 1.0.0";

std::string double_text(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string iso_utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("manifest: cannot read '" + path + "' for digesting");
    uLong crc = crc32(0L, Z_NULL, 0);
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(in.gcount()));
        if (!in) break;
    }
    char hex[16];
    std::snprintf(hex, sizeof(hex), "crc32:%08lx", static_cast<unsigned long>(crc));
    return hex;
}

// Digest of the annotation files a dataset manifest pulls in; frame images
// are identified by count, not content, to keep manifests cheap.
json dataset_digests(const std::string& manifest_path, const Dataset& dataset) {
    json files = json::object();
    files[manifest_path] = file_digest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    (void)base;
    std::int64_t frames = 0;
    for (const auto& video : dataset.videos) frames += video.duration_frames;
    json out;
    out["files"] = files;
    out["videos"] = dataset.videos.size();
    out["total_frames"] = frames;
    return out;
}

// Written into out_dir before the command does any work.
std::string write_run_manifest(const std::string& out_dir, const std::string& command, const RunConfig& config,
                               const json& inputs) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("manifest: cannot create '" + out_dir + "': " + ec.message());

    json snapshot = json::object();
    for (const auto& [key, value] : run_config_items(config)) snapshot[key] = value;

    json manifest;
    manifest["tool"] = kToolVersion;
    manifest["command"] = command;
    manifest["seed"] = config.seed;
    manifest["started_at"] = iso_utc_now();
    manifest["config"] = snapshot;
    manifest["inputs"] = inputs;

    const fs::path path = fs::path(out_dir) / "run_manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("manifest: cannot write '" + path.string() + "'");
    out << manifest.dump(2) << '\n';

    // The snapshot in config-file form; --config on it replays the run.
    const fs::path cfg_path = fs::path(out_dir) / "run_config.resolved.cfg";
    std::ofstream cfg(cfg_path, std::ios::binary | std::ios::trunc);
    if (!cfg) throw IoError("manifest: cannot write '" + cfg_path.string() + "'");
    cfg << run_config_to_text(config);
    return path.string();
}

// Shared --config/--set/--seed handling: defaults < file < flags.
struct CommonFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file (see --help for the keys)");
        cmd->add_option("--set", sets, "override one config key, e.g. --set train.base_lr=0.002")
            ->type_name("KEY=VALUE");
        cmd->add_option("--seed", seed, "root seed; every random consumer derives a labeled substream");
    }

    RunConfig resolve() const {
        RunConfig config;
        if (!config_path.empty()) config = load_run_config(config_path);
        for (const auto& item : sets) {
            const std::size_t eq = item.find('=');
            if (eq == std::string::npos) throw ConfigError("config: --set expects KEY=VALUE, got '" + item + "'");
            set_key(config, item.substr(0, eq), item.substr(eq + 1));
        }
        if (seed) config.seed = *seed;
        validate_run_config(config);
        return config;
    }
};

std::string config_key_listing() {
    std::string out = "Configuration keys and defaults (set via --config file or --set KEY=VALUE):\n";
    for (const auto& [key, value] : run_config_items(RunConfig{})) {
        out += "  ";
        out += key;
        out += " = ";
        out += value.empty() ? "(empty)" : value;
        out += '\n';
    }
    return out;
}

void apply_thread_cap() {
    const char* raw = std::getenv("ONSETNET_THREADS");
    if (!raw || !*raw) return;
    const int n = std::atoi(raw);
    if (n < 1) throw ConfigError("config: ONSETNET_THREADS must be a positive integer, got '" + std::string(raw) + "'");
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

Dataset load_dataset_arg(const std::string& data_path) {
    if (!fs::exists(data_path))
        throw ConfigError("config: --data file '" + data_path + "' does not exist");
    return load_annotations(data_path);
}

SplitPlan pick_split(const Dataset& dataset, std::int64_t split_id) {
    std::vector<std::string> ids;
    for (const auto& s : dataset.subjects) ids.push_back(s.id);
    const auto plans = make_splits(ids);
    if (split_id < 0 || split_id >= static_cast<std::int64_t>(plans.size()))
        throw ConfigError("config: --split must be in [0, " + std::to_string(plans.size() - 1) + "], got " +
                          std::to_string(split_id));
    return plans[static_cast<std::size_t>(split_id)];
}

int cmd_synth(const CommonFlags& common, const std::string& out_dir) {
    const RunConfig config = common.resolve();
    write_run_manifest(out_dir, "synth", config, json::object());

    const std::string manifest = generate_synthetic(config.synth, config.seed, out_dir);
    const Dataset dataset = load_annotations(manifest);

    std::int64_t onsets = 0, frames = 0;
    for (const auto& video : dataset.videos) {
        onsets += static_cast<std::int64_t>(video.onsets.size());
        frames += video.duration_frames;
    }
    std::cout << "dataset manifest: " << manifest << '\n'
              << "subjects: " << dataset.subjects.size() << '\n'
              << "videos: " << dataset.videos.size() << '\n'
              << "onsets: " << onsets << '\n';
    if (onsets > 0) {
        char density[64];
        std::snprintf(density, sizeof(density), "onset density: 1 per %.1f frames",
                      static_cast<double>(frames) / static_cast<double>(onsets));
        std::cout << density << '\n';
    }
    return 0;
}

int cmd_train(const CommonFlags& common, const std::string& data_path, const std::string& out_dir,
              std::int64_t split_id, std::optional<std::int64_t> max_epochs) {
    RunConfig config = common.resolve();
    if (max_epochs) set_key(config, "train.max_epochs", std::to_string(*max_epochs));

    const Dataset dataset = load_dataset_arg(data_path);
    const SplitPlan split = pick_split(dataset, split_id);

    json inputs = dataset_digests(data_path, dataset);
    inputs["split"] = split_id;
    if (!common.config_path.empty()) inputs["files"][common.config_path] = file_digest(common.config_path);
    write_run_manifest(out_dir, "train", config, inputs);

    TrainRunConfig run = train_run_from(config);
    run.checkpoint_dir = out_dir;

    std::cout << "split " << split_id << ": test " << split.test_subject << ", validation "
              << split.validation_subject << ", " << split.train_subjects.size() << " training subjects\n";

    FrameStore store(dataset);
    const FitResult result = fit(store, split, config.model, run, [](const EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof(line),
                      "epoch %lld: train_loss %.4f  val_loss %.4f  val_p %.3f  val_r %.3f  val_f %.3f",
                      static_cast<long long>(r.epoch), r.train_loss, r.val_loss, r.val_precision, r.val_recall,
                      r.val_f);
        std::cout << line << std::endl;
    });

    char best[96];
    std::snprintf(best, sizeof(best), "best epoch %lld (val_f %.3f)", static_cast<long long>(result.best_epoch),
                  result.best_val_f);
    std::cout << best << '\n' << "history: " << result.history_path << '\n' << "best checkpoint: " << result.best_path
              << '\n';
    return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& data_path, const std::string& ckpt_path,
             const std::string& pred_in, std::string subject, std::optional<std::int64_t> split_id,
             const std::string& out_dir, bool reference, std::optional<double> tolerance) {
    RunConfig config = common.resolve();
    if (tolerance) set_key(config, "eval.tolerance_sec", double_text(*tolerance));

    const Dataset dataset = load_dataset_arg(data_path);
    if (split_id) subject = pick_split(dataset, *split_id).test_subject;
    if (subject.empty()) throw ConfigError("config: eval needs --subject or --split");

    json inputs = dataset_digests(data_path, dataset);
    if (!ckpt_path.empty()) inputs["files"][ckpt_path] = file_digest(ckpt_path);
    if (!pred_in.empty()) inputs["files"][pred_in] = file_digest(pred_in);
    if (!out_dir.empty()) write_run_manifest(out_dir, "eval", config, inputs);

    const DecodeParams decode{config.eval_threshold, config.eval_nms_radius};
    EvalReport report;
    std::vector<OnsetPrediction> predictions;

    if (!pred_in.empty()) {
        const auto by_video = read_predictions_csv(pred_in);
        for (const auto& [video_id, times] : by_video) predictions.push_back({video_id, times});
        report = score_predictions(dataset, subject, by_video, config.eval_tolerance_sec, "csv");
    } else {
        LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
        FrameStore store(dataset);
        std::map<std::string, std::vector<double>> by_video;
        for (std::size_t vi : dataset.subject(subject).video_indices) {
            const VideoRecord& video = dataset.videos[vi];
            const auto curve = onset_probability_curve(loaded.model, store, vi);
            by_video[video.video_id] = decode_onsets(curve, video.fps, decode.threshold, decode.nms_radius);
            predictions.push_back({video.video_id, by_video[video.video_id]});
        }
        report = score_predictions(dataset, subject, by_video, config.eval_tolerance_sec, "cnn");
    }

    std::cout << render_report_table({report}, reference);
    if (config.eval_macro) {
        char line[96];
        std::snprintf(line, sizeof(line), "macro: precision %.1f recall %.1f f %.1f\n", report.macro.precision * 100,
                      report.macro.recall * 100, report.macro.f * 100);
        std::cout << line;
    }

    if (!out_dir.empty()) {
        const std::string pred_path = (fs::path(out_dir) / "predictions.csv").string();
        write_predictions_csv(pred_path, predictions);
        const std::string report_path = (fs::path(out_dir) / "report.csv").string();
        std::ofstream rep(report_path, std::ios::binary | std::ios::trunc);
        if (!rep) throw IoError("eval: cannot write '" + report_path + "'");
        rep << render_report_csv({report}, reference);
        std::cout << "predictions: " << pred_path << '\n' << "report: " << report_path << '\n';
    }
    return 0;
}

int cmd_baseline(const CommonFlags& common, const std::string& data_path, std::string subject,
                 std::optional<std::int64_t> split_id, std::optional<std::int64_t> trials) {
    RunConfig config = common.resolve();
    if (trials) set_key(config, "baseline.trials", std::to_string(*trials));

    const Dataset dataset = load_dataset_arg(data_path);
    if (split_id) subject = pick_split(dataset, *split_id).test_subject;
    if (subject.empty()) throw ConfigError("config: baseline needs --subject or --split");

    double sum = 0.0;
    std::int64_t count = 0;
    for (std::size_t vi : dataset.subject(subject).video_indices) {
        const VideoRecord& video = dataset.videos[vi];
        const double duration_sec = static_cast<double>(video.duration_frames) / video.fps;
        const double f = informed_random_baseline(video.onsets, duration_sec, config.baseline_trials,
                                                  mix_seed(config.seed, "baseline." + video.video_id),
                                                  config.eval_tolerance_sec);
        char line[96];
        std::snprintf(line, sizeof(line), "%s: mean f %.4f over %lld trials", video.video_id.c_str(), f,
                      static_cast<long long>(config.baseline_trials));
        std::cout << line << '\n';
        sum += f;
        ++count;
    }
    if (count == 0) throw DataError("baseline: subject '" + subject + "' has no videos");
    char line[64];
    std::snprintf(line, sizeof(line), "subject mean f: %.4f", sum / static_cast<double>(count));
    std::cout << line << '\n';
    return 0;
}

int cmd_gradcheck(const CommonFlags& common, const std::string& scope, const std::string& fault_op) {
    const RunConfig config = common.resolve();
    auto checks = run_gradcheck_suite(config.seed, fault_op);
    if (scope == "ops") {
        checks.erase(std::remove_if(checks.begin(), checks.end(), [](const OpCheck& c) { return c.op == "model"; }),
                     checks.end());
    } else if (scope == "model") {
        checks.erase(std::remove_if(checks.begin(), checks.end(), [](const OpCheck& c) { return c.op != "model"; }),
                     checks.end());
    } else if (scope != "all") {
        throw ConfigError("config: --scope must be ops, model, or all");
    }
    bool ok = true;
    for (const auto& c : checks) {
        char line[96];
        std::snprintf(line, sizeof(line), "%-16s max_rel_error %.3e  threshold %.0e  %s", c.op.c_str(),
                      c.max_rel_error, c.threshold, c.pass ? "pass" : "FAIL");
        std::cout << line << '\n';
        ok = ok && c.pass;
    }
    if (!ok) {
        std::cout << "gradient check failed\n";
        return 1;
    }
    std::cout << "all gradients verified\n";
    return 0;
}

int cmd_splits(const std::string& data_path) {
    const Dataset dataset = load_dataset_arg(data_path);
    std::vector<std::string> ids;
    for (const auto& s : dataset.subjects) ids.push_back(s.id);
    for (const auto& plan : make_splits(ids)) {
        std::cout << "split " << plan.split_id << ": test " << plan.test_subject << ", validation "
                  << plan.validation_subject << ", train";
        for (const auto& id : plan.train_subjects) std::cout << ' ' << id;
        std::cout << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kToolVersion) + " - multi-stream video onset detection"};
    app.require_subcommand(1);
    app.footer(config_key_listing());

    CommonFlags synth_common, train_common, eval_common, base_common, grad_common;

    auto* synth = app.add_subcommand("synth", "render a synthetic annotated dataset");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth_common.attach(synth);

    auto* train = app.add_subcommand("train", "train on one leave-one-subject-out split");
    std::string train_data, train_out;
    std::int64_t train_split = 0;
    std::optional<std::int64_t> train_epochs;
    train->add_option("--data", train_data, "dataset manifest JSON")->required();
    train->add_option("--out", train_out, "run directory for checkpoints, history, manifest")->required();
    train->add_option("--split", train_split, "split id (see the splits command)")->required();
    train->add_option("--max-epochs", train_epochs, "override train.max_epochs");
    train_common.attach(train);

    auto* eval = app.add_subcommand("eval", "score a checkpoint or a prediction CSV on one subject");
    std::string eval_data, eval_ckpt, eval_pred_in, eval_subject, eval_out;
    std::optional<std::int64_t> eval_split;
    std::optional<double> eval_tolerance;
    bool eval_reference = false;
    eval->add_option("--data", eval_data, "dataset manifest JSON")->required();
    auto* ckpt_opt = eval->add_option("--ckpt", eval_ckpt, "model checkpoint to evaluate");
    auto* pred_opt = eval->add_option("--pred-in", eval_pred_in, "score this prediction CSV instead of a model");
    ckpt_opt->excludes(pred_opt);
    eval->add_option("--subject", eval_subject, "subject id to score");
    eval->add_option("--split", eval_split, "use this split's test subject");
    eval->add_option("--out", eval_out, "directory for predictions.csv, report.csv, manifest");
    eval->add_option("--tolerance", eval_tolerance, "matching tolerance in seconds (eval.tolerance_sec)");
    eval->add_flag("--reference", eval_reference, "append the published reference rows to the report");
    eval_common.attach(eval);

    auto* baseline = app.add_subcommand("baseline", "informed random baseline for one subject");
    std::string base_data, base_subject;
    std::optional<std::int64_t> base_split, base_trials;
    baseline->add_option("--data", base_data, "dataset manifest JSON")->required();
    baseline->add_option("--subject", base_subject, "subject id");
    baseline->add_option("--split", base_split, "use this split's test subject");
    baseline->add_option("--trials", base_trials, "override baseline.trials");
    base_common.attach(baseline);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
    std::string grad_scope = "all";
    std::string grad_fault;
    gradcheck->add_option("--scope", grad_scope, "ops, model, or all");
    gradcheck->add_option("--fault-op", grad_fault, "corrupt this op's gradient (failure-path testing)")
        ->group("");
    grad_common.attach(gradcheck);

    auto* splits = app.add_subcommand("splits", "print the leave-one-subject-out split plans");
    std::string splits_data;
    splits->add_option("--data", splits_data, "dataset manifest JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        apply_thread_cap();
        if (synth->parsed()) return cmd_synth(synth_common, synth_out);
        if (train->parsed()) return cmd_train(train_common, train_data, train_out, train_split, train_epochs);
        if (eval->parsed())
            return cmd_eval(eval_common, eval_data, eval_ckpt, eval_pred_in, eval_subject, eval_split, eval_out,
                            eval_reference, eval_tolerance);
        if (baseline->parsed()) return cmd_baseline(base_common, base_data, base_subject, base_split, base_trials);
        if (gradcheck->parsed()) return cmd_gradcheck(grad_common, grad_scope, grad_fault);
        if (splits->parsed()) return cmd_splits(splits_data);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
