#include "onsetnet/runconfig.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace onsetnet {

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string join_strings(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += parts[i];
    }
    return out;
}

std::string join_i64(const std::vector<std::int64_t>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(parts[i]);
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
    throw ConfigError("config: key '" + key + "' rejects value '" + value + "': " + why);
}

std::int64_t parse_i64(const std::string& key, const std::string& value) {
    std::int64_t out = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        bad_value(key, value, "not an integer");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        bad_value(key, value, "not an unsigned integer");
    return out;
}

double parse_f64(const std::string& key, const std::string& value) {
    double out = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) bad_value(key, value, "not a number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value, "expected true/false");
}

std::vector<std::string> parse_names(const std::string& key, const std::string& value) {
    const auto parts = split(value, ',');
    for (const auto& p : parts)
        if (p.empty()) bad_value(key, value, "empty name in list");
    return parts;
}

std::vector<std::int64_t> parse_i64_list(const std::string& key, const std::string& value) {
    std::vector<std::int64_t> out;
    for (const auto& p : split(value, ',')) out.push_back(parse_i64(key, p));
    return out;
}

std::int64_t positive_i64(const std::string& key, const std::string& value) {
    const std::int64_t v = parse_i64(key, value);
    if (v < 1) bad_value(key, value, "must be >= 1");
    return v;
}

double positive_f64(const std::string& key, const std::string& value) {
    const double v = parse_f64(key, value);
    if (!(v > 0.0)) bad_value(key, value, "must be > 0");
    return v;
}

double nonneg_f64(const std::string& key, const std::string& value) {
    const double v = parse_f64(key, value);
    if (!(v >= 0.0)) bad_value(key, value, "must be >= 0");
    return v;
}

}  // namespace

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
    if (key == "seed") {
        config.seed = parse_u64(key, value);

    } else if (key == "model.roi_names") {
        config.model.roi_names = parse_names(key, value);
    } else if (key == "model.input_frames") {
        config.model.input_frames = positive_i64(key, value);
    } else if (key == "model.roi_height") {
        config.model.roi_height = positive_i64(key, value);
    } else if (key == "model.roi_width") {
        config.model.roi_width = positive_i64(key, value);
    } else if (key == "model.channels_in") {
        config.model.channels_in = positive_i64(key, value);
    } else if (key == "model.conv_channels") {
        config.model.conv_channels = parse_i64_list(key, value);
    } else if (key == "model.temporal_kernels") {
        config.model.temporal_kernels = parse_i64_list(key, value);
    } else if (key == "model.spatial_kernels") {
        config.model.spatial_kernels = parse_i64_list(key, value);
    } else if (key == "model.pool_after") {
        const auto list = parse_i64_list(key, value);
        config.model.pool_after = std::set<std::int64_t>(list.begin(), list.end());
    } else if (key == "model.fc1_width") {
        config.model.fc1_width = positive_i64(key, value);
    } else if (key == "model.fc2_width") {
        config.model.fc2_width = positive_i64(key, value);
    } else if (key == "model.dropout_rate") {
        const double v = parse_f64(key, value);
        if (!(v >= 0.0 && v < 1.0)) bad_value(key, value, "must be in [0,1)");
        config.model.dropout_rate = v;
    } else if (key == "model.bn_epsilon") {
        config.model.bn_epsilon = positive_f64(key, value);
    } else if (key == "model.bn_momentum") {
        const double v = parse_f64(key, value);
        if (!(v >= 0.0 && v < 1.0)) bad_value(key, value, "must be in [0,1)");
        config.model.bn_momentum = v;

    } else if (key == "data.da_factor") {
        config.data_da_factor = positive_i64(key, value);
    } else if (key == "data.max_jitter") {
        config.data_max_jitter = nonneg_f64(key, value);

    } else if (key == "synth.subjects") {
        config.synth.subjects = positive_i64(key, value);
    } else if (key == "synth.videos_per_subject") {
        config.synth.videos_per_subject = positive_i64(key, value);
    } else if (key == "synth.fps") {
        config.synth.fps = positive_f64(key, value);
    } else if (key == "synth.duration_sec") {
        config.synth.duration_sec = positive_f64(key, value);
    } else if (key == "synth.frame_height") {
        config.synth.frame_height = positive_i64(key, value);
    } else if (key == "synth.frame_width") {
        config.synth.frame_width = positive_i64(key, value);
    } else if (key == "synth.roi_names") {
        config.synth.roi_names = parse_names(key, value);
    } else if (key == "synth.cue_rois") {
        config.synth.cue_rois = parse_names(key, value);
    } else if (key == "synth.min_gap_frames") {
        config.synth.min_gap_frames = positive_i64(key, value);
    } else if (key == "synth.max_gap_frames") {
        config.synth.max_gap_frames = positive_i64(key, value);

    } else if (key == "train.max_epochs") {
        const std::int64_t v = parse_i64(key, value);
        if (v < 1 || v > 15) bad_value(key, value, "must be in [1,15]");
        config.train_max_epochs = v;
    } else if (key == "train.l2_lambda") {
        config.train_l2_lambda = nonneg_f64(key, value);
    } else if (key == "train.base_lr") {
        config.train_base_lr = positive_f64(key, value);
    } else if (key == "train.rho") {
        const double v = parse_f64(key, value);
        if (!(v >= 0.0 && v < 1.0)) bad_value(key, value, "must be in [0,1)");
        config.train_rho = v;
    } else if (key == "train.lr_decay_per_epoch") {
        const double v = parse_f64(key, value);
        if (!(v > 0.0 && v <= 1.0)) bad_value(key, value, "must be in (0,1]");
        config.train_lr_decay_per_epoch = v;
    } else if (key == "train.epsilon") {
        config.train_epsilon = positive_f64(key, value);
    } else if (key == "train.grad_clip") {
        config.train_grad_clip = nonneg_f64(key, value);
    } else if (key == "train.weight_non_onset") {
        config.train_weight_non_onset = positive_f64(key, value);
    } else if (key == "train.weight_onset") {
        config.train_weight_onset = positive_f64(key, value);

    } else if (key == "eval.threshold") {
        const double v = parse_f64(key, value);
        if (!(v >= 0.0 && v <= 1.0)) bad_value(key, value, "must be in [0,1]");
        config.eval_threshold = v;
    } else if (key == "eval.nms_radius") {
        const std::int64_t v = parse_i64(key, value);
        if (v < 0) bad_value(key, value, "must be >= 0");
        config.eval_nms_radius = v;
    } else if (key == "eval.tolerance_sec") {
        config.eval_tolerance_sec = positive_f64(key, value);
    } else if (key == "eval.macro") {
        config.eval_macro = parse_bool(key, value);

    } else if (key == "baseline.trials") {
        config.baseline_trials = positive_i64(key, value);

    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    RunConfig config;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        if (line[start] == '#') continue;
        const std::size_t eq = line.find('=', start);
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": line without '='");
        set_key(config, line.substr(start, eq - start), line.substr(eq + 1));
    }
    validate_run_config(config);
    return config;
}

std::vector<std::pair<std::string, std::string>> run_config_items(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    out.emplace_back("seed", std::to_string(c.seed));

    out.emplace_back("model.roi_names", join_strings(c.model.roi_names));
    out.emplace_back("model.input_frames", std::to_string(c.model.input_frames));
    out.emplace_back("model.roi_height", std::to_string(c.model.roi_height));
    out.emplace_back("model.roi_width", std::to_string(c.model.roi_width));
    out.emplace_back("model.channels_in", std::to_string(c.model.channels_in));
    out.emplace_back("model.conv_channels", join_i64(c.model.conv_channels));
    out.emplace_back("model.temporal_kernels", join_i64(c.model.temporal_kernels));
    out.emplace_back("model.spatial_kernels", join_i64(c.model.spatial_kernels));
    out.emplace_back("model.pool_after",
                     join_i64(std::vector<std::int64_t>(c.model.pool_after.begin(), c.model.pool_after.end())));
    out.emplace_back("model.fc1_width", std::to_string(c.model.fc1_width));
    out.emplace_back("model.fc2_width", std::to_string(c.model.fc2_width));
    out.emplace_back("model.dropout_rate", fmt_double(c.model.dropout_rate));
    out.emplace_back("model.bn_epsilon", fmt_double(c.model.bn_epsilon));
    out.emplace_back("model.bn_momentum", fmt_double(c.model.bn_momentum));

    out.emplace_back("data.da_factor", std::to_string(c.data_da_factor));
    out.emplace_back("data.max_jitter", fmt_double(c.data_max_jitter));

    out.emplace_back("synth.subjects", std::to_string(c.synth.subjects));
    out.emplace_back("synth.videos_per_subject", std::to_string(c.synth.videos_per_subject));
    out.emplace_back("synth.fps", fmt_double(c.synth.fps));
    out.emplace_back("synth.duration_sec", fmt_double(c.synth.duration_sec));
    out.emplace_back("synth.frame_height", std::to_string(c.synth.frame_height));
    out.emplace_back("synth.frame_width", std::to_string(c.synth.frame_width));
    out.emplace_back("synth.roi_names", join_strings(c.synth.roi_names));
    out.emplace_back("synth.cue_rois", join_strings(c.synth.cue_rois));
    out.emplace_back("synth.min_gap_frames", std::to_string(c.synth.min_gap_frames));
    out.emplace_back("synth.max_gap_frames", std::to_string(c.synth.max_gap_frames));

    out.emplace_back("train.max_epochs", std::to_string(c.train_max_epochs));
    out.emplace_back("train.l2_lambda", fmt_double(c.train_l2_lambda));
    out.emplace_back("train.base_lr", fmt_double(c.train_base_lr));
    out.emplace_back("train.rho", fmt_double(c.train_rho));
    out.emplace_back("train.lr_decay_per_epoch", fmt_double(c.train_lr_decay_per_epoch));
    out.emplace_back("train.epsilon", fmt_double(c.train_epsilon));
    out.emplace_back("train.grad_clip", fmt_double(c.train_grad_clip));
    out.emplace_back("train.weight_non_onset", fmt_double(c.train_weight_non_onset));
    out.emplace_back("train.weight_onset", fmt_double(c.train_weight_onset));

    out.emplace_back("eval.threshold", fmt_double(c.eval_threshold));
    out.emplace_back("eval.nms_radius", std::to_string(c.eval_nms_radius));
    out.emplace_back("eval.tolerance_sec", fmt_double(c.eval_tolerance_sec));
    out.emplace_back("eval.macro", c.eval_macro ? "true" : "false");

    out.emplace_back("baseline.trials", std::to_string(c.baseline_trials));
    return out;
}

std::string run_config_to_text(const RunConfig& config) {
    std::string out;
    for (const auto& [key, value] : run_config_items(config)) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    }
    return out;
}

void validate_run_config(const RunConfig& config) {
    validate_config(config.model);
    if (config.synth.min_gap_frames > config.synth.max_gap_frames)
        throw ConfigError("config: synth.min_gap_frames exceeds synth.max_gap_frames");
}

TrainRunConfig train_run_from(const RunConfig& config) {
    TrainRunConfig run;
    run.max_epochs = config.train_max_epochs;
    run.l2_lambda = config.train_l2_lambda;
    run.class_weights = LossSpec{config.train_weight_non_onset, config.train_weight_onset};
    run.da_factor = config.data_da_factor;
    run.max_jitter = config.data_max_jitter;
    run.grad_clip = config.train_grad_clip;
    run.tolerance_sec = config.eval_tolerance_sec;
    run.decode = DecodeParams{config.eval_threshold, config.eval_nms_radius};
    run.base_lr = config.train_base_lr;
    run.rho = config.train_rho;
    run.lr_decay_per_epoch = config.train_lr_decay_per_epoch;
    run.epsilon = config.train_epsilon;
    run.seed = config.seed;
    return run;
}

}  // namespace onsetnet
