#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "onsetnet/model.hpp"
#include "onsetnet/synth.hpp"
#include "onsetnet/training.hpp"

namespace onsetnet {

// Flat key=value run configuration. Every tunable default of the library
// modules appears under a dotted key (model.*, data.*, synth.*, train.*,
// eval.*, baseline.*) plus the global seed; unknown keys are rejected and
// each value is range-checked as it is set.
struct RunConfig {
    std::uint64_t seed = 0;

    ModelConfig model;
    SynthSpec synth;

    std::int64_t data_da_factor = 4;
    double data_max_jitter = 4.0;

    std::int64_t train_max_epochs = 15;
    double train_l2_lambda = 1e-4;
    double train_base_lr = 1e-3;
    double train_rho = 0.9;
    double train_lr_decay_per_epoch = 0.95;
    double train_epsilon = 1e-8;
    double train_grad_clip = 0.0;
    double train_weight_non_onset = 1.0;
    double train_weight_onset = 1.0;

    double eval_threshold = 0.5;
    std::int64_t eval_nms_radius = 2;
    double eval_tolerance_sec = 0.05;
    bool eval_macro = false;

    std::int64_t baseline_trials = 1000;
};

// Parses and applies one key. ConfigError on an unknown key or a value that
// fails the target field's range check.
void set_key(RunConfig& config, const std::string& key, const std::string& value);

// key=value file; blank lines and lines starting with '#' are skipped.
RunConfig load_run_config(const std::string& path);

// Every key with its current value, in canonical order. Feeding the pairs
// back through set_key reproduces the config, so the text form is both the
// --help listing and the manifest snapshot.
std::vector<std::pair<std::string, std::string>> run_config_items(const RunConfig& config);
std::string run_config_to_text(const RunConfig& config);

// Cross-field checks (the model shape trace, gap ordering). ConfigError.
void validate_run_config(const RunConfig& config);

// The training-loop slice of the config; seed and checkpoint_dir are filled
// by the caller.
TrainRunConfig train_run_from(const RunConfig& config);

}  // namespace onsetnet
