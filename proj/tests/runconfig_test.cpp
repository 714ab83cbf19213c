#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include "onsetnet/runconfig.hpp"

using namespace onsetnet;
namespace fs = std::filesystem;

namespace {

std::atomic<int> fixture_counter{0};

std::string write_temp_config(const std::string& text) {
    const fs::path path = fs::temp_directory_path() / ("onsetnet_rc_" + std::to_string(::getpid()) + "_" +
                                                       std::to_string(fixture_counter++) + ".cfg");
    std::ofstream out(path);
    REQUIRE(out.good());
    out << text;
    return path.string();
}

}  // namespace

TEST_CASE("unknown keys and malformed values are rejected") {
    RunConfig config;
    CHECK_THROWS_WITH_AS(set_key(config, "nope.key", "1"), doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "train.max_epochs", "sixteen"), doctest::Contains("not an integer"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "train.max_epochs", "16"), doctest::Contains("[1,15]"), ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "model.dropout_rate", "1.0"), doctest::Contains("[0,1)"), ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "eval.macro", "maybe"), doctest::Contains("true/false"), ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "synth.fps", "0"), doctest::Contains("> 0"), ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "model.roi_names", "mouth,,tip"), doctest::Contains("empty name"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(set_key(config, "data.da_factor", "0"), doctest::Contains(">= 1"), ConfigError);
}

TEST_CASE("values reach their typed fields") {
    RunConfig config;
    set_key(config, "seed", "42");
    set_key(config, "model.conv_channels", "4,8,8,16,16");
    set_key(config, "model.pool_after", "1,3");
    set_key(config, "data.max_jitter", "2.5");
    set_key(config, "train.base_lr", "0.002");
    set_key(config, "eval.macro", "true");
    set_key(config, "synth.cue_rois", "mouth");
    set_key(config, "baseline.trials", "77");

    CHECK(config.seed == 42);
    CHECK(config.model.conv_channels == std::vector<std::int64_t>{4, 8, 8, 16, 16});
    CHECK(config.model.pool_after == std::set<std::int64_t>{1, 3});
    CHECK(config.data_max_jitter == 2.5);
    CHECK(config.train_base_lr == 0.002);
    CHECK(config.eval_macro);
    CHECK(config.synth.cue_rois == std::vector<std::string>{"mouth"});
    CHECK(config.baseline_trials == 77);
}

TEST_CASE("config files skip comments and catch format errors") {
    const std::string good = write_temp_config(
        "# comment line\n"
        "\n"
        "seed=9\n"
        "  train.l2_lambda=0.01\n");
    const RunConfig config = load_run_config(good);
    CHECK(config.seed == 9);
    CHECK(config.train_l2_lambda == 0.01);

    const std::string bad = write_temp_config("seed 9\n");
    CHECK_THROWS_WITH_AS(load_run_config(bad), doctest::Contains(":1: line without '='"), ConfigError);
    CHECK_THROWS_WITH_AS(load_run_config("/nonexistent/rc.cfg"), doctest::Contains("cannot open"), ConfigError);
}

TEST_CASE("file values override defaults and stay overridable") {
    const std::string path = write_temp_config("train.base_lr=0.005\ntrain.rho=0.8\n");
    RunConfig config = load_run_config(path);
    CHECK(config.train_base_lr == 0.005);
    CHECK(config.train_rho == 0.8);
    CHECK(config.train_epsilon == 1e-8);  // untouched default

    set_key(config, "train.base_lr", "0.007");  // flag layer wins
    CHECK(config.train_base_lr == 0.007);
}

TEST_CASE("the text form round trips") {
    RunConfig config;
    set_key(config, "seed", "123");
    set_key(config, "model.roi_names", "mouth,clarinet_tip");
    set_key(config, "model.conv_channels", "2,2,2,2,2");
    set_key(config, "train.lr_decay_per_epoch", "0.9");
    set_key(config, "eval.tolerance_sec", "0.1");

    const std::string path = write_temp_config(run_config_to_text(config));
    const RunConfig reread = load_run_config(path);
    CHECK(run_config_to_text(reread) == run_config_to_text(config));
}

TEST_CASE("cross-field validation reports inconsistent settings") {
    RunConfig config;
    set_key(config, "synth.min_gap_frames", "30");
    set_key(config, "synth.max_gap_frames", "20");
    CHECK_THROWS_WITH_AS(validate_run_config(config), doctest::Contains("min_gap_frames"), ConfigError);

    RunConfig bad_model;
    set_key(bad_model, "model.temporal_kernels", "9,9,9,9,9");  // time axis would go negative
    CHECK_THROWS_AS(validate_run_config(bad_model), ConfigError);
}

TEST_CASE("the training slice carries every train and decode setting") {
    RunConfig config;
    set_key(config, "seed", "31");
    set_key(config, "train.max_epochs", "7");
    set_key(config, "train.l2_lambda", "0.02");
    set_key(config, "train.grad_clip", "10");
    set_key(config, "train.weight_onset", "2");
    set_key(config, "data.da_factor", "3");
    set_key(config, "data.max_jitter", "1.5");
    set_key(config, "eval.threshold", "0.6");
    set_key(config, "eval.nms_radius", "4");
    set_key(config, "eval.tolerance_sec", "0.08");

    const TrainRunConfig run = train_run_from(config);
    CHECK(run.seed == 31);
    CHECK(run.max_epochs == 7);
    CHECK(run.l2_lambda == 0.02);
    CHECK(run.grad_clip == 10.0);
    CHECK(run.class_weights.w_onset == 2.0);
    CHECK(run.class_weights.w_non_onset == 1.0);
    CHECK(run.da_factor == 3);
    CHECK(run.max_jitter == 1.5);
    CHECK(run.decode.threshold == 0.6);
    CHECK(run.decode.nms_radius == 4);
    CHECK(run.tolerance_sec == 0.08);
}
