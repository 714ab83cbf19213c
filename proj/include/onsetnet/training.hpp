#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "onsetnet/checkpoint.hpp"
#include "onsetnet/dataset.hpp"
#include "onsetnet/evaluation.hpp"
#include "onsetnet/model.hpp"
#include "onsetnet/ops.hpp"

namespace onsetnet {

// Plain RMSprop: one squared-gradient accumulator per parameter, matched by
// name against parameters() order.
struct OptimizerState {
    double rho = 0.9;
    double epsilon = 1e-8;
    double base_lr = 1e-3;
    double lr_decay_per_epoch = 0.95;
    std::vector<std::string> names;
    std::vector<Tensor<float>> accumulators;
};

OptimizerState make_optimizer(Model<float>& model, double base_lr = 1e-3, double rho = 0.9,
                              double lr_decay_per_epoch = 0.95, double epsilon = 1e-8);

// s <- rho * s + (1 - rho) * g^2;  w <- w - lr * g / (sqrt(s) + eps)
void rmsprop_step(const std::vector<ParamRef<float>>& params, const std::vector<Tensor<float>>& grads,
                  OptimizerState& state, double lr);

double lr_at(std::int64_t epoch, const OptimizerState& state);

struct TrainRunConfig {
    std::int64_t max_epochs = 15;
    double l2_lambda = 1e-4;
    LossSpec class_weights;  // (1, 1): batches are already balanced
    std::uint64_t seed = 0;
    std::string checkpoint_dir;
    std::int64_t da_factor = 4;
    double max_jitter = 4.0;
    double grad_clip = 0.0;  // global-norm clip threshold; 0 disables
    double tolerance_sec = 0.05;
    DecodeParams decode;
    double base_lr = 1e-3;
    double rho = 0.9;
    double lr_decay_per_epoch = 0.95;
    double epsilon = 1e-8;
};

struct StepMetrics {
    double loss = 0;       // data_loss + l2
    double data_loss = 0;
    double l2 = 0;
    double grad_norm = 0;  // global norm before clipping
};

// One optimizer step: train-mode forward, weighted soft-target loss plus L2
// on the non-gamma weights, full backward, RMSprop update. A non-finite
// loss or gradient aborts with the first offending tensor named.
StepMetrics train_step(Model<float>& model, const std::vector<Tensor<float>>& batch,
                       const Tensor<float>& targets, OptimizerState& optimizer, const LossSpec& weights,
                       double l2_lambda, double lr, double grad_clip, Rng& dropout_rng);

struct EpochRecord {
    std::int64_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_precision = 0;
    double val_recall = 0;
    double val_f = 0;
};

struct FitResult {
    std::vector<EpochRecord> history;
    std::int64_t best_epoch = 0;
    double best_val_f = 0;
    std::string best_path;
    std::string history_path;
};

std::string format_history_csv(const std::vector<EpochRecord>& history);

// Full training run on one split: balanced batches from the train subjects,
// per-epoch validation (f-score at the matching tolerance plus loss) on the
// validation subject, a checkpoint per epoch under checkpoint_dir, and
// best.ckpt as a copy of the highest-validation-f epoch (tie -> earliest).
// The test subject is never touched. on_epoch, when set, sees each record as
// it is produced.
FitResult fit(FrameStore& store, const SplitPlan& split, const ModelConfig& model_config,
              const TrainRunConfig& run_config, const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace onsetnet
