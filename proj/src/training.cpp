#include "onsetnet/training.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace onsetnet {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

OptimizerState make_optimizer(Model<float>& model, double base_lr, double rho, double lr_decay_per_epoch,
                              double epsilon) {
    if (!(base_lr > 0.0)) throw ConfigError("optimizer: base_lr must be > 0");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("optimizer: rho must be in [0, 1)");
    if (!(lr_decay_per_epoch > 0.0 && lr_decay_per_epoch <= 1.0))
        throw ConfigError("optimizer: lr_decay_per_epoch must be in (0, 1]");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");

    OptimizerState state;
    state.rho = rho;
    state.epsilon = epsilon;
    state.base_lr = base_lr;
    state.lr_decay_per_epoch = lr_decay_per_epoch;
    for (const auto& p : parameters(model)) {
        state.names.push_back(p.name);
        Tensor<float> acc(p.tensor->shape());
        std::fill(acc.data(), acc.data() + acc.size(), 0.0f);
        state.accumulators.push_back(std::move(acc));
    }
    return state;
}

void rmsprop_step(const std::vector<ParamRef<float>>& params, const std::vector<Tensor<float>>& grads,
                  OptimizerState& state, double lr) {
    if (params.size() != state.accumulators.size())
        throw ConfigError("optimizer: state holds " + std::to_string(state.accumulators.size()) +
                          " tensors, model has " + std::to_string(params.size()));
    if (grads.size() != params.size())
        throw ConfigError("optimizer: got " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
    if (!(lr >= 0.0)) throw ConfigError("optimizer: lr must be >= 0");

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != state.names[i])
            throw ConfigError("optimizer: state tensor '" + state.names[i] + "' does not match parameter '" +
                              params[i].name + "'");
        if (!grads[i].same_shape(*params[i].tensor))
            throw ConfigError("optimizer: gradient shape mismatch for " + params[i].name);
        float* w = params[i].tensor->data();
        const float* g = grads[i].data();
        float* s = state.accumulators[i].data();
        const std::int64_t n = params[i].tensor->size();
        for (std::int64_t k = 0; k < n; ++k) {
            const double gk = g[k];
            const double sk = state.rho * s[k] + (1.0 - state.rho) * gk * gk;
            s[k] = static_cast<float>(sk);
            w[k] = static_cast<float>(w[k] - lr * gk / (std::sqrt(sk) + state.epsilon));
        }
    }
}

double lr_at(std::int64_t epoch, const OptimizerState& state) {
    if (epoch < 0) throw ConfigError("optimizer: epoch must be >= 0");
    return state.base_lr * std::pow(state.lr_decay_per_epoch, static_cast<double>(epoch));
}

StepMetrics train_step(Model<float>& model, const std::vector<Tensor<float>>& batch, const Tensor<float>& targets,
                       OptimizerState& optimizer, const LossSpec& weights, double l2_lambda, double lr,
                       double grad_clip, Rng& dropout_rng) {
    ForwardCache<float> cache;
    const auto fwd = model_forward(model, batch, Mode::train, dropout_rng, &cache);
    const auto data = weighted_soft_xent(fwd.logits, targets, weights);

    auto params = parameters(model);
    std::vector<const Tensor<float>*> weight_tensors;
    std::vector<std::size_t> weight_slots;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].bn_gamma) continue;
        weight_tensors.push_back(params[i].tensor);
        weight_slots.push_back(i);
    }
    const auto l2 = l2_penalty(weight_tensors, l2_lambda);
    if (!std::isfinite(data.loss) || !std::isfinite(l2.penalty)) throw NumericError("train: loss is not finite");

    auto grads = model_backward(model, batch, cache, data.grad_logits);
    for (std::size_t k = 0; k < weight_slots.size(); ++k) {
        float* g = grads[weight_slots[k]].data();
        const float* r = l2.grads[k].data();
        const std::int64_t n = grads[weight_slots[k]].size();
        for (std::int64_t j = 0; j < n; ++j) g[j] += r[j];
    }

    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const float* g = grads[i].data();
        const std::int64_t n = grads[i].size();
        for (std::int64_t j = 0; j < n; ++j) {
            if (!std::isfinite(g[j]))
                throw NumericError("train: gradient for " + params[i].name + " is not finite");
            sq += static_cast<double>(g[j]) * static_cast<double>(g[j]);
        }
    }
    const double grad_norm = std::sqrt(sq);

    if (grad_clip > 0.0 && grad_norm > grad_clip) {
        const double scale = grad_clip / grad_norm;
        for (auto& g : grads)
            for (std::int64_t j = 0; j < g.size(); ++j) g[j] = static_cast<float>(g[j] * scale);
    }

    rmsprop_step(params, grads, optimizer, lr);

    StepMetrics metrics;
    metrics.data_loss = data.loss;
    metrics.l2 = l2.penalty;
    metrics.loss = data.loss + l2.penalty;
    metrics.grad_norm = grad_norm;
    return metrics;
}

std::string format_history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_loss,val_precision,val_recall,val_f\n";
    for (const auto& row : history) {
        out += std::to_string(row.epoch);
        out += ',';
        out += fmt(row.train_loss);
        out += ',';
        out += fmt(row.val_loss);
        out += ',';
        out += fmt(row.val_precision);
        out += ',';
        out += fmt(row.val_recall);
        out += ',';
        out += fmt(row.val_f);
        out += '\n';
    }
    return out;
}

namespace {

struct ValOutcome {
    double loss = 0.0;
    Prf micro;
};

// One eval-mode sweep over the subject's in-bounds windows at zero jitter
// yields both the per-frame onset curve (scored after decoding) and the
// validation loss.
ValOutcome validate_subject(Model<float>& model, FrameStore& store, const std::string& subject_id,
                            const LossSpec& weights, const DecodeParams& decode, double tolerance_sec) {
    const Dataset& ds = store.dataset();
    const SubjectRecord& subject = ds.subject(subject_id);
    const auto& cfg = model.config;

    Rng unused(0);
    double loss_sum = 0.0;
    std::int64_t window_count = 0;
    std::int64_t tp = 0, fp = 0, fn = 0;

    for (std::size_t vi : subject.video_indices) {
        const VideoRecord& video = ds.videos[vi];
        std::vector<double> curve(static_cast<std::size_t>(video.duration_frames), 0.0);

        std::vector<std::int64_t> refs;
        for (std::int64_t ref = 0; ref < video.duration_frames; ++ref)
            if (window_in_bounds(ref, video.duration_frames)) refs.push_back(ref);

        const std::size_t chunk = static_cast<std::size_t>(batch_size);
        for (std::size_t start = 0; start < refs.size(); start += chunk) {
            const std::size_t n = std::min(chunk, refs.size() - start);
            std::vector<BalancedSampler::Draw> draws(n);
            Tensor<float> targets({static_cast<std::int64_t>(n), 2});
            for (std::size_t k = 0; k < n; ++k) {
                draws[k].window = {vi, refs[start + k], classify_window(video.onsets, video.fps, refs[start + k])};
                const auto row = target_for(draws[k].window.label);
                targets[static_cast<std::int64_t>(k) * 2 + 0] = row[0];
                targets[static_cast<std::int64_t>(k) * 2 + 1] = row[1];
            }
            const auto batch = materialize_batch(store, draws, cfg.roi_names, cfg.roi_height, cfg.roi_width);
            const auto fwd = model_forward(model, batch, Mode::eval, unused);
            const auto res = weighted_soft_xent(fwd.logits, targets, weights);
            loss_sum += res.loss * static_cast<double>(n);
            window_count += static_cast<std::int64_t>(n);
            for (std::size_t k = 0; k < n; ++k)
                curve[static_cast<std::size_t>(refs[start + k])] =
                    fwd.probs[static_cast<std::int64_t>(k) * 2 + 1];
        }

        const auto pred = decode_onsets(curve, video.fps, decode.threshold, decode.nms_radius);
        const auto match = match_onsets(pred, video.onsets, tolerance_sec);
        tp += match.tp;
        fp += match.fp;
        fn += match.fn;
    }

    if (window_count == 0) throw DataError("fit: validation subject " + subject_id + " has no usable windows");

    ValOutcome out;
    out.loss = loss_sum / static_cast<double>(window_count);
    out.micro = prf(tp, fp, fn);
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("fit: cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("fit: cannot write " + path.string());
}

}  // namespace

FitResult fit(FrameStore& store, const SplitPlan& split, const ModelConfig& model_config,
              const TrainRunConfig& run_config, const std::function<void(const EpochRecord&)>& on_epoch) {
    if (run_config.checkpoint_dir.empty()) throw ConfigError("fit: checkpoint_dir is empty");
    if (run_config.max_epochs < 1 || run_config.max_epochs > 15)
        throw ConfigError("fit: max_epochs must be in [1, 15], got " + std::to_string(run_config.max_epochs));
    if (split.train_subjects.empty()) throw ConfigError("fit: split has no training subjects");

    const Dataset& ds = store.dataset();
    ds.subject(split.validation_subject);

    const SampleIndex index = build_index(ds, split.train_subjects, run_config.da_factor);
    if (index.batches_per_epoch < 1)
        throw DataError("fit: training pools are too small for one batch (epoch size " +
                        std::to_string(index.epoch_size) + ")");

    Model<float> model = build_model<float>(model_config, mix_seed(run_config.seed, "model_init"));
    OptimizerState optimizer = make_optimizer(model, run_config.base_lr, run_config.rho,
                                              run_config.lr_decay_per_epoch, run_config.epsilon);
    BalancedSampler sampler(index, run_config.max_jitter, mix_seed(run_config.seed, "sampler"));
    Rng dropout_rng = Rng(run_config.seed).substream("dropout");

    const fs::path dir(run_config.checkpoint_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("fit: cannot create " + dir.string() + ": " + ec.message());

    FitResult result;
    result.history_path = (dir / "history.csv").string();
    double best_f = -1.0;
    std::string best_epoch_file;

    for (std::int64_t epoch = 0; epoch < run_config.max_epochs; ++epoch) {
        const double lr = lr_at(epoch, optimizer);
        double loss_sum = 0.0;
        for (std::int64_t b = 0; b < index.batches_per_epoch; ++b) {
            auto plan = sampler.next_batch();
            const auto batch =
                materialize_batch(store, plan.samples, model_config.roi_names, model_config.roi_height,
                                  model_config.roi_width);
            const auto metrics = train_step(model, batch, plan.targets, optimizer, run_config.class_weights,
                                            run_config.l2_lambda, lr, run_config.grad_clip, dropout_rng);
            loss_sum += metrics.loss;
        }

        const auto val = validate_subject(model, store, split.validation_subject, run_config.class_weights,
                                          run_config.decode, run_config.tolerance_sec);

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(index.batches_per_epoch);
        record.val_loss = val.loss;
        record.val_precision = val.micro.precision;
        record.val_recall = val.micro.recall;
        record.val_f = val.micro.f;
        result.history.push_back(record);
        write_text_file(dir / "history.csv", format_history_csv(result.history));
        if (on_epoch) on_epoch(record);

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03lld.ckpt", static_cast<long long>(epoch));
        const fs::path ckpt = dir / name;
        CheckpointMeta meta;
        meta.epoch = epoch;
        meta.val_f = val.micro.f;
        save_checkpoint(model, ckpt.string(), meta);

        if (val.micro.f > best_f) {
            best_f = val.micro.f;
            result.best_epoch = epoch;
            best_epoch_file = ckpt.string();
        }
    }

    result.best_val_f = best_f;
    result.best_path = (dir / "best.ckpt").string();
    fs::copy_file(best_epoch_file, result.best_path, fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError("fit: cannot write " + result.best_path + ": " + ec.message());
    return result;
}

}  // namespace onsetnet
