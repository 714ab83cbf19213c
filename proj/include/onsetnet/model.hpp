#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "onsetnet/errors.hpp"
#include "onsetnet/ops.hpp"
#include "onsetnet/rng.hpp"
#include "onsetnet/tensor.hpp"

// The multi-stream 3D CNN: one convolutional stream per ROI, slow temporal
// fusion via valid convolutions (never pooling or padding along time), FC1
// per stream, concatenation, shared FC2, and a 2-unit output head.

namespace onsetnet {

struct ModelConfig {
    std::vector<std::string> roi_names{"mouth", "left_hand", "right_hand", "clarinet_tip"};
    std::int64_t input_frames = 9;
    std::int64_t roi_height = 64;
    std::int64_t roi_width = 64;
    std::int64_t channels_in = 3;
    std::vector<std::int64_t> conv_channels{16, 32, 32, 64, 64};
    std::vector<std::int64_t> temporal_kernels{3, 3, 3, 3, 1};
    std::vector<std::int64_t> spatial_kernels{3, 3, 3, 3, 3};
    std::set<std::int64_t> pool_after{1, 2, 3};  // 1-based conv layer indices
    std::int64_t fc1_width = 128;
    std::int64_t fc2_width = 256;
    double dropout_rate = 0.5;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.9;

    static constexpr std::int64_t output_units = 2;
};

// Per-layer extents implied by a config; built during validation so rejection
// messages can show exactly where the trace goes wrong.
struct ShapeTrace {
    std::vector<std::int64_t> t;  // temporal extent entering each layer + final
    std::vector<std::int64_t> h;
    std::vector<std::int64_t> w;
    std::int64_t flat_features = 0;  // conv-stack output per stream, flattened
};

// Throws ConfigError when any invariant fails; the temporal message includes
// the computed per-layer extents.
ShapeTrace validate_config(const ModelConfig& config);

// Canonical text round trip; the checkpoint embeds this form. Lines whose key
// starts with "meta." are collected into `extras` instead of the config.
std::string config_to_text(const ModelConfig& config);
ModelConfig config_from_text(const std::string& text);
ModelConfig config_from_text(const std::string& text, std::map<std::string, std::string>* extras);

std::int64_t parameter_count(const ModelConfig& config);

template <typename T>
struct ConvLayer {
    Tensor<T> weight;  // [F, C, kt, ks, ks]
    BatchNormState<T> bn;
    ConvSpec spec;
    bool pooled = false;
};

template <typename T>
struct Stream {
    std::string name;
    std::vector<ConvLayer<T>> conv;
    Tensor<T> fc1_weight;  // [flat, fc1_width]
    BatchNormState<T> fc1_bn;
};

template <typename T>
struct Model {
    ModelConfig config;
    ShapeTrace trace;
    std::vector<Stream<T>> streams;
    Tensor<T> fc2_weight;  // [S * fc1_width, fc2_width]
    BatchNormState<T> fc2_bn;
    Tensor<T> output_weight;  // [fc2_width, 2]
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
    bool bn_gamma;
};

template <typename T>
struct StreamCache {
    struct Layer {
        BatchNormCache<T> bn;
        Tensor<T> bn_out;    // pre-relu
        Tensor<T> relu_out;  // post-relu, input of pool or next conv
        MaxPoolResult<T> pool;
    };
    std::vector<Layer> layers;
    Tensor<T> flat;  // fc1 input
    BatchNormCache<T> fc1_bn;
    Tensor<T> fc1_bn_out;
    std::vector<std::uint8_t> fc1_drop_mask;
    Tensor<T> fc1_out;  // stream activation entering the concat
};

template <typename T>
struct ForwardCache {
    std::vector<StreamCache<T>> streams;
    Tensor<T> concat_out;
    BatchNormCache<T> fc2_bn;
    Tensor<T> fc2_bn_out;
    std::vector<std::uint8_t> fc2_drop_mask;
    Tensor<T> fc2_out;
    Tensor<T> logits;
    Mode mode = Mode::eval;
};

template <typename T>
struct ForwardResult {
    Tensor<T> probs;
    Tensor<T> logits;
};

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

// batch: one [N, C, T, H, W] tensor per stream, in roi_names order.
template <typename T>
ForwardResult<T> model_forward(Model<T>& model, const std::vector<Tensor<T>>& batch, Mode mode, Rng& rng,
                               ForwardCache<T>* cache = nullptr);

// Gradients for every entry of parameters(), in the same order.
template <typename T>
std::vector<Tensor<T>> model_backward(Model<T>& model, const std::vector<Tensor<T>>& batch,
                                      const ForwardCache<T>& cache, const Tensor<T>& grad_logits);

template <typename T>
std::vector<ParamRef<T>> parameters(Model<T>& model);

// parameters() plus BN running statistics; what a checkpoint persists.
template <typename T>
std::vector<ParamRef<T>> state_tensors(Model<T>& model);

template <typename T>
Model<T> clone_model(const Model<T>& model);

// ---------------------------------------------------------------------------
// template definitions

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    const ShapeTrace trace = validate_config(config);
    Model<T> model;
    model.config = config;
    model.trace = trace;
    Rng root(seed);

    const std::int64_t L = static_cast<std::int64_t>(config.conv_channels.size());
    for (const auto& roi : config.roi_names) {
        Stream<T> stream;
        stream.name = roi;
        std::int64_t c_in = config.channels_in;
        for (std::int64_t l = 0; l < L; ++l) {
            ConvLayer<T> layer;
            const std::int64_t f = config.conv_channels[static_cast<std::size_t>(l)];
            const std::int64_t kt = config.temporal_kernels[static_cast<std::size_t>(l)];
            const std::int64_t ks = config.spatial_kernels[static_cast<std::size_t>(l)];
            layer.spec = ConvSpec{f, kt, ks, ks, ks / 2, ks / 2};
            layer.pooled = config.pool_after.count(l + 1) > 0;
            layer.weight = Tensor<T>({f, c_in, kt, ks, ks});
            const double stddev = std::sqrt(2.0 / static_cast<double>(c_in * kt * ks * ks));
            Rng wrng = root.substream(roi + ".conv" + std::to_string(l + 1) + ".weight");
            for (std::int64_t i = 0; i < layer.weight.size(); ++i)
                layer.weight[i] = static_cast<T>(wrng.normal(0.0, stddev));
            layer.bn = BatchNormState<T>::init(f, static_cast<T>(config.bn_momentum),
                                               static_cast<T>(config.bn_epsilon));
            stream.conv.push_back(std::move(layer));
            c_in = f;
        }
        stream.fc1_weight = Tensor<T>({trace.flat_features, config.fc1_width});
        {
            const double stddev = std::sqrt(2.0 / static_cast<double>(trace.flat_features));
            Rng wrng = root.substream(roi + ".fc1.weight");
            for (std::int64_t i = 0; i < stream.fc1_weight.size(); ++i)
                stream.fc1_weight[i] = static_cast<T>(wrng.normal(0.0, stddev));
        }
        stream.fc1_bn = BatchNormState<T>::init(config.fc1_width, static_cast<T>(config.bn_momentum),
                                                static_cast<T>(config.bn_epsilon));
        model.streams.push_back(std::move(stream));
    }

    const std::int64_t s = static_cast<std::int64_t>(config.roi_names.size());
    model.fc2_weight = Tensor<T>({s * config.fc1_width, config.fc2_width});
    {
        const double stddev = std::sqrt(2.0 / static_cast<double>(s * config.fc1_width));
        Rng wrng = root.substream("fc2.weight");
        for (std::int64_t i = 0; i < model.fc2_weight.size(); ++i)
            model.fc2_weight[i] = static_cast<T>(wrng.normal(0.0, stddev));
    }
    model.fc2_bn = BatchNormState<T>::init(config.fc2_width, static_cast<T>(config.bn_momentum),
                                           static_cast<T>(config.bn_epsilon));
    model.output_weight = Tensor<T>({config.fc2_width, ModelConfig::output_units});
    {
        const double stddev = std::sqrt(2.0 / static_cast<double>(config.fc2_width));
        Rng wrng = root.substream("output.weight");
        for (std::int64_t i = 0; i < model.output_weight.size(); ++i)
            model.output_weight[i] = static_cast<T>(wrng.normal(0.0, stddev));
    }
    return model;
}

namespace detail {

template <typename T>
Tensor<T> reshape_copy(const Tensor<T>& t, const Shape& shape) {
    require(shape_size(shape) == t.size(), "reshape: element counts differ");
    return Tensor<T>(shape, std::vector<T>(t.data(), t.data() + t.size()));
}

}  // namespace detail

template <typename T>
ForwardResult<T> model_forward(Model<T>& model, const std::vector<Tensor<T>>& batch, Mode mode, Rng& rng,
                               ForwardCache<T>* cache) {
    const auto& cfg = model.config;
    const std::size_t S = cfg.roi_names.size();
    detail::require(batch.size() == S, "forward: got " + std::to_string(batch.size()) + " stream slabs, model has " +
                                           std::to_string(S) + " streams");
    const std::int64_t N = batch[0].extent(0);
    for (std::size_t s = 0; s < S; ++s) {
        const auto& slab = batch[s];
        detail::require(slab.rank() == 5, "forward: stream " + cfg.roi_names[s] + " slab must be rank 5, got " +
                                              shape_str(slab.shape()));
        detail::require(slab.extent(0) == N, "forward: batch extents differ across streams");
        detail::require(slab.extent(1) == cfg.channels_in && slab.extent(2) == cfg.input_frames &&
                            slab.extent(3) == cfg.roi_height && slab.extent(4) == cfg.roi_width,
                        "forward: stream " + cfg.roi_names[s] + " slab " + shape_str(slab.shape()) +
                            " does not match configured [N," + std::to_string(cfg.channels_in) + "," +
                            std::to_string(cfg.input_frames) + "," + std::to_string(cfg.roi_height) + "," +
                            std::to_string(cfg.roi_width) + "]");
    }

    ForwardCache<T> local;
    ForwardCache<T>& cc = cache ? *cache : local;
    cc = ForwardCache<T>{};
    cc.mode = mode;
    cc.streams.resize(S);

    std::vector<Tensor<T>> fc1_outs;
    fc1_outs.reserve(S);
    for (std::size_t s = 0; s < S; ++s) {
        auto& sc = cc.streams[s];
        auto& stream = model.streams[s];
        const Tensor<T>* x = &batch[s];
        sc.layers.resize(stream.conv.size());
        for (std::size_t l = 0; l < stream.conv.size(); ++l) {
            auto& layer = stream.conv[l];
            auto& lc = sc.layers[l];
            Tensor<T> conv_out = conv3d_forward(*x, layer.weight, layer.spec);
            lc.bn_out = batchnorm_forward(conv_out, layer.bn, mode, &lc.bn);
            lc.relu_out = relu_forward(lc.bn_out);
            if (layer.pooled) {
                lc.pool = maxpool2d_forward(lc.relu_out, 2, 2);
                x = &lc.pool.output;
            } else {
                x = &lc.relu_out;
            }
        }
        sc.flat = detail::reshape_copy(*x, {N, model.trace.flat_features});
        Tensor<T> fc1_lin = linear_forward(sc.flat, stream.fc1_weight);
        sc.fc1_bn_out = batchnorm_forward(fc1_lin, stream.fc1_bn, mode, &sc.fc1_bn);
        Tensor<T> fc1_relu = relu_forward(sc.fc1_bn_out);
        auto drop = dropout_forward(fc1_relu, cfg.dropout_rate, mode, rng);
        sc.fc1_drop_mask = std::move(drop.mask);
        sc.fc1_out = std::move(drop.output);
        fc1_outs.push_back(sc.fc1_out);
    }

    std::vector<const Tensor<T>*> parts;
    for (const auto& t : fc1_outs) parts.push_back(&t);
    cc.concat_out = concat_features(parts);

    Tensor<T> fc2_lin = linear_forward(cc.concat_out, model.fc2_weight);
    cc.fc2_bn_out = batchnorm_forward(fc2_lin, model.fc2_bn, mode, &cc.fc2_bn);
    Tensor<T> fc2_relu = relu_forward(cc.fc2_bn_out);
    auto drop2 = dropout_forward(fc2_relu, cfg.dropout_rate, mode, rng);
    cc.fc2_drop_mask = std::move(drop2.mask);
    cc.fc2_out = std::move(drop2.output);

    cc.logits = linear_forward(cc.fc2_out, model.output_weight);
    ForwardResult<T> res{softmax_rows(cc.logits), cc.logits};
    return res;
}

template <typename T>
std::vector<ParamRef<T>> parameters(Model<T>& model) {
    std::vector<ParamRef<T>> out;
    for (auto& stream : model.streams) {
        for (std::size_t l = 0; l < stream.conv.size(); ++l) {
            const std::string base = stream.name + ".conv" + std::to_string(l + 1);
            out.push_back({base + ".weight", &stream.conv[l].weight, false});
            out.push_back({base + ".gamma", &stream.conv[l].bn.gamma, true});
        }
        out.push_back({stream.name + ".fc1.weight", &stream.fc1_weight, false});
        out.push_back({stream.name + ".fc1.gamma", &stream.fc1_bn.gamma, true});
    }
    out.push_back({"fc2.weight", &model.fc2_weight, false});
    out.push_back({"fc2.gamma", &model.fc2_bn.gamma, true});
    out.push_back({"output.weight", &model.output_weight, false});
    return out;
}

template <typename T>
std::vector<ParamRef<T>> state_tensors(Model<T>& model) {
    std::vector<ParamRef<T>> out;
    auto add_bn = [&out](const std::string& base, BatchNormState<T>& bn) {
        out.push_back({base + ".gamma", &bn.gamma, true});
        out.push_back({base + ".running_mean", &bn.running_mean, false});
        out.push_back({base + ".running_var", &bn.running_var, false});
    };
    for (auto& stream : model.streams) {
        for (std::size_t l = 0; l < stream.conv.size(); ++l) {
            const std::string base = stream.name + ".conv" + std::to_string(l + 1);
            out.push_back({base + ".weight", &stream.conv[l].weight, false});
            add_bn(base, stream.conv[l].bn);
        }
        out.push_back({stream.name + ".fc1.weight", &stream.fc1_weight, false});
        add_bn(stream.name + ".fc1", stream.fc1_bn);
    }
    out.push_back({"fc2.weight", &model.fc2_weight, false});
    add_bn("fc2", model.fc2_bn);
    out.push_back({"output.weight", &model.output_weight, false});
    return out;
}

template <typename T>
std::vector<Tensor<T>> model_backward(Model<T>& model, const std::vector<Tensor<T>>& batch,
                                      const ForwardCache<T>& cache, const Tensor<T>& grad_logits) {
    const auto& cfg = model.config;
    const std::size_t S = cfg.roi_names.size();
    const std::size_t per_stream = model.streams[0].conv.size() * 2 + 2;

    std::vector<Tensor<T>> grads;
    grads.resize(S * per_stream + 3);

    // output head
    auto out_grads = linear_backward(cache.fc2_out, model.output_weight, grad_logits);
    grads[S * per_stream + 2] = std::move(out_grads.weights);

    // fc2 block: dropout -> relu -> bn -> linear
    Tensor<T> d = dropout_backward(out_grads.input, cache.fc2_drop_mask, cfg.dropout_rate);
    d = relu_backward(cache.fc2_bn_out, d);
    auto fc2_bn_grads = batchnorm_backward(d, cache.fc2_bn, model.fc2_bn.gamma);
    grads[S * per_stream + 1] = std::move(fc2_bn_grads.gamma);
    auto fc2_grads = linear_backward(cache.concat_out, model.fc2_weight, fc2_bn_grads.input);
    grads[S * per_stream] = std::move(fc2_grads.weights);

    // split the concat gradient back into streams
    std::vector<std::int64_t> widths(S, cfg.fc1_width);
    auto d_streams = concat_backward(fc2_grads.input, widths);

    for (std::size_t s = 0; s < S; ++s) {
        auto& stream = model.streams[s];
        const auto& sc = cache.streams[s];
        const std::size_t base = s * per_stream;

        Tensor<T> ds = dropout_backward(d_streams[s], sc.fc1_drop_mask, cfg.dropout_rate);
        ds = relu_backward(sc.fc1_bn_out, ds);
        auto fc1_bn_grads = batchnorm_backward(ds, sc.fc1_bn, stream.fc1_bn.gamma);
        grads[base + stream.conv.size() * 2 + 1] = std::move(fc1_bn_grads.gamma);
        auto fc1_grads = linear_backward(sc.flat, stream.fc1_weight, fc1_bn_grads.input);
        grads[base + stream.conv.size() * 2] = std::move(fc1_grads.weights);

        // back through the conv stack
        const auto& last = sc.layers.back();
        const Shape& last_shape = stream.conv.back().pooled ? last.pool.output.shape() : last.relu_out.shape();
        Tensor<T> dx = detail::reshape_copy(fc1_grads.input, last_shape);
        for (std::size_t li = stream.conv.size(); li-- > 0;) {
            auto& layer = stream.conv[li];
            const auto& lc = sc.layers[li];
            if (layer.pooled) {
                dx = maxpool2d_backward(lc.relu_out.shape(), lc.pool.argmax, dx);
            }
            dx = relu_backward(lc.bn_out, dx);
            auto bn_grads = batchnorm_backward(dx, lc.bn, layer.bn.gamma);
            grads[base + li * 2 + 1] = std::move(bn_grads.gamma);
            const Tensor<T>& layer_in =
                li == 0 ? batch[s]
                        : (stream.conv[li - 1].pooled ? sc.layers[li - 1].pool.output : sc.layers[li - 1].relu_out);
            auto conv_grads = conv3d_backward(layer_in, layer.weight, layer.spec, bn_grads.input);
            grads[base + li * 2] = std::move(conv_grads.weights);
            dx = std::move(conv_grads.input);
        }
    }
    return grads;
}

template <typename T>
Model<T> clone_model(const Model<T>& model) {
    return model;  // all members are value types
}

}  // namespace onsetnet
