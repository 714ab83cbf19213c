#include "onsetnet/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

#include "onsetnet/gradcheck.hpp"
#include "onsetnet/model.hpp"
#include "onsetnet/ops.hpp"
#include "onsetnet/rng.hpp"

namespace onsetnet {

namespace {

Tensor<double> rand_tensor(const Shape& shape, Rng& rng) {
    Tensor<double> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void corrupt(std::vector<const Tensor<double>*>& analytic, Tensor<double>& scratch) {
    scratch = *analytic[0];
    scratch[0] = scratch[0] * 1.5 + 1.0;
    analytic[0] = &scratch;
}

struct Suite {
    std::uint64_t seed;
    std::string fault_op;
    std::vector<OpCheck> out;

    Rng op_rng(const std::string& op) { return Rng(mix_seed(seed, "gradcheck." + op)); }

    void record(const std::string& op, const std::function<double()>& loss,
                std::vector<Tensor<double>*> inputs, std::vector<const Tensor<double>*> analytic,
                double probe_eps) {
        Tensor<double> scratch;
        if (op == fault_op) corrupt(analytic, scratch);
        OpCheck check;
        check.op = op;
        check.max_rel_error = grad_check<double>(loss, inputs, analytic, probe_eps);
        check.pass = check.max_rel_error < check.threshold;
        out.push_back(check);
    }

    void conv3d() {
        Rng rng = op_rng("conv3d");
        const ConvSpec spec{2, 2, 2, 2, 1, 0};
        auto in = rand_tensor({1, 2, 4, 4, 4}, rng);
        auto w = rand_tensor({2, 2, 2, 2, 2}, rng);
        auto r = rand_tensor({1, 2, 3, 5, 3}, rng);
        auto grads = conv3d_backward(in, w, spec, r);
        auto loss = [&]() { return dot(conv3d_forward(in, w, spec), r); };
        record("conv3d", loss, {&in, &w}, {&grads.input, &grads.weights}, 1e-5);
    }

    void maxpool2d() {
        Rng rng = op_rng("maxpool2d");
        auto in = rand_tensor({1, 2, 3, 4, 4}, rng);
        auto res = maxpool2d_forward(in, 2, 2);
        auto r = rand_tensor(res.output.shape(), rng);
        auto gi = maxpool2d_backward<double>(in.shape(), res.argmax, r);
        auto loss = [&]() { return dot(maxpool2d_forward(in, 2, 2).output, r); };
        record("maxpool2d", loss, {&in}, {&gi}, 1e-6);
    }

    void relu() {
        Rng rng = op_rng("relu");
        auto in = rand_tensor({2, 3, 5}, rng);
        // keep probes away from the kink at 0
        for (std::int64_t i = 0; i < in.size(); ++i)
            if (std::abs(in[i]) < 0.05) in[i] += in[i] < 0 ? -0.1 : 0.1;
        auto r = rand_tensor(in.shape(), rng);
        auto gi = relu_backward(in, r);
        auto loss = [&]() { return dot(relu_forward(in), r); };
        record("relu", loss, {&in}, {&gi}, 1e-6);
    }

    void batchnorm() {
        Rng rng = op_rng("batchnorm");
        auto in = rand_tensor({4, 3, 2}, rng);
        auto state = BatchNormState<double>::init(3);
        for (std::int64_t c = 0; c < 3; ++c) state.gamma[c] = rng.uniform(0.5, 1.5);
        auto r = rand_tensor(in.shape(), rng);
        BatchNormCache<double> cache;
        {
            auto state_copy = state;
            batchnorm_forward(in, state_copy, Mode::train, &cache);
        }
        auto grads = batchnorm_backward(r, cache, state.gamma);
        auto loss = [&]() {
            auto state_copy = state;  // keep running stats untouched across probes
            return dot(batchnorm_forward(in, state_copy, Mode::train), r);
        };
        record("batchnorm", loss, {&in, &state.gamma}, {&grads.input, &grads.gamma}, 1e-5);
    }

    void dropout() {
        Rng rng = op_rng("dropout");
        auto in = rand_tensor({3, 4}, rng);
        auto r = rand_tensor(in.shape(), rng);
        const double rate = 0.3;
        const std::uint64_t mask_seed = rng.next();
        auto mask_rng = [&]() { return Rng(mask_seed); };
        Rng fwd_rng = mask_rng();
        auto res = dropout_forward(in, rate, Mode::train, fwd_rng);
        auto gi = dropout_backward(r, res.mask, rate);
        auto loss = [&]() {
            Rng probe_rng = mask_rng();  // identical mask on every probe
            return dot(dropout_forward(in, rate, Mode::train, probe_rng).output, r);
        };
        record("dropout", loss, {&in}, {&gi}, 1e-6);
    }

    void linear() {
        Rng rng = op_rng("linear");
        auto in = rand_tensor({3, 4}, rng);
        auto w = rand_tensor({4, 2}, rng);
        auto r = rand_tensor({3, 2}, rng);
        auto grads = linear_backward(in, w, r);
        auto loss = [&]() { return dot(linear_forward(in, w), r); };
        record("linear", loss, {&in, &w}, {&grads.input, &grads.weights}, 1e-6);
    }

    void concat() {
        Rng rng = op_rng("concat_features");
        auto a = rand_tensor({2, 3}, rng);
        auto b = rand_tensor({2, 2}, rng);
        auto r = rand_tensor({2, 5}, rng);
        auto grads = concat_backward(r, {3, 2});
        auto loss = [&]() { return dot(concat_features<double>({&a, &b}), r); };
        record("concat_features", loss, {&a, &b}, {&grads[0], &grads[1]}, 1e-6);
    }

    void softmax_xent() {
        Rng rng = op_rng("softmax_xent");
        auto logits = rand_tensor({4, 2}, rng);
        Tensor<double> targets({4, 2});
        for (std::int64_t n = 0; n < 4; ++n) {
            const double u = rng.uniform();
            targets[n * 2 + 0] = u;
            targets[n * 2 + 1] = 1.0 - u;
        }
        const LossSpec spec{1.0, 2.0};
        auto res = weighted_soft_xent(logits, targets, spec);
        auto loss = [&]() { return weighted_soft_xent(logits, targets, spec).loss; };
        record("softmax_xent", loss, {&logits}, {&res.grad_logits}, 1e-6);
    }

    void l2() {
        Rng rng = op_rng("l2_penalty");
        auto a = rand_tensor({3, 2}, rng);
        auto b = rand_tensor({4}, rng);
        const double lambda = 0.05;
        auto res = l2_penalty<double>({&a, &b}, lambda);
        auto loss = [&]() { return l2_penalty<double>({&a, &b}, lambda).penalty; };
        record("l2_penalty", loss, {&a, &b}, {&res.grads[0], &res.grads[1]}, 1e-6);
    }

    void composed_model() {
        Rng rng = op_rng("model");
        ModelConfig cfg;
        cfg.roi_names = {"mouth", "clarinet_tip"};
        cfg.roi_height = 8;
        cfg.roi_width = 8;
        cfg.conv_channels = {2, 2, 2, 2, 2};
        cfg.temporal_kernels = {3, 3, 3, 3, 1};
        cfg.spatial_kernels = {3, 3, 3, 3, 3};
        cfg.pool_after = {1, 2, 3};
        cfg.fc1_width = 3;
        cfg.fc2_width = 4;
        cfg.dropout_rate = 0.5;

        auto model = build_model<double>(cfg, rng.next());
        std::vector<Tensor<double>> batch;
        for (std::size_t s = 0; s < cfg.roi_names.size(); ++s)
            batch.push_back(rand_tensor({2, 3, 9, 8, 8}, rng));
        Tensor<double> targets({2, 2});
        targets[0] = 0.75;
        targets[1] = 0.25;
        targets[2] = 0.0;
        targets[3] = 1.0;
        const LossSpec spec{1.0, 2.0};
        const double lambda = 0.01;
        const std::uint64_t mask_seed = rng.next();

        auto loss = [&]() {
            Rng drop(mask_seed);
            ForwardCache<double> cache;
            auto res = model_forward(model, batch, Mode::train, drop, &cache);
            double v = weighted_soft_xent(res.logits, targets, spec).loss;
            std::vector<const Tensor<double>*> weights;
            for (auto& p : parameters(model))
                if (!p.bn_gamma) weights.push_back(p.tensor);
            return v + l2_penalty<double>(weights, lambda).penalty;
        };

        Rng drop(mask_seed);
        ForwardCache<double> cache;
        auto res = model_forward(model, batch, Mode::train, drop, &cache);
        auto loss_res = weighted_soft_xent(res.logits, targets, spec);
        auto grads = model_backward(model, batch, cache, loss_res.grad_logits);
        auto params = parameters(model);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].bn_gamma) continue;
            const Tensor<double>& w = *params[i].tensor;
            for (std::int64_t j = 0; j < w.size(); ++j) grads[i][j] += lambda * w[j];
        }

        std::vector<Tensor<double>*> inputs;
        std::vector<const Tensor<double>*> analytic;
        for (std::size_t i = 0; i < params.size(); ++i) {
            inputs.push_back(params[i].tensor);
            analytic.push_back(&grads[i]);
        }
        // Probe step 1e-3: conv gammas have near-cancelling true gradients, so
        // a smaller step drowns the comparison in round-off.
        record("model", loss, inputs, analytic, 1e-3);
    }
};

}  // namespace

std::vector<OpCheck> run_gradcheck_suite(std::uint64_t seed, const std::string& fault_op) {
    Suite suite;
    suite.seed = seed;
    suite.fault_op = fault_op;
    suite.conv3d();
    suite.maxpool2d();
    suite.relu();
    suite.batchnorm();
    suite.dropout();
    suite.linear();
    suite.concat();
    suite.softmax_xent();
    suite.l2();
    suite.composed_model();
    return suite.out;
}

bool all_pass(const std::vector<OpCheck>& checks) {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

}  // namespace onsetnet
