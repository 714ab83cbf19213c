#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "onsetnet/errors.hpp"
#include "onsetnet/rng.hpp"
#include "onsetnet/tensor.hpp"

// Differentiable operations used by the network: forward passes plus exact
// backward passes. No graph engine; callers chain backwards by hand and keep
// whatever caches the ops hand out. All loops write disjoint output slices per
// OpenMP thread, so results are bitwise identical at any thread count.

namespace onsetnet {

enum class Mode { train, eval };

struct ConvSpec {
    std::int64_t out_channels = 0;
    std::int64_t kt = 1, kh = 1, kw = 1;
    std::int64_t pad_h = 0, pad_w = 0;
    // temporal padding is always 0 and stride is always (1,1,1): the time axis
    // may only shrink through valid convolution, never get padded or strided.
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw NumericError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv3d: input [N,C,T,H,W] * weights [F,C,kt,kh,kw] -> [N,F,T-kt+1,H',W']
// Zero padding on H/W only; valid convolution along T.

template <typename T>
inline void conv3d_check(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
    detail::require(input.rank() == 5, "conv3d: input must be rank 5 [N,C,T,H,W], got " + shape_str(input.shape()));
    detail::require(weights.rank() == 5,
                    "conv3d: weights must be rank 5 [F,C,kt,kh,kw], got " + shape_str(weights.shape()));
    detail::require(weights.extent(1) == input.extent(1),
                    "conv3d: channel mismatch, input " + shape_str(input.shape()) + " vs weights " +
                        shape_str(weights.shape()));
    detail::require(weights.extent(0) == spec.out_channels && weights.extent(2) == spec.kt &&
                        weights.extent(3) == spec.kh && weights.extent(4) == spec.kw,
                    "conv3d: weights " + shape_str(weights.shape()) + " disagree with spec [" +
                        std::to_string(spec.out_channels) + ",C," + std::to_string(spec.kt) + "," +
                        std::to_string(spec.kh) + "," + std::to_string(spec.kw) + "]");
    detail::require(input.extent(2) >= spec.kt,
                    "conv3d: time extent " + std::to_string(input.extent(2)) + " shorter than temporal kernel " +
                        std::to_string(spec.kt));
    detail::require(input.extent(3) + 2 * spec.pad_h >= spec.kh && input.extent(4) + 2 * spec.pad_w >= spec.kw,
                    "conv3d: spatial extent " + shape_str({input.extent(3), input.extent(4)}) +
                        " plus padding smaller than kernel");
    detail::require(spec.kt >= 1 && spec.kh >= 1 && spec.kw >= 1, "conv3d: kernel extents must be >= 1");
    detail::require(spec.pad_h >= 0 && spec.pad_w >= 0, "conv3d: padding must be >= 0");
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
    conv3d_check(input, weights, spec);
    const std::int64_t N = input.extent(0), C = input.extent(1), Ti = input.extent(2);
    const std::int64_t H = input.extent(3), W = input.extent(4);
    const std::int64_t F = spec.out_channels;
    const std::int64_t To = Ti - spec.kt + 1;
    const std::int64_t Ho = H + 2 * spec.pad_h - spec.kh + 1;
    const std::int64_t Wo = W + 2 * spec.pad_w - spec.kw + 1;

    Tensor<T> out({N, F, To, Ho, Wo});
    const T* in = input.data();
    const T* wt = weights.data();
    T* o = out.data();

    const std::int64_t in_c = Ti * H * W, in_t = H * W;
    const std::int64_t out_f = To * Ho * Wo, out_t = Ho * Wo;
    const std::int64_t w_f = C * spec.kt * spec.kh * spec.kw, w_c = spec.kt * spec.kh * spec.kw;

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t f = 0; f < F; ++f) {
            T* out_nf = o + (n * F + f) * out_f;
            for (std::int64_t c = 0; c < C; ++c) {
                const T* in_nc = in + (n * C + c) * in_c;
                const T* w_fc = wt + f * w_f + c * w_c;
                for (std::int64_t dt = 0; dt < spec.kt; ++dt) {
                    for (std::int64_t to = 0; to < To; ++to) {
                        const T* in_plane = in_nc + (to + dt) * in_t;
                        T* out_plane = out_nf + to * out_t;
                        for (std::int64_t dh = 0; dh < spec.kh; ++dh) {
                            const std::int64_t oh_lo = std::max<std::int64_t>(0, spec.pad_h - dh);
                            const std::int64_t oh_hi = std::min(Ho, H + spec.pad_h - dh);
                            const T* w_row = w_fc + (dt * spec.kh + dh) * spec.kw;
                            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const T* in_row = in_plane + (oh + dh - spec.pad_h) * W;
                                T* out_row = out_plane + oh * Wo;
                                for (std::int64_t dw = 0; dw < spec.kw; ++dw) {
                                    const T k = w_row[dw];
                                    if (k == T(0)) continue;
                                    const std::int64_t ow_lo = std::max<std::int64_t>(0, spec.pad_w - dw);
                                    const std::int64_t ow_hi = std::min(Wo, W + spec.pad_w - dw);
                                    const T* src = in_row + dw - spec.pad_w;
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        out_row[ow] += k * src[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct Conv3dGrads {
    Tensor<T> input;
    Tensor<T> weights;
};

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec,
                               const Tensor<T>& grad_out) {
    conv3d_check(input, weights, spec);
    const std::int64_t N = input.extent(0), C = input.extent(1), Ti = input.extent(2);
    const std::int64_t H = input.extent(3), W = input.extent(4);
    const std::int64_t F = spec.out_channels;
    const std::int64_t To = Ti - spec.kt + 1;
    const std::int64_t Ho = H + 2 * spec.pad_h - spec.kh + 1;
    const std::int64_t Wo = W + 2 * spec.pad_w - spec.kw + 1;
    detail::require(grad_out.shape() == Shape({N, F, To, Ho, Wo}),
                    "conv3d backward: upstream gradient " + shape_str(grad_out.shape()) + " does not match output " +
                        shape_str({N, F, To, Ho, Wo}));

    Conv3dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape())};
    const T* in = input.data();
    const T* wt = weights.data();
    const T* go = grad_out.data();
    T* din = grads.input.data();
    T* dwt = grads.weights.data();

    const std::int64_t in_c = Ti * H * W, in_t = H * W;
    const std::int64_t out_f = To * Ho * Wo, out_t = Ho * Wo;
    const std::int64_t w_f = C * spec.kt * spec.kh * spec.kw, w_c = spec.kt * spec.kh * spec.kw;

    // d/dinput: each sample's slab is written by exactly one iteration.
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t f = 0; f < F; ++f) {
            const T* go_nf = go + (n * F + f) * out_f;
            for (std::int64_t c = 0; c < C; ++c) {
                T* din_nc = din + (n * C + c) * in_c;
                const T* w_fc = wt + f * w_f + c * w_c;
                for (std::int64_t dt = 0; dt < spec.kt; ++dt) {
                    for (std::int64_t to = 0; to < To; ++to) {
                        T* din_plane = din_nc + (to + dt) * in_t;
                        const T* go_plane = go_nf + to * out_t;
                        for (std::int64_t dh = 0; dh < spec.kh; ++dh) {
                            const std::int64_t oh_lo = std::max<std::int64_t>(0, spec.pad_h - dh);
                            const std::int64_t oh_hi = std::min(Ho, H + spec.pad_h - dh);
                            const T* w_row = w_fc + (dt * spec.kh + dh) * spec.kw;
                            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                T* din_row = din_plane + (oh + dh - spec.pad_h) * W;
                                const T* go_row = go_plane + oh * Wo;
                                for (std::int64_t dw = 0; dw < spec.kw; ++dw) {
                                    const T k = w_row[dw];
                                    if (k == T(0)) continue;
                                    const std::int64_t ow_lo = std::max<std::int64_t>(0, spec.pad_w - dw);
                                    const std::int64_t ow_hi = std::min(Wo, W + spec.pad_w - dw);
                                    T* dst = din_row + dw - spec.pad_w;
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        dst[ow] += k * go_row[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // d/dweights: each filter's slab is written by exactly one iteration.
#pragma omp parallel for schedule(static)
    for (std::int64_t f = 0; f < F; ++f) {
        for (std::int64_t n = 0; n < N; ++n) {
            const T* go_nf = go + (n * F + f) * out_f;
            for (std::int64_t c = 0; c < C; ++c) {
                const T* in_nc = in + (n * C + c) * in_c;
                T* dw_fc = dwt + f * w_f + c * w_c;
                for (std::int64_t dt = 0; dt < spec.kt; ++dt) {
                    for (std::int64_t to = 0; to < To; ++to) {
                        const T* in_plane = in_nc + (to + dt) * in_t;
                        const T* go_plane = go_nf + to * out_t;
                        for (std::int64_t dh = 0; dh < spec.kh; ++dh) {
                            const std::int64_t oh_lo = std::max<std::int64_t>(0, spec.pad_h - dh);
                            const std::int64_t oh_hi = std::min(Ho, H + spec.pad_h - dh);
                            T* dw_row = dw_fc + (dt * spec.kh + dh) * spec.kw;
                            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const T* in_row = in_plane + (oh + dh - spec.pad_h) * W;
                                const T* go_row = go_plane + oh * Wo;
                                for (std::int64_t dw = 0; dw < spec.kw; ++dw) {
                                    const std::int64_t ow_lo = std::max<std::int64_t>(0, spec.pad_w - dw);
                                    const std::int64_t ow_hi = std::min(Wo, W + spec.pad_w - dw);
                                    const T* src = in_row + dw - spec.pad_w;
                                    T acc = T(0);
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        acc += src[ow] * go_row[ow];
                                    }
                                    dw_row[dw] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// maxpool2d over H,W of [N,C,T,H,W]; the time axis is never pooled.

template <typename T>
struct MaxPoolResult {
    Tensor<T> output;
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& input, std::int64_t mh, std::int64_t mw) {
    detail::require(input.rank() == 5, "maxpool2d: input must be rank 5, got " + shape_str(input.shape()));
    detail::require(mh >= 1 && mw >= 1, "maxpool2d: window must be >= 1");
    const std::int64_t N = input.extent(0), C = input.extent(1), Ti = input.extent(2);
    const std::int64_t H = input.extent(3), W = input.extent(4);
    detail::require(H % mh == 0 && W % mw == 0,
                    "maxpool2d: spatial extents " + shape_str({H, W}) + " not divisible by window " +
                        shape_str({mh, mw}));
    const std::int64_t Ho = H / mh, Wo = W / mw;

    MaxPoolResult<T> res{Tensor<T>({N, C, Ti, Ho, Wo}), {}};
    res.argmax.assign(static_cast<std::size_t>(res.output.size()), 0);
    const T* in = input.data();
    T* o = res.output.data();
    std::int64_t* am = res.argmax.data();

    const std::int64_t planes = N * C * Ti;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* in_plane = in + p * H * W;
        T* out_plane = o + p * Ho * Wo;
        std::int64_t* am_plane = am + p * Ho * Wo;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                T best = -std::numeric_limits<T>::infinity();
                std::int64_t best_idx = 0;
                for (std::int64_t dh = 0; dh < mh; ++dh) {
                    const std::int64_t ih = oh * mh + dh;
                    for (std::int64_t dw = 0; dw < mw; ++dw) {
                        const std::int64_t idx = ih * W + ow * mw + dw;
                        // strict > keeps the first element in row-major scan on ties
                        if (in_plane[idx] > best) {
                            best = in_plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out_plane[oh * Wo + ow] = best;
                am_plane[oh * Wo + ow] = p * H * W + best_idx;
            }
        }
    }
    return res;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::int64_t>& argmax,
                             const Tensor<T>& grad_out) {
    detail::require(static_cast<std::int64_t>(argmax.size()) == grad_out.size(),
                    "maxpool2d backward: argmax cache does not match upstream gradient");
    Tensor<T> grad_in(input_shape);
    T* g = grad_in.data();
    const T* go = grad_out.data();
    for (std::int64_t i = 0; i < grad_out.size(); ++i) {
        g[argmax[static_cast<std::size_t>(i)]] += go[i];
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// relu; the subgradient at exactly 0 is 0.

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    const T* in = input.data();
    T* o = out.data();
    const std::int64_t n = input.size();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    detail::require(input.same_shape(grad_out), "relu backward: gradient shape mismatch");
    Tensor<T> grad_in(input.shape());
    const T* in = input.data();
    const T* go = grad_out.data();
    T* g = grad_in.data();
    const std::int64_t n = input.size();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) g[i] = in[i] > T(0) ? go[i] : T(0);
    return grad_in;
}

// ---------------------------------------------------------------------------
// batchnorm over all axes except channel (axis 1). Scale-only: the network
// omits biases everywhere, so there is no shift term.

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;         // [C]
    Tensor<T> running_mean;  // [C]
    Tensor<T> running_var;   // [C]
    T momentum = T(0.9);
    T epsilon = T(1e-5);

    static BatchNormState init(std::int64_t channels, T momentum = T(0.9), T epsilon = T(1e-5)) {
        BatchNormState s;
        s.gamma = Tensor<T>::full({channels}, T(1));
        s.running_mean = Tensor<T>({channels});
        s.running_var = Tensor<T>::full({channels}, T(1));
        s.momentum = momentum;
        s.epsilon = epsilon;
        return s;
    }
};

template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;              // normalized input, same shape as x
    std::vector<T> invstd;       // per channel
    std::int64_t reduce_count = 0;
    bool batch_stats = false;    // true when normalized by batch statistics
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
    detail::require(input.rank() >= 2, "batchnorm: input must have a channel axis, got " + shape_str(input.shape()));
    const std::int64_t N = input.extent(0);
    const std::int64_t C = input.extent(1);
    detail::require(state.gamma.shape() == Shape({C}),
                    "batchnorm: gamma " + shape_str(state.gamma.shape()) + " does not match channels " +
                        std::to_string(C));
    std::int64_t rest = 1;
    for (std::int64_t a = 2; a < input.rank(); ++a) rest *= input.extent(static_cast<std::size_t>(a));
    const std::int64_t m = N * rest;

    std::vector<T> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
    const T* in = input.data();

    if (mode == Mode::train) {
        detail::require(m >= 2, "batchnorm: train mode needs at least 2 values per channel, got " +
                                    std::to_string(m) + " (zero variance)");
#pragma omp parallel for schedule(static)
        for (std::int64_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (std::int64_t n = 0; n < N; ++n) {
                const T* base = in + (n * C + c) * rest;
                for (std::int64_t r = 0; r < rest; ++r) acc += base[r];
            }
            const T mu = acc / static_cast<T>(m);
            T vacc = T(0);
            for (std::int64_t n = 0; n < N; ++n) {
                const T* base = in + (n * C + c) * rest;
                for (std::int64_t r = 0; r < rest; ++r) {
                    const T d = base[r] - mu;
                    vacc += d * d;
                }
            }
            mean[static_cast<std::size_t>(c)] = mu;
            var[static_cast<std::size_t>(c)] = vacc / static_cast<T>(m);
        }
        for (std::int64_t c = 0; c < C; ++c) {
            state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * mean[static_cast<std::size_t>(c)];
            state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * var[static_cast<std::size_t>(c)];
        }
    } else {
        for (std::int64_t c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = state.running_mean[c];
            var[static_cast<std::size_t>(c)] = state.running_var[c];
        }
    }

    std::vector<T> invstd(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + state.epsilon);
    }

    Tensor<T> out(input.shape());
    Tensor<T> xhat(input.shape());
    T* o = out.data();
    T* xh = xhat.data();
    const T* gamma = state.gamma.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        const T mu = mean[static_cast<std::size_t>(c)];
        const T is = invstd[static_cast<std::size_t>(c)];
        const T g = gamma[c];
        for (std::int64_t n = 0; n < N; ++n) {
            const std::int64_t base = (n * C + c) * rest;
            for (std::int64_t r = 0; r < rest; ++r) {
                const T v = (in[base + r] - mu) * is;
                xh[base + r] = v;
                o[base + r] = v * g;
            }
        }
    }

    if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
        cache->reduce_count = m;
        cache->batch_stats = (mode == Mode::train);
    }
    return out;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    Tensor<T> gamma;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const Tensor<T>& gamma) {
    detail::require(grad_out.same_shape(cache.xhat), "batchnorm backward: gradient shape mismatch");
    const std::int64_t N = grad_out.extent(0);
    const std::int64_t C = grad_out.extent(1);
    std::int64_t rest = 1;
    for (std::int64_t a = 2; a < grad_out.rank(); ++a) rest *= grad_out.extent(static_cast<std::size_t>(a));
    const T m = static_cast<T>(cache.reduce_count);

    BatchNormGrads<T> grads{Tensor<T>(grad_out.shape()), Tensor<T>({C})};
    const T* go = grad_out.data();
    const T* xh = cache.xhat.data();
    const T* g = gamma.data();
    T* dx = grads.input.data();
    T* dgamma = grads.gamma.data();

#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
            const std::int64_t base = (n * C + c) * rest;
            for (std::int64_t r = 0; r < rest; ++r) {
                sum_dy += go[base + r];
                sum_dy_xhat += go[base + r] * xh[base + r];
            }
        }
        dgamma[c] = sum_dy_xhat;
        const T is = cache.invstd[static_cast<std::size_t>(c)];
        if (cache.batch_stats) {
            const T scale = g[c] * is / m;
            for (std::int64_t n = 0; n < N; ++n) {
                const std::int64_t base = (n * C + c) * rest;
                for (std::int64_t r = 0; r < rest; ++r) {
                    dx[base + r] = scale * (m * go[base + r] - sum_dy - xh[base + r] * sum_dy_xhat);
                }
            }
        } else {
            // running statistics are constants in eval mode
            const T scale = g[c] * is;
            for (std::int64_t n = 0; n < N; ++n) {
                const std::int64_t base = (n * C + c) * rest;
                for (std::int64_t r = 0; r < rest; ++r) {
                    dx[base + r] = scale * go[base + r];
                }
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// inverted dropout: survivors are scaled by 1/(1-rate) so eval is identity.

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    std::vector<std::uint8_t> mask;  // empty when the op was an identity
};

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Mode mode, Rng& rng) {
    detail::require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (mode == Mode::eval || rate == 0.0) {
        return {input, {}};
    }
    const double keep = 1.0 - rate;
    const T scale = static_cast<T>(1.0 / keep);
    DropoutResult<T> res{Tensor<T>(input.shape()), {}};
    res.mask.resize(static_cast<std::size_t>(input.size()));
    const T* in = input.data();
    T* o = res.output.data();
    for (std::int64_t i = 0; i < input.size(); ++i) {
        const bool live = rng.uniform() >= rate;
        res.mask[static_cast<std::size_t>(i)] = live ? 1 : 0;
        o[i] = live ? in[i] * scale : T(0);
    }
    return res;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const std::vector<std::uint8_t>& mask, double rate) {
    if (mask.empty()) return grad_out;  // identity pass
    detail::require(static_cast<std::int64_t>(mask.size()) == grad_out.size(),
                    "dropout backward: mask does not match gradient");
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> grad_in(grad_out.shape());
    const T* go = grad_out.data();
    T* g = grad_in.data();
    for (std::int64_t i = 0; i < grad_out.size(); ++i) {
        g[i] = mask[static_cast<std::size_t>(i)] ? go[i] * scale : T(0);
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// linear: [N,D] x [D,K] -> [N,K], no bias anywhere in the network.

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights) {
    detail::require(input.rank() == 2 && weights.rank() == 2,
                    "linear: expected [N,D] x [D,K], got " + shape_str(input.shape()) + " x " +
                        shape_str(weights.shape()));
    detail::require(input.extent(1) == weights.extent(0),
                    "linear: inner extents differ, " + shape_str(input.shape()) + " x " + shape_str(weights.shape()));
    const std::int64_t N = input.extent(0), D = input.extent(1), K = weights.extent(1);
    Tensor<T> out({N, K});
    const T* in = input.data();
    const T* w = weights.data();
    T* o = out.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
        T* out_row = o + n * K;
        const T* in_row = in + n * D;
        for (std::int64_t d = 0; d < D; ++d) {
            const T v = in_row[d];
            if (v == T(0)) continue;
            const T* w_row = w + d * K;
            for (std::int64_t k = 0; k < K; ++k) out_row[k] += v * w_row[k];
        }
    }
    return out;
}

template <typename T>
struct LinearGrads {
    Tensor<T> input;
    Tensor<T> weights;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
    const std::int64_t N = input.extent(0), D = input.extent(1), K = weights.extent(1);
    detail::require(grad_out.shape() == Shape({N, K}), "linear backward: gradient shape mismatch");
    LinearGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape())};
    const T* in = input.data();
    const T* w = weights.data();
    const T* go = grad_out.data();
    T* din = grads.input.data();
    T* dw = grads.weights.data();

#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
        const T* go_row = go + n * K;
        T* din_row = din + n * D;
        for (std::int64_t d = 0; d < D; ++d) {
            const T* w_row = w + d * K;
            T acc = T(0);
            for (std::int64_t k = 0; k < K; ++k) acc += w_row[k] * go_row[k];
            din_row[d] = acc;
        }
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t d = 0; d < D; ++d) {
        T* dw_row = dw + d * K;
        for (std::int64_t n = 0; n < N; ++n) {
            const T v = in[n * D + d];
            if (v == T(0)) continue;
            const T* go_row = go + n * K;
            for (std::int64_t k = 0; k < K; ++k) dw_row[k] += v * go_row[k];
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// concat along the feature axis of [N,D_i] blocks.

template <typename T>
Tensor<T> concat_features(const std::vector<const Tensor<T>*>& parts) {
    detail::require(!parts.empty(), "concat: no inputs");
    const std::int64_t N = parts[0]->extent(0);
    std::int64_t total = 0;
    for (const auto* p : parts) {
        detail::require(p->rank() == 2, "concat: inputs must be rank 2, got " + shape_str(p->shape()));
        detail::require(p->extent(0) == N, "concat: batch extents differ, " + std::to_string(p->extent(0)) +
                                               " vs " + std::to_string(N));
        total += p->extent(1);
    }
    Tensor<T> out({N, total});
    T* o = out.data();
    std::int64_t offset = 0;
    for (const auto* p : parts) {
        const std::int64_t D = p->extent(1);
        const T* in = p->data();
        for (std::int64_t n = 0; n < N; ++n) {
            std::copy(in + n * D, in + (n + 1) * D, o + n * total + offset);
        }
        offset += D;
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out, const std::vector<std::int64_t>& widths) {
    const std::int64_t N = grad_out.extent(0);
    std::int64_t total = 0;
    for (auto w : widths) total += w;
    detail::require(grad_out.extent(1) == total, "concat backward: widths do not sum to gradient extent");
    std::vector<Tensor<T>> grads;
    grads.reserve(widths.size());
    const T* go = grad_out.data();
    std::int64_t offset = 0;
    for (auto D : widths) {
        Tensor<T> g({N, D});
        T* gd = g.data();
        for (std::int64_t n = 0; n < N; ++n) {
            std::copy(go + n * total + offset, go + n * total + offset + D, gd + n * D);
        }
        grads.push_back(std::move(g));
        offset += D;
    }
    return grads;
}

// ---------------------------------------------------------------------------
// weighted soft-target cross-entropy over 2 classes, with exact logit gradient.

struct LossSpec {
    double w_non_onset = 1.0;
    double w_onset = 1.0;
};

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    detail::require(logits.rank() == 2, "softmax: expected [N,K], got " + shape_str(logits.shape()));
    const std::int64_t N = logits.extent(0), K = logits.extent(1);
    Tensor<T> probs(logits.shape());
    const T* z = logits.data();
    T* p = probs.data();
    for (std::int64_t n = 0; n < N; ++n) {
        const T* row = z + n * K;
        T mx = row[0];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T sum = T(0);
        for (std::int64_t k = 0; k < K; ++k) {
            const T e = std::exp(row[k] - mx);
            p[n * K + k] = e;
            sum += e;
        }
        for (std::int64_t k = 0; k < K; ++k) p[n * K + k] /= sum;
    }
    return probs;
}

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad_logits;
};

template <typename T>
LossResult<T> weighted_soft_xent(const Tensor<T>& logits, const Tensor<T>& targets, const LossSpec& spec) {
    detail::require(logits.rank() == 2 && logits.extent(1) == 2,
                    "weighted_soft_xent: logits must be [N,2], got " + shape_str(logits.shape()));
    detail::require(targets.same_shape(logits), "weighted_soft_xent: targets " + shape_str(targets.shape()) +
                                                    " do not match logits " + shape_str(logits.shape()));
    detail::require(spec.w_non_onset > 0.0 && spec.w_onset > 0.0, "weighted_soft_xent: class weights must be > 0");
    const std::int64_t N = logits.extent(0);
    const double cw[2] = {spec.w_non_onset, spec.w_onset};

    LossResult<T> res{0.0, Tensor<T>(logits.shape())};
    const T* z = logits.data();
    const T* t = targets.data();
    T* g = res.grad_logits.data();
    double total = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
        const double t0 = static_cast<double>(t[n * 2]);
        const double t1 = static_cast<double>(t[n * 2 + 1]);
        detail::require(t0 >= 0.0 && t0 <= 1.0 && t1 >= 0.0 && t1 <= 1.0,
                        "weighted_soft_xent: target entries must lie in [0,1] (row " + std::to_string(n) + ")");
        detail::require(std::abs(t0 + t1 - 1.0) <= 1e-6,
                        "weighted_soft_xent: target row " + std::to_string(n) + " sums to " +
                            std::to_string(t0 + t1) + ", expected 1");
        const double z0 = static_cast<double>(z[n * 2]);
        const double z1 = static_cast<double>(z[n * 2 + 1]);
        const double mx = std::max(z0, z1);
        const double lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
        const double lp0 = z0 - lse;
        const double lp1 = z1 - lse;
        total += -(cw[0] * t0 * lp0 + cw[1] * t1 * lp1);

        const double p0 = std::exp(lp0);
        const double p1 = std::exp(lp1);
        const double wsum = cw[0] * t0 + cw[1] * t1;
        g[n * 2] = static_cast<T>((p0 * wsum - cw[0] * t0) / static_cast<double>(N));
        g[n * 2 + 1] = static_cast<T>((p1 * wsum - cw[1] * t1) / static_cast<double>(N));
    }
    res.loss = total / static_cast<double>(N);
    return res;
}

// ---------------------------------------------------------------------------
// L2 penalty over weight tensors (BN gammas are excluded by the caller).

template <typename T>
struct L2Result {
    double penalty = 0.0;
    std::vector<Tensor<T>> grads;
};

template <typename T>
L2Result<T> l2_penalty(const std::vector<const Tensor<T>*>& params, double lambda) {
    detail::require(lambda >= 0.0, "l2_penalty: lambda must be >= 0");
    L2Result<T> res;
    res.grads.reserve(params.size());
    double sq = 0.0;
    for (const auto* p : params) {
        Tensor<T> g(p->shape());
        const T* w = p->data();
        T* gd = g.data();
        for (std::int64_t i = 0; i < p->size(); ++i) {
            sq += static_cast<double>(w[i]) * static_cast<double>(w[i]);
            gd[i] = static_cast<T>(lambda) * w[i];
        }
        res.grads.push_back(std::move(g));
    }
    res.penalty = 0.5 * lambda * sq;
    return res;
}

}  // namespace onsetnet
