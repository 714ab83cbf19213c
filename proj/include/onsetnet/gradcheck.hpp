#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "onsetnet/tensor.hpp"

// Central finite-difference gradient verification. The caller supplies a
// scalar loss recomputed from the current contents of the checked tensors and
// the analytic gradients from one backward pass; the driver perturbs every
// element in place and reports the worst relative error.

namespace onsetnet {

inline double fd_relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckItem {
    std::string name;        // which tensor the worst element lives in
    double max_rel_error = 0.0;
};

// loss_fn re-evaluates the scalar objective from the tensors behind `inputs`.
// `analytic[i]` must match `inputs[i]` in shape. Every element is probed.
template <typename T>
double grad_check(const std::function<double()>& loss_fn, const std::vector<Tensor<T>*>& inputs,
                  const std::vector<const Tensor<T>*>& analytic, double epsilon) {
    double worst = 0.0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        Tensor<T>& x = *inputs[p];
        const Tensor<T>& g = *analytic[p];
        for (std::int64_t i = 0; i < x.size(); ++i) {
            const T saved = x[i];
            x[i] = saved + static_cast<T>(epsilon);
            const double up = loss_fn();
            x[i] = saved - static_cast<T>(epsilon);
            const double down = loss_fn();
            x[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            worst = std::max(worst, fd_relative_error(static_cast<double>(g[i]), numeric));
        }
    }
    return worst;
}

}  // namespace onsetnet
