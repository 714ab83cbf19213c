#include "onsetnet/ops.hpp"

// Explicit instantiations so template bugs surface when the library builds,
// not when the first caller does.

namespace onsetnet {

template Tensor<float> conv3d_forward<float>(const Tensor<float>&, const Tensor<float>&, const ConvSpec&);
template Tensor<double> conv3d_forward<double>(const Tensor<double>&, const Tensor<double>&, const ConvSpec&);
template Conv3dGrads<float> conv3d_backward<float>(const Tensor<float>&, const Tensor<float>&, const ConvSpec&,
                                                   const Tensor<float>&);
template Conv3dGrads<double> conv3d_backward<double>(const Tensor<double>&, const Tensor<double>&, const ConvSpec&,
                                                     const Tensor<double>&);
template MaxPoolResult<float> maxpool2d_forward<float>(const Tensor<float>&, std::int64_t, std::int64_t);
template MaxPoolResult<double> maxpool2d_forward<double>(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> maxpool2d_backward<float>(const Shape&, const std::vector<std::int64_t>&,
                                                 const Tensor<float>&);
template Tensor<double> maxpool2d_backward<double>(const Shape&, const std::vector<std::int64_t>&,
                                                   const Tensor<double>&);
template Tensor<float> relu_forward<float>(const Tensor<float>&);
template Tensor<double> relu_forward<double>(const Tensor<double>&);
template Tensor<float> relu_backward<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> relu_backward<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> batchnorm_forward<float>(const Tensor<float>&, BatchNormState<float>&, Mode,
                                                BatchNormCache<float>*);
template Tensor<double> batchnorm_forward<double>(const Tensor<double>&, BatchNormState<double>&, Mode,
                                                  BatchNormCache<double>*);
template BatchNormGrads<float> batchnorm_backward<float>(const Tensor<float>&, const BatchNormCache<float>&,
                                                         const Tensor<float>&);
template BatchNormGrads<double> batchnorm_backward<double>(const Tensor<double>&, const BatchNormCache<double>&,
                                                           const Tensor<double>&);
template DropoutResult<float> dropout_forward<float>(const Tensor<float>&, double, Mode, Rng&);
template DropoutResult<double> dropout_forward<double>(const Tensor<double>&, double, Mode, Rng&);
template Tensor<float> dropout_backward<float>(const Tensor<float>&, const std::vector<std::uint8_t>&, double);
template Tensor<double> dropout_backward<double>(const Tensor<double>&, const std::vector<std::uint8_t>&, double);
template Tensor<float> linear_forward<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> linear_forward<double>(const Tensor<double>&, const Tensor<double>&);
template LinearGrads<float> linear_backward<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template LinearGrads<double> linear_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                                     const Tensor<double>&);
template Tensor<float> concat_features<float>(const std::vector<const Tensor<float>*>&);
template Tensor<double> concat_features<double>(const std::vector<const Tensor<double>*>&);
template std::vector<Tensor<float>> concat_backward<float>(const Tensor<float>&, const std::vector<std::int64_t>&);
template std::vector<Tensor<double>> concat_backward<double>(const Tensor<double>&, const std::vector<std::int64_t>&);
template Tensor<float> softmax_rows<float>(const Tensor<float>&);
template Tensor<double> softmax_rows<double>(const Tensor<double>&);
template LossResult<float> weighted_soft_xent<float>(const Tensor<float>&, const Tensor<float>&, const LossSpec&);
template LossResult<double> weighted_soft_xent<double>(const Tensor<double>&, const Tensor<double>&, const LossSpec&);
template L2Result<float> l2_penalty<float>(const std::vector<const Tensor<float>*>&, double);
template L2Result<double> l2_penalty<double>(const std::vector<const Tensor<double>*>&, double);

}  // namespace onsetnet
