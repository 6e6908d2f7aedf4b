#pragma once

#include "dforge/tensor.hpp"

namespace dforge::ad {

// Elementwise binary ops. Operands must have identical shapes, or one side
// may be a single-element tensor (the only supported broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sqrt_op(const Tensor& a);          // requires strictly positive input
Tensor clamp_min(const Tensor& a, double lo);

// Full reductions to a scalar tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Mean over all non-batch dimensions: [N, ...] -> [N].
Tensor mean_per_sample(const Tensor& a);
// Mean over spatial dimensions only: [N, C, H, W] -> [N, C].
Tensor spatial_mean(const Tensor& a);

// mean over elements of -log(s) if target == 1, else -log(1 - s).
// Scores are clamped to [1e-7, 1 - 1e-7] before the log; a score outside
// [0, 1] (beyond 1e-12 slack) is an error.
Tensor binary_cross_entropy(const Tensor& scores, int target);

// Matrix ops on rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor trace(const Tensor& a);

Tensor reshape(const Tensor& a, std::vector<int> shape);

// Cross-correlation of [N, C, H, W] with kernel [O, C, K, K].
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
// Adds bias[c] to every (n, c, h, w) element.
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor upsample_nearest2(const Tensor& x);

}  // namespace dforge::ad
