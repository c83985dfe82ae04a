#pragma once

#include <cstddef>
#include <vector>

#include "dmad/autodiff/tensor.hpp"

// Differentiable primitives. All operands must live on the same tape.
//
// Binary elementwise ops accept a right-hand side of the same shape, a 1 x c
// row broadcast over rows, an r x 1 column broadcast over columns, or a 1 x 1
// scalar.
namespace dmad::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

// axis 0 normalizes each column, axis 1 each row.
Tensor softmax(const Tensor& a, int axis);
// Row-wise log-softmax, used by cross-entropy losses.
Tensor log_softmax(const Tensor& a);

// Row-wise normalization to zero mean / unit variance, then gamma * x + beta
// with gamma, beta of shape 1 x cols.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
inline constexpr double kLayerNormEps = 1e-10;

Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<std::size_t>& sizes);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices);

// axis 0 reduces rows (result 1 x cols), axis 1 reduces columns (rows x 1).
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Identity forward; contributes nothing to the gradient of any ancestor.
Tensor stop_gradient(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace dmad::ad
