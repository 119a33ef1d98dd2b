#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cvlp/tensor.hpp"

namespace cvlp::ad {

// Element-wise binary ops broadcast a dimension of size 1 against any size,
// so (m,n) op (1,n), (m,1) and (1,1) all work.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
// Exact (erf) form.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// axis 0 reduces rows (result 1xn); axis 1 reduces columns (result mx1).
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);
Tensor l2_norm_axis(const Tensor& a, int axis);
Tensor softmax_axis(const Tensor& a, int axis);
Tensor log_softmax_axis(const Tensor& a, int axis);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
// Main diagonal of a (m,n) tensor as a (min(m,n),1) column.
Tensor diagonal(const Tensor& a);

// Embedding lookup: row ids[i] of table becomes output row i.
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);
// Mean over consecutive row segments [offsets[s], offsets[s+1]).
Tensor segment_mean(const Tensor& a, std::span<const std::size_t> offsets);

// Rows scaled to unit L2 norm.
Tensor normalize_rows(const Tensor& a);

}  // namespace cvlp::ad
