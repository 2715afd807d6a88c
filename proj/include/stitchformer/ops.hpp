#pragma once

#include <vector>

#include "stitchformer/rng.hpp"
#include "stitchformer/tensor.hpp"

namespace stitchformer {

enum class NormKind { kL1, kL2 };

// Tape-recorded primitives. Shape mismatches throw ContractError; non-finite
// outputs throw NumericError. Under a NoGradGuard results are detached.

// a [m,k] x b [k,n] (or b [n,k] with transpose_b) -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);  // same shape

// x [r,c] + bias [c], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor tanh_squash(const Tensor& x);

// Row-wise softmax over the last dimension (1-D treated as one row).
Tensor softmax_rows(const Tensor& x);

// Normalization over the last dimension with learnable gain/bias [c].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Inverted dropout. Train mode draws a keep mask from rng (one uniform per
// element, in order); eval mode is the identity and touches no randomness.
Tensor dropout(const Tensor& x, double p, Mode mode, RngStream* rng);

// Gathers rows of a 2-D tensor; grad scatter-adds into the source rows.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// axis 0 stacks rows (or concatenates 1-D vectors); axis 1 joins columns.
Tensor concat(const std::vector<Tensor>& parts, int axis);

// k same-shape [L,C] inputs -> [k*L, C] with out row i*k+j = parts[j] row i.
Tensor interleave_rows(const std::vector<Tensor>& parts);

Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);

Tensor mean_all(const Tensor& x);   // scalar
Tensor mean_rows(const Tensor& x);  // [r,c] -> [1,c]

// L1 or L2 norm of the flattened tensor; subgradient 0 at the origin.
Tensor vector_norm(const Tensor& x, NormKind kind);

// min(x, limit) elementwise; gradient 0 where x >= limit.
Tensor clamp_max(const Tensor& x, double limit);

}  // namespace stitchformer
