#pragma once

#include "dpst/tensor.hpp"

// Forward and input-gradient kernels for the feature extractor. Feature maps
// are {channels, height, width}; every kernel is a pure function of its inputs.
namespace dpst::ops {

/// 3x3 convolution, stride 1, zero "same" padding.
template <typename T>
struct ConvSpec {
  BasicTensor<T> kernel;  // {out_channels, in_channels, 3, 3}
  BasicTensor<T> bias;    // {out_channels}

  std::size_t out_channels() const { return kernel.extent(0); }
  std::size_t in_channels() const { return kernel.extent(1); }

  /// Throws ShapeError unless kernel is {O, I, 3, 3} and bias is {O}.
  void validate() const;

  /// Spec whose forward pass is the input gradient of this one: kernel
  /// transposed over channels and flipped spatially, zero bias.
  ConvSpec transposed() const;

  template <typename U>
  ConvSpec<U> cast() const {
    return {kernel.template cast<U>(), bias.template cast<U>()};
  }
};

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const ConvSpec<T>& spec);

/// Gradient of <upstream, conv2d(input, spec)> with respect to input.
template <typename T>
BasicTensor<T> conv2d_grad(const BasicTensor<T>& input, const ConvSpec<T>& spec,
                           const BasicTensor<T>& upstream);

/// Same as conv2d_grad but with a precomputed spec.transposed().
template <typename T>
BasicTensor<T> conv2d_grad_transposed(const BasicTensor<T>& input,
                                      const ConvSpec<T>& transposed_spec,
                                      const BasicTensor<T>& upstream);

enum class PoolMode { Max, Average };

/// 2x2 stride-2 pooling result. Odd extents are padded on the right/bottom by
/// edge replication before pooling; the flags record whether that happened.
template <typename T>
struct PoolResult {
  BasicTensor<T> values;
  bool padded_rows = false;
  bool padded_cols = false;
};

template <typename T>
PoolResult<T> maxpool2(const BasicTensor<T>& input);

/// Routes each upstream value to the argmax of its 2x2 block (first index in
/// row-major order on ties). Replicated padding maps back onto the edge.
template <typename T>
BasicTensor<T> maxpool2_grad(const BasicTensor<T>& input, const BasicTensor<T>& upstream);

template <typename T>
PoolResult<T> avgpool2(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> avgpool2_grad(const BasicTensor<T>& input, const BasicTensor<T>& upstream);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// upstream where input > 0, zero elsewhere (including input == 0).
template <typename T>
BasicTensor<T> relu_grad(const BasicTensor<T>& input, const BasicTensor<T>& upstream);

/// {m, k} x {k, n} -> {m, n}
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// {m, k} x {n, k}^T -> {m, n}
template <typename T>
BasicTensor<T> matmul_transposed(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product of equal-shape tensors.
template <typename T>
BasicTensor<T> multiply(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Sum over all elements of a * b, accumulated in double.
template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace dpst::ops
