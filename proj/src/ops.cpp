#include "dpst/ops.hpp"

#include <algorithm>
#include <array>

#include <Eigen/Core>

namespace dpst::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Upper bound on im2col buffer elements per chunk.
constexpr std::size_t kColumnBudget = std::size_t{1} << 21;

void require_feature_map(const Shape& shape, const char* what) {
  if (shape.size() != 3) {
    throw ShapeError(std::string(what) + " expects a {channels, height, width} tensor, got " +
                     shape_to_string(shape));
  }
}

// Fills `col` ({C*9, rows*W}) with the zero-padded 3x3 neighborhoods of
// output rows [y0, y0 + rows).
template <typename T>
void im2col(const BasicTensor<T>& input, std::size_t y0, std::size_t rows, T* col) {
  const std::size_t channels = input.extent(0);
  const std::size_t height = input.extent(1);
  const std::size_t width = input.extent(2);
  const std::size_t n = rows * width;
  const T* in = input.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col + ((c * 3 + ky) * 3 + kx) * n;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - 1;
          T* row_dst = dst + r * width;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(row_dst, row_dst + width, T{0});
            continue;
          }
          const T* src = in + (c * height + static_cast<std::size_t>(sy)) * width;
          for (std::size_t x = 0; x < width; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            row_dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width))
                             ? T{0}
                             : src[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

std::array<std::size_t, 2> clamp_block(std::size_t i, std::size_t extent) {
  return {std::min(2 * i, extent - 1), std::min(2 * i + 1, extent - 1)};
}

template <typename T>
BasicTensor<T> pooled_shape_tensor(const BasicTensor<T>& input) {
  return BasicTensor<T>(
      {input.extent(0), (input.extent(1) + 1) / 2, (input.extent(2) + 1) / 2});
}

}  // namespace

template <typename T>
void ConvSpec<T>::validate() const {
  if (kernel.rank() != 4 || kernel.extent(2) != 3 || kernel.extent(3) != 3) {
    throw ShapeError("conv kernel must be {out, in, 3, 3}, got " + shape_to_string(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.extent(0) != kernel.extent(0)) {
    throw ShapeError("conv bias " + shape_to_string(bias.shape()) + " does not match kernel " +
                     shape_to_string(kernel.shape()));
  }
}

template <typename T>
ConvSpec<T> ConvSpec<T>::transposed() const {
  validate();
  const std::size_t out_ch = out_channels();
  const std::size_t in_ch = in_channels();
  BasicTensor<T> flipped({in_ch, out_ch, 3, 3});
  for (std::size_t o = 0; o < out_ch; ++o) {
    for (std::size_t c = 0; c < in_ch; ++c) {
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
          flipped[((c * out_ch + o) * 3 + a) * 3 + b] =
              kernel[((o * in_ch + c) * 3 + (2 - a)) * 3 + (2 - b)];
        }
      }
    }
  }
  return {std::move(flipped), BasicTensor<T>({in_ch})};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const ConvSpec<T>& spec) {
  spec.validate();
  require_feature_map(input.shape(), "conv2d");
  if (input.extent(0) != spec.in_channels()) {
    throw ShapeError("conv2d input " + shape_to_string(input.shape()) +
                     " does not match kernel " + shape_to_string(spec.kernel.shape()));
  }
  const std::size_t height = input.extent(1);
  const std::size_t width = input.extent(2);
  const std::size_t out_ch = spec.out_channels();
  const std::size_t k = spec.in_channels() * 9;
  BasicTensor<T> output({out_ch, height, width});

  const std::size_t rows_per_chunk = std::max<std::size_t>(1, kColumnBudget / (k * width));
  const std::ptrdiff_t chunks =
      static_cast<std::ptrdiff_t>((height + rows_per_chunk - 1) / rows_per_chunk);

  const Eigen::Map<const RowMatrix<T>> weights(spec.kernel.data(), out_ch, k);
  const T* bias = spec.bias.data();
  T* out = output.data();

#pragma omp parallel
  {
    std::vector<T> col;
#pragma omp for schedule(static)
    for (std::ptrdiff_t chunk = 0; chunk < chunks; ++chunk) {
      const std::size_t y0 = static_cast<std::size_t>(chunk) * rows_per_chunk;
      const std::size_t rows = std::min(rows_per_chunk, height - y0);
      const std::size_t n = rows * width;
      col.resize(k * n);
      im2col(input, y0, rows, col.data());
      const Eigen::Map<const RowMatrix<T>> cols(col.data(), k, n);
      Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> dst(
          out + y0 * width, out_ch, n, Eigen::OuterStride<>(height * width));
      dst.noalias() = weights * cols;
      for (std::size_t o = 0; o < out_ch; ++o) dst.row(o).array() += bias[o];
    }
  }
  return output;
}

template <typename T>
BasicTensor<T> conv2d_grad_transposed(const BasicTensor<T>& input,
                                      const ConvSpec<T>& transposed_spec,
                                      const BasicTensor<T>& upstream) {
  require_feature_map(input.shape(), "conv2d_grad");
  const Shape expected{transposed_spec.in_channels(), input.extent(1), input.extent(2)};
  if (upstream.shape() != expected) {
    throw ShapeError("conv2d_grad upstream " + shape_to_string(upstream.shape()) +
                     " does not match conv output " + shape_to_string(expected));
  }
  if (input.extent(0) != transposed_spec.out_channels()) {
    throw ShapeError("conv2d_grad input " + shape_to_string(input.shape()) +
                     " does not match kernel " + shape_to_string(transposed_spec.kernel.shape()));
  }
  return conv2d(upstream, transposed_spec);
}

template <typename T>
BasicTensor<T> conv2d_grad(const BasicTensor<T>& input, const ConvSpec<T>& spec,
                           const BasicTensor<T>& upstream) {
  return conv2d_grad_transposed(input, spec.transposed(), upstream);
}

template <typename T>
PoolResult<T> maxpool2(const BasicTensor<T>& input) {
  require_feature_map(input.shape(), "maxpool2");
  const std::size_t channels = input.extent(0);
  const std::size_t height = input.extent(1);
  const std::size_t width = input.extent(2);
  PoolResult<T> result{pooled_shape_tensor(input), height % 2 == 1, width % 2 == 1};
  const std::size_t out_h = result.values.extent(1);
  const std::size_t out_w = result.values.extent(2);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto ys = clamp_block(i, height);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto xs = clamp_block(j, width);
        T best = input(c, ys[0], xs[0]);
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            best = std::max(best, input(c, ys[dy], xs[dx]));
          }
        }
        result.values(c, i, j) = best;
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool2_grad(const BasicTensor<T>& input, const BasicTensor<T>& upstream) {
  require_feature_map(input.shape(), "maxpool2_grad");
  const std::size_t channels = input.extent(0);
  const std::size_t height = input.extent(1);
  const std::size_t width = input.extent(2);
  const Shape pooled{channels, (height + 1) / 2, (width + 1) / 2};
  if (upstream.shape() != pooled) {
    throw ShapeError("maxpool2_grad upstream " + shape_to_string(upstream.shape()) +
                     " does not match pooled shape " + shape_to_string(pooled));
  }
  BasicTensor<T> grad(input.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < pooled[1]; ++i) {
      const auto ys = clamp_block(i, height);
      for (std::size_t j = 0; j < pooled[2]; ++j) {
        const auto xs = clamp_block(j, width);
        std::size_t best_y = ys[0];
        std::size_t best_x = xs[0];
        T best = input(c, best_y, best_x);
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const T v = input(c, ys[dy], xs[dx]);
            if (v > best) {
              best = v;
              best_y = ys[dy];
              best_x = xs[dx];
            }
          }
        }
        grad(c, best_y, best_x) += upstream(c, i, j);
      }
    }
  }
  return grad;
}

template <typename T>
PoolResult<T> avgpool2(const BasicTensor<T>& input) {
  require_feature_map(input.shape(), "avgpool2");
  const std::size_t channels = input.extent(0);
  const std::size_t height = input.extent(1);
  const std::size_t width = input.extent(2);
  PoolResult<T> result{pooled_shape_tensor(input), height % 2 == 1, width % 2 == 1};
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < result.values.extent(1); ++i) {
      const auto ys = clamp_block(i, height);
      for (std::size_t j = 0; j < result.values.extent(2); ++j) {
        const auto xs = clamp_block(j, width);
        result.values(c, i, j) = (input(c, ys[0], xs[0]) + input(c, ys[0], xs[1]) +
                                  input(c, ys[1], xs[0]) + input(c, ys[1], xs[1])) /
                                 T{4};
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> avgpool2_grad(const BasicTensor<T>& input, const BasicTensor<T>& upstream) {
  require_feature_map(input.shape(), "avgpool2_grad");
  const std::size_t channels = input.extent(0);
  const std::size_t height = input.extent(1);
  const std::size_t width = input.extent(2);
  const Shape pooled{channels, (height + 1) / 2, (width + 1) / 2};
  if (upstream.shape() != pooled) {
    throw ShapeError("avgpool2_grad upstream " + shape_to_string(upstream.shape()) +
                     " does not match pooled shape " + shape_to_string(pooled));
  }
  BasicTensor<T> grad(input.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < pooled[1]; ++i) {
      const auto ys = clamp_block(i, height);
      for (std::size_t j = 0; j < pooled[2]; ++j) {
        const auto xs = clamp_block(j, width);
        const T share = upstream(c, i, j) / T{4};
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) grad(c, ys[dy], xs[dx]) += share;
        }
      }
    }
  }
  return grad;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_grad(const BasicTensor<T>& input, const BasicTensor<T>& upstream) {
  if (input.shape() != upstream.shape()) {
    throw ShapeError("relu_grad shapes differ: " + shape_to_string(input.shape()) + " vs " +
                     shape_to_string(upstream.shape()));
  }
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? upstream[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul shapes incompatible: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  BasicTensor<T> out({a.extent(0), b.extent(1)});
  Eigen::Map<RowMatrix<T>> dst(out.data(), a.extent(0), b.extent(1));
  dst.noalias() = Eigen::Map<const RowMatrix<T>>(a.data(), a.extent(0), a.extent(1)) *
                  Eigen::Map<const RowMatrix<T>>(b.data(), b.extent(0), b.extent(1));
  return out;
}

template <typename T>
BasicTensor<T> matmul_transposed(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1)) {
    throw ShapeError("matmul_transposed shapes incompatible: " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()) + "^T");
  }
  BasicTensor<T> out({a.extent(0), b.extent(0)});
  Eigen::Map<RowMatrix<T>> dst(out.data(), a.extent(0), b.extent(0));
  dst.noalias() =
      Eigen::Map<const RowMatrix<T>>(a.data(), a.extent(0), a.extent(1)) *
      Eigen::Map<const RowMatrix<T>>(b.data(), b.extent(0), b.extent(1)).transpose();
  return out;
}

template <typename T>
BasicTensor<T> multiply(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("multiply shapes differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dot shapes differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
  return sum;
}

#define DPST_INSTANTIATE_OPS(T)                                                              \
  template struct ConvSpec<T>;                                                               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const ConvSpec<T>&);                 \
  template BasicTensor<T> conv2d_grad(const BasicTensor<T>&, const ConvSpec<T>&,             \
                                      const BasicTensor<T>&);                                \
  template BasicTensor<T> conv2d_grad_transposed(const BasicTensor<T>&, const ConvSpec<T>&,  \
                                                 const BasicTensor<T>&);                     \
  template PoolResult<T> maxpool2(const BasicTensor<T>&);                                    \
  template BasicTensor<T> maxpool2_grad(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template PoolResult<T> avgpool2(const BasicTensor<T>&);                                    \
  template BasicTensor<T> avgpool2_grad(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
  template BasicTensor<T> relu_grad(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> matmul_transposed(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> multiply(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template double dot(const BasicTensor<T>&, const BasicTensor<T>&);

DPST_INSTANTIATE_OPS(float)
DPST_INSTANTIATE_OPS(double)

}  // namespace dpst::ops
