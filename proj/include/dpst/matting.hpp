#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpst/tensor.hpp"

namespace dpst::matting {

struct MattingParams {
  std::size_t radius = 1;  // windows are (2r+1) x (2r+1)
  double eps = 1e-7;
};

/// Symmetric sparse matrix in compressed-row form with sorted column indices.
/// Both triangles are stored.
class SparseSymmetricMatrix {
 public:
  SparseSymmetricMatrix() = default;
  /// Throws FormatError unless row_ptr/cols describe a valid row-sorted n x n matrix.
  SparseSymmetricMatrix(std::size_t n, std::vector<std::uint64_t> row_ptr, std::vector<std::uint32_t> cols,
                        std::vector<double> values);

  std::size_t dimension() const noexcept { return n_; }
  std::size_t nnz() const noexcept { return values_.size(); }
  std::size_t row_nnz(std::size_t row) const { return row_ptr_[row + 1] - row_ptr_[row]; }
  const std::vector<std::uint64_t>& row_ptr() const noexcept { return row_ptr_; }
  const std::vector<std::uint32_t>& cols() const noexcept { return cols_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Stored value or 0.
  double at(std::size_t row, std::size_t col) const;

  /// y = M x, accumulated in double.
  void multiply(std::span<const double> x, std::span<double> y) const;
  /// x^T M x
  double quadratic_form(std::span<const double> x) const;

  TensorD to_dense() const;

  bool operator==(const SparseSymmetricMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> row_ptr_{0};
  std::vector<std::uint32_t> cols_;
  std::vector<double> values_;
};

/// Closed-form matting Laplacian of an {H, W, 3} image in [0, 1]. Only windows
/// lying fully inside the image contribute. Throws InputError for images
/// smaller than one window or with non-finite pixels.
SparseSymmetricMatrix build_matting_laplacian(const TensorD& image, const MattingParams& params = {});
SparseSymmetricMatrix build_matting_laplacian(const Tensor& image, const MattingParams& params = {});

/// sum over channels c of V_c^T M V_c for an {H, W, 3} image O.
template <typename T>
double affine_loss(const SparseSymmetricMatrix& laplacian, const BasicTensor<T>& image);

/// 2 M V_c per channel, shaped like `image`.
template <typename T>
BasicTensor<T> affine_loss_grad(const SparseSymmetricMatrix& laplacian, const BasicTensor<T>& image);

// Cache layout (little-endian): "MATL" | u64 n | u64 nnz | nnz x (u32 row, u32 col, f64 value),
// sorted by row then column.
void save_laplacian(const SparseSymmetricMatrix& laplacian, const std::filesystem::path& path);
SparseSymmetricMatrix load_laplacian(const std::filesystem::path& path);

/// SHA-256 hex digest of the image extents, window parameters and pixel values.
std::string laplacian_key(const Tensor& image, const MattingParams& params);

/// Loads `matl_<key>.bin` from `cache_dir` or builds and stores it. An empty
/// cache_dir disables caching. Unreadable cache files are rebuilt.
SparseSymmetricMatrix load_or_build_laplacian(const Tensor& image, const MattingParams& params,
                                              const std::filesystem::path& cache_dir);

}  // namespace dpst::matting
