#include "dpst/matting.hpp"

#include <Eigen/Dense>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include "dpst/error.hpp"

namespace dpst::matting {
namespace {

static_assert(std::endian::native == std::endian::little, "cache I/O assumes a little-endian host");

struct WindowStats {
  Eigen::Vector3d mean;
  Eigen::Matrix3d inv;  // (cov + eps/m I)^-1
};

// x^T A y for symmetric A, written so that swapping x and y is bit-identical.
double symmetric_form(const Eigen::Matrix3d& a, const Eigen::Vector3d& x, const Eigen::Vector3d& y) {
  return a(0, 0) * (x[0] * y[0]) + a(1, 1) * (x[1] * y[1]) + a(2, 2) * (x[2] * y[2]) +
         a(0, 1) * (x[0] * y[1] + x[1] * y[0]) + a(0, 2) * (x[0] * y[2] + x[2] * y[0]) +
         a(1, 2) * (x[1] * y[2] + x[2] * y[1]);
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (in.gcount() != static_cast<std::streamsize>(sizeof v)) throw TruncationError("Laplacian cache truncated in " + what);
  return v;
}

void check_image(const TensorD& image, const MattingParams& params) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("matting expects an {H, W, 3} image, got " + shape_to_string(image.shape()));
  }
  const std::size_t side = 2 * params.radius + 1;
  if (image.extent(0) < side || image.extent(1) < side) {
    throw InputError("image " + std::to_string(image.extent(1)) + "x" + std::to_string(image.extent(0)) +
                     " is smaller than a " + std::to_string(side) + "x" + std::to_string(side) + " matting window");
  }
  if (!image.all_finite()) throw InputError("matting image contains non-finite pixels");
  if (!(params.eps > 0.0)) throw InputError("matting eps must be positive");
}

}  // namespace

SparseSymmetricMatrix::SparseSymmetricMatrix(std::size_t n, std::vector<std::uint64_t> row_ptr,
                                             std::vector<std::uint32_t> cols, std::vector<double> values)
    : n_(n), row_ptr_(std::move(row_ptr)), cols_(std::move(cols)), values_(std::move(values)) {
  if (row_ptr_.size() != n_ + 1 || row_ptr_.front() != 0 || row_ptr_.back() != cols_.size() ||
      cols_.size() != values_.size()) {
    throw FormatError("inconsistent sparse matrix layout");
  }
  for (std::size_t r = 0; r < n_; ++r) {
    if (row_ptr_[r] > row_ptr_[r + 1]) throw FormatError("sparse row pointers decrease");
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      if (cols_[k] >= n_) throw FormatError("sparse column index out of range");
      if (k > row_ptr_[r] && cols_[k] <= cols_[k - 1]) throw FormatError("sparse columns not strictly increasing");
    }
  }
}

double SparseSymmetricMatrix::at(std::size_t row, std::size_t col) const {
  const auto begin = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_.at(row));
  const auto end = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_.at(row + 1));
  const auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(col));
  if (it == end || *it != col) return 0.0;
  return values_[static_cast<std::size_t>(it - cols_.begin())];
}

void SparseSymmetricMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != n_ || y.size() != n_) {
    throw ShapeError("matrix dimension " + std::to_string(n_) + " does not match vector length " +
                     std::to_string(x.size()));
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n_); ++r) {
    double acc = 0.0;
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) acc += values_[k] * x[cols_[k]];
    y[r] = acc;
  }
}

double SparseSymmetricMatrix::quadratic_form(std::span<const double> x) const {
  std::vector<double> y(n_);
  multiply(x, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < n_; ++i) acc += x[i] * y[i];
  return acc;
}

TensorD SparseSymmetricMatrix::to_dense() const {
  TensorD out({n_, n_});
  for (std::size_t r = 0; r < n_; ++r) {
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out(r, cols_[k]) = values_[k];
  }
  return out;
}

SparseSymmetricMatrix build_matting_laplacian(const TensorD& image, const MattingParams& params) {
  check_image(image, params);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(image.extent(0));
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(image.extent(1));
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(params.radius);
  const std::ptrdiff_t side = 2 * r + 1;
  const double m = static_cast<double>(side * side);
  auto pixel = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return Eigen::Vector3d(image(y, x, 0), image(y, x, 1), image(y, x, 2));
  };

  // Window k is centered at (cy, cx) with r <= cy < H - r, r <= cx < W - r.
  const std::ptrdiff_t wh = H - 2 * r;
  const std::ptrdiff_t ww = W - 2 * r;
  std::vector<WindowStats> windows(static_cast<std::size_t>(wh * ww));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < wh * ww; ++k) {
    const std::ptrdiff_t cy = k / ww + r;
    const std::ptrdiff_t cx = k % ww + r;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
    for (std::ptrdiff_t y = cy - r; y <= cy + r; ++y) {
      for (std::ptrdiff_t x = cx - r; x <= cx + r; ++x) {
        const Eigen::Vector3d p = pixel(y, x);
        sum += p;
        outer += p * p.transpose();
      }
    }
    const Eigen::Vector3d mean = sum / m;
    const Eigen::Matrix3d cov = outer / m - mean * mean.transpose();
    const Eigen::Matrix3d reg = cov + (params.eps / m) * Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d inv = reg.inverse();
    windows[k] = {mean, (inv + inv.transpose()) * 0.5};
  }

  // Row i gathers every window containing pixel i; neighbors lie within 2r.
  const std::ptrdiff_t reach = 2 * r;
  const std::size_t n = static_cast<std::size_t>(H * W);
  std::vector<std::uint64_t> row_ptr(n + 1, 0);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const auto rows = std::min(y + reach, H - 1) - std::max<std::ptrdiff_t>(y - reach, 0) + 1;
      const auto cols = std::min(x + reach, W - 1) - std::max<std::ptrdiff_t>(x - reach, 0) + 1;
      row_ptr[static_cast<std::size_t>(y * W + x) + 1] = static_cast<std::uint64_t>(rows * cols);
    }
  }
  for (std::size_t i = 0; i < n; ++i) row_ptr[i + 1] += row_ptr[i];
  std::vector<std::uint32_t> cols(row_ptr.back());
  std::vector<double> values(row_ptr.back(), 0.0);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const std::ptrdiff_t yi = i / W;
    const std::ptrdiff_t xi = i % W;
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(yi - reach, 0), y1 = std::min(yi + reach, H - 1);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(xi - reach, 0), x1 = std::min(xi + reach, W - 1);
    const std::ptrdiff_t span_x = x1 - x0 + 1;
    std::uint64_t base = row_ptr[i];
    for (std::ptrdiff_t y = y0; y <= y1; ++y) {
      for (std::ptrdiff_t x = x0; x <= x1; ++x) cols[base + (y - y0) * span_x + (x - x0)] = static_cast<std::uint32_t>(y * W + x);
    }
    const Eigen::Vector3d pi = pixel(yi, xi);
    const std::ptrdiff_t cy0 = std::max(yi - r, r), cy1 = std::min(yi + r, H - 1 - r);
    const std::ptrdiff_t cx0 = std::max(xi - r, r), cx1 = std::min(xi + r, W - 1 - r);
    for (std::ptrdiff_t cy = cy0; cy <= cy1; ++cy) {
      for (std::ptrdiff_t cx = cx0; cx <= cx1; ++cx) {
        const WindowStats& w = windows[static_cast<std::size_t>((cy - r) * ww + (cx - r))];
        const Eigen::Vector3d di = pi - w.mean;
        for (std::ptrdiff_t y = cy - r; y <= cy + r; ++y) {
          for (std::ptrdiff_t x = cx - r; x <= cx + r; ++x) {
            const double q = symmetric_form(w.inv, di, pixel(y, x) - w.mean);
            const double delta = (y == yi && x == xi) ? 1.0 : 0.0;
            values[base + (y - y0) * span_x + (x - x0)] += delta - (1.0 + q) / m;
          }
        }
      }
    }
  }
  // copy the upper triangle down so the stored matrix is bitwise symmetric
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint64_t k = row_ptr[i]; k < row_ptr[i + 1] && cols[k] < i; ++k) {
      const std::size_t j = cols[k];
      const auto first = cols.begin() + static_cast<std::ptrdiff_t>(row_ptr[j]);
      const auto last = cols.begin() + static_cast<std::ptrdiff_t>(row_ptr[j + 1]);
      values[k] = values[static_cast<std::size_t>(std::lower_bound(first, last, i) - cols.begin())];
    }
  }
  return SparseSymmetricMatrix(n, std::move(row_ptr), std::move(cols), std::move(values));
}

SparseSymmetricMatrix build_matting_laplacian(const Tensor& image, const MattingParams& params) {
  return build_matting_laplacian(image.cast<double>(), params);
}

template <typename T>
double affine_loss(const SparseSymmetricMatrix& laplacian, const BasicTensor<T>& image) {
  const std::size_t n = laplacian.dimension();
  if (image.rank() != 3 || image.extent(2) != 3 || image.extent(0) * image.extent(1) != n) {
    throw ShapeError("affine loss: image " + shape_to_string(image.shape()) + " does not match a Laplacian over " +
                     std::to_string(n) + " pixels");
  }
  double total = 0.0;
  std::vector<double> v(n);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < n; ++p) v[p] = static_cast<double>(image[3 * p + c]);
    total += laplacian.quadratic_form(v);
  }
  return total;
}

template <typename T>
BasicTensor<T> affine_loss_grad(const SparseSymmetricMatrix& laplacian, const BasicTensor<T>& image) {
  const std::size_t n = laplacian.dimension();
  if (image.rank() != 3 || image.extent(2) != 3 || image.extent(0) * image.extent(1) != n) {
    throw ShapeError("affine loss: image " + shape_to_string(image.shape()) + " does not match a Laplacian over " +
                     std::to_string(n) + " pixels");
  }
  BasicTensor<T> grad(image.shape());
  std::vector<double> v(n), mv(n);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < n; ++p) v[p] = static_cast<double>(image[3 * p + c]);
    laplacian.multiply(v, mv);
    for (std::size_t p = 0; p < n; ++p) grad[3 * p + c] = static_cast<T>(2.0 * mv[p]);
  }
  return grad;
}

template double affine_loss<float>(const SparseSymmetricMatrix&, const Tensor&);
template double affine_loss<double>(const SparseSymmetricMatrix&, const TensorD&);
template Tensor affine_loss_grad<float>(const SparseSymmetricMatrix&, const Tensor&);
template TensorD affine_loss_grad<double>(const SparseSymmetricMatrix&, const TensorD&);

void save_laplacian(const SparseSymmetricMatrix& laplacian, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write Laplacian cache " + path.string());
  out.write("MATL", 4);
  write_pod<std::uint64_t>(out, laplacian.dimension());
  write_pod<std::uint64_t>(out, laplacian.nnz());
  const auto& rp = laplacian.row_ptr();
  for (std::size_t r = 0; r < laplacian.dimension(); ++r) {
    for (std::uint64_t k = rp[r]; k < rp[r + 1]; ++k) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(r));
      write_pod<std::uint32_t>(out, laplacian.cols()[k]);
      write_pod<double>(out, laplacian.values()[k]);
    }
  }
  if (!out) throw InputError("failed writing Laplacian cache " + path.string());
}

SparseSymmetricMatrix load_laplacian(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open Laplacian cache " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "MATL", 4) != 0) {
    throw FormatError(path.string() + ": not a Laplacian cache (bad magic)");
  }
  const auto n = read_pod<std::uint64_t>(in, "header");
  const auto nnz = read_pod<std::uint64_t>(in, "header");
  if (n > UINT32_MAX || nnz > 25 * n) throw FormatError(path.string() + ": implausible Laplacian header");
  std::vector<std::uint64_t> row_ptr(n + 1, 0);
  std::vector<std::uint32_t> cols(nnz);
  std::vector<double> values(nnz);
  std::uint32_t prev_row = 0;
  for (std::uint64_t k = 0; k < nnz; ++k) {
    const auto row = read_pod<std::uint32_t>(in, "entry " + std::to_string(k));
    cols[k] = read_pod<std::uint32_t>(in, "entry " + std::to_string(k));
    values[k] = read_pod<double>(in, "entry " + std::to_string(k));
    if (row >= n || row < prev_row) throw FormatError(path.string() + ": entries not sorted by row");
    prev_row = row;
    ++row_ptr[row + 1];
  }
  for (std::size_t i = 0; i < n; ++i) row_ptr[i + 1] += row_ptr[i];
  return SparseSymmetricMatrix(n, std::move(row_ptr), std::move(cols), std::move(values));
}

std::string laplacian_key(const Tensor& image, const MattingParams& params) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  auto feed = [&ctx](const void* data, std::size_t size) { EVP_DigestUpdate(ctx.get(), data, size); };
  const std::array<std::uint64_t, 4> header{image.extent(0), image.extent(1), image.extent(2), params.radius};
  feed(header.data(), sizeof header);
  feed(&params.eps, sizeof params.eps);
  feed(image.data(), image.size() * sizeof(float));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &length);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

SparseSymmetricMatrix load_or_build_laplacian(const Tensor& image, const MattingParams& params,
                                              const std::filesystem::path& cache_dir) {
  if (cache_dir.empty()) return build_matting_laplacian(image, params);
  const auto path = cache_dir / ("matl_" + laplacian_key(image, params) + ".bin");
  const std::size_t n = image.extent(0) * image.extent(1);
  if (std::filesystem::exists(path)) {
    try {
      auto cached = load_laplacian(path);
      if (cached.dimension() == n) return cached;
    } catch (const FormatError&) {
      // stale or damaged; rebuild below
    }
  }
  auto built = build_matting_laplacian(image, params);
  std::filesystem::create_directories(cache_dir);
  const auto tmp = path.string() + ".tmp";
  save_laplacian(built, tmp);
  std::filesystem::rename(tmp, path);
  return built;
}

}  // namespace dpst::matting
