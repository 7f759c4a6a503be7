#include <doctest.h>

#include <fstream>

#include "dpst/matting.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dpst;
using namespace dpst::matting;
using dpst::testing::numeric_gradient;
using dpst::testing::random_tensor;
using dpst::testing::relative_error;

namespace {

double max_abs_diff(const SparseSymmetricMatrix& m, const Eigen::MatrixXd& dense) {
  const auto d = m.to_dense();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < dense.rows(); ++i) {
    for (Eigen::Index j = 0; j < dense.cols(); ++j) {
      worst = std::max(worst, std::abs(d(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) - dense(i, j)));
    }
  }
  return worst;
}

TensorD affine_recombination(const TensorD& image, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double a[3][3], b[3];
  for (auto& row : a) {
    for (auto& v : row) v = u(rng);
  }
  for (auto& v : b) v = u(rng);
  TensorD out(image.shape());
  const std::size_t n = image.extent(0) * image.extent(1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      double s = b[c];
      for (std::size_t k = 0; k < 3; ++k) s += a[c][k] * image[3 * p + k];
      out[3 * p + c] = s;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("matting") {

TEST_CASE("constant image has constants in its null space") {
  const auto lap = build_matting_laplacian(TensorD({7, 5, 3}, 0.4));
  std::vector<double> ones(35, 1.0), y(35);
  lap.multiply(ones, y);
  for (double v : y) CHECK(std::abs(v) < 1e-8);
  CHECK(std::abs(lap.quadratic_form(ones)) < 1e-8);
}

TEST_CASE("sparse construction equals the dense per-window oracle") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = random_tensor<double>({6, 6, 3}, rng, 0.0, 1.0);
    const auto lap = build_matting_laplacian(img);
    CHECK(max_abs_diff(lap, oracle::dense_laplacian(img, 1e-7)) < 1e-10);
  }
  const auto rect = random_tensor<double>({4, 7, 3}, rng, 0.0, 1.0);
  CHECK(max_abs_diff(build_matting_laplacian(rect, {1, 1e-3}), oracle::dense_laplacian(rect, 1e-3)) < 1e-10);
}

TEST_CASE("structure: row sums, row widths and exact symmetry") {
  std::mt19937_64 rng(42);
  const auto img = random_tensor<double>({9, 11, 3}, rng, 0.0, 1.0);
  const auto lap = build_matting_laplacian(img);
  const std::size_t n = lap.dimension();
  CHECK(n == 99);
  CHECK(lap.nnz() <= 25 * n);
  for (std::size_t r = 0; r < n; ++r) {
    CHECK(lap.row_nnz(r) <= 25);
    double sum = 0.0;
    for (auto k = lap.row_ptr()[r]; k < lap.row_ptr()[r + 1]; ++k) {
      sum += lap.values()[k];
      CHECK(lap.at(lap.cols()[k], r) == lap.values()[k]);
    }
    CHECK(std::abs(sum) < 1e-8);
  }
}

TEST_CASE("positive semidefinite on random unit vectors") {
  std::mt19937_64 rng(43);
  const auto lap = build_matting_laplacian(random_tensor<double>({8, 8, 3}, rng, 0.0, 1.0));
  std::normal_distribution<double> g;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> x(64);
    double norm = 0.0;
    for (auto& v : x) {
      v = g(rng);
      norm += v * v;
    }
    for (auto& v : x) v /= std::sqrt(norm);
    CHECK(lap.quadratic_form(x) >= -1e-8);
  }
}

TEST_CASE("construction guards") {
  CHECK_THROWS_AS(build_matting_laplacian(TensorD({2, 5, 3}, 0.5)), InputError);
  TensorD bad({4, 4, 3}, 0.5);
  bad[7] = std::nan("");
  CHECK_THROWS_AS(build_matting_laplacian(bad), InputError);
  CHECK_THROWS_AS(build_matting_laplacian(TensorD({4, 4, 3}, 0.5), {1, 0.0}), InputError);
  CHECK_THROWS_AS(build_matting_laplacian(TensorD({4, 4, 1}, 0.5)), ShapeError);
}

TEST_CASE("float and double images agree") {
  std::mt19937_64 rng(44);
  const auto img = random_tensor<float>({5, 6, 3}, rng, 0.0, 1.0);
  CHECK(build_matting_laplacian(img) == build_matting_laplacian(img.cast<double>()));
}

TEST_CASE("affine loss examples") {
  std::mt19937_64 rng(45);
  const auto img = random_tensor<double>({6, 6, 3}, rng, 0.0, 1.0);
  const auto lap = build_matting_laplacian(img);

  TensorD constant({6, 6, 3});
  for (std::size_t p = 0; p < 36; ++p) {
    constant[3 * p] = 0.1;
    constant[3 * p + 1] = 0.7;
    constant[3 * p + 2] = 0.3;
  }
  CHECK(std::abs(affine_loss(lap, constant)) < 1e-10);
  const auto flat = affine_loss_grad(lap, constant);
  for (double v : flat.values()) CHECK(std::abs(v) < 1e-9);

  CHECK(affine_loss(lap, img) <= 1e-4 * 36);
  CHECK(affine_loss(lap, affine_recombination(img, rng)) <= 1e-4 * 36);

  const auto o = random_tensor<double>({6, 6, 3}, rng, 0.0, 1.0);
  const auto dense = oracle::dense_laplacian(img, 1e-7);
  double want = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    Eigen::VectorXd v(36);
    for (std::size_t p = 0; p < 36; ++p) v(static_cast<Eigen::Index>(p)) = o[3 * p + c];
    want += v.dot(dense * v);
  }
  const double got = affine_loss(lap, o);
  CHECK(got >= -1e-8);
  CHECK(std::abs(got - want) <= 1e-8 * std::abs(want));

  CHECK_THROWS_AS(affine_loss(lap, TensorD({5, 6, 3})), ShapeError);
  CHECK_THROWS_AS(affine_loss_grad(lap, TensorD({6, 6, 1})), ShapeError);
}

TEST_CASE("affine loss gradient matches finite differences and is linear") {
  std::mt19937_64 rng(46);
  const auto lap = build_matting_laplacian(random_tensor<double>({5, 5, 3}, rng, 0.0, 1.0), {1, 1e-4});
  const auto o = random_tensor<double>({5, 5, 3}, rng, 0.0, 1.0);
  const auto f = [&](const TensorD& x) { return affine_loss(lap, x); };
  CHECK(relative_error(numeric_gradient(f, o, 1e-5), affine_loss_grad(lap, o)) < 1e-3);

  auto scaled = o;
  scaled *= -2.5;
  auto expected = affine_loss_grad(lap, o);
  expected *= -2.5;
  CHECK(relative_error(affine_loss_grad(lap, scaled), expected) < 1e-12);
}

TEST_CASE("cache files round trip and are keyed by content") {
  const auto dir = dpst::testing::scratch_dir("matl");
  std::mt19937_64 rng(47);
  const auto img = random_tensor<float>({6, 7, 3}, rng, 0.0, 1.0);
  const auto lap = build_matting_laplacian(img);
  save_laplacian(lap, dir / "l.bin");
  CHECK(load_laplacian(dir / "l.bin") == lap);

  const auto key = laplacian_key(img, {});
  CHECK(key.size() == 64);
  CHECK(key == laplacian_key(img, {}));
  auto other = img;
  other[0] += 0.01f;
  CHECK(key != laplacian_key(other, {}));
  CHECK(key != laplacian_key(img, {1, 1e-6}));

  const auto built = load_or_build_laplacian(img, {}, dir / "cache");
  CHECK(built == lap);
  const auto file = dir / "cache" / ("matl_" + key + ".bin");
  CHECK(std::filesystem::exists(file));
  CHECK(load_or_build_laplacian(img, {}, dir / "cache") == lap);

  {
    std::ofstream junk(file, std::ios::binary | std::ios::trunc);
    junk << "JUNKJUNKJUNKJUNKJUNK";
  }
  CHECK(load_or_build_laplacian(img, {}, dir / "cache") == lap);
  CHECK(load_laplacian(file) == lap);
}

TEST_CASE("cache loader errors") {
  const auto dir = dpst::testing::scratch_dir("matl_bad");
  std::mt19937_64 rng(48);
  save_laplacian(build_matting_laplacian(random_tensor<float>({4, 4, 3}, rng, 0.0, 1.0)), dir / "l.bin");
  const auto size = std::filesystem::file_size(dir / "l.bin");
  std::filesystem::copy_file(dir / "l.bin", dir / "t.bin");
  std::filesystem::resize_file(dir / "t.bin", size - 5);
  CHECK_THROWS_AS(load_laplacian(dir / "t.bin"), TruncationError);
  {
    std::fstream f(dir / "l.bin", std::ios::binary | std::ios::in | std::ios::out);
    f.write("XATL", 4);
  }
  CHECK_THROWS_AS(load_laplacian(dir / "l.bin"), FormatError);
}

}  // TEST_SUITE
