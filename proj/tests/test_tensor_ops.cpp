#include <doctest.h>

#include "dpst/ops.hpp"
#include "test_util.hpp"

using namespace dpst;
using dpst::testing::numeric_gradient;
using dpst::testing::random_tensor;
using dpst::testing::relative_error;

TEST_SUITE("tensor_core") {

TEST_CASE("tensor rejects mismatched data and zero extents") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
}

TEST_CASE("conv2d with zero kernel and bias gives zeros") {
  std::mt19937_64 rng(1);
  ops::ConvSpec<float> spec{Tensor({4, 3, 3, 3}), Tensor({4})};
  const auto out = ops::conv2d(random_tensor<float>({3, 6, 5}, rng), spec);
  CHECK(out.shape() == Shape{4, 6, 5});
  for (float v : out.values()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d identity kernel reproduces its input") {
  std::mt19937_64 rng(2);
  ops::ConvSpec<double> spec{TensorD({1, 1, 3, 3}), TensorD({1})};
  spec.kernel[4] = 1.0;
  const auto x = random_tensor<double>({1, 5, 7}, rng);
  CHECK(ops::conv2d(x, spec) == x);
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  ops::ConvSpec<float> spec{Tensor({2, 3, 3, 3}), Tensor({2})};
  try {
    ops::conv2d(Tensor({4, 5, 5}), spec);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shape_to_string({4, 5, 5})) != std::string::npos);
    CHECK(msg.find(shape_to_string({2, 3, 3, 3})) != std::string::npos);
  }
}

TEST_CASE("conv2d_grad matches finite differences on a 1x1x3x3 kernel") {
  std::mt19937_64 rng(3);
  ops::ConvSpec<double> spec{random_tensor<double>({1, 1, 3, 3}, rng), random_tensor<double>({1}, rng)};
  const auto x = random_tensor<double>({1, 5, 5}, rng);
  const auto up = random_tensor<double>({1, 5, 5}, rng);
  const auto f = [&](const TensorD& in) { return ops::dot(ops::conv2d(in, spec), up); };
  CHECK(relative_error(numeric_gradient(f, x), ops::conv2d_grad(x, spec, up)) < 1e-3);
}

TEST_CASE("conv2d_grad matches finite differences on multi-channel kernels") {
  std::mt19937_64 rng(4);
  ops::ConvSpec<double> spec{random_tensor<double>({4, 3, 3, 3}, rng), random_tensor<double>({4}, rng)};
  const auto x = random_tensor<double>({3, 6, 7}, rng);
  const auto up = random_tensor<double>({4, 6, 7}, rng);
  const auto f = [&](const TensorD& in) { return ops::dot(ops::conv2d(in, spec), up); };
  CHECK(relative_error(numeric_gradient(f, x), ops::conv2d_grad(x, spec, up)) < 1e-6);
}

TEST_CASE("conv2d is linear in its input without bias") {
  std::mt19937_64 rng(5);
  ops::ConvSpec<float> spec{random_tensor<float>({5, 3, 3, 3}, rng), Tensor({5})};
  const auto x = random_tensor<float>({3, 9, 8}, rng);
  const auto y = random_tensor<float>({3, 9, 8}, rng);
  auto combo = x;
  combo *= 2.0f;
  combo.add_scaled(y, -3.0f);
  auto expected = ops::conv2d(x, spec);
  expected *= 2.0f;
  expected.add_scaled(ops::conv2d(y, spec), -3.0f);
  CHECK(relative_error(ops::conv2d(combo, spec).cast<double>(), expected.cast<double>()) < 1e-5);
}

TEST_CASE("maxpool2 of [1,2;3,4] is 4 and constants stay constant") {
  Tensor block({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(ops::maxpool2(block).values[0] == 4.0f);
  Tensor c({2, 6, 4}, 2.5f);
  const auto pooled = ops::maxpool2(c);
  CHECK(pooled.values.shape() == Shape{2, 3, 2});
  for (float v : pooled.values.values()) CHECK(v == 2.5f);
}

TEST_CASE("maxpool2 pads odd extents by edge replication") {
  Tensor odd({1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto r = ops::maxpool2(odd);
  CHECK(r.padded_rows);
  CHECK(r.padded_cols);
  CHECK(r.values.shape() == Shape{1, 2, 2});
  CHECK(r.values.values()[3] == 9.0f);
  CHECK_THROWS(ops::maxpool2(Tensor()));
}

TEST_CASE("maxpool2_grad routes ties to the first index") {
  Tensor tied({1, 2, 2}, 1.0f);
  Tensor up({1, 1, 1}, 5.0f);
  const auto g = ops::maxpool2_grad(tied, up);
  CHECK(g.values()[0] == 5.0f);
  CHECK(g.values()[1] == 0.0f);
  CHECK(g.values()[3] == 0.0f);
}

TEST_CASE("maxpool2_grad matches finite differences away from ties") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({2, 6, 6}, rng);
  const auto up = random_tensor<double>({2, 3, 3}, rng);
  const auto f = [&](const TensorD& in) { return ops::dot(ops::maxpool2(in).values, up); };
  CHECK(relative_error(numeric_gradient(f, x), ops::maxpool2_grad(x, up)) < 1e-3);
}

TEST_CASE("avgpool2 gradient matches finite differences, odd extents included") {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<double>({2, 5, 7}, rng);
  const auto up = random_tensor<double>({2, 3, 4}, rng);
  const auto f = [&](const TensorD& in) { return ops::dot(ops::avgpool2(in).values, up); };
  CHECK(relative_error(numeric_gradient(f, x), ops::avgpool2_grad(x, up)) < 1e-8);
}

TEST_CASE("relu definition and gradient") {
  TensorD x({3}, std::vector<double>{-1, 0, 2});
  CHECK(ops::relu(x) == TensorD({3}, std::vector<double>{0, 0, 2}));
  TensorD up({3}, 1.0);
  CHECK(ops::relu_grad(x, up) == TensorD({3}, std::vector<double>{0, 0, 1}));

  TensorD neg({4}, -0.5);
  CHECK(ops::relu(neg) == TensorD({4}));
  CHECK(ops::relu_grad(neg, TensorD({4}, 3.0)) == TensorD({4}));

  std::mt19937_64 rng(8);
  auto r = random_tensor<double>({50}, rng);
  for (auto& v : r.values()) {
    if (std::abs(v) < 1e-2) v = 0.5;
  }
  const auto u = random_tensor<double>({50}, rng);
  const auto f = [&](const TensorD& in) { return ops::dot(ops::relu(in), u); };
  CHECK(relative_error(numeric_gradient(f, r), ops::relu_grad(r, u)) < 1e-3);
}

TEST_CASE("matmul helpers agree") {
  std::mt19937_64 rng(9);
  const auto a = random_tensor<double>({3, 4}, rng);
  const auto b = random_tensor<double>({4, 2}, rng);
  const auto c = ops::matmul(a, b);
  TensorD bt({2, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) bt(j, i) = b(i, j);
  }
  CHECK(relative_error(c, ops::matmul_transposed(a, bt)) < 1e-14);
  double manual = 0.0;
  for (std::size_t k = 0; k < 4; ++k) manual += a(1, k) * b(k, 1);
  CHECK(c(1, 1) == doctest::Approx(manual).epsilon(1e-14));
  CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
}

}  // TEST_SUITE
