#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dpst/losses.hpp"
#include "dpst/tensor.hpp"

namespace dpst::optimizer {

struct AdamParams {
  double lr = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamParams params;
  std::size_t t = 0;
  BasicTensor<T> m;
  BasicTensor<T> v;

  explicit AdamState(const Shape& shape, AdamParams p = {}) : params(p), m(shape), v(shape) {}
};

/// One bias-corrected Adam update in place. Throws NumericError naming the
/// step when the gradient is not finite; state and parameters stay untouched.
template <typename T>
void adam_step(AdamState<T>& state, BasicTensor<T>& params, const BasicTensor<T>& grad);

enum class InitMode { Content, Style, Noise };

InitMode parse_init_mode(const std::string& text);
std::string to_string(InitMode mode);

/// Content: copy. Style: bilinear resize to the content size. Noise: uniform
/// [0, 1] per channel from a seeded Mersenne twister.
Tensor init_transfer_image(InitMode mode, const Tensor& content, const Tensor& style, std::uint64_t seed);

struct RunOptions {
  std::size_t iterations = 2000;
  std::size_t checkpoint_every = 100;        // 0 disables checkpoints
  std::filesystem::path checkpoint_stem;     // writes <stem>_iter<t>.png; empty disables
  AdamParams adam;
  std::function<void(std::size_t, const losses::LossReport&)> on_iteration;
};

struct RunResult {
  Tensor image;                          // {H, W, 3} in [0, 1]
  std::vector<losses::LossReport> log;   // log[t] = loss after t updates, t = 0..iterations
};

/// Optimizes raw pixel values on the 0..255 scale with Adam, clamping after
/// every step. The objective sees the image divided by 255.
RunResult run(const losses::Objective<float>& objective, const Tensor& init, const RunOptions& options);

/// CSV with header `iteration,content,style,photorealism,assessment,total`.
void write_loss_log(const std::vector<losses::LossReport>& log, const std::filesystem::path& path);

}  // namespace dpst::optimizer
