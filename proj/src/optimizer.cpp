#include "dpst/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "dpst/error.hpp"
#include "dpst/image_io.hpp"

namespace dpst::optimizer {
namespace {

std::pair<losses::LossReport, Tensor> objective_eval(const losses::Objective<float>& objective, const Tensor& image,
                                                     std::size_t iteration) {
  try {
    auto out = losses::total_loss(objective, image);
    if (!out.second.all_finite()) throw NumericError("objective gradient is not finite");
    return out;
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(iteration) + ": " + e.what());
  }
}

}  // namespace

template <typename T>
void adam_step(AdamState<T>& state, BasicTensor<T>& params, const BasicTensor<T>& grad) {
  if (params.shape() != grad.shape() || params.shape() != state.m.shape()) {
    throw ShapeError("Adam: parameters " + shape_to_string(params.shape()) + ", gradient " +
                     shape_to_string(grad.shape()) + ", state " + shape_to_string(state.m.shape()));
  }
  const std::size_t step = state.t + 1;
  if (!grad.all_finite()) throw NumericError("non-finite gradient at iteration " + std::to_string(step));
  const AdamParams& p = state.params;
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    const double m = p.beta1 * state.m[i] + (1.0 - p.beta1) * g;
    const double v = p.beta2 * state.v[i] + (1.0 - p.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    params[i] = static_cast<T>(params[i] - p.lr * (m / c1) / (std::sqrt(v / c2) + p.eps));
  }
  state.t = step;
}

template void adam_step<float>(AdamState<float>&, Tensor&, const Tensor&);
template void adam_step<double>(AdamState<double>&, TensorD&, const TensorD&);

InitMode parse_init_mode(const std::string& text) {
  if (text == "content") return InitMode::Content;
  if (text == "style") return InitMode::Style;
  if (text == "noise") return InitMode::Noise;
  throw InputError("unknown init mode '" + text + "' (use content, style or noise)");
}

std::string to_string(InitMode mode) {
  switch (mode) {
    case InitMode::Content: return "content";
    case InitMode::Style: return "style";
    case InitMode::Noise: return "noise";
  }
  return "?";
}

Tensor init_transfer_image(InitMode mode, const Tensor& content, const Tensor& style, std::uint64_t seed) {
  switch (mode) {
    case InitMode::Content:
      return content;
    case InitMode::Style:
      return image::resize_bilinear(style, content.extent(0), content.extent(1));
    case InitMode::Noise: {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
      Tensor out(content.shape());
      for (float& v : out.values()) v = uniform(rng);
      return out;
    }
  }
  throw InputError("invalid init mode");
}

RunResult run(const losses::Objective<float>& objective, const Tensor& init, const RunOptions& options) {
  Tensor pixels = init;
  pixels *= 255.0f;
  AdamState<float> adam(pixels.shape(), options.adam);
  RunResult result;
  result.log.reserve(options.iterations + 1);

  auto evaluate = [&](std::size_t t) {
    Tensor image = pixels;
    image *= 1.0f / 255.0f;
    auto [report, grad] = objective_eval(objective, image, t);
    result.log.push_back(report);
    if (options.on_iteration) options.on_iteration(t, report);
    grad *= 1.0f / 255.0f;
    return std::move(grad);
  };

  for (std::size_t t = 0; t < options.iterations; ++t) {
    const Tensor grad = evaluate(t);
    adam_step(adam, pixels, grad);
    for (float& v : pixels.values()) v = std::clamp(v, 0.0f, 255.0f);
    const std::size_t done = t + 1;
    if (options.checkpoint_every && !options.checkpoint_stem.empty() && done % options.checkpoint_every == 0) {
      Tensor snapshot = pixels;
      snapshot *= 1.0f / 255.0f;
      image::write_image(image::from_tensor(snapshot),
                         options.checkpoint_stem.string() + "_iter" + std::to_string(done) + ".png");
    }
  }
  evaluate(options.iterations);
  if (options.iterations == 0) {
    result.image = init;
  } else {
    result.image = std::move(pixels);
    result.image *= 1.0f / 255.0f;
  }
  return result;
}

void write_loss_log(const std::vector<losses::LossReport>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write loss log " + path.string());
  out.precision(17);
  out << "iteration,content,style,photorealism,assessment,total\n";
  for (std::size_t t = 0; t < log.size(); ++t) {
    const auto& r = log[t];
    out << t << ',' << r.content << ',' << r.style << ',' << r.photorealism << ',' << r.assessment << ','
        << r.total << '\n';
  }
  if (!out) throw InputError("failed writing loss log " + path.string());
}

}  // namespace dpst::optimizer
