#pragma once

// Small random objectives shared by unit and acceptance tests.

#include <memory>
#include <random>

#include "dpst/losses.hpp"
#include "dpst/matting.hpp"
#include "dpst/vgg.hpp"
#include "test_util.hpp"

namespace dpst::testing {

inline std::shared_ptr<const vgg::VggModelD> synthetic_model_double() {
  static const auto model = std::make_shared<const vgg::VggModelD>(vgg::make_synthetic_model(5).cast<double>());
  return model;
}

/// Random two-class masks {2, H, W}.
inline TensorD random_two_class_masks(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  TensorD m({2, h, w});
  std::bernoulli_distribution coin(0.5);
  for (std::size_t p = 0; p < h * w; ++p) {
    const bool first = coin(rng);
    m[p] = first ? 1.0 : 0.0;
    m[h * w + p] = first ? 0.0 : 1.0;
  }
  return m;
}

struct SmallProblem {
  TensorD content, style, image;
  losses::Objective<double> objective;
};

/// Random images of size h x w, two-class masks and the given weights.
inline SmallProblem small_problem(const losses::LossConfig& config, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SmallProblem p;
  p.content = random_tensor<double>({h, w, 3}, rng, 0.0, 1.0);
  p.style = random_tensor<double>({h, w, 3}, rng, 0.0, 1.0);
  p.image = random_tensor<double>({h, w, 3}, rng, 0.05, 0.95);
  const auto cm = random_two_class_masks(h, w, rng);
  const auto sm = random_two_class_masks(h, w, rng);
  auto lap = std::make_shared<const matting::SparseSymmetricMatrix>(matting::build_matting_laplacian(p.content));
  auto scorer = std::make_shared<const losses::ToyAestheticScorer>();
  p.objective = losses::prepare_objective<double>(synthetic_model_double(), config, p.content, p.style, cm, sm, lap,
                                                  scorer);
  return p;
}

/// Config with only the named term switched on.
inline losses::LossConfig single_term(const std::string& term) {
  losses::LossConfig c = losses::LossConfig::standard(0.0, 0.0, 0.0, 0.0);
  if (term == "content") c.content_weights["conv4_2"] = 1.0;
  if (term == "style") {
    for (const char* l : {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"}) c.style_weights[l] = 20.0;
  }
  if (term == "photorealism") c.photorealism_weight = 1e4;
  if (term == "assessment") c.assessment_weight = 1e5;
  return c;
}

/// Relative error between total_loss's gradient and centered differences.
inline double objective_gradient_error(const losses::Objective<double>& obj, const TensorD& image, double h = 1e-5) {
  const auto f = [&](const TensorD& x) { return losses::total_loss(obj, x).first.total; };
  return relative_error(numeric_gradient(f, image, h), losses::total_loss(obj, image).second);
}

}  // namespace dpst::testing
