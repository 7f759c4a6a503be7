#include "dpst/losses.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "dpst/error.hpp"

namespace dpst::losses {
namespace {

template <typename T>
using MatrixMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
ConstMatrixMap<T> as_matrix(const BasicTensor<T>& f) {
  const auto n = static_cast<Eigen::Index>(f.extent(0));
  return ConstMatrixMap<T>(f.data(), n, static_cast<Eigen::Index>(f.size()) / n);
}

template <typename V>
const V& lookup(const std::map<std::string, V>& m, const std::string& layer, const char* what) {
  auto it = m.find(layer);
  if (it == m.end()) throw InputError(std::string(what) + " has no entry for layer " + layer);
  return it->second;
}

void check_weight(const std::string& layer, double w) {
  if (!std::isfinite(w) || w < 0) throw InputError("layer weight for " + layer + " must be finite and >= 0");
}

// Rethrows with the term name prepended, keeping the error category.
template <typename F>
auto annotate(const char* term, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(term) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(term) + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(std::string(term) + ": " + e.what());
  }
}

double luma_weight(std::size_t c) {
  static constexpr double w[3] = {0.299, 0.587, 0.114};
  return w[c];
}

template <typename T>
Score<T> toy_score(const BasicTensor<T>& image) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("scorer expects an {H, W, 3} image, got " + shape_to_string(image.shape()));
  }
  const std::size_t n = image.extent(0) * image.extent(1);
  std::vector<double> y(n);
  double sum = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    y[p] = luma_weight(0) * image[3 * p] + luma_weight(1) * image[3 * p + 1] + luma_weight(2) * image[3 * p + 2];
    sum += y[p];
  }
  const double nd = static_cast<double>(n);
  const double mu = sum / nd;
  double var = 0.0;
  for (double v : y) var += (v - mu) * (v - mu);
  var /= nd;
  const double sigma = std::sqrt(var + 1e-12);
  const double z = 4.0 * (sigma - 0.2) - 8.0 * (mu - 0.5) * (mu - 0.5);

  std::array<double, 10> p{};
  double norm = 0.0;
  const double shift = std::abs(z) * 4.5;  // keeps exponents <= 0
  for (int k = 1; k <= 10; ++k) norm += p[k - 1] = std::exp(z * (k - 5.5) - shift);
  double mean = 0.0, second = 0.0;
  for (int k = 1; k <= 10; ++k) {
    p[k - 1] /= norm;
    mean += k * p[k - 1];
    second += k * k * p[k - 1];
  }
  // d mean / dz is the rating variance under p
  const double dmean_dz = second - mean * mean;
  Score<T> out{mean, BasicTensor<T>(image.shape())};
  for (std::size_t q = 0; q < n; ++q) {
    const double dz_dy = 4.0 * (y[q] - mu) / (nd * sigma) - 16.0 * (mu - 0.5) / nd;
    for (std::size_t c = 0; c < 3; ++c) out.grad[3 * q + c] = static_cast<T>(dmean_dz * dz_dy * luma_weight(c));
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> gram(const BasicTensor<T>& features) {
  if (features.rank() < 1) throw ShapeError("gram needs a feature tensor");
  const auto f = as_matrix(features);
  const std::size_t n = features.extent(0);
  BasicTensor<T> g({n, n});
  auto gm = MatrixMap<T>(g.data(), n, n);
  gm.noalias() = f * f.transpose();
  gm.template triangularView<Eigen::StrictlyLower>() = gm.transpose();
  return g;
}

template <typename T>
BasicTensor<T> masked_gram(const BasicTensor<T>& features, const BasicTensor<T>& mask) {
  const auto f = as_matrix(features);
  if (mask.size() != static_cast<std::size_t>(f.cols())) {
    throw ShapeError("mask " + shape_to_string(mask.shape()) + " does not match feature size " +
                     std::to_string(f.cols()) + " of " + shape_to_string(features.shape()));
  }
  const std::size_t n = features.extent(0);
  const ConstRowMap<T> m(mask.data(), f.cols());
  const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> scaled = f.array().rowwise() * m.array();
  BasicTensor<T> g({n, n});
  auto gm = MatrixMap<T>(g.data(), n, n);
  gm.noalias() = scaled * scaled.transpose();
  gm.template triangularView<Eigen::StrictlyLower>() = gm.transpose();
  return g;
}

template <typename T>
TermResult<T> content_loss(const vgg::FeatureCapture<T>& output, const vgg::FeatureCapture<T>& content,
                           const LayerWeights& alpha) {
  TermResult<T> out;
  for (const auto& [layer, weight] : alpha) {
    check_weight(layer, weight);
    if (weight == 0.0) continue;
    const auto& fo = lookup(output, layer, "output capture");
    const auto& fi = lookup(content, layer, "content capture");
    if (fo.shape() != fi.shape()) {
      throw ShapeError("content loss at " + layer + ": " + shape_to_string(fo.shape()) + " vs " +
                       shape_to_string(fi.shape()));
    }
    const double nd = static_cast<double>(vgg::feature_count(fo.shape()) * vgg::feature_size(fo.shape()));
    BasicTensor<T> grad(fo.shape());
    double sq = 0.0;
    for (std::size_t i = 0; i < fo.size(); ++i) {
      const double d = static_cast<double>(fo[i]) - static_cast<double>(fi[i]);
      sq += d * d;
      grad[i] = static_cast<T>(weight * d / nd);
    }
    const double raw = sq / (2.0 * nd);
    out.per_layer[layer] = raw;
    out.value += weight * raw;
    out.grads.emplace(layer, std::move(grad));
  }
  return out;
}

namespace {

// Adds beta * d/dF of 1/(2N^2) ||F W F^T - target||^2 into grad, W = diag(mask^2); returns the raw value.
template <typename T>
double masked_style_term(const BasicTensor<T>& features, const BasicTensor<T>* mask, const BasicTensor<T>& target,
                         double beta, BasicTensor<T>& grad) {
  const auto f = as_matrix(features);
  const auto n = f.rows();
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat fw2;
  Mat fw;
  if (mask) {
    if (mask->size() != static_cast<std::size_t>(f.cols())) {
      throw ShapeError("mask " + shape_to_string(mask->shape()) + " does not match features " +
                       shape_to_string(features.shape()));
    }
    const ConstRowMap<T> m(mask->data(), f.cols());
    fw = f.array().rowwise() * m.array();
    fw2 = fw.array().rowwise() * m.array();
  } else {
    fw = f;
    fw2 = f;
  }
  Mat g = fw * fw.transpose();
  g.template triangularView<Eigen::StrictlyLower>() = g.transpose();
  const Mat diff = g - ConstMatrixMap<T>(target.data(), n, n);
  const double raw = static_cast<double>(diff.template cast<double>().squaredNorm()) / (2.0 * nn);
  MatrixMap<T>(grad.data(), n, f.cols()).noalias() += (static_cast<T>(2.0 * beta / nn) * diff) * fw2;
  return raw;
}

}  // namespace

template <typename T>
TermResult<T> style_loss(const vgg::FeatureCapture<T>& output, const vgg::FeatureCapture<T>& style,
                         const LayerWeights& beta) {
  TermResult<T> out;
  for (const auto& [layer, weight] : beta) {
    check_weight(layer, weight);
    if (weight == 0.0) continue;
    const auto& fo = lookup(output, layer, "output capture");
    const auto& fs = lookup(style, layer, "style capture");
    if (fo.extent(0) != fs.extent(0)) throw ShapeError("style loss at " + layer + ": feature counts differ");
    BasicTensor<T> grad(fo.shape());
    const double raw = masked_style_term<T>(fo, nullptr, gram(fs), weight, grad);
    out.per_layer[layer] = raw;
    out.value += weight * raw;
    out.grads.emplace(layer, std::move(grad));
  }
  return out;
}

template <typename T>
StyleTargets<T> style_targets(const vgg::FeatureCapture<T>& style, const segmentation::MaskPyramid<T>& style_masks,
                              const LayerWeights& beta) {
  StyleTargets<T> out;
  bool first = true;
  for (const auto& [layer, weight] : beta) {
    check_weight(layer, weight);
    if (weight == 0.0) continue;
    const auto& fs = lookup(style, layer, "style capture");
    const auto& masks = lookup(style_masks, layer, "style mask pyramid");
    const std::size_t classes = masks.extent(0);
    const std::size_t d = vgg::feature_size(fs.shape());
    if (masks.size() != classes * d) {
      throw ShapeError("style masks " + shape_to_string(masks.shape()) + " do not match features " +
                       shape_to_string(fs.shape()) + " at " + layer);
    }
    if (first) out.class_count = classes;
    first = false;
    if (classes != out.class_count) throw ShapeError("style mask pyramid has inconsistent class counts");
    auto& grams = out.grams[layer];
    for (std::size_t c = 0; c < classes; ++c) {
      BasicTensor<T> mask({d}, std::vector<T>(masks.data() + c * d, masks.data() + (c + 1) * d));
      grams.push_back(masked_gram(fs, mask));
    }
  }
  return out;
}

template <typename T>
TermResult<T> augmented_style_loss(const vgg::FeatureCapture<T>& output, const StyleTargets<T>& targets,
                                   const segmentation::MaskPyramid<T>& content_masks, const LayerWeights& beta) {
  TermResult<T> out;
  for (const auto& [layer, weight] : beta) {
    check_weight(layer, weight);
    if (weight == 0.0) continue;
    const auto& fo = lookup(output, layer, "output capture");
    const auto& masks = lookup(content_masks, layer, "content mask pyramid");
    const auto& grams = lookup(targets.grams, layer, "style targets");
    const std::size_t classes = masks.extent(0);
    if (classes != grams.size() || classes != targets.class_count) {
      throw InputError("content and style class tables differ (" + std::to_string(classes) + " vs " +
                       std::to_string(grams.size()) + " classes); run semantic grouping first");
    }
    const std::size_t d = vgg::feature_size(fo.shape());
    if (masks.size() != classes * d) {
      throw ShapeError("content masks " + shape_to_string(masks.shape()) + " do not match features " +
                       shape_to_string(fo.shape()) + " at " + layer);
    }
    BasicTensor<T> grad(fo.shape());
    double raw = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const BasicTensor<T> mask({d}, std::vector<T>(masks.data() + c * d, masks.data() + (c + 1) * d));
      raw += masked_style_term<T>(fo, &mask, grams[c], weight, grad);
    }
    out.per_layer[layer] = raw;
    out.value += weight * raw;
    out.grads.emplace(layer, std::move(grad));
  }
  return out;
}

template <typename T>
TermResult<T> augmented_style_loss(const vgg::FeatureCapture<T>& output, const vgg::FeatureCapture<T>& style,
                                   const segmentation::MaskPyramid<T>& content_masks,
                                   const segmentation::MaskPyramid<T>& style_masks, const LayerWeights& beta) {
  return augmented_style_loss(output, style_targets(style, style_masks, beta), content_masks, beta);
}

Score<float> ToyAestheticScorer::score(const Tensor& image) const { return toy_score(image); }
Score<double> ToyAestheticScorer::score(const TensorD& image) const { return toy_score(image); }

std::array<double, 10> ToyAestheticScorer::histogram(const TensorD& image) const {
  if (image.rank() != 3 || image.extent(2) != 3) throw ShapeError("scorer expects an {H, W, 3} image");
  const std::size_t n = image.extent(0) * image.extent(1);
  double sum = 0.0, sq = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double y = 0.299 * image[3 * p] + 0.587 * image[3 * p + 1] + 0.114 * image[3 * p + 2];
    sum += y;
    sq += y * y;
  }
  const double mu = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mu * mu);
  const double z = 4.0 * (std::sqrt(var + 1e-12) - 0.2) - 8.0 * (mu - 0.5) * (mu - 0.5);
  std::array<double, 10> p{};
  double norm = 0.0;
  for (int k = 1; k <= 10; ++k) norm += p[k - 1] = std::exp(z * (k - 5.5) - std::abs(z) * 4.5);
  for (double& v : p) v /= norm;
  return p;
}

template <typename T>
AssessmentResult<T> assessment_loss(const AssessmentScorer& scorer, const BasicTensor<T>& image) {
  Score<T> s = annotate("assessment scorer", [&] { return scorer.score(image); });
  if (!std::isfinite(s.mean) || s.mean < 1.0 - 1e-9 || s.mean > 10.0 + 1e-9) {
    throw NumericError("assessment scorer returned mean rating " + std::to_string(s.mean) + " outside [1, 10]");
  }
  if (s.grad.shape() != image.shape()) throw ShapeError("assessment scorer gradient has the wrong shape");
  AssessmentResult<T> out{10.0 - s.mean, std::move(s.grad)};
  out.grad *= T{-1};
  return out;
}

LossConfig LossConfig::standard(double alpha, double beta, double lambda, double vartheta) {
  LossConfig c;
  c.content_weights = {{"conv4_2", alpha}};
  for (const char* layer : {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"}) c.style_weights[layer] = beta / 5.0;
  c.photorealism_weight = lambda;
  c.assessment_weight = vartheta;
  return c;
}

void LossConfig::validate() const {
  bool any = false;
  for (const auto* weights : {&content_weights, &style_weights}) {
    for (const auto& [layer, w] : *weights) {
      vgg::layer_block(layer);  // throws on unknown names
      check_weight(layer, w);
      any = any || w > 0;
    }
  }
  if (!any) throw InputError("at least one content or style layer weight must be nonzero");
  for (double w : {style_factor, photorealism_weight, assessment_weight}) {
    if (!std::isfinite(w) || w < 0) throw InputError("loss weights must be finite and >= 0");
  }
  if (!(semantic_threshold >= 0.0 && semantic_threshold <= 1.0)) {
    throw InputError("semantic threshold must lie in [0, 1]");
  }
}

std::vector<std::string> LossConfig::capture_layers() const {
  std::vector<std::string> out;
  for (const auto& name : vgg::layer_names()) {
    auto used = [&name](const LayerWeights& w) {
      auto it = w.find(name);
      return it != w.end() && it->second != 0.0;
    };
    if (used(content_weights) || used(style_weights)) out.push_back(name);
  }
  return out;
}

template <typename T>
Objective<T> prepare_objective(std::shared_ptr<const vgg::BasicVggModel<T>> model, const LossConfig& config,
                               const BasicTensor<T>& content_image, const BasicTensor<T>& style_image,
                               const BasicTensor<T>& content_masks, const BasicTensor<T>& style_masks,
                               std::shared_ptr<const matting::SparseSymmetricMatrix> laplacian,
                               std::shared_ptr<const AssessmentScorer> scorer) {
  if (!model) throw InputError("objective needs a feature model");
  if (content_masks.extent(0) != style_masks.extent(0)) {
    throw InputError("content and style class tables differ; run semantic grouping first");
  }
  Objective<T> obj;
  obj.model = model;
  obj.config = config;
  obj.laplacian = std::move(laplacian);
  obj.scorer = std::move(scorer);
  const auto layers = config.capture_layers();
  if (layers.empty()) return obj;
  obj.content_features = vgg::forward(*model, vgg::preprocess(content_image, model->mean()), layers);
  const auto style_features = vgg::forward(*model, vgg::preprocess(style_image, model->mean()), layers);
  obj.content_masks =
      segmentation::build_mask_pyramid(content_masks, layers, content_image.extent(0), content_image.extent(1));
  const auto style_pyramid =
      segmentation::build_mask_pyramid(style_masks, layers, style_image.extent(0), style_image.extent(1));
  obj.style = style_targets(style_features, style_pyramid, config.style_weights);
  if (obj.style.grams.empty()) obj.style.class_count = content_masks.extent(0);
  return obj;
}

template <typename T>
std::pair<LossReport, BasicTensor<T>> total_loss(const Objective<T>& obj, const BasicTensor<T>& image) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("transfer image must be {H, W, 3}, got " + shape_to_string(image.shape()));
  }
  const LossConfig& cfg = obj.config;
  LossReport report;
  BasicTensor<T> grad(image.shape());

  const auto layers = cfg.capture_layers();
  if (!layers.empty()) {
    const auto trace = vgg::trace_forward(*obj.model, vgg::preprocess(image, obj.model->mean()), layers);
    const auto capture = trace.capture(layers);
    auto content = annotate("content loss", [&] { return content_loss(capture, obj.content_features, cfg.content_weights); });
    auto style = annotate("style loss", [&] {
      return augmented_style_loss(capture, obj.style, obj.content_masks, cfg.style_weights);
    });
    report.content = content.value;
    report.content_layers = content.per_layer;
    report.style = style.value;
    report.style_layers = style.per_layer;

    vgg::FeatureCapture<T> feature_grads = std::move(content.grads);
    for (auto& [layer, g] : style.grads) {
      g *= static_cast<T>(cfg.style_factor);
      auto [it, inserted] = feature_grads.try_emplace(layer, g);
      if (!inserted) it->second += g;
    }
    grad += vgg::preprocess_grad(vgg::backward(*obj.model, trace, feature_grads));
  }

  if (obj.laplacian) {
    report.photorealism = annotate("photorealism loss", [&] { return matting::affine_loss(*obj.laplacian, image); });
    if (cfg.photorealism_weight != 0.0) {
      grad.add_scaled(matting::affine_loss_grad(*obj.laplacian, image), static_cast<T>(cfg.photorealism_weight));
    }
  } else if (cfg.photorealism_weight != 0.0) {
    throw InputError("photorealism weight is nonzero but no matting Laplacian was supplied");
  }

  if (obj.scorer) {
    auto a = assessment_loss(*obj.scorer, image);
    report.assessment = a.value;
    if (cfg.assessment_weight != 0.0) grad.add_scaled(a.grad, static_cast<T>(cfg.assessment_weight));
  } else if (cfg.assessment_weight != 0.0) {
    throw InputError("assessment weight is nonzero but no scorer was supplied");
  }

  report.total = report.content + cfg.style_factor * report.style + cfg.photorealism_weight * report.photorealism +
                 cfg.assessment_weight * report.assessment;
  if (!std::isfinite(report.total)) throw NumericError("objective evaluated to a non-finite value");
  return {report, std::move(grad)};
}

#define DPST_INSTANTIATE_LOSSES(T)                                                                               \
  template BasicTensor<T> gram(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> masked_gram(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template TermResult<T> content_loss(const vgg::FeatureCapture<T>&, const vgg::FeatureCapture<T>&,              \
                                      const LayerWeights&);                                                      \
  template TermResult<T> style_loss(const vgg::FeatureCapture<T>&, const vgg::FeatureCapture<T>&,                \
                                    const LayerWeights&);                                                        \
  template StyleTargets<T> style_targets(const vgg::FeatureCapture<T>&, const segmentation::MaskPyramid<T>&,     \
                                         const LayerWeights&);                                                   \
  template TermResult<T> augmented_style_loss(const vgg::FeatureCapture<T>&, const StyleTargets<T>&,             \
                                              const segmentation::MaskPyramid<T>&, const LayerWeights&);         \
  template TermResult<T> augmented_style_loss(const vgg::FeatureCapture<T>&, const vgg::FeatureCapture<T>&,      \
                                              const segmentation::MaskPyramid<T>&,                               \
                                              const segmentation::MaskPyramid<T>&, const LayerWeights&);         \
  template AssessmentResult<T> assessment_loss(const AssessmentScorer&, const BasicTensor<T>&);                  \
  template Objective<T> prepare_objective(std::shared_ptr<const vgg::BasicVggModel<T>>, const LossConfig&,       \
                                          const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                          const BasicTensor<T>&,                                                 \
                                          std::shared_ptr<const matting::SparseSymmetricMatrix>,                 \
                                          std::shared_ptr<const AssessmentScorer>);                              \
  template std::pair<LossReport, BasicTensor<T>> total_loss(const Objective<T>&, const BasicTensor<T>&);

DPST_INSTANTIATE_LOSSES(float)
DPST_INSTANTIATE_LOSSES(double)

}  // namespace dpst::losses
