#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpst/matting.hpp"
#include "dpst/segmentation.hpp"
#include "dpst/tensor.hpp"
#include "dpst/vgg.hpp"

namespace dpst::losses {

using LayerWeights = std::map<std::string, double>;

/// F F^T for a feature tensor {N, ...} viewed as an N x D matrix.
template <typename T>
BasicTensor<T> gram(const BasicTensor<T>& features);

/// Gram matrix of the features with column d scaled by mask[d].
template <typename T>
BasicTensor<T> masked_gram(const BasicTensor<T>& features, const BasicTensor<T>& mask);

/// Weighted value, raw per-layer values and weighted feature gradients.
template <typename T>
struct TermResult {
  double value = 0.0;
  std::map<std::string, double> per_layer;
  vgg::FeatureCapture<T> grads;
};

/// sum_l alpha_l / (2 N_l D_l) * ||F_l[O] - F_l[I]||^2 over layers with nonzero weight.
template <typename T>
TermResult<T> content_loss(const vgg::FeatureCapture<T>& output, const vgg::FeatureCapture<T>& content,
                           const LayerWeights& alpha);

/// sum_l beta_l / (2 N_l^2) * ||G_l[O] - G_l[S]||^2, no masks.
template <typename T>
TermResult<T> style_loss(const vgg::FeatureCapture<T>& output, const vgg::FeatureCapture<T>& style,
                         const LayerWeights& beta);

/// Per-layer, per-class Gram matrices of the masked style features.
template <typename T>
struct StyleTargets {
  std::size_t class_count = 0;
  std::map<std::string, std::vector<BasicTensor<T>>> grams;
};

template <typename T>
StyleTargets<T> style_targets(const vgg::FeatureCapture<T>& style, const segmentation::MaskPyramid<T>& style_masks,
                              const LayerWeights& beta);

/// sum_l beta_l sum_c 1/(2 N_l^2) ||G_{c,l}[O] - G_{c,l}[S]||^2 with output
/// masks from the content pyramid. Throws InputError if the class counts differ.
template <typename T>
TermResult<T> augmented_style_loss(const vgg::FeatureCapture<T>& output, const StyleTargets<T>& targets,
                                   const segmentation::MaskPyramid<T>& content_masks, const LayerWeights& beta);

template <typename T>
TermResult<T> augmented_style_loss(const vgg::FeatureCapture<T>& output, const vgg::FeatureCapture<T>& style,
                                   const segmentation::MaskPyramid<T>& content_masks,
                                   const segmentation::MaskPyramid<T>& style_masks, const LayerWeights& beta);

template <typename T>
struct Score {
  double mean = 0.0;     // in [1, 10]
  BasicTensor<T> grad;   // d mean / d image
};

/// Aesthetic rating model for {H, W, 3} images in [0, 1].
class AssessmentScorer {
 public:
  virtual ~AssessmentScorer() = default;
  virtual Score<float> score(const Tensor& image) const = 0;
  virtual Score<double> score(const TensorD& image) const = 0;
};

/// Rating histogram over 1..10 given by softmax(z (k - 5.5)), where
/// z = 4 (sigma_Y - 0.2) - 8 (mu_Y - 0.5)^2 and Y is Rec. 601 luma.
class ToyAestheticScorer final : public AssessmentScorer {
 public:
  Score<float> score(const Tensor& image) const override;
  Score<double> score(const TensorD& image) const override;
  std::array<double, 10> histogram(const TensorD& image) const;
};

template <typename T>
struct AssessmentResult {
  double value = 0.0;  // 10 - mean rating
  BasicTensor<T> grad;
};

template <typename T>
AssessmentResult<T> assessment_loss(const AssessmentScorer& scorer, const BasicTensor<T>& image);

struct LossConfig {
  LayerWeights content_weights;   // alpha_l
  LayerWeights style_weights;     // beta_l
  double style_factor = 1.0;      // Gamma
  double photorealism_weight = 1e4;  // lambda
  double assessment_weight = 1e5;    // vartheta
  double semantic_threshold = 0.6;   // theta

  /// alpha on conv4_2; beta split evenly over conv1_1 .. conv5_1.
  static LossConfig standard(double alpha = 1.0, double beta = 100.0, double lambda = 1e4, double vartheta = 1e5);

  /// Throws InputError on negative or non-finite weights, unknown layers, or
  /// when every alpha and beta is zero.
  void validate() const;

  /// Layers needed by the weighted content and style terms, in network order.
  std::vector<std::string> capture_layers() const;
};

struct LossReport {
  double content = 0.0;       // sum alpha_l L_c^l
  double style = 0.0;         // sum beta_l L_s+^l
  double photorealism = 0.0;  // L_m
  double assessment = 0.0;    // L_a
  double total = 0.0;         // content + Gamma style + lambda L_m + vartheta L_a
  std::map<std::string, double> content_layers;
  std::map<std::string, double> style_layers;
};

/// Everything the objective needs besides the transfer image.
template <typename T>
struct Objective {
  std::shared_ptr<const vgg::BasicVggModel<T>> model;
  LossConfig config;
  vgg::FeatureCapture<T> content_features;
  StyleTargets<T> style;
  segmentation::MaskPyramid<T> content_masks;
  std::shared_ptr<const matting::SparseSymmetricMatrix> laplacian;  // may be null when lambda = 0
  std::shared_ptr<const AssessmentScorer> scorer;                    // may be null when vartheta = 0
};

/// Precomputes content features and style Gram targets. Masks are full-resolution {C, H, W}.
template <typename T>
Objective<T> prepare_objective(std::shared_ptr<const vgg::BasicVggModel<T>> model, const LossConfig& config,
                               const BasicTensor<T>& content_image, const BasicTensor<T>& style_image,
                               const BasicTensor<T>& content_masks, const BasicTensor<T>& style_masks,
                               std::shared_ptr<const matting::SparseSymmetricMatrix> laplacian,
                               std::shared_ptr<const AssessmentScorer> scorer);

/// Loss report and gradient with respect to the {H, W, 3} image in [0, 1].
template <typename T>
std::pair<LossReport, BasicTensor<T>> total_loss(const Objective<T>& objective, const BasicTensor<T>& image);

}  // namespace dpst::losses
