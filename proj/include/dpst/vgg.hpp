#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpst/ops.hpp"
#include "dpst/tensor.hpp"

namespace dpst::vgg {

/// Conv layer names of VGG19 in network order (fully connected layers are never used).
const std::vector<std::string>& layer_names();

/// Output channels of each conv layer, same order as layer_names().
std::size_t layer_channels(const std::string& name);

/// Conv block (1..5) a layer belongs to; the block's spatial grid is the
/// input grid pooled block-1 times. Throws InputError on unknown names.
std::size_t layer_block(const std::string& name);

/// Spatial extent after `pools` 2x2 poolings with edge-replicated odd extents.
std::size_t pooled_extent(std::size_t extent, std::size_t pools);

/// Standard ImageNet channel means (RGB, 0..255 scale).
constexpr std::array<float, 3> kImageNetMean{123.68f, 116.779f, 103.939f};

template <typename T>
struct ConvLayer {
  std::string name;
  ops::ConvSpec<T> spec;
  ops::ConvSpec<T> input_grad_spec;  // spec.transposed(), cached
};

/// The 16 conv layers of VGG19 with their preprocessing means. Immutable after
/// construction; safe to share between concurrent forward/backward calls.
template <typename T>
class BasicVggModel {
 public:
  /// Layers must be the 16 VGG19 conv layers in order with matching shapes.
  BasicVggModel(std::vector<ConvLayer<T>> layers, std::array<T, 3> mean,
                ops::PoolMode pooling = ops::PoolMode::Max);

  const std::vector<ConvLayer<T>>& layers() const noexcept { return layers_; }
  const ConvLayer<T>& layer(const std::string& name) const;
  const std::array<T, 3>& mean() const noexcept { return mean_; }
  ops::PoolMode pooling() const noexcept { return pooling_; }

  template <typename U>
  BasicVggModel<U> cast() const {
    std::vector<ConvLayer<U>> layers;
    for (const auto& l : layers_) {
      layers.push_back({l.name, l.spec.template cast<U>(), l.input_grad_spec.template cast<U>()});
    }
    return BasicVggModel<U>(std::move(layers),
                            {static_cast<U>(mean_[0]), static_cast<U>(mean_[1]),
                             static_cast<U>(mean_[2])},
                            pooling_);
  }

 private:
  std::vector<ConvLayer<T>> layers_;
  std::array<T, 3> mean_;
  ops::PoolMode pooling_;
};

using VggModel = BasicVggModel<float>;
using VggModelD = BasicVggModel<double>;

/// Convenience: assemble layers from bare specs (computes input-grad specs).
template <typename T>
BasicVggModel<T> make_model(std::vector<ops::ConvSpec<T>> specs, std::array<T, 3> mean,
                            ops::PoolMode pooling = ops::PoolMode::Max);

// Weight file layout (all little-endian):
//   "VGGW" | u32 version | 3 x f32 channel mean
//   per layer: u16 name length | name bytes | 4 x u32 kernel dims | kernel f32
//              | u32 bias length | bias f32
constexpr std::uint32_t kWeightFileVersion = 1;

/// Reads a weight file; throws FormatError (bad magic/version/shape/unknown
/// or missing layer) or TruncationError naming the layer being read.
VggModel load_weights(const std::filesystem::path& path);
void save_weights(const VggModel& model, const std::filesystem::path& path);

/// He-normal random weights with small random biases; deterministic per seed.
VggModel make_synthetic_model(std::uint64_t seed);

/// Image {H, W, 3} in [0, 1] -> {3, H, W} on the 0..255 scale minus channel mean.
template <typename T>
BasicTensor<T> preprocess(const BasicTensor<T>& image, const std::array<T, 3>& mean);

/// Inverse of preprocess.
template <typename T>
BasicTensor<T> postprocess(const BasicTensor<T>& features, const std::array<T, 3>& mean);

/// Pulls a gradient w.r.t. the preprocessed tensor back onto the image.
template <typename T>
BasicTensor<T> preprocess_grad(const BasicTensor<T>& upstream);

/// Rectified activations of captured layers, each {N, height, width}; the
/// feature matrix F is the row-major {N, D} view with D = height * width.
template <typename T>
using FeatureCapture = std::map<std::string, BasicTensor<T>>;

inline std::size_t feature_count(const Shape& s) { return s.at(0); }
inline std::size_t feature_size(const Shape& s) { return s.at(1) * s.at(2); }

/// Every intermediate activation of one forward pass, kept for backward.
template <typename T>
struct ForwardTrace {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> activations;  // rectified output per conv layer, up to `depth`
  std::size_t depth = 0;                    // number of conv layers evaluated

  FeatureCapture<T> capture(std::span<const std::string> layers) const;
};

/// Runs the network up to the deepest requested layer.
template <typename T>
ForwardTrace<T> trace_forward(const BasicVggModel<T>& model, const BasicTensor<T>& image,
                              std::span<const std::string> capture_layers);

template <typename T>
FeatureCapture<T> forward(const BasicVggModel<T>& model, const BasicTensor<T>& image,
                          std::span<const std::string> capture_layers);

/// Gradient w.r.t. the preprocessed input of sum_l <layer_grads[l], F_l>.
template <typename T>
BasicTensor<T> backward(const BasicVggModel<T>& model, const ForwardTrace<T>& trace,
                        const FeatureCapture<T>& layer_grads);

/// Re-runs forward, then backward.
template <typename T>
BasicTensor<T> backward(const BasicVggModel<T>& model, const BasicTensor<T>& image,
                        const FeatureCapture<T>& layer_grads);

// Activation file layout (little-endian), shared with the export tooling:
//   "ACTV" | u32 version | u32 count
//   per entry: u16 name length | name | 3 x u32 {N, H, W} | f32 data
FeatureCapture<float> read_activations(const std::filesystem::path& path);
void write_activations(const FeatureCapture<float>& capture, const std::filesystem::path& path);

}  // namespace dpst::vgg
