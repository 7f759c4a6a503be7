#include "dpst/vgg.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

namespace dpst::vgg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "weight and activation files are read with little-endian memcpy");

struct LayerInfo {
  const char* name;
  std::size_t channels;
  std::size_t block;
};

constexpr std::array<LayerInfo, 16> kLayers{{
    {"conv1_1", 64, 1},  {"conv1_2", 64, 1},  {"conv2_1", 128, 2}, {"conv2_2", 128, 2},
    {"conv3_1", 256, 3}, {"conv3_2", 256, 3}, {"conv3_3", 256, 3}, {"conv3_4", 256, 3},
    {"conv4_1", 512, 4}, {"conv4_2", 512, 4}, {"conv4_3", 512, 4}, {"conv4_4", 512, 4},
    {"conv5_1", 512, 5}, {"conv5_2", 512, 5}, {"conv5_3", 512, 5}, {"conv5_4", 512, 5},
}};

std::size_t layer_index(const std::string& name) {
  for (std::size_t i = 0; i < kLayers.size(); ++i) {
    if (name == kLayers[i].name) return i;
  }
  throw InputError("unknown VGG19 layer '" + name + "'");
}

Shape expected_kernel_shape(std::size_t index) {
  const std::size_t in = index == 0 ? 3 : kLayers[index - 1].channels;
  return {kLayers[index].channels, in, 3, 3};
}

bool starts_block(std::size_t index) {
  return index > 0 && kLayers[index].block != kLayers[index - 1].block;
}

// Bounds-checked little-endian reader over an in-memory file.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  bool try_read(void* dst, std::size_t n) {
    if (remaining() < n) return false;
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
    return true;
  }

  template <typename V>
  bool try_read(V& value) {
    return try_read(&value, sizeof(V));
  }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename V>
void put(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_name(std::ofstream& out, const std::string& name) {
  put(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

}  // namespace

const std::vector<std::string>& layer_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& l : kLayers) out.emplace_back(l.name);
    return out;
  }();
  return names;
}

std::size_t layer_channels(const std::string& name) { return kLayers[layer_index(name)].channels; }

std::size_t layer_block(const std::string& name) { return kLayers[layer_index(name)].block; }

std::size_t pooled_extent(std::size_t extent, std::size_t pools) {
  for (std::size_t i = 0; i < pools; ++i) extent = (extent + 1) / 2;
  return extent;
}

template <typename T>
BasicVggModel<T>::BasicVggModel(std::vector<ConvLayer<T>> layers, std::array<T, 3> mean,
                                ops::PoolMode pooling)
    : layers_(std::move(layers)), mean_(mean), pooling_(pooling) {
  if (layers_.size() != kLayers.size()) {
    throw FormatError("VGG19 needs 16 conv layers, got " + std::to_string(layers_.size()));
  }
  for (std::size_t i = 0; i < kLayers.size(); ++i) {
    const auto& l = layers_[i];
    if (l.name != kLayers[i].name) {
      throw FormatError("layer " + std::to_string(i) + " should be " + kLayers[i].name +
                        ", got " + l.name);
    }
    l.spec.validate();
    if (l.spec.kernel.shape() != expected_kernel_shape(i)) {
      throw ShapeError("kernel of " + l.name + " is " + shape_to_string(l.spec.kernel.shape()) +
                       ", expected " + shape_to_string(expected_kernel_shape(i)));
    }
  }
}

template <typename T>
const ConvLayer<T>& BasicVggModel<T>::layer(const std::string& name) const {
  return layers_[layer_index(name)];
}

template <typename T>
BasicVggModel<T> make_model(std::vector<ops::ConvSpec<T>> specs, std::array<T, 3> mean,
                            ops::PoolMode pooling) {
  if (specs.size() != kLayers.size()) {
    throw FormatError("VGG19 needs 16 conv layers, got " + std::to_string(specs.size()));
  }
  std::vector<ConvLayer<T>> layers;
  layers.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto transposed = specs[i].transposed();
    layers.push_back({kLayers[i].name, std::move(specs[i]), std::move(transposed)});
  }
  return BasicVggModel<T>(std::move(layers), mean, pooling);
}

VggModel load_weights(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  char magic[4];
  if (!in.try_read(magic, 4) || std::memcmp(magic, "VGGW", 4) != 0) {
    throw FormatError(path.string() + ": not a VGG weight file (bad magic)");
  }
  std::uint32_t version = 0;
  std::array<float, 3> mean{};
  if (!in.try_read(version) || !in.try_read(mean.data(), sizeof(mean))) {
    throw TruncationError(path.string() + ": truncated in header");
  }
  if (version != kWeightFileVersion) {
    throw FormatError(path.string() + ": unsupported weight file version " +
                      std::to_string(version));
  }

  std::vector<std::optional<ops::ConvSpec<float>>> specs(kLayers.size());
  std::string previous = "header";
  while (!in.at_end()) {
    std::uint16_t name_len = 0;
    if (!in.try_read(name_len)) {
      throw TruncationError(path.string() + ": truncated after layer " + previous);
    }
    std::string name(name_len, '\0');
    if (!in.try_read(name.data(), name_len)) {
      throw TruncationError(path.string() + ": truncated in layer name after " + previous);
    }
    std::size_t index = 0;
    try {
      index = layer_index(name);
    } catch (const InputError&) {
      throw FormatError(path.string() + ": unexpected layer '" + name + "'");
    }
    if (specs[index]) throw FormatError(path.string() + ": duplicate layer " + name);

    std::array<std::uint32_t, 4> dims{};
    if (!in.try_read(dims.data(), sizeof(dims))) {
      throw TruncationError(path.string() + ": truncated in layer " + name);
    }
    const Shape shape(dims.begin(), dims.end());
    if (shape != expected_kernel_shape(index)) {
      throw ShapeError(path.string() + ": kernel of " + name + " is " + shape_to_string(shape) +
                       ", expected " + shape_to_string(expected_kernel_shape(index)));
    }
    Tensor kernel(shape);
    std::uint32_t bias_len = 0;
    if (!in.try_read(kernel.data(), kernel.size() * sizeof(float)) || !in.try_read(bias_len)) {
      throw TruncationError(path.string() + ": truncated in layer " + name);
    }
    if (bias_len != shape[0]) {
      throw ShapeError(path.string() + ": bias of " + name + " has length " +
                       std::to_string(bias_len) + ", expected " + std::to_string(shape[0]));
    }
    Tensor bias({bias_len});
    if (!in.try_read(bias.data(), bias.size() * sizeof(float))) {
      throw TruncationError(path.string() + ": truncated in layer " + name);
    }
    specs[index] = ops::ConvSpec<float>{std::move(kernel), std::move(bias)};
    previous = name;
  }

  std::vector<ops::ConvSpec<float>> ordered;
  std::string missing;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!specs[i]) {
      missing += missing.empty() ? "" : ", ";
      missing += kLayers[i].name;
    } else {
      ordered.push_back(std::move(*specs[i]));
    }
  }
  if (!missing.empty()) throw FormatError(path.string() + ": missing layers " + missing);
  return make_model(std::move(ordered), mean);
}

void save_weights(const VggModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write("VGGW", 4);
  put(out, kWeightFileVersion);
  for (float m : model.mean()) put(out, m);
  for (const auto& layer : model.layers()) {
    put_name(out, layer.name);
    for (std::size_t d : layer.spec.kernel.shape()) put(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(layer.spec.kernel.data()),
              static_cast<std::streamsize>(layer.spec.kernel.size() * sizeof(float)));
    put(out, static_cast<std::uint32_t>(layer.spec.bias.size()));
    out.write(reinterpret_cast<const char*>(layer.spec.bias.data()),
              static_cast<std::streamsize>(layer.spec.bias.size() * sizeof(float)));
  }
  if (!out) throw InputError("failed writing " + path.string());
}

VggModel make_synthetic_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ops::ConvSpec<float>> specs;
  for (std::size_t i = 0; i < kLayers.size(); ++i) {
    const Shape shape = expected_kernel_shape(i);
    const double fan_in = static_cast<double>(shape[1] * 9);
    std::normal_distribution<double> weight(0.0, std::sqrt(2.0 / fan_in));
    std::normal_distribution<double> bias_dist(0.0, 0.01);
    Tensor kernel(shape);
    for (float& w : kernel.values()) w = static_cast<float>(weight(rng));
    Tensor bias({shape[0]});
    for (float& b : bias.values()) b = static_cast<float>(bias_dist(rng));
    specs.push_back({std::move(kernel), std::move(bias)});
  }
  return make_model(std::move(specs), kImageNetMean);
}

template <typename T>
BasicTensor<T> preprocess(const BasicTensor<T>& image, const std::array<T, 3>& mean) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("preprocess expects an {H, W, 3} image, got " +
                     shape_to_string(image.shape()));
  }
  const std::size_t h = image.extent(0);
  const std::size_t w = image.extent(1);
  BasicTensor<T> out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out(c, y, x) = image(y, x, c) * T{255} - mean[c];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> postprocess(const BasicTensor<T>& features, const std::array<T, 3>& mean) {
  if (features.rank() != 3 || features.extent(0) != 3) {
    throw ShapeError("postprocess expects a {3, H, W} tensor, got " +
                     shape_to_string(features.shape()));
  }
  const std::size_t h = features.extent(1);
  const std::size_t w = features.extent(2);
  BasicTensor<T> out({h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out(y, x, c) = (features(c, y, x) + mean[c]) / T{255};
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> preprocess_grad(const BasicTensor<T>& upstream) {
  if (upstream.rank() != 3 || upstream.extent(0) != 3) {
    throw ShapeError("preprocess_grad expects a {3, H, W} tensor, got " +
                     shape_to_string(upstream.shape()));
  }
  const std::size_t h = upstream.extent(1);
  const std::size_t w = upstream.extent(2);
  BasicTensor<T> out({h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out(y, x, c) = upstream(c, y, x) * T{255};
    }
  }
  return out;
}

template <typename T>
FeatureCapture<T> ForwardTrace<T>::capture(std::span<const std::string> layers) const {
  FeatureCapture<T> out;
  for (const auto& name : layers) {
    const std::size_t index = layer_index(name);
    if (index >= depth) throw InputError("layer " + name + " was not evaluated in this trace");
    out.emplace(name, activations[index]);
  }
  return out;
}

template <typename T>
ForwardTrace<T> trace_forward(const BasicVggModel<T>& model, const BasicTensor<T>& image,
                              std::span<const std::string> capture_layers) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw ShapeError("forward expects a preprocessed {3, H, W} tensor, got " +
                     shape_to_string(image.shape()));
  }
  ForwardTrace<T> trace;
  trace.input = image;
  for (const auto& name : capture_layers) trace.depth = std::max(trace.depth, layer_index(name) + 1);
  trace.activations.reserve(trace.depth);
  for (std::size_t i = 0; i < trace.depth; ++i) {
    const auto& layer = model.layers()[i];
    const BasicTensor<T>& previous = i == 0 ? trace.input : trace.activations[i - 1];
    BasicTensor<T> conv;
    if (starts_block(i)) {
      auto pooled = model.pooling() == ops::PoolMode::Max ? ops::maxpool2(previous)
                                                          : ops::avgpool2(previous);
      conv = ops::conv2d(pooled.values, layer.spec);
    } else {
      conv = ops::conv2d(previous, layer.spec);
    }
    trace.activations.push_back(ops::relu(conv));
  }
  return trace;
}

template <typename T>
FeatureCapture<T> forward(const BasicVggModel<T>& model, const BasicTensor<T>& image,
                          std::span<const std::string> capture_layers) {
  return trace_forward(model, image, capture_layers).capture(capture_layers);
}

template <typename T>
BasicTensor<T> backward(const BasicVggModel<T>& model, const ForwardTrace<T>& trace,
                        const FeatureCapture<T>& layer_grads) {
  std::size_t deepest = 0;
  for (const auto& [name, grad] : layer_grads) {
    const std::size_t index = layer_index(name);
    if (index >= trace.depth) {
      throw InputError("gradient given for " + name + ", which the forward pass did not reach");
    }
    if (grad.shape() != trace.activations[index].shape()) {
      throw ShapeError("gradient for " + name + " is " + shape_to_string(grad.shape()) +
                       ", capture is " + shape_to_string(trace.activations[index].shape()));
    }
    deepest = std::max(deepest, index + 1);
  }
  if (deepest == 0) return BasicTensor<T>(trace.input.shape());

  BasicTensor<T> grad(trace.activations[deepest - 1].shape());
  for (std::size_t i = deepest; i-- > 0;) {
    const auto& layer = model.layers()[i];
    if (auto it = layer_grads.find(layer.name); it != layer_grads.end()) grad += it->second;
    grad = ops::relu_grad(trace.activations[i], grad);
    grad = ops::conv2d(grad, layer.input_grad_spec);
    if (starts_block(i)) {
      const auto& pool_input = trace.activations[i - 1];
      grad = model.pooling() == ops::PoolMode::Max ? ops::maxpool2_grad(pool_input, grad)
                                                   : ops::avgpool2_grad(pool_input, grad);
    }
  }
  return grad;
}

template <typename T>
BasicTensor<T> backward(const BasicVggModel<T>& model, const BasicTensor<T>& image,
                        const FeatureCapture<T>& layer_grads) {
  std::vector<std::string> layers;
  for (const auto& [name, grad] : layer_grads) layers.push_back(name);
  return backward(model, trace_forward(model, image, layers), layer_grads);
}

FeatureCapture<float> read_activations(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  char magic[4];
  if (!in.try_read(magic, 4) || std::memcmp(magic, "ACTV", 4) != 0) {
    throw FormatError(path.string() + ": not an activation file (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  if (!in.try_read(version) || !in.try_read(count)) {
    throw TruncationError(path.string() + ": truncated in header");
  }
  if (version != 1) throw FormatError(path.string() + ": unsupported activation file version");
  FeatureCapture<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = 0;
    if (!in.try_read(name_len)) throw TruncationError(path.string() + ": truncated entry");
    std::string name(name_len, '\0');
    std::array<std::uint32_t, 3> dims{};
    if (!in.try_read(name.data(), name_len) || !in.try_read(dims.data(), sizeof(dims))) {
      throw TruncationError(path.string() + ": truncated entry");
    }
    Tensor values(Shape(dims.begin(), dims.end()));
    if (!in.try_read(values.data(), values.size() * sizeof(float))) {
      throw TruncationError(path.string() + ": truncated in entry " + name);
    }
    out.emplace(std::move(name), std::move(values));
  }
  return out;
}

void write_activations(const FeatureCapture<float>& capture, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write("ACTV", 4);
  put(out, std::uint32_t{1});
  put(out, static_cast<std::uint32_t>(capture.size()));
  for (const auto& [name, values] : capture) {
    if (values.rank() != 3) throw ShapeError("activation " + name + " must be {N, H, W}");
    put_name(out, name);
    for (std::size_t d : values.shape()) put(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  }
  if (!out) throw InputError("failed writing " + path.string());
}

#define DPST_INSTANTIATE_VGG(T)                                                               \
  template class BasicVggModel<T>;                                                            \
  template struct ForwardTrace<T>;                                                            \
  template BasicVggModel<T> make_model(std::vector<ops::ConvSpec<T>>, std::array<T, 3>,       \
                                       ops::PoolMode);                                        \
  template BasicTensor<T> preprocess(const BasicTensor<T>&, const std::array<T, 3>&);         \
  template BasicTensor<T> postprocess(const BasicTensor<T>&, const std::array<T, 3>&);        \
  template BasicTensor<T> preprocess_grad(const BasicTensor<T>&);                             \
  template ForwardTrace<T> trace_forward(const BasicVggModel<T>&, const BasicTensor<T>&,      \
                                         std::span<const std::string>);                       \
  template FeatureCapture<T> forward(const BasicVggModel<T>&, const BasicTensor<T>&,          \
                                     std::span<const std::string>);                           \
  template BasicTensor<T> backward(const BasicVggModel<T>&, const ForwardTrace<T>&,           \
                                   const FeatureCapture<T>&);                                 \
  template BasicTensor<T> backward(const BasicVggModel<T>&, const BasicTensor<T>&,            \
                                   const FeatureCapture<T>&);

DPST_INSTANTIATE_VGG(float)
DPST_INSTANTIATE_VGG(double)

}  // namespace dpst::vgg
