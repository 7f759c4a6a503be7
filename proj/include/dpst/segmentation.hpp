#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpst/image_io.hpp"
#include "dpst/semantics.hpp"
#include "dpst/tensor.hpp"

namespace dpst::segmentation {

using semantics::ClassSet;

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  auto operator<=>(const Color&) const = default;
};

std::string to_string(const Color& c);

struct PaletteEntry {
  Color color;
  ClassSet classes;
};

/// Color <-> class lookup. A repaired palette has unique colors and pairwise
/// disjoint word sets; colors dropped during repair remain as aliases of the
/// entry they were merged into.
class Palette {
 public:
  Palette() = default;
  explicit Palette(std::vector<PaletteEntry> entries, std::map<Color, std::size_t> aliases = {});

  const std::vector<PaletteEntry>& entries() const noexcept { return entries_; }
  const std::map<Color, std::size_t>& aliases() const noexcept { return aliases_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Entry index for a color, following aliases.
  std::optional<std::size_t> find(const Color& color) const;
  /// Color of the entry whose word set equals `classes`; throws InputError otherwise.
  const Color& color_of(const ClassSet& classes) const;

  /// True when colors are unique and word sets pairwise disjoint.
  bool is_repaired() const;

 private:
  std::vector<PaletteEntry> entries_;
  std::map<Color, std::size_t> aliases_;
};

/// Text format, one entry per line: `R,G,B<TAB>word[;word...]`. Words are
/// normalized on read. '#' starts a comment line.
Palette read_palette(const std::filesystem::path& path);
/// Writes entries, then every alias as a line repeating its entry's words.
void write_palette(const Palette& palette, const std::filesystem::path& path);

/// Merges entries sharing a color or any word. The merged entry sits at the
/// position of its first member, keeps that member's color and takes the
/// union of all words. Throws InputError on an empty palette.
Palette repair_palette(const Palette& raw);

/// Per-pixel class index plus the class table (sorted by canonical name).
struct SegmentationMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint32_t> labels;  // row-major, each < classes.size()
  std::vector<ClassSet> classes;
};

/// Classifies every pixel through the palette; only present classes are kept.
/// Throws InputError naming the first off-palette color and its position.
SegmentationMap segment(const image::RgbImage& image, const Palette& palette);
SegmentationMap load_segmentation(const std::filesystem::path& path, const Palette& palette);

/// Paints each pixel with its class color.
image::RgbImage render(const SegmentationMap& map, const std::map<ClassSet, Color>& colors);
image::RgbImage render(const SegmentationMap& map, const Palette& palette);

/// Maps every class through `mapping` onto `table` (sorted, unique); classes
/// of `table` absent from the image keep empty masks.
SegmentationMap relabel(const SegmentationMap& map, const semantics::ClassMapping& mapping,
                        const std::vector<ClassSet>& table);

/// One-hot masks {C, H, W}.
template <typename T>
BasicTensor<T> binary_masks(const SegmentationMap& map);

/// Masks {C, h, w} on each captured layer's grid, keyed by layer name.
template <typename T>
using MaskPyramid = std::map<std::string, BasicTensor<T>>;

/// Average-pools the full-resolution masks once per pooling stage preceding
/// each layer. Throws ShapeError if masks are not {C, height, width}.
template <typename T>
MaskPyramid<T> build_mask_pyramid(const BasicTensor<T>& masks, std::span<const std::string> layers,
                                  std::size_t height, std::size_t width);

}  // namespace dpst::segmentation
