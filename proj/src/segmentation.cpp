#include "dpst/segmentation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dpst/error.hpp"
#include "dpst/ops.hpp"
#include "dpst/vgg.hpp"

namespace dpst::segmentation {
namespace {

std::uint32_t pack(const Color& c) {
  return (std::uint32_t{c.r} << 16) | (std::uint32_t{c.g} << 8) | std::uint32_t{c.b};
}

Color parse_color(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  int v[3];
  char sep1 = 0, sep2 = 0;
  if (!(in >> v[0] >> sep1 >> v[1] >> sep2 >> v[2]) || sep1 != ',' || sep2 != ',') {
    throw FormatError(where + ": expected R,G,B color, got '" + text + "'");
  }
  std::string rest;
  if (in >> rest) throw FormatError(where + ": trailing characters after color");
  for (int x : v) {
    if (x < 0 || x > 255) throw FormatError(where + ": color component out of range");
  }
  return {static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]),
          static_cast<std::uint8_t>(v[2])};
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

std::string to_string(const Color& c) {
  return "(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")";
}

Palette::Palette(std::vector<PaletteEntry> entries, std::map<Color, std::size_t> aliases)
    : entries_(std::move(entries)), aliases_(std::move(aliases)) {
  for (const auto& [color, index] : aliases_) {
    if (index >= entries_.size()) throw InputError("palette alias " + to_string(color) + " points past the end");
  }
}

std::optional<std::size_t> Palette::find(const Color& color) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].color == color) return i;
  }
  if (auto it = aliases_.find(color); it != aliases_.end()) return it->second;
  return std::nullopt;
}

const Color& Palette::color_of(const ClassSet& classes) const {
  for (const auto& e : entries_) {
    if (e.classes == classes) return e.color;
  }
  throw InputError("class '" + classes.canonical_name() + "' has no palette color");
}

bool Palette::is_repaired() const {
  std::map<Color, int> colors;
  std::map<std::string, int> words;
  for (const auto& e : entries_) {
    if (colors[e.color]++) return false;
    for (const auto& w : e.classes.words()) {
      if (words[w]++) return false;
    }
  }
  return true;
}

Palette read_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open palette " + path.string());
  std::vector<PaletteEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(where + ": expected `R,G,B<TAB>words`");
    const Color color = parse_color(line.substr(0, tab), where);
    std::vector<std::string> words;
    std::istringstream parts(line.substr(tab + 1));
    std::string part;
    while (std::getline(parts, part, ';')) {
      if (part.find_first_not_of(" \t") == std::string::npos) continue;
      words.push_back(semantics::normalize_word(part));
    }
    if (words.empty()) throw FormatError(where + ": entry has no class words");
    entries.push_back({color, ClassSet(std::move(words))});
  }
  return Palette(std::move(entries));
}

void write_palette(const Palette& palette, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write palette " + path.string());
  auto line = [&out](const Color& c, const ClassSet& classes) {
    out << int{c.r} << ',' << int{c.g} << ',' << int{c.b} << '\t' << classes.canonical_name() << '\n';
  };
  for (const auto& e : palette.entries()) line(e.color, e.classes);
  for (const auto& [color, index] : palette.aliases()) line(color, palette.entries()[index].classes);
}

Palette repair_palette(const Palette& raw) {
  const auto& entries = raw.entries();
  const std::size_t n = entries.size();
  if (n == 0) throw InputError("palette is empty");

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto unite = [&parent](std::size_t a, std::size_t b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  std::map<Color, std::size_t> first_color;
  std::map<std::string, std::size_t> first_word;
  for (std::size_t i = 0; i < n; ++i) {
    auto [cit, new_color] = first_color.try_emplace(entries[i].color, i);
    if (!new_color) unite(cit->second, i);
    for (const auto& w : entries[i].classes.words()) {
      auto [wit, new_word] = first_word.try_emplace(w, i);
      if (!new_word) unite(wit->second, i);
    }
  }

  // Roots are the smallest index of each group, so iterating in order keeps first positions.
  std::vector<std::size_t> new_index(n);
  std::vector<Color> colors;
  std::vector<std::vector<std::string>> words;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find_root(parent, i);
    if (r == i) {
      new_index[i] = colors.size();
      colors.push_back(entries[i].color);
      words.emplace_back();
    } else {
      new_index[i] = new_index[r];
    }
    auto& w = words[new_index[i]];
    w.insert(w.end(), entries[i].classes.words().begin(), entries[i].classes.words().end());
  }

  std::vector<PaletteEntry> merged;
  for (std::size_t k = 0; k < colors.size(); ++k) merged.push_back({colors[k], ClassSet(std::move(words[k]))});

  std::map<Color, std::size_t> aliases;
  auto add_alias = [&](const Color& c, std::size_t target) {
    if (c != merged[target].color) aliases.emplace(c, target);
  };
  for (std::size_t i = 0; i < n; ++i) add_alias(entries[i].color, new_index[i]);
  for (const auto& [c, old] : raw.aliases()) add_alias(c, new_index[old]);
  // a color can only alias when it is not some kept entry's own color
  for (const auto& e : merged) aliases.erase(e.color);
  return Palette(std::move(merged), std::move(aliases));
}

SegmentationMap segment(const image::RgbImage& image, const Palette& palette) {
  std::unordered_map<std::uint32_t, std::size_t> lookup;
  for (const auto& [color, index] : palette.aliases()) lookup[pack(color)] = index;
  for (std::size_t i = palette.size(); i-- > 0;) lookup[pack(palette.entries()[i].color)] = i;

  const std::size_t n = image.width * image.height;
  std::vector<std::size_t> entry_of(n);
  std::vector<bool> present(palette.size(), false);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(x, y);
      const Color c{p[0], p[1], p[2]};
      auto it = lookup.find(pack(c));
      if (it == lookup.end()) {
        throw InputError("segmentation color " + to_string(c) + " at pixel (x=" + std::to_string(x) +
                         ", y=" + std::to_string(y) + ") is not in the palette");
      }
      entry_of[y * image.width + x] = it->second;
      present[it->second] = true;
    }
  }

  SegmentationMap map{image.width, image.height, std::vector<std::uint32_t>(n), {}};
  for (std::size_t i = 0; i < palette.size(); ++i) {
    if (present[i]) map.classes.push_back(palette.entries()[i].classes);
  }
  std::sort(map.classes.begin(), map.classes.end());
  map.classes.erase(std::unique(map.classes.begin(), map.classes.end()), map.classes.end());
  std::vector<std::uint32_t> label_of(palette.size(), 0);
  for (std::size_t i = 0; i < palette.size(); ++i) {
    if (!present[i]) continue;
    const auto pos = std::lower_bound(map.classes.begin(), map.classes.end(), palette.entries()[i].classes);
    label_of[i] = static_cast<std::uint32_t>(pos - map.classes.begin());
  }
  for (std::size_t p = 0; p < n; ++p) map.labels[p] = label_of[entry_of[p]];
  return map;
}

SegmentationMap load_segmentation(const std::filesystem::path& path, const Palette& palette) {
  return segment(image::read_lossless_image(path), palette);
}

image::RgbImage render(const SegmentationMap& map, const std::map<ClassSet, Color>& colors) {
  std::vector<Color> by_label;
  for (const auto& c : map.classes) {
    auto it = colors.find(c);
    if (it == colors.end()) throw InputError("no render color for class '" + c.canonical_name() + "'");
    by_label.push_back(it->second);
  }
  image::RgbImage out{map.width, map.height, std::vector<std::uint8_t>(map.width * map.height * 3)};
  for (std::size_t p = 0; p < map.labels.size(); ++p) {
    const Color& c = by_label.at(map.labels[p]);
    out.pixels[3 * p] = c.r;
    out.pixels[3 * p + 1] = c.g;
    out.pixels[3 * p + 2] = c.b;
  }
  return out;
}

image::RgbImage render(const SegmentationMap& map, const Palette& palette) {
  std::map<ClassSet, Color> colors;
  for (const auto& c : map.classes) colors.emplace(c, palette.color_of(c));
  return render(map, colors);
}

SegmentationMap relabel(const SegmentationMap& map, const semantics::ClassMapping& mapping,
                        const std::vector<ClassSet>& table) {
  if (!std::is_sorted(table.begin(), table.end()) ||
      std::adjacent_find(table.begin(), table.end()) != table.end()) {
    throw InputError("relabel target table must be sorted and unique");
  }
  std::vector<std::uint32_t> translate;
  for (const auto& c : map.classes) {
    auto it = mapping.find(c);
    if (it == mapping.end()) throw InputError("class '" + c.canonical_name() + "' missing from the grouping");
    auto pos = std::lower_bound(table.begin(), table.end(), it->second);
    if (pos == table.end() || *pos != it->second) {
      throw InputError("grouped class '" + it->second.canonical_name() + "' missing from the shared table");
    }
    translate.push_back(static_cast<std::uint32_t>(pos - table.begin()));
  }
  SegmentationMap out{map.width, map.height, map.labels, table};
  for (auto& l : out.labels) l = translate.at(l);
  return out;
}

template <typename T>
BasicTensor<T> binary_masks(const SegmentationMap& map) {
  const std::size_t n = map.width * map.height;
  if (map.labels.size() != n) throw ShapeError("segmentation label count does not match its size");
  BasicTensor<T> masks({map.classes.size(), map.height, map.width});
  for (std::size_t p = 0; p < n; ++p) {
    if (map.labels[p] >= map.classes.size()) throw InputError("segmentation label out of range");
    masks[map.labels[p] * n + p] = T{1};
  }
  return masks;
}

template <typename T>
MaskPyramid<T> build_mask_pyramid(const BasicTensor<T>& masks, std::span<const std::string> layers,
                                  std::size_t height, std::size_t width) {
  if (masks.rank() != 3 || masks.extent(1) != height || masks.extent(2) != width) {
    throw ShapeError("masks " + shape_to_string(masks.shape()) + " do not match the image grid " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<BasicTensor<T>> levels{masks};
  MaskPyramid<T> pyramid;
  for (const auto& layer : layers) {
    const std::size_t pools = vgg::layer_block(layer) - 1;
    while (levels.size() <= pools) levels.push_back(ops::avgpool2(levels.back()).values);
    pyramid.emplace(layer, levels[pools]);
  }
  return pyramid;
}

template BasicTensor<float> binary_masks<float>(const SegmentationMap&);
template BasicTensor<double> binary_masks<double>(const SegmentationMap&);
template MaskPyramid<float> build_mask_pyramid<float>(const BasicTensor<float>&, std::span<const std::string>,
                                                      std::size_t, std::size_t);
template MaskPyramid<double> build_mask_pyramid<double>(const BasicTensor<double>&, std::span<const std::string>,
                                                        std::size_t, std::size_t);

}  // namespace dpst::segmentation
