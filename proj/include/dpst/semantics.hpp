#pragma once

#include <compare>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <initializer_list>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dpst::semantics {

using Substitutions = std::map<std::string, std::string>;

/// Lowercases, joins whitespace-separated parts with '_', then applies the
/// substitution table. Throws InputError on blank input.
std::string normalize_word(std::string_view raw, const Substitutions& substitutions = {});

/// Reads `from<TAB>to` lines; '#' starts a comment line.
Substitutions load_substitutions(const std::filesystem::path& path);

/// Nonempty set of normalized words naming one segmentation class. Ordered
/// and compared by its canonical name (sorted words joined by ';').
class ClassSet {
 public:
  explicit ClassSet(std::vector<std::string> words);
  ClassSet(std::initializer_list<std::string> words)
      : ClassSet(std::vector<std::string>(words)) {}

  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::string& canonical_name() const noexcept { return name_; }
  bool contains(const std::string& word) const;

  ClassSet united(const ClassSet& other) const;

  bool operator==(const ClassSet& other) const { return name_ == other.name_; }
  std::strong_ordering operator<=>(const ClassSet& other) const { return name_ <=> other.name_; }

 private:
  std::vector<std::string> words_;  // sorted, unique
  std::string name_;
};

/// Rooted hypernym DAG over words. depth(root) = 1 and depth(w) is one more
/// than the longest hypernym chain from w up to the root.
class Taxonomy {
 public:
  /// Edges are (child, parent). Requires exactly one root and no cycles.
  static Taxonomy from_edges(const std::vector<std::pair<std::string, std::string>>& edges);
  /// Reads `child<TAB>parent` lines; '#' starts a comment line.
  static Taxonomy load(const std::filesystem::path& path);

  bool contains(const std::string& word) const { return ids_.contains(word); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::string& root() const { return names_[root_]; }
  std::vector<std::string> words() const { return names_; }

  std::size_t depth(const std::string& word) const;
  /// Fewest edges from w1 up to a common ancestor and down to w2.
  std::size_t path_length(const std::string& w1, const std::string& w2) const;
  /// Depth of the deepest common ancestor.
  std::size_t subsumer_depth(const std::string& w1, const std::string& w2) const;

 private:
  std::size_t id(const std::string& word) const;

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::size_t> depth_;
  // (ancestor id, fewest upward edges), sorted by id; includes the node itself
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> ancestors_;
  std::size_t root_ = 0;
};

struct LiParameters {
  double path_decay = 0.2;    // a
  double depth_scaling = 0.6;  // b
};

/// exp(-a * path_length) * tanh(b * subsumer_depth); identical words score 1.
/// Throws UnknownWordError for words missing from the taxonomy.
double word_similarity(const Taxonomy& taxonomy, const std::string& w1, const std::string& w2,
                       const LiParameters& params = {});

using WordSimilarity = std::function<double(const std::string&, const std::string&)>;

/// word_similarity after mapping each word through the substitution table.
WordSimilarity taxonomy_similarity(const Taxonomy& taxonomy, Substitutions substitutions = {},
                                   LiParameters params = {});

/// Maximum word similarity over the cross product of the two sets.
double class_similarity(const WordSimilarity& sim, const ClassSet& l1, const ClassSet& l2);

using ClassMapping = std::map<ClassSet, ClassSet>;

/// Classes after a relabeling step together with the mapping that produced them.
struct Relabeling {
  std::vector<ClassSet> classes;  // sorted by canonical name, unique
  ClassMapping mapping;           // every input class -> its output class
};

/// Replaces each class of `from` missing in `onto` by its most similar class
/// of `onto` (ties: smallest canonical name); shared classes map to themselves.
Relabeling difference_merge(const WordSimilarity& sim, const std::vector<ClassSet>& from,
                            const std::vector<ClassSet>& onto);

/// Merges classes connected by word pairs with similarity strictly above
/// `threshold`; every connected component becomes the union of its word sets.
Relabeling class_reduction(const WordSimilarity& sim, const std::vector<ClassSet>& classes,
                           double threshold);

struct Grouping {
  ClassMapping content_mapping;  // original content class -> merged class
  ClassMapping style_mapping;    // original style class -> merged class
  std::vector<ClassSet> classes;  // shared merged class table, sorted
};

/// Difference merge of the style classes onto the content classes, then of
/// the content classes onto that result, then class reduction of the shared table.
Grouping group_semantics(const WordSimilarity& sim, const std::vector<ClassSet>& content_classes,
                         const std::vector<ClassSet>& style_classes, double threshold);

}  // namespace dpst::semantics
