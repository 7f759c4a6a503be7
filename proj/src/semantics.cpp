#include "dpst/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "dpst/error.hpp"

namespace dpst::semantics {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Tab-separated two-column file; blank lines and '#' lines skipped.
std::vector<std::pair<std::string, std::string>> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected two tab-separated fields");
    }
    std::string a = trim(std::string_view(line).substr(0, tab));
    std::string b = trim(std::string_view(line).substr(tab + 1));
    if (a.empty() || b.empty() || b.find('\t') != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed line");
    }
    rows.emplace_back(std::move(a), std::move(b));
  }
  return rows;
}

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

std::vector<ClassSet> unique_sorted(std::vector<ClassSet> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

std::string normalize_word(std::string_view raw, const Substitutions& substitutions) {
  std::istringstream parts{std::string(raw)};
  std::string part;
  std::string word;
  while (parts >> part) {
    if (!word.empty()) word += '_';
    word += part;
  }
  if (word.empty()) throw InputError("empty class word");
  std::transform(word.begin(), word.end(), word.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (auto it = substitutions.find(word); it != substitutions.end()) return it->second;
  return word;
}

Substitutions load_substitutions(const std::filesystem::path& path) {
  Substitutions out;
  for (auto& [from, to] : read_pairs(path)) out[normalize_word(from)] = normalize_word(to);
  return out;
}

ClassSet::ClassSet(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.empty()) throw InputError("class set must contain at least one word");
  for (const auto& w : words_) {
    const bool bad = w.empty() || std::any_of(w.begin(), w.end(), [](unsigned char c) {
                       return std::isspace(c) || std::isupper(c) || c == ';';
                     });
    if (bad) throw InputError("class word '" + w + "' is not normalized");
  }
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  for (const auto& w : words_) {
    if (!name_.empty()) name_ += ';';
    name_ += w;
  }
}

bool ClassSet::contains(const std::string& word) const {
  return std::binary_search(words_.begin(), words_.end(), word);
}

ClassSet ClassSet::united(const ClassSet& other) const {
  std::vector<std::string> all = words_;
  all.insert(all.end(), other.words_.begin(), other.words_.end());
  return ClassSet(std::move(all));
}

Taxonomy Taxonomy::from_edges(const std::vector<std::pair<std::string, std::string>>& edges) {
  Taxonomy t;
  auto intern = [&t](const std::string& w) {
    auto [it, inserted] = t.ids_.try_emplace(w, t.names_.size());
    if (inserted) {
      t.names_.push_back(w);
      t.parents_.emplace_back();
    }
    return it->second;
  };
  for (const auto& [child, parent] : edges) {
    if (child == parent) throw FormatError("taxonomy edge from '" + child + "' to itself");
    const std::size_t c = intern(child);
    const std::size_t p = intern(parent);
    auto& ps = t.parents_[c];
    if (std::find(ps.begin(), ps.end(), p) == ps.end()) ps.push_back(p);
  }
  if (t.names_.empty()) throw FormatError("taxonomy is empty");

  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < t.names_.size(); ++i) {
    if (t.parents_[i].empty()) roots.push_back(i);
  }
  if (roots.size() != 1) {
    std::string msg = "taxonomy must have exactly one root, found " + std::to_string(roots.size());
    for (std::size_t i = 0; i < roots.size() && i < 5; ++i) msg += (i ? ", " : ": ") + t.names_[roots[i]];
    throw FormatError(msg);
  }
  t.root_ = roots.front();

  // Longest chain to the root, with cycle detection (0 = unvisited, 1 = on stack, 2 = done).
  const std::size_t n = t.names_.size();
  t.depth_.assign(n, 0);
  std::vector<int> state(n, 0);
  for (std::size_t start = 0; start < n; ++start) {
    if (state[start] == 2) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
    state[start] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < t.parents_[node].size()) {
        const std::size_t p = t.parents_[node][next++];
        if (state[p] == 1) throw FormatError("taxonomy contains a cycle through '" + t.names_[p] + "'");
        if (state[p] == 0) {
          state[p] = 1;
          stack.emplace_back(p, 0);
        }
        continue;
      }
      std::size_t d = 1;
      for (std::size_t p : t.parents_[node]) d = std::max(d, t.depth_[p] + 1);
      t.depth_[node] = d;
      state[node] = 2;
      stack.pop_back();
    }
  }

  t.ancestors_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> dist(n, SIZE_MAX);
    std::deque<std::size_t> queue{i};
    dist[i] = 0;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      for (std::size_t p : t.parents_[v]) {
        if (dist[p] == SIZE_MAX) {
          dist[p] = dist[v] + 1;
          queue.push_back(p);
        }
      }
    }
    for (std::size_t a = 0; a < n; ++a) {
      if (dist[a] != SIZE_MAX) t.ancestors_[i].emplace_back(a, dist[a]);
    }
  }
  return t;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  return from_edges(read_pairs(path));
}

std::size_t Taxonomy::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw UnknownWordError(word);
  return it->second;
}

std::size_t Taxonomy::depth(const std::string& word) const { return depth_[id(word)]; }

std::size_t Taxonomy::path_length(const std::string& w1, const std::string& w2) const {
  const auto& a = ancestors_[id(w1)];
  const auto& b = ancestors_[id(w2)];
  std::size_t best = SIZE_MAX;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i].first < b[j].first) {
      ++i;
    } else if (b[j].first < a[i].first) {
      ++j;
    } else {
      best = std::min(best, a[i].second + b[j].second);
      ++i;
      ++j;
    }
  }
  return best;
}

std::size_t Taxonomy::subsumer_depth(const std::string& w1, const std::string& w2) const {
  const auto& a = ancestors_[id(w1)];
  const auto& b = ancestors_[id(w2)];
  std::size_t best = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i].first < b[j].first) {
      ++i;
    } else if (b[j].first < a[i].first) {
      ++j;
    } else {
      best = std::max(best, depth_[a[i].first]);
      ++i;
      ++j;
    }
  }
  return best;
}

double word_similarity(const Taxonomy& taxonomy, const std::string& w1, const std::string& w2,
                       const LiParameters& params) {
  if (!taxonomy.contains(w1)) throw UnknownWordError(w1);
  if (!taxonomy.contains(w2)) throw UnknownWordError(w2);
  if (w1 == w2) return 1.0;
  const double l = static_cast<double>(taxonomy.path_length(w1, w2));
  const double h = static_cast<double>(taxonomy.subsumer_depth(w1, w2));
  return std::exp(-params.path_decay * l) * std::tanh(params.depth_scaling * h);
}

WordSimilarity taxonomy_similarity(const Taxonomy& taxonomy, Substitutions substitutions,
                                   LiParameters params) {
  // shared copy so the callable may outlive its argument
  auto tax = std::make_shared<const Taxonomy>(taxonomy);
  return [tax, subs = std::move(substitutions), params](const std::string& a, const std::string& b) {
    auto map = [&subs](const std::string& w) -> const std::string& {
      auto it = subs.find(w);
      return it == subs.end() ? w : it->second;
    };
    return word_similarity(*tax, map(a), map(b), params);
  };
}

double class_similarity(const WordSimilarity& sim, const ClassSet& l1, const ClassSet& l2) {
  double best = 0.0;
  for (const auto& a : l1.words()) {
    for (const auto& b : l2.words()) best = std::max(best, sim(a, b));
  }
  return best;
}

Relabeling difference_merge(const WordSimilarity& sim, const std::vector<ClassSet>& from,
                            const std::vector<ClassSet>& onto) {
  if (onto.empty()) throw InputError("difference merge needs a nonempty target class table");
  const std::vector<ClassSet> targets = unique_sorted(onto);
  Relabeling out;
  for (const auto& c : from) {
    if (out.mapping.contains(c)) continue;
    if (std::binary_search(targets.begin(), targets.end(), c)) {
      out.mapping.emplace(c, c);
      continue;
    }
    // targets are sorted, so the first strict maximum is the smallest name among ties
    const ClassSet* best = &targets.front();
    double best_score = class_similarity(sim, c, *best);
    for (std::size_t i = 1; i < targets.size(); ++i) {
      const double s = class_similarity(sim, c, targets[i]);
      if (s > best_score) {
        best_score = s;
        best = &targets[i];
      }
    }
    out.mapping.emplace(c, *best);
  }
  for (const auto& [src, dst] : out.mapping) out.classes.push_back(dst);
  out.classes = unique_sorted(std::move(out.classes));
  return out;
}

Relabeling class_reduction(const WordSimilarity& sim, const std::vector<ClassSet>& classes,
                           double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InputError("semantic threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  const std::vector<ClassSet> input = unique_sorted(classes);
  const std::size_t k = input.size();
  DisjointSets sets(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (sets.find(i) == sets.find(j)) continue;
      bool linked = false;
      for (const auto& a : input[i].words()) {
        for (const auto& b : input[j].words()) {
          // a shared word is one node of the word graph
          if (a == b || sim(a, b) > threshold) {
            linked = true;
            break;
          }
        }
        if (linked) break;
      }
      if (linked) sets.unite(i, j);
    }
  }
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < k; ++i) {
    auto& words = groups[sets.find(i)];
    words.insert(words.end(), input[i].words().begin(), input[i].words().end());
  }
  std::map<std::size_t, ClassSet> merged;
  for (auto& [root, words] : groups) merged.emplace(root, ClassSet(std::move(words)));
  Relabeling out;
  for (std::size_t i = 0; i < k; ++i) out.mapping.emplace(input[i], merged.at(sets.find(i)));
  for (const auto& [root, c] : merged) out.classes.push_back(c);
  out.classes = unique_sorted(std::move(out.classes));
  return out;
}

Grouping group_semantics(const WordSimilarity& sim, const std::vector<ClassSet>& content_classes,
                         const std::vector<ClassSet>& style_classes, double threshold) {
  if (content_classes.empty() || style_classes.empty()) {
    throw InputError("semantic grouping needs nonempty content and style class tables");
  }
  const Relabeling style_step = difference_merge(sim, style_classes, content_classes);
  const Relabeling content_step = difference_merge(sim, content_classes, style_step.classes);
  const Relabeling reduced = class_reduction(sim, content_step.classes, threshold);

  Grouping out;
  for (const auto& [src, mid] : content_step.mapping) out.content_mapping.emplace(src, reduced.mapping.at(mid));
  for (const auto& [src, mid] : style_step.mapping) {
    // mid is a content class; it maps onto the shared table through the content step
    out.style_mapping.emplace(src, reduced.mapping.at(content_step.mapping.at(mid)));
  }
  out.classes = reduced.classes;
  return out;
}

}  // namespace dpst::semantics
