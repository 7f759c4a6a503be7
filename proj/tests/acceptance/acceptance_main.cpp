// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "dpst/job.hpp"
#include "dpst/optimizer.hpp"
#include "dpst/segmentation.hpp"
#include "dpst/semantics.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dpst;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

// ------------------------------------------------------------------ criteria

Outcome gradient_suite() {
  Outcome o;
  const auto start = Clock::now();
  std::ostringstream errs;
  for (const char* term : {"content", "style", "photorealism", "assessment"}) {
    const auto p = testing::small_problem(testing::single_term(term), 8, 8, 101);
    const double e = testing::objective_gradient_error(p.objective, p.image);
    errs << term << "=" << e << " ";
    o.require(e < 1e-3, std::string(term) + " gradient error " + std::to_string(e));
  }
  const auto p = testing::small_problem(losses::LossConfig::standard(), 8, 8, 102);
  const double e = testing::objective_gradient_error(p.objective, p.image);
  errs << "total=" << e;
  o.require(e < 1e-3, "total gradient error " + std::to_string(e));
  const double t = seconds_since(start);
  o.require(t < 120.0, "took " + std::to_string(t) + " s");
  if (o.pass) o.detail = errs.str() + " in " + std::to_string(t) + " s";
  return o;
}

Outcome matting_oracle() {
  Outcome o;
  std::mt19937_64 rng(103);
  double worst_diff = 0.0, worst_row = 0.0, worst_quad = 0.0;
  std::size_t widest = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = testing::random_tensor<double>({6, 6, 3}, rng, 0.0, 1.0);
    const auto lap = matting::build_matting_laplacian(img);
    const auto dense = oracle::dense_laplacian(img, 1e-7);
    const auto d = lap.to_dense();
    for (std::size_t i = 0; i < 36; ++i) {
      for (std::size_t j = 0; j < 36; ++j) {
        worst_diff = std::max(worst_diff, std::abs(d(i, j) - dense(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
      }
    }
    for (std::size_t r = 0; r < 36; ++r) {
      double s = 0.0;
      for (auto k = lap.row_ptr()[r]; k < lap.row_ptr()[r + 1]; ++k) s += lap.values()[k];
      worst_row = std::max(worst_row, std::abs(s));
      widest = std::max(widest, lap.row_nnz(r));
    }
    std::normal_distribution<double> g;
    for (int k = 0; k < 100; ++k) {
      std::vector<double> x(36);
      double norm = 0.0;
      for (auto& v : x) {
        v = g(rng);
        norm += v * v;
      }
      for (auto& v : x) v /= std::sqrt(norm);
      worst_quad = std::min(worst_quad, lap.quadratic_form(x));
    }
  }
  o.require(worst_diff < 1e-10, "max abs diff " + std::to_string(worst_diff));
  o.require(worst_row < 1e-8, "row sum " + std::to_string(worst_row));
  o.require(worst_quad >= -1e-8, "quadratic form " + std::to_string(worst_quad));
  o.require(widest <= 25, "row nnz " + std::to_string(widest));
  if (o.pass) {
    std::ostringstream s;
    s << "max diff " << worst_diff << ", max row sum " << worst_row << ", min xLx " << worst_quad << ", max row nnz "
      << widest;
    o.detail = s.str();
  }
  return o;
}

Outcome affine_null_space() {
  Outcome o;
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_ratio = 0.0;
  for (std::size_t side : {6u, 12u, 32u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto img = testing::random_tensor<double>({side, side, 3}, rng, 0.0, 1.0);
      const auto lap = matting::build_matting_laplacian(img);
      double a[3][3], b[3];
      for (auto& row : a) {
        for (auto& v : row) v = u(rng);
      }
      for (auto& v : b) v = u(rng);
      TensorD out(img.shape());
      const std::size_t n = side * side;
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          out[3 * p + c] = b[c] + a[c][0] * img[3 * p] + a[c][1] * img[3 * p + 1] + a[c][2] * img[3 * p + 2];
        }
      }
      const double lm = matting::affine_loss(lap, out);
      worst_ratio = std::max(worst_ratio, lm / static_cast<double>(n));
      o.require(lm <= 1e-4 * static_cast<double>(n), "L_m " + std::to_string(lm) + " for n=" + std::to_string(n));
    }
  }
  if (o.pass) {
    std::ostringstream s;
    s << "max L_m/n " << worst_ratio;
    o.detail = s.str();
  }
  return o;
}

std::vector<semantics::ClassSet> to_classes(const std::vector<oracle::Words>& v) {
  std::vector<semantics::ClassSet> out;
  for (const auto& w : v) out.push_back(oracle::to_class(w));
  return out;
}

std::map<semantics::ClassSet, semantics::ClassSet> to_mapping(const std::map<oracle::Words, oracle::Words>& m) {
  std::map<semantics::ClassSet, semantics::ClassSet> out;
  for (const auto& [k, v] : m) out.emplace(oracle::to_class(k), oracle::to_class(v));
  return out;
}

Outcome grouping_oracle() {
  Outcome o;
  std::mt19937_64 rng(105);
  const std::vector<double> thetas{0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0};
  std::size_t merges_at_default = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto toy = oracle::random_taxonomy(rng);
    const auto tax = semantics::Taxonomy::from_edges(toy.edges());
    const oracle::LiOracle li(toy);
    const auto inst = oracle::random_instance(rng, toy);
    const auto sim = semantics::taxonomy_similarity(tax);
    std::vector<semantics::Grouping> results;
    for (double theta : thetas) {
      const auto got = semantics::group_semantics(sim, to_classes(inst.content), to_classes(inst.style), theta);
      const auto want = oracle::group_semantics(li, inst.content, inst.style, theta);
      const bool same = got.classes == to_classes(want.classes) &&
                        got.content_mapping == to_mapping(want.content_mapping) &&
                        got.style_mapping == to_mapping(want.style_mapping);
      o.require(same, "instance " + std::to_string(trial) + " differs at theta " + std::to_string(theta));
      results.push_back(got);
    }
    for (std::size_t i = 0; i + 1 < results.size(); ++i) {
      const auto& coarse = results[i].content_mapping;
      const auto& fine = results[i + 1].content_mapping;
      for (const auto& [k1, v1] : fine) {
        for (const auto& [k2, v2] : fine) {
          if (v1 == v2) o.require(coarse.at(k1) == coarse.at(k2), "refinement broken in instance " + std::to_string(trial));
        }
      }
    }
    // theta = 1: reduction is the identity on the merged table
    const auto pre = oracle::difference_merge(li, inst.content, oracle::difference_merge(li, inst.style, inst.content).classes);
    o.require(results.back().classes == to_classes(pre.classes), "theta=1 merged classes in instance " + std::to_string(trial));
    const auto& at_default = results[4];
    if (at_default.classes.size() < pre.classes.size()) ++merges_at_default;
  }
  if (o.pass) o.detail = "200 instances x 8 thresholds; theta=0.6 merged classes in " + std::to_string(merges_at_default);
  return o;
}

Outcome li_points() {
  Outcome o;
  const auto t = semantics::Taxonomy::from_edges(
      {{"water", "entity"}, {"river", "water"}, {"sea", "water"}, {"rock", "entity"}, {"idea", "entity"}});
  const double a = semantics::word_similarity(t, "river", "sea");
  const double b = semantics::word_similarity(t, "rock", "idea");
  const double c = semantics::word_similarity(t, "sea", "sea");
  const auto round4 = [](double v) { return std::round(v * 1e4) / 1e4; };
  o.require(round4(a) == 0.5588, "river/sea " + std::to_string(a));
  o.require(round4(b) == 0.3600, "rock/idea " + std::to_string(b));
  o.require(c == 1.0, "sea/sea " + std::to_string(c));
  std::ostringstream s;
  s.precision(6);
  s << "sim(river,sea)=" << a << " sim(rock,idea)=" << b << " sim(sea,sea)=" << c;
  if (o.pass) o.detail = s.str();
  return o;
}

Outcome single_class_reduction() {
  Outcome o;
  std::mt19937_64 rng(106);
  const losses::LayerWeights beta{{"conv1_1", 20}, {"conv2_1", 20}, {"conv3_1", 20}, {"conv4_1", 20}, {"conv5_1", 20}};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    vgg::FeatureCapture<double> out, style;
    segmentation::MaskPyramid<double> om, sm;
    std::uniform_int_distribution<std::size_t> ext(1, 9);
    for (const auto& [layer, w] : beta) {
      const std::size_t n = 2 + ext(rng);
      const std::size_t h1 = ext(rng), w1 = ext(rng), h2 = ext(rng), w2 = ext(rng);
      out[layer] = testing::random_tensor<double>({n, h1, w1}, rng, 0.0, 3.0);
      style[layer] = testing::random_tensor<double>({n, h2, w2}, rng, 0.0, 3.0);
      om[layer] = TensorD({1, h1, w1}, 1.0);
      sm[layer] = TensorD({1, h2, w2}, 1.0);
    }
    const double plain = losses::style_loss(out, style, beta).value;
    const double aug = losses::augmented_style_loss(out, style, om, sm, beta).value;
    const double rel = std::abs(aug - plain) / std::max(std::abs(plain), 1e-300);
    worst = std::max(worst, rel);
  }
  o.require(worst < 1e-6, "relative difference " + std::to_string(worst));
  if (o.pass) {
    std::ostringstream s;
    s << "max relative difference " << worst << " over 20 captures";
    o.detail = s.str();
  }
  return o;
}

Outcome adam_closed_form() {
  Outcome o;
  optimizer::AdamState<double> s(Shape{1});
  TensorD x({1}, 0.0);
  optimizer::adam_step(s, x, TensorD({1}, 2.0));
  o.require(std::abs(x[0] + 1.0) < 1e-6, "first step x=" + std::to_string(x[0]));

  std::mt19937_64 rng(107);
  auto y = testing::random_tensor<double>({32}, rng);
  const auto before = y;
  optimizer::AdamState<double> z(Shape{32});
  for (int i = 0; i < 5; ++i) optimizer::adam_step(z, y, TensorD({32}));
  o.require(y == before, "zero gradient moved parameters");
  std::ostringstream d;
  d.precision(12);
  d << "x after first step " << x[0];
  if (o.pass) o.detail = d.str();
  return o;
}

// 96 px scene: content with sky/sea/sand bands, style with sky/sea bands.
image::RgbImage scene(std::size_t side, bool style) {
  image::RgbImage img{side, side, std::vector<std::uint8_t>(side * side * 3)};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double fy = static_cast<double>(y) / side, fx = static_cast<double>(x) / side;
      double r, g, b;
      if (!style) {
        if (fy < 1.0 / 3) r = 0.45 + 0.2 * fy, g = 0.65 + 0.1 * fx, b = 0.95;
        else if (fy < 2.0 / 3) r = 0.1, g = 0.35 + 0.1 * std::sin(20 * fx), b = 0.6;
        else r = 0.85, g = 0.75 + 0.05 * std::sin(15 * fx + 9 * fy), b = 0.5;
      } else {
        if (fy < 0.5) r = 0.95, g = 0.55 + 0.3 * fy, b = 0.35;
        else r = 0.15 + 0.1 * std::sin(30 * fx), g = 0.2, b = 0.45 + 0.2 * std::cos(25 * fy);
      }
      const double v[3] = {r, g, b};
      for (int c = 0; c < 3; ++c) img.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v[c], 0.0, 1.0) * 255));
    }
  }
  return img;
}

image::RgbImage bands(std::size_t side, const std::vector<std::array<std::uint8_t, 3>>& colors) {
  image::RgbImage img{side, side, std::vector<std::uint8_t>(side * side * 3)};
  for (std::size_t y = 0; y < side; ++y) {
    const auto& c = colors[y * colors.size() / side];
    for (std::size_t x = 0; x < side; ++x) std::copy(c.begin(), c.end(), img.at(x, y));
  }
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::pair<double, double> first_last_total(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::vector<double> totals;
  std::getline(in, line);
  while (std::getline(in, line)) totals.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  if (totals.empty()) return {0.0, 0.0};
  return {totals.front(), totals.back()};
}

Outcome end_to_end() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "dpst_acceptance_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path data(DPST_DATA_DIR);
  vgg::save_weights(vgg::make_synthetic_model(2024), dir / "weights.bin");
  const std::array<std::uint8_t, 3> sky{6, 230, 230}, sea{9, 7, 230}, sand{160, 150, 20};
  image::write_image(scene(96, false), dir / "content.png");
  image::write_image(scene(96, true), dir / "style.png");
  image::write_image(bands(96, {sky, sea, sand}), dir / "content_seg.png");
  image::write_image(bands(96, {sky, sea}), dir / "style_seg.png");

  job::JobSpec spec;
  spec.content = dir / "content.png";
  spec.style = dir / "style.png";
  spec.content_seg = dir / "content_seg.png";
  spec.style_seg = dir / "style_seg.png";
  spec.palette = data / "ade20k_palette.tsv";
  spec.taxonomy = data / "taxonomy.tsv";
  spec.substitutions = data / "substitutions.tsv";
  spec.weights = dir / "weights.bin";
  spec.iterations = 300;
  spec.checkpoint_every = 0;

  std::ostringstream sink;
  std::vector<std::string> logs;
  double slowest = 0.0;
  for (int run = 0; run < 2; ++run) {
    spec.out = dir / ("run" + std::to_string(run) + ".png");
    const auto start = Clock::now();
    const auto artifacts = job::execute(spec, sink);
    slowest = std::max(slowest, seconds_since(start));
    logs.push_back(slurp(artifacts.loss_log));
  }
  const auto [first, last] = first_last_total(logs[0]);
  o.require(last < 0.5 * first, "final " + std::to_string(last) + " vs initial " + std::to_string(first));
  o.require(logs[0] == logs[1], "loss logs differ between runs");
  o.require(slowest < 600.0, "run took " + std::to_string(slowest) + " s");
  std::ostringstream s;
  s.precision(4);
  s << "total " << first << " -> " << last << " (ratio " << last / first << "), identical logs, " << slowest
    << " s per run";
  if (o.pass) o.detail = s.str();
  return o;
}

Outcome pyramid_partition() {
  Outcome o;
  std::mt19937_64 rng(108);
  const std::vector<std::string> layers{"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv4_2", "conv5_1"};
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<std::size_t> ext(1, 70), cls(1, 6);
    const std::size_t h = ext(rng), w = ext(rng), classes = cls(rng);
    segmentation::SegmentationMap map{w, h, std::vector<std::uint32_t>(w * h), {}};
    for (std::size_t c = 0; c < classes; ++c) map.classes.push_back(semantics::ClassSet{"c" + std::to_string(c)});
    std::uniform_int_distribution<std::uint32_t> label(0, static_cast<std::uint32_t>(classes - 1));
    for (auto& l : map.labels) l = label(rng);
    const auto pyr = segmentation::build_mask_pyramid(segmentation::binary_masks<float>(map), layers, h, w);
    for (const auto& [layer, t] : pyr) {
      const std::size_t n = t.extent(1) * t.extent(2);
      for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
          const float v = t[c * n + p];
          o.require(v >= 0.0f && v <= 1.0f, "mask value out of range at " + layer);
          s += v;
        }
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
  }
  o.require(worst < 1e-5, "partition deviation " + std::to_string(worst));
  if (o.pass) {
    std::ostringstream s;
    s << "30 random maps, max |sum - 1| " << worst;
    o.detail = s.str();
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite (finite differences, 8x8x3, double)", gradient_suite},
      {"matting Laplacian vs dense oracle", matting_oracle},
      {"affine null space", affine_null_space},
      {"semantic grouping vs brute-force oracle", grouping_oracle},
      {"Li similarity point checks", li_points},
      {"single-class style reduction", single_class_reduction},
      {"Adam closed form", adam_closed_form},
      {"end-to-end descent, 96x96, 300 iterations", end_to_end},
      {"mask pyramid partition of unity", pyramid_partition},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome result;
    try {
      result = check();
    } catch (const std::exception& e) {
      result = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (result.pass ? "PASS " : "FAIL ") << name << (result.detail.empty() ? "" : " | " + result.detail)
              << std::endl;
    failures += result.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
