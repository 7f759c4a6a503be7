#include "dpst/job.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <new>
#include <ostream>

#include "dpst/image_io.hpp"
#include "dpst/losses.hpp"
#include "dpst/matting.hpp"
#include "dpst/segmentation.hpp"
#include "dpst/semantics.hpp"
#include "dpst/vgg.hpp"

namespace dpst::job {
namespace {

const char* const kSizeGuidance =
    "Style transfer needs roughly 8 GB of memory for images of about 700 pixels in width or "
    "height (matting Laplacian plus feature maps); downscale the inputs to at most 700 px, or pass "
    "--allow-large together with --max-dim to accept the memory cost.";

void require_file(const fs::path& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw InputError(std::string(flag) + ": no such file: " + path.string());
}

void require_weight(double w, const char* flag) {
  if (!std::isfinite(w) || w < 0) throw InputError(std::string(flag) + " must be a finite value >= 0");
}

void check_size(const image::RgbImage& img, const fs::path& path, const JobSpec& job) {
  const std::size_t largest = std::max(img.width, img.height);
  if (largest > job.max_dim) {
    throw MemoryLimitError(path.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                           ", above the maximum dimension of " + std::to_string(job.max_dim) + " px. " +
                           kSizeGuidance);
  }
}

}  // namespace

losses::LossConfig JobSpec::loss_config() const {
  auto cfg = losses::LossConfig::standard(content_weight, style_weight, photorealism_weight, assessment_weight);
  cfg.semantic_threshold = theta;
  return cfg;
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + suffix);
}

JobSpec parse_and_validate(int argc, const char* const* argv) {
  JobSpec job;
  CLI::App app{"Photorealistic style transfer with semantic grouping of segmentation classes", "dpst"};
  std::string content, style, content_seg, style_seg, palette, taxonomy, substitutions, weights, out, cache;
  std::string init = "content";
  long long iterations = static_cast<long long>(job.iterations);
  long long max_dim = static_cast<long long>(job.max_dim);
  long long checkpoint_every = static_cast<long long>(job.checkpoint_every);
  app.add_option("--content", content, "content photo")->required();
  app.add_option("--style", style, "style photo")->required();
  app.add_option("--content-seg", content_seg, "content segmentation (PNG/PPM, palette colors)")->required();
  app.add_option("--style-seg", style_seg, "style segmentation (PNG/PPM, palette colors)")->required();
  app.add_option("--palette", palette, "palette file: R,G,B<TAB>word[;word...]")->required();
  app.add_option("--taxonomy", taxonomy, "hypernym edges: child<TAB>parent")->required();
  app.add_option("--substitutions", substitutions, "word substitutions: from<TAB>to");
  app.add_option("--weights", weights, "VGG19 weight file")->required();
  app.add_option("--out", out, "output image (.png or .ppm)")->required();
  app.add_option("--theta", job.theta, "semantic threshold in [0, 1]")->capture_default_str();
  app.add_option("--init", init, "content, style or noise")->capture_default_str();
  app.add_option("--seed", job.seed, "seed for noise initialization")->capture_default_str();
  app.add_option("--content-weight", job.content_weight, "alpha")->capture_default_str();
  app.add_option("--style-weight", job.style_weight, "beta")->capture_default_str();
  app.add_option("--photorealism-weight", job.photorealism_weight, "lambda")->capture_default_str();
  app.add_option("--assessment-weight", job.assessment_weight, "vartheta")->capture_default_str();
  app.add_option("--iterations", iterations, "Adam iterations")->capture_default_str();
  app.add_option("--max-dim", max_dim, "largest accepted width or height")->capture_default_str();
  app.add_flag("--allow-large", job.allow_large, "accept --max-dim above 700 px despite the memory cost");
  app.add_option("--laplacian-cache", cache, "directory caching matting Laplacians");
  app.add_option("--checkpoint-every", checkpoint_every, "checkpoint interval, 0 disables")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.help());
  } catch (const CLI::ParseError& e) {
    throw InputError(e.what());
  }

  job.content = content;
  job.style = style;
  job.content_seg = content_seg;
  job.style_seg = style_seg;
  job.palette = palette;
  job.taxonomy = taxonomy;
  if (!substitutions.empty()) job.substitutions = fs::path(substitutions);
  job.weights = weights;
  job.out = out;
  job.laplacian_cache = cache;
  job.init = optimizer::parse_init_mode(init);

  if (!(job.theta >= 0.0 && job.theta <= 1.0)) {
    throw InputError("--theta must lie in [0, 1], got " + std::to_string(job.theta));
  }
  if (iterations < 0) throw InputError("--iterations must be >= 0");
  if (max_dim < 1) throw InputError("--max-dim must be positive");
  if (checkpoint_every < 0) throw InputError("--checkpoint-every must be >= 0");
  job.iterations = static_cast<std::size_t>(iterations);
  job.max_dim = static_cast<std::size_t>(max_dim);
  job.checkpoint_every = static_cast<std::size_t>(checkpoint_every);
  if (job.max_dim > 700 && !job.allow_large) {
    throw InputError(std::string("--max-dim above 700 requires --allow-large. ") + kSizeGuidance);
  }
  require_weight(job.content_weight, "--content-weight");
  require_weight(job.style_weight, "--style-weight");
  require_weight(job.photorealism_weight, "--photorealism-weight");
  require_weight(job.assessment_weight, "--assessment-weight");
  job.loss_config().validate();

  require_file(job.content, "--content");
  require_file(job.style, "--style");
  require_file(job.content_seg, "--content-seg");
  require_file(job.style_seg, "--style-seg");
  require_file(job.palette, "--palette");
  require_file(job.taxonomy, "--taxonomy");
  if (job.substitutions) require_file(*job.substitutions, "--substitutions");
  require_file(job.weights, "--weights");
  const auto out_dir = job.out.parent_path();
  if (!out_dir.empty() && !fs::is_directory(out_dir)) {
    throw InputError("--out: directory does not exist: " + out_dir.string());
  }
  const auto ext = job.out.extension().string();
  if (ext != ".png" && ext != ".ppm") throw InputError("--out must end in .png or .ppm");
  return job;
}

Artifacts execute(const JobSpec& job, std::ostream& log) {
  using segmentation::ClassSet;
  const auto started = std::chrono::steady_clock::now();

  const auto content_rgb = image::read_image(job.content);
  const auto style_rgb = image::read_image(job.style);
  check_size(content_rgb, job.content, job);
  check_size(style_rgb, job.style, job);
  if (content_rgb.width < 3 || content_rgb.height < 3 || style_rgb.width < 3 || style_rgb.height < 3) {
    throw InputError("images must be at least 3x3 pixels");
  }

  const auto palette = segmentation::repair_palette(segmentation::read_palette(job.palette));
  const auto content_map = segmentation::load_segmentation(job.content_seg, palette);
  const auto style_map = segmentation::load_segmentation(job.style_seg, palette);
  if (content_map.width != content_rgb.width || content_map.height != content_rgb.height) {
    throw InputError("content segmentation is " + std::to_string(content_map.width) + "x" +
                     std::to_string(content_map.height) + " but the content image is " +
                     std::to_string(content_rgb.width) + "x" + std::to_string(content_rgb.height));
  }
  if (style_map.width != style_rgb.width || style_map.height != style_rgb.height) {
    throw InputError("style segmentation is " + std::to_string(style_map.width) + "x" +
                     std::to_string(style_map.height) + " but the style image is " + std::to_string(style_rgb.width) +
                     "x" + std::to_string(style_rgb.height));
  }

  const auto taxonomy = semantics::Taxonomy::load(job.taxonomy);
  const auto substitutions = job.substitutions ? semantics::load_substitutions(*job.substitutions) : semantics::Substitutions{};
  const auto sim = semantics::taxonomy_similarity(taxonomy, substitutions);
  const auto grouping = semantics::group_semantics(sim, content_map.classes, style_map.classes, job.theta);
  const auto content_grouped = segmentation::relabel(content_map, grouping.content_mapping, grouping.classes);
  const auto style_grouped = segmentation::relabel(style_map, grouping.style_mapping, grouping.classes);
  log << "classes: content " << content_map.classes.size() << ", style " << style_map.classes.size()
      << ", grouped " << grouping.classes.size() << "\n";
  for (const auto& c : grouping.classes) log << "  " << c.canonical_name() << "\n";

  // Each grouped class is drawn in the color of its first original member.
  std::map<ClassSet, ClassSet> representative;
  for (const auto* mapping : {&grouping.content_mapping, &grouping.style_mapping}) {
    for (const auto& [original, merged] : *mapping) {
      auto [it, inserted] = representative.try_emplace(merged, original);
      if (!inserted && original < it->second) it->second = original;
    }
  }
  std::map<ClassSet, segmentation::Color> colors;
  for (const auto& [merged, original] : representative) colors.emplace(merged, palette.color_of(original));

  Artifacts artifacts{job.out, sibling(job.out, "_loss.csv"), sibling(job.out, "_content_seg.png"),
                      sibling(job.out, "_style_seg.png")};
  image::write_image(segmentation::render(content_grouped, colors), artifacts.content_preview);
  image::write_image(segmentation::render(style_grouped, colors), artifacts.style_preview);

  auto model = std::make_shared<const vgg::VggModel>(vgg::load_weights(job.weights));
  const Tensor content = image::to_tensor(content_rgb);
  const Tensor style = image::to_tensor(style_rgb);

  const auto config = job.loss_config();
  std::shared_ptr<const matting::SparseSymmetricMatrix> laplacian;
  if (config.photorealism_weight != 0.0) {
    laplacian = std::make_shared<const matting::SparseSymmetricMatrix>(
        matting::load_or_build_laplacian(content, {}, job.laplacian_cache));
  }
  auto scorer = std::make_shared<const losses::ToyAestheticScorer>();
  const auto objective =
      losses::prepare_objective<float>(model, config, content, style, segmentation::binary_masks<float>(content_grouped),
                                       segmentation::binary_masks<float>(style_grouped), laplacian, scorer);

  optimizer::RunOptions options;
  options.iterations = job.iterations;
  options.checkpoint_every = job.checkpoint_every;
  options.checkpoint_stem = sibling(job.out, "");
  options.on_iteration = [&log, &job](std::size_t t, const losses::LossReport& r) {
    if (t == 0 || t == job.iterations || (job.checkpoint_every && t % job.checkpoint_every == 0)) {
      log << "iter " << t << " total " << std::setprecision(6) << r.total << " (content " << r.content << ", style "
          << r.style << ", photorealism " << r.photorealism << ", assessment " << r.assessment << ")\n";
    }
  };
  const auto init = optimizer::init_transfer_image(job.init, content, style, job.seed);
  const auto result = optimizer::run(objective, init, options);

  optimizer::write_loss_log(result.log, artifacts.loss_log);
  image::write_image(image::from_tensor(result.image), artifacts.image);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  log << "wrote " << artifacts.image.string() << " in " << std::setprecision(3) << seconds << " s\n";
  return artifacts;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    const JobSpec job = parse_and_validate(argc, argv);
    execute(job, out);
    return kOk;
  } catch (const HelpRequested& e) {
    out << e.what();
    return kOk;
  } catch (const MemoryLimitError& e) {
    err << "error: " << e.what() << "\n";
    return kMemoryLimit;
  } catch (const std::bad_alloc&) {
    err << "error: out of memory. " << kSizeGuidance << "\n";
    return kMemoryLimit;
  } catch (const NumericError& e) {
    err << "error: numerical failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const UnknownWordError& e) {
    err << "error: " << e.what() << " (add it to the taxonomy or map it with --substitutions)\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace dpst::job
