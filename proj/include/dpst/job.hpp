#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "dpst/error.hpp"
#include "dpst/optimizer.hpp"

namespace dpst::job {

namespace fs = std::filesystem;

struct JobSpec {
  fs::path content, style;
  fs::path content_seg, style_seg;
  fs::path palette, taxonomy;
  std::optional<fs::path> substitutions;
  fs::path weights;
  fs::path out;
  double theta = 0.6;
  optimizer::InitMode init = optimizer::InitMode::Content;
  std::uint64_t seed = 0;
  double content_weight = 1.0;          // alpha
  double style_weight = 100.0;          // beta
  double photorealism_weight = 1e4;     // lambda
  double assessment_weight = 1e5;       // vartheta
  std::size_t iterations = 2000;
  std::size_t max_dim = 700;
  bool allow_large = false;
  fs::path laplacian_cache;             // empty: no cache
  std::size_t checkpoint_every = 100;   // 0: no checkpoints

  losses::LossConfig loss_config() const;
};

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInputError = 2,
  kMemoryLimit = 3,
  kNumericFailure = 4,
};

/// Raised by parse_and_validate for --help; carries the usage text.
class HelpRequested : public Error {
 public:
  using Error::Error;
};

/// Parses flags, applies defaults and checks that every input exists and
/// every value is in range. Throws InputError (or HelpRequested).
JobSpec parse_and_validate(int argc, const char* const* argv);

struct Artifacts {
  fs::path image;
  fs::path loss_log;
  fs::path content_preview;
  fs::path style_preview;
};

/// `<out dir>/<out stem>` + suffix.
fs::path sibling(const fs::path& out, const std::string& suffix);

/// Runs the full pipeline and writes all artifacts; errors propagate as exceptions.
Artifacts execute(const JobSpec& job, std::ostream& log);

/// parse_and_validate + execute with errors mapped to ExitCode and reported on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dpst::job
