// Writes a VGG19 weight file with He-initialized random kernels. Stands in for
// exported pretrained weights where none are available.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "dpst/error.hpp"
#include "dpst/vgg.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write deterministic synthetic VGG19 weights", "dpst-synth-weights"};
  std::string out;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "weight file to write")->required();
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    dpst::vgg::save_weights(dpst::vgg::make_synthetic_model(seed), out);
  } catch (const dpst::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
