// Writes the synthetic shape/colour catalog used by the desk-scale runs.
#include <CLI11.hpp>
#include <cstdio>

#include "derm/error.hpp"
#include "derm/toy.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic 7-class toy catalog"};
  std::string out = "toy_data";
  derm::ToyOptions opts;
  app.add_option("-o,--out", out, "output directory")->capture_default_str();
  app.add_option("--images", opts.images, "total images (lesions plus duplicates)")->capture_default_str();
  app.add_option("--seed", opts.seed, "random seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    const auto ds = derm::generate_toy_dataset(out, opts);
    std::printf("%d images of %d lesions\nmetadata: %s\nimages:   %s\n", ds.images, ds.lesions,
                ds.metadata.string().c_str(), ds.images_dir.string().c_str());
  } catch (const derm::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
