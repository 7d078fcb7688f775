#include <CLI11.hpp>
#include <iostream>

#include "fixture/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic polyseme corpus with manifest, labels and config"};
  std::string dir;
  simsea::fixture::SyntheticOptions options;
  app.add_option("dir", dir, "Output directory")->required();
  app.add_option("--seed", options.seed, "Texture seed");
  app.add_option("--size", options.size, "Image side in pixels");
  app.add_option("--images", options.images_per_subsearch, "Images per subsearch");
  app.add_option("--targets", options.targets_per_subsearch, "Shared-class images per subsearch");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto corpus = simsea::fixture::write_synthetic_corpus(dir, options);
    std::cout << corpus.config.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "make_fixture: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
