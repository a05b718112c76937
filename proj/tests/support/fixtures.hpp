#pragma once

// Small data sets and networks shared by the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "deepwriter/deepwriter.hpp"

namespace dwtest {

/// Reduced Half/Deep preset used for desk-scale training: channels and FC
/// widths ×0.125, 33-pixel patches.
inline deepwriter::ArchitectureSpec reduced_spec(std::size_t classes) {
  deepwriter::PresetOptions o;
  o.num_classes = classes;
  o.input_side = 33;
  o.scale = 0.125;
  return deepwriter::deepwriter_preset(o);
}

/// Training set of `per_writer` side×side patches per synthetic writer, each
/// cropped at a random position from a different rendered line.
inline deepwriter::Dataset patch_dataset(std::size_t writers, std::size_t per_writer, std::size_t side,
                                         std::uint64_t seed) {
  using namespace deepwriter;
  SynthOptions o;
  o.num_writers = writers;
  o.samples_per_writer = per_writer;
  o.seed = seed;
  Dataset d;
  Rng rng(derive_seed(seed, 99));
  for (const auto& s : synthesize_corpus(o)) {
    if (d.labels.empty() || d.labels.back() != s.writer) d.labels.push_back(s.writer);
    const auto line = resize_min_side(s.image, side);
    d.train.push_back({random_crop(line, side, rng).image, s.writer_index});
  }
  return d;
}

/// Network whose every score vector equals softmax(logits), independent of
/// the input: zero weights, classifier bias = logits.
inline deepwriter::Network<float> constant_network(const std::vector<float>& probabilities,
                                                   std::size_t side, int streams = 1) {
  using namespace deepwriter;
  ArchitectureSpec s;
  s.input_side = side;
  s.num_classes = probabilities.size();
  s.layers = {ClassifierSpec{}};
  auto net = Network<float>::zeros(s, streams);
  auto& cls = net.params()[net.classifier_index()];
  for (std::size_t i = 0; i < probabilities.size(); ++i) cls.biases[i] = std::log(probabilities[i]);
  return net;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    path_ = fs::temp_directory_path() / ("deepwriter-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace dwtest
