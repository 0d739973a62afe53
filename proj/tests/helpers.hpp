#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "fednids/dataset.hpp"
#include "fednids/random.hpp"

namespace testutil {

using namespace fednids;

inline FlowSchema schema_for(Index cols) {
  FlowSchema s;
  for (Index j = 0; j < cols; ++j) s.feature_names.push_back("f" + std::to_string(j));
  return s;
}

inline FlowDataset make_dataset(Matrix x, Labels y) {
  const Index cols = x.cols();
  return FlowDataset(std::move(x), std::move(y), schema_for(cols));
}

// Uniform [0,1] features; labels Bernoulli(p_attack).
inline FlowDataset random_dataset(Index rows, Index cols, double p_attack, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(rows, cols);
  Labels y(static_cast<std::size_t>(rows));
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) x(i, j) = u(rng);
    y[static_cast<std::size_t>(i)] = u(rng) < p_attack ? 1 : 0;
  }
  return make_dataset(std::move(x), std::move(y));
}

// A scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("fednids_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
