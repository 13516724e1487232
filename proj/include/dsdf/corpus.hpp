#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/image.hpp"

namespace dsdf {

struct CorpusEntry {
  std::string path;
  std::string id;  // "<class>/<file name>"
  int label = 0;   // 0 real, 1 fake
};

/// Labelled images plus a stratified train/validation split.
struct Corpus {
  std::vector<CorpusEntry> entries;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::uint64_t seed = 0;
};

inline constexpr double kValidationFraction = 0.2;

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".ppm";
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw CorpusError("missing class directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw CorpusError("no PNG/PPM images in " + dir.string());
  return files;
}

}  // namespace detail

/// Stratified split: per class, a seeded shuffle puts round(20%) of the
/// images (at least one, at most n-1) in validation.
inline void assign_split(Corpus& corpus, std::uint64_t seed) {
  corpus.seed = seed;
  corpus.train.clear();
  corpus.val.clear();
  std::mt19937_64 rng(seed);
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < corpus.entries.size(); ++i)
      if (corpus.entries[i].label == label) members.push_back(i);
    if (members.size() < 2) {
      throw CorpusError(detail::concat("class ", label == 0 ? "real" : "fake",
                                       " needs at least 2 images for a train/val split, has ", members.size()));
    }
    std::shuffle(members.begin(), members.end(), rng);
    auto n_val = std::size_t(std::llround(kValidationFraction * double(members.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
    corpus.val.insert(corpus.val.end(), members.begin(), members.begin() + std::ptrdiff_t(n_val));
    corpus.train.insert(corpus.train.end(), members.begin() + std::ptrdiff_t(n_val), members.end());
  }
  std::sort(corpus.train.begin(), corpus.train.end());
  std::sort(corpus.val.begin(), corpus.val.end());
}

/// Enumerates dir/real and dir/fake (sorted paths) and splits 80/20.
inline Corpus ingest(const std::filesystem::path& dir, std::uint64_t seed) {
  Corpus corpus;
  for (auto [name, label] : {std::pair{"real", 0}, std::pair{"fake", 1}}) {
    for (const auto& p : detail::list_images(dir / name)) {
      corpus.entries.push_back({p.string(), std::string(name) + "/" + p.filename().string(), label});
    }
  }
  assign_split(corpus, seed);
  return corpus;
}

/// Smooth "genuine" image: skin-toned base colour, a linear gradient, a
/// low-frequency ripple and mild per-pixel texture.
inline RgbImage synth_real_image(std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double base[3] = {0.55 + 0.25 * u(rng), 0.35 + 0.2 * u(rng), 0.28 + 0.17 * u(rng)};
  const double theta = 2 * std::numbers::pi * u(rng);
  const double slope = 0.1 + 0.15 * u(rng);
  const double ripple_amp = 0.03 + 0.04 * u(rng);
  const double ripple_freq = 1.0 + 2.0 * u(rng);
  const double ripple_phase = 2 * std::numbers::pi * u(rng);
  const double texture = 0.025 + 0.015 * u(rng);
  RgbImage img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = double(x) / double(size) - 0.5, fy = double(y) / double(size) - 0.5;
      const double shade = slope * (fx * std::cos(theta) + fy * std::sin(theta)) +
                           ripple_amp * std::sin(2 * std::numbers::pi * ripple_freq * (fx + 0.7 * fy) + ripple_phase);
      const double grain = texture * (2 * u(rng) - 1);
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = std::clamp(base[c] + shade + grain + 0.3 * texture * (2 * u(rng) - 1), 0.0, 1.0);
      }
    }
  }
  return img;
}

/// "Manipulated" counterpart: a pixel-period checkerboard injected inside a
/// random rectangle, Gaussian blur everywhere else.
inline RgbImage synth_fake_image(const RgbImage& real, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t S = real.width;
  const auto rw = std::size_t(double(S) * (0.25 + 0.25 * u(rng)));
  const auto rh = std::size_t(double(S) * (0.25 + 0.25 * u(rng)));
  const auto x0 = std::size_t(double(S - rw) * u(rng));
  const auto y0 = std::size_t(double(S - rh) * u(rng));
  const double amp = 0.06 + 0.04 * u(rng);
  const double sigma = 1.0 + 0.5 * u(rng);
  const RgbImage blurred = gaussian_blur(real, sigma);
  RgbImage out(S, S);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const bool inside = y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw;
      const double checker = ((x + y) % 2 ? amp : -amp);
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = inside ? std::clamp(real.at(y, x, c) + checker, 0.0, 1.0) : blurred.at(y, x, c);
      }
    }
  }
  return out;
}

/// Writes n/2 real and n/2 fake PNGs under out_dir/{real,fake} and ingests them.
inline Corpus synth(std::size_t n, std::size_t size, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n == 0 || n % 2) throw CorpusError(detail::concat("synth needs a positive even image count, got ", n));
  if (size < 8) throw CorpusError("synth image size must be at least 8");
  std::filesystem::create_directories(out_dir / "real");
  std::filesystem::create_directories(out_dir / "fake");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n / 2; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    const RgbImage real = synth_real_image(size, rng);
    const RgbImage fake = synth_fake_image(real, rng);
    write_png((out_dir / "real" / name).string(), real);
    write_png((out_dir / "fake" / name).string(), fake);
  }
  return ingest(out_dir, seed);
}

}  // namespace dsdf
