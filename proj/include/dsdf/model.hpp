#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsdf/blood.hpp"
#include "dsdf/error.hpp"
#include "dsdf/frequency.hpp"
#include "dsdf/frequency_encoder.hpp"
#include "dsdf/fusion.hpp"
#include "dsdf/image.hpp"
#include "dsdf/layers.hpp"
#include "dsdf/params.hpp"
#include "dsdf/spatial_encoder.hpp"

namespace dsdf {

/// Network geometry. The spatial grid is P = image_size / 4 and the
/// frequency encoder uses 4 x 4 patches so both streams land on P x P.
struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t embed_dim = 128;
  std::size_t heads = 4;
  std::vector<std::size_t> scales{2, 4};
  std::size_t bins = kDefaultBins;
  std::size_t blood_dim = 64;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;

  static constexpr std::size_t kDownsample = 4;

  std::size_t grid() const { return image_size / kDownsample; }

  void validate() const {
    if (image_size < 8 || image_size % kDownsample) {
      throw ConfigError(detail::concat("image_size must be >= 8 and divisible by 4, got ", image_size));
    }
    if (embed_dim == 0 || embed_dim % 4) throw ConfigError("embed_dim must be a positive multiple of 4");
    if (heads == 0 || embed_dim % heads) throw ConfigError("embed_dim must be divisible by heads");
    if (scales.empty()) throw ConfigError("scales must not be empty");
    for (auto k : scales) {
      if (k == 0 || image_size % (k * kDownsample)) {
        throw ConfigError(detail::concat("image_size ", image_size, " is not divisible by 4 x scale ", k));
      }
    }
    if (bins < 2) throw ConfigError("bins must be at least 2");
    if (blood_dim == 0) throw ConfigError("d_b must be positive");
    if (!(alpha > 0) || !(beta > 0)) throw ConfigError("alpha and beta must be positive");
  }
};

/// Per-image model inputs derived from the resized RGB image.
template <typename T>
struct SampleInputs {
  Tensor<T> image;     // S x S x 3, normalized to [-1, 1]
  Tensor<T> freq_map;  // S x S x 8 band feature map
  BloodInputs<T> histograms;
};

/// Runs the preprocessing layer on an image that is already square at the
/// model resolution.
template <typename T>
SampleInputs<T> prepare_inputs(const RgbImage& resized, std::size_t bins = kDefaultBins) {
  if (resized.width != resized.height) {
    throw DimensionError(detail::concat("expected a square image, got ", resized.width, "x", resized.height));
  }
  return {tensor_cast<T>(normalize(resized)), tensor_cast<T>(band_feature_maps(to_grayscale(resized))),
          to_blood_inputs<T>(blood_histograms(resized, bins))};
}

template <typename T>
SampleInputs<T> load_inputs(const std::string& path, std::size_t image_size, std::size_t bins = kDefaultBins) {
  return prepare_inputs<T>(resize(decode(path), image_size), bins);
}

/// Optional diagnostics collected during a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> shapes;
  AttentionLog<T>* attention = nullptr;

  void note(std::string stage, const Shape& shape) { shapes.emplace_back(std::move(stage), shape); }
  const Shape* find(const std::string& stage) const {
    for (const auto& [name, shape] : shapes)
      if (name == stage) return &shape;
    return nullptr;
  }
};

template <typename T>
struct ForwardResult {
  Tensor<T> p_i;  // [1] network branch
  Tensor<T> p_j;  // [1] blood branch
  Tensor<T> p;    // [1] combined
  BloodFeatures<T> blood;

  Verdict verdict() const {
    Verdict v{double(p_i[0]), double(p_j[0]), double(p[0]), Label::kReal};
    v.label = decide(v.p);
    return v;
  }
};

/// The complete two-branch detector.
template <typename T>
class DeepfakeDetector {
 public:
  DeepfakeDetector(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), store_(seed) {
    config_.validate();
    const std::size_t D = config_.embed_dim;
    spatial_ = SpatialEncoder<T>(store_, D);
    freq_ = FrequencyEncoder<T>(store_, config_.image_size, kBandCount, ModelConfig::kDownsample, D, config_.heads);
    csaf_ = CrossStreamFusion<T>(store_, D, config_.heads);
    mpe_ = MultiscaleEmbedding<T>(store_, config_.grid(), D, D, config_.scales, config_.heads);
    ctrm_ = ClassTokenRefiner<T>(store_, D, config_.heads);
    head_ = ClassifierHead<T>(store_, D);
    blood_ = BloodBranch<T>(store_, config_.bins, config_.blood_dim);
  }

  // Copies would alias the parameter tensors.
  DeepfakeDetector(const DeepfakeDetector&) = delete;
  DeepfakeDetector& operator=(const DeepfakeDetector&) = delete;
  DeepfakeDetector(DeepfakeDetector&&) = default;

  ForwardResult<T> forward(const SampleInputs<T>& in, ForwardTrace<T>* trace = nullptr) const {
    AttentionLog<T>* log = trace ? trace->attention : nullptr;
    auto note = [&](const char* stage, const Tensor<T>& t) {
      if (trace) trace->note(stage, t.shape());
    };
    note("input", in.image);
    note("freq_map", in.freq_map);
    const Tensor<T> s = spatial_.forward(in.image);
    note("spatial", s);
    if (trace) trace->note("spatial_gap", global_avg_pool(s).shape());
    const Tensor<T> f = freq_.forward(in.freq_map, log);
    note("frequency", f);
    const Tensor<T> fused = csaf_.forward(s, f, log);
    note("fused", fused);
    const Tensor<T> tokens = mpe_.forward(fused, log);
    note("multiscale", tokens);
    const Tensor<T> cls = ctrm_.forward(tokens, log);
    note("class_token", cls);

    ForwardResult<T> r;
    r.p_i = reshape(head_.forward(cls), {1});
    r.blood = blood_.forward(in.histograms, log);
    note("blood_fused", r.blood.fused);
    r.p_j = reshape(r.blood.probability, {1});
    r.p = combine_probabilities(r.p_i, r.p_j, config_.alpha, config_.beta);
    note("p", r.p);
    return r;
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  SpatialEncoder<T>& spatial() { return spatial_; }
  FrequencyEncoder<T>& frequency() { return freq_; }
  CrossStreamFusion<T>& csaf() { return csaf_; }
  MultiscaleEmbedding<T>& multiscale() { return mpe_; }
  ClassTokenRefiner<T>& refiner() { return ctrm_; }
  BloodBranch<T>& blood() { return blood_; }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  SpatialEncoder<T> spatial_;
  FrequencyEncoder<T> freq_;
  CrossStreamFusion<T> csaf_;
  MultiscaleEmbedding<T> mpe_;
  ClassTokenRefiner<T> ctrm_;
  ClassifierHead<T> head_;
  BloodBranch<T> blood_;
};

}  // namespace dsdf
