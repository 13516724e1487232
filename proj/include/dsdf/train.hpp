#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsdf/checkpoint.hpp"
#include "dsdf/config.hpp"
#include "dsdf/corpus.hpp"
#include "dsdf/error.hpp"
#include "dsdf/metrics.hpp"
#include "dsdf/model.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/optim.hpp"

namespace dsdf {

/// Preprocessed samples held in memory for the whole run.
template <typename T>
struct Dataset {
  std::vector<SampleInputs<T>> samples;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return samples.size(); }
};

/// Decodes, resizes and featurizes the selected corpus entries. Without
/// `deterministic`, images are processed on a small worker pool; results are
/// stored by index either way.
template <typename T>
Dataset<T> load_dataset(const Corpus& corpus, const std::vector<std::size_t>& indices, const ModelConfig& config,
                        bool deterministic = true) {
  Dataset<T> ds;
  ds.samples.resize(indices.size());
  for (auto i : indices) {
    ds.labels.push_back(corpus.entries.at(i).label);
    ds.ids.push_back(corpus.entries.at(i).id);
  }
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      ds.samples[k] = load_inputs<T>(corpus.entries[indices[k]].path, config.image_size, config.bins);
    }
  };
  const std::size_t workers =
      deterministic ? 1 : std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
  if (workers <= 1 || indices.size() < 2 * workers) {
    work(0, indices.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (indices.size() + workers - 1) / workers;
    for (std::size_t b = 0; b < indices.size(); b += chunk) {
      jobs.push_back(std::async(std::launch::async, work, b, std::min(indices.size(), b + chunk)));
    }
    for (auto& j : jobs) j.get();
  }
  return ds;
}

struct Prediction {
  std::string id;
  int truth = -1;  // -1 when unknown (inference)
  Verdict verdict;
  std::vector<std::pair<std::string, Shape>> shapes;
};

inline nlohmann::json to_json(const Prediction& p) {
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [stage, shape] : p.shapes) shapes[stage] = shape;
  nlohmann::json j{{"id", p.id},
                   {"p_i", p.verdict.p_i},
                   {"p_j", p.verdict.p_j},
                   {"p", p.verdict.p},
                   {"label", label_name(p.verdict.label)},
                   {"shapes", shapes}};
  if (p.truth >= 0) j["truth"] = p.truth == 1 ? "fake" : "real";
  return j;
}

struct EvalReport {
  double auc = 0;
  double accuracy = 0;
  double auc_network = 0;  // p_i alone
  double auc_blood = 0;    // p_j alone
  std::vector<Prediction> predictions;
};

template <typename T>
EvalReport evaluate(const DeepfakeDetector<T>& model, const Dataset<T>& data, bool with_shapes = false) {
  NoGradGuard no_grad;
  EvalReport report;
  std::vector<ScoredLabel> combined, network, blood;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ForwardTrace<T> trace;
    const auto r = model.forward(data.samples[i], with_shapes ? &trace : nullptr);
    Prediction p{data.ids[i], data.labels[i], r.verdict(), std::move(trace.shapes)};
    combined.emplace_back(p.verdict.p, data.labels[i]);
    network.emplace_back(p.verdict.p_i, data.labels[i]);
    blood.emplace_back(p.verdict.p_j, data.labels[i]);
    report.predictions.push_back(std::move(p));
  }
  report.auc = auc(combined);
  report.accuracy = accuracy(combined);
  report.auc_network = auc(network);
  report.auc_blood = auc(blood);
  return report;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_auc = 0;
  double val_accuracy = 0;
  double val_auc_network = 0;
  double val_auc_blood = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_auc = -1;
  std::size_t best_epoch = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
};

/// Name of the first parameter holding a non-finite value or gradient, if any.
template <typename T>
std::string first_non_finite(const ParamStore<T>& store) {
  for (const auto& [name, t] : store.entries()) {
    for (T v : t.data())
      if (!std::isfinite(double(v))) return name;
    for (T g : t.grad())
      if (!std::isfinite(double(g))) return name + " (gradient)";
  }
  return {};
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write metrics " + path.string());
  os << "epoch,train_loss,val_auc,val_accuracy,val_auc_network,val_auc_blood\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_auc << ',' << r.val_accuracy << ',' << r.val_auc_network
       << ',' << r.val_auc_blood << '\n';
  }
}

inline constexpr const char* kCheckpointFile = "checkpoint.dsdf";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kConfigFile = "config.json";

/// Joint training on the combined probability with binary cross-entropy and
/// Adam. The checkpoint with the best validation AUC is kept in out_dir
/// together with the metrics CSV (one row per epoch) and the config.
template <typename T>
TrainResult train(const Dataset<T>& train_set, const Dataset<T>& val_set, const TrainConfig& config,
                  const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  config.validate();
  if (train_set.size() == 0) throw CorpusError("empty training set");
  std::filesystem::create_directories(out_dir);
  save_config((out_dir / kConfigFile).string(), config);

  DeepfakeDetector<T> model(config.model, config.seed);
  Adam<T> optimizer(model.params(), config.lr);
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.checkpoint = out_dir / kCheckpointFile;
  result.metrics = out_dir / kMetricsFile;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_total = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      model.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto r = model.forward(train_set.samples[i]);
        const Tensor<T> loss = binary_cross_entropy(r.p, T(train_set.labels[i]));
        if (!std::isfinite(double(loss[0]))) {
          std::string culprit = first_non_finite(model.params());
          if (culprit.empty()) culprit = !std::isfinite(double(r.p_i[0])) ? "p_i" : !std::isfinite(double(r.p_j[0])) ? "p_j" : "loss";
          throw DivergenceError(detail::concat("non-finite loss at epoch ", epoch, " on ", train_set.ids[i],
                                               "; first non-finite tensor: ", culprit));
        }
        loss_total += double(loss[0]);
        scale(loss, T(1) / T(end - start)).backward();
      }
      if (auto culprit = first_non_finite(model.params()); !culprit.empty()) {
        throw DivergenceError(detail::concat("non-finite value at epoch ", epoch, " in ", culprit));
      }
      optimizer.step();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_total / double(train_set.size());
    if (val_set.size() > 0) {
      const EvalReport rep = evaluate(model, val_set);
      m.val_auc = rep.auc;
      m.val_accuracy = rep.accuracy;
      m.val_auc_network = rep.auc_network;
      m.val_auc_blood = rep.auc_blood;
    }
    result.history.push_back(m);
    write_metrics_csv(result.metrics, result.history);
    if (m.val_auc > result.best_auc) {
      result.best_auc = m.val_auc;
      result.best_epoch = epoch;
      save_checkpoint(result.checkpoint.string(), model.params().entries());
    }
    if (progress) {
      *progress << "epoch " << epoch << "/" << config.epochs << "  loss " << std::fixed << std::setprecision(4)
                << m.train_loss << "  val_auc " << m.val_auc << "  val_acc " << m.val_accuracy << std::endl;
      progress->unsetf(std::ios::fixed);
    }
  }
  return result;
}

/// Builds a model for `config` and fills it from a checkpoint file.
template <typename T>
DeepfakeDetector<T> load_model(const TrainConfig& config, const std::string& checkpoint_path) {
  DeepfakeDetector<T> model(config.model, config.seed);
  load_into(model.params(), read_checkpoint(checkpoint_path));
  return model;
}

struct GradcheckRow {
  std::string group;
  std::size_t checked = 0;
  double max_rel_error = 0;
  bool pass = false;
};

struct GradcheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Replay the unperturbed ReLU patterns while differencing.
  bool freeze_relu = true;
  std::size_t max_entries_per_tensor = 12;
  std::uint64_t seed = 7;
};

/// The reduced geometry used for finite-difference checks.
inline ModelConfig gradcheck_geometry() {
  ModelConfig c;
  c.image_size = 16;
  c.embed_dim = 8;
  c.heads = 4;
  c.scales = {2, 4};
  c.bins = kDefaultBins;
  c.blood_dim = 8;
  return c;
}

/// Compares backward() against central differences of the BCE loss for
/// sampled entries of every parameter, grouped by name prefix.
template <typename T>
std::vector<GradcheckRow> gradcheck(const ModelConfig& geometry, const GradcheckOptions& opt = {}) {
  DeepfakeDetector<T> model(geometry, opt.seed);
  std::mt19937_64 rng(opt.seed);
  const SampleInputs<T> inputs = prepare_inputs<T>(synth_real_image(geometry.image_size, rng), geometry.bins);
  const T target = T(1);

  std::optional<ReluMaskTape> tape;
  if (opt.freeze_relu) tape.emplace();
  auto loss_value = [&] {
    NoGradGuard no_grad;
    if (tape) tape->rewind();
    return double(binary_cross_entropy(model.forward(inputs).p, target)[0]);
  };

  model.params().zero_grad();
  binary_cross_entropy(model.forward(inputs).p, target).backward();
  if (tape) tape->replay();

  std::vector<GradcheckRow> rows;
  for (auto& [name, tensor] : model.params().entries()) {
    const std::string group = param_group(name);
    if (rows.empty() || rows.back().group != group) rows.push_back({group, 0, 0.0, true});
    GradcheckRow& row = rows.back();
    const std::size_t n = tensor.size();
    const std::size_t picks = std::min(n, opt.max_entries_per_tensor);
    auto data = tensor.mutable_data();
    for (std::size_t k = 0; k < picks; ++k) {
      const std::size_t i = picks == n ? k : (k * n) / picks + (k * 7919) % std::max<std::size_t>(1, n / picks);
      const T original = data[i];
      data[i] = T(double(original) + opt.step);
      const double up = loss_value();
      data[i] = T(double(original) - opt.step);
      const double down = loss_value();
      data[i] = original;
      const double numeric = (up - down) / (2 * opt.step);
      const double analytic = double(tensor.grad()[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      row.max_rel_error = std::max(row.max_rel_error, std::abs(analytic - numeric) / denom);
      ++row.checked;
    }
  }
  for (auto& r : rows) r.pass = r.max_rel_error < opt.tolerance;
  return rows;
}

}  // namespace dsdf
