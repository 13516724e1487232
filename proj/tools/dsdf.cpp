// Command-line front end: synth, train, evaluate, infer, analyze-freq, gradcheck.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsdf/dsdf.hpp"

namespace fs = std::filesystem;
using namespace dsdf;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string checkpoint;
  std::string out;
  std::string data;
  std::optional<std::size_t> size;
  std::optional<std::size_t> epochs;
};

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg;
  if (!c.config_path.empty()) {
    cfg = load_config(c.config_path);
  } else if (!c.checkpoint.empty()) {
    // Fall back to the config written next to a training checkpoint.
    const fs::path beside = fs::path(c.checkpoint).parent_path() / kConfigFile;
    if (fs::exists(beside)) cfg = load_config(beside.string());
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.size) cfg.model.image_size = *c.size;
  if (c.epochs) cfg.epochs = *c.epochs;
  cfg.validate();
  return cfg;
}

std::string file_safe(std::string id) {
  for (char& ch : id)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  return id;
}

// Writes one attention map as CSV (full precision) and as a PGM scaled to [0, max].
template <typename T>
void dump_attention(const fs::path& dir, const std::string& stem, const std::string& site, const Tensor<T>& w) {
  fs::create_directories(dir);
  const std::string base = (dir / (stem + "." + site)).string();
  std::ofstream csv(base + ".csv");
  csv << std::setprecision(9);
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  double hi = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = double(w[r * cols + c]);
      hi = std::max(hi, v);
      csv << v << (c + 1 < cols ? ',' : '\n');
    }
  }
  write_pgm(base + ".pgm", w, 0.0, hi);
}

template <typename T>
int run_train(const Common& c, const TrainConfig& cfg) {
  if (c.data.empty()) throw ConfigError("train needs --data DIR");
  const std::string out = c.out.empty() ? "run" : c.out;
  const Corpus corpus = ingest(c.data, cfg.seed);
  std::cerr << "corpus: " << corpus.entries.size() << " images, " << corpus.train.size() << " train / "
            << corpus.val.size() << " val\n";
  const auto train_set = load_dataset<T>(corpus, corpus.train, cfg.model, c.deterministic);
  const auto val_set = load_dataset<T>(corpus, corpus.val, cfg.model, c.deterministic);
  const TrainResult r = train(train_set, val_set, cfg, out, &std::cerr);
  std::cout << "best val AUC " << r.best_auc << " at epoch " << r.best_epoch << "\n"
            << "checkpoint " << r.checkpoint.string() << "\nmetrics " << r.metrics.string() << "\n";
  return 0;
}

template <typename T>
int run_evaluate(const Common& c, const TrainConfig& cfg, bool all_images) {
  if (c.data.empty() || c.checkpoint.empty()) throw ConfigError("evaluate needs --data DIR and --checkpoint PATH");
  const Corpus corpus = ingest(c.data, cfg.seed);
  std::vector<std::size_t> pick = corpus.val;
  if (all_images) {
    pick.resize(corpus.entries.size());
    std::iota(pick.begin(), pick.end(), std::size_t{0});
  }
  const auto model = load_model<T>(cfg, c.checkpoint);
  const EvalReport rep = evaluate(model, load_dataset<T>(corpus, pick, cfg.model, c.deterministic));

  std::ofstream file;
  if (!c.out.empty()) {
    file.open(c.out);
    if (!file) throw Error("cannot write " + c.out);
  }
  std::ostream& lines = c.out.empty() ? std::cout : file;
  for (const auto& p : rep.predictions) lines << to_json(p).dump() << "\n";
  std::cerr << std::setprecision(6) << "images " << rep.predictions.size() << "  auc " << rep.auc << "  accuracy "
            << rep.accuracy << "  auc_network " << rep.auc_network << "  auc_blood " << rep.auc_blood << "\n";
  nlohmann::json summary{{"auc", rep.auc},
                         {"accuracy", rep.accuracy},
                         {"auc_network", rep.auc_network},
                         {"auc_blood", rep.auc_blood},
                         {"images", rep.predictions.size()}};
  if (!c.out.empty()) std::cout << summary.dump() << "\n";
  return 0;
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && detail::is_image_file(e.path())) found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  return files;
}

template <typename T>
int run_infer(const Common& c, const TrainConfig& cfg, const std::vector<std::string>& inputs,
              const std::string& attn_dir, bool all_maps) {
  if (c.checkpoint.empty()) throw ConfigError("infer needs --checkpoint PATH");
  const auto model = load_model<T>(cfg, c.checkpoint);
  NoGradGuard no_grad;
  for (const auto& path : expand_inputs(inputs)) {
    AttentionLog<T> log;
    ForwardTrace<T> trace;
    if (!attn_dir.empty()) trace.attention = &log;
    const auto r = model.forward(load_inputs<T>(path, cfg.model.image_size, cfg.model.bins), &trace);
    Prediction p{path, -1, r.verdict(), trace.shapes};
    std::cout << to_json(p).dump() << "\n";
    if (!attn_dir.empty()) {
      const std::string stem = file_safe(fs::path(path).stem().string());
      for (const auto& [site, w] : log.maps) {
        if (all_maps || site.rfind("blood.", 0) == 0) dump_attention(attn_dir, stem, site, w);
      }
    }
  }
  return 0;
}

int run_analyze(const Common& c, const std::string& spectrum_dir) {
  if (c.data.empty()) throw ConfigError("analyze-freq needs --data DIR");
  const Corpus corpus = ingest(c.data, c.seed.value_or(0));
  std::ofstream file;
  if (!c.out.empty()) {
    file.open(c.out);
    if (!file) throw Error("cannot write " + c.out);
  }
  std::ostream& os = c.out.empty() ? std::cout : file;
  os << "id,label";
  for (const char* stat : {"E", "H", "S"})
    for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << stat << '_' << b;
  os << ",E_total,H_mean,S_mean\n" << std::setprecision(10);
  for (const auto& e : corpus.entries) {
    RgbImage img = decode(e.path);
    if (c.size) img = resize(img, *c.size);
    const FrequencyFeatures f = analyze_frequency(to_grayscale(img));
    os << e.id << ',' << (e.label ? "fake" : "real");
    for (const auto& s : f.stats) os << ',' << s.energy;
    for (const auto& s : f.stats) os << ',' << s.entropy;
    for (const auto& s : f.stats) os << ',' << s.psd;
    os << ',' << f.total_energy() << ',' << f.mean_entropy() << ',' << f.mean_psd() << '\n';
    if (!spectrum_dir.empty()) {
      // log(1 + |F|) gives a viewable dynamic range.
      std::vector<double> logmag(f.polar.magnitude.size());
      double hi = 0;
      for (std::size_t i = 0; i < logmag.size(); ++i) {
        logmag[i] = std::log1p(f.polar.magnitude[i]);
        hi = std::max(hi, logmag[i]);
      }
      fs::create_directories(spectrum_dir);
      write_pgm((fs::path(spectrum_dir) / (file_safe(e.id) + ".spectrum.pgm")).string(),
                Tensor<double>(f.polar.magnitude.shape(), std::move(logmag)), 0.0, hi);
    }
  }
  return 0;
}

int run_gradcheck(const Common& c, double step, bool freeze) {
  ModelConfig geometry = gradcheck_geometry();
  if (c.size) geometry.image_size = *c.size;
  GradcheckOptions opt;
  opt.step = step;
  opt.freeze_relu = freeze;
  if (c.seed) opt.seed = *c.seed;
  bool ok = true;
  std::cout << std::left << std::setw(10) << "group" << std::setw(10) << "checked" << std::setw(16) << "max_rel_err"
            << "result\n";
  for (const auto& row : gradcheck<double>(geometry, opt)) {
    std::cout << std::setw(10) << row.group << std::setw(10) << row.checked << std::setw(16) << row.max_rel_error
              << (row.pass ? "pass" : "FAIL") << "\n";
    ok = ok && row.pass;
  }
  return ok ? 0 : 1;
}

template <typename F>
int with_precision(const TrainConfig& cfg, F&& body) {
  if (cfg.precision == "f64") return body(double{});
  return body(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-branch deepfake detector (frequency/spatial network plus colour-texture branch)"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "Seed (overrides the config)");
  app.add_flag("--deterministic", c.deterministic, "Single-threaded data loading");

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic real/fake corpus");
  std::size_t count = 64, synth_size = 64;
  synth_cmd->add_option("--out", c.out, "Output directory")->required();
  synth_cmd->add_option("--count", count, "Total number of images (even)");
  synth_cmd->add_option("--size", synth_size, "Image side length");

  auto* train_cmd = app.add_subcommand("train", "Train on DIR/real and DIR/fake");
  train_cmd->add_option("--data", c.data, "Corpus directory")->required();
  train_cmd->add_option("--out", c.out, "Run directory (checkpoint, metrics.csv, config.json)");
  train_cmd->add_option("--size", c.size, "Image size (overrides the config)");
  train_cmd->add_option("--epochs", c.epochs, "Epochs (overrides the config)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Score a corpus with a checkpoint");
  bool eval_all = false;
  eval_cmd->add_option("--data", c.data, "Corpus directory")->required();
  eval_cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out", c.out, "Write per-image JSON lines here instead of stdout");
  eval_cmd->add_flag("--all", eval_all, "Score every image, not just the validation split");

  auto* infer_cmd = app.add_subcommand("infer", "Classify images");
  std::vector<std::string> inputs;
  std::string attn_dir;
  bool all_maps = false;
  infer_cmd->add_option("inputs", inputs, "Image files or directories")->required();
  infer_cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--dump-attn", attn_dir, "Write attention maps (CSV + PGM) to this directory");
  infer_cmd->add_flag("--all-maps", all_maps, "Dump every attention map, not only the colour-texture ones");

  auto* freq_cmd = app.add_subcommand("analyze-freq", "Per-band energy, entropy and PSD as CSV");
  std::string spectrum_dir;
  freq_cmd->add_option("--data", c.data, "Corpus directory")->required();
  freq_cmd->add_option("--out", c.out, "CSV path (default stdout)");
  freq_cmd->add_option("--size", c.size, "Resize images first");
  freq_cmd->add_option("--spectrum", spectrum_dir, "Write log-magnitude spectra as PGM here");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  double step = 1e-3;
  bool no_freeze = false;
  grad_cmd->add_option("--step", step, "Central-difference step");
  grad_cmd->add_flag("--no-freeze", no_freeze, "Let ReLU patterns change under perturbation");
  grad_cmd->add_option("--size", c.size, "Image size for the reduced model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      const Corpus corpus = synth(count, synth_size, c.seed.value_or(42), c.out);
      std::cout << "wrote " << corpus.entries.size() << " images to " << c.out << "\n";
      return 0;
    }
    if (*freq_cmd) return run_analyze(c, spectrum_dir);
    if (*grad_cmd) return run_gradcheck(c, step, !no_freeze);

    const TrainConfig cfg = resolve_config(c);
    if (*train_cmd) return with_precision(cfg, [&](auto t) { return run_train<decltype(t)>(c, cfg); });
    if (*eval_cmd) return with_precision(cfg, [&](auto t) { return run_evaluate<decltype(t)>(c, cfg, eval_all); });
    if (*infer_cmd) {
      return with_precision(cfg, [&](auto t) { return run_infer<decltype(t)>(c, cfg, inputs, attn_dir, all_maps); });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
