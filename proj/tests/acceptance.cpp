// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Optional arguments select criteria
// by substring, e.g. `acceptance dft parseval`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dsdf/dsdf.hpp"
#include "support/oracles.hpp"

using namespace dsdf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string key;
  std::string title;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor<double> random_gray(std::size_t n, std::mt19937_64& rng) { return oracle::random_tensor<double>({n, n}, rng, 0, 1); }

RgbImage random_rgb(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  RgbImage img(n, n);
  for (auto& v : img.data) v = u(rng);
  return img;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dsdf_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome dft_oracle() {
  std::mt19937_64 rng(101);
  double worst_fwd = 0, worst_inv = 0;
  for (std::size_t n : {8u, 16u}) {
    const auto img = random_gray(n, rng);
    const auto want = oracle::dft2({img.data().begin(), img.data().end()}, n, n);
    const auto got = dft2(img);
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      diff = std::max(diff, std::abs(got.at(i / n, i % n) - want[i]));
      scale = std::max(scale, std::abs(want[i]));
    }
    worst_fwd = std::max(worst_fwd, diff / scale);
    const auto back = idft2(got);
    double idiff = 0, iscale = 0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      idiff = std::max(idiff, std::hypot(back.re[i] - img[i], back.im[i]));
      iscale = std::max(iscale, std::abs(img[i]));
    }
    worst_inv = std::max(worst_inv, idiff / iscale);
  }
  return {worst_fwd < 1e-5 && worst_inv < 1e-6,
          "forward rel-err " + fmt("%.2e", worst_fwd) + ", round-trip rel-err " + fmt("%.2e", worst_inv)};
}

Outcome parseval() {
  std::mt19937_64 rng(202);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const auto img = random_gray(64, rng);
    const auto f = dft2(img);
    double spatial = 0, spectral = 0;
    for (double v : img.data()) spatial += v * v;
    for (std::size_t k = 0; k < f.re.size(); ++k) spectral += f.re[k] * f.re[k] + f.im[k] * f.im[k];
    worst = std::max(worst, std::abs(spectral / 4096.0 - spatial) / spatial);
  }
  return {worst < 1e-5, "20 images 64x64, worst rel-err " + fmt("%.2e", worst)};
}

Outcome band_partition() {
  std::mt19937_64 rng(303);
  bool exact = true;
  double worst = 0;
  for (std::size_t n : {8u, 16u, 64u, 224u}) {
    const auto masks = band_masks(n, n);
    for (std::size_t i = 0; i < n * n; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < kBandCount; ++c) s += masks[i * kBandCount + c];
      exact = exact && s == 1.0;
    }
    const auto img = random_gray(n, rng);
    const auto comps = band_components(img);
    for (std::size_t i = 0; i < n * n; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < kBandCount; ++c) s += comps[i * kBandCount + c];
      worst = std::max(worst, std::abs(s - img[i]));
    }
  }
  return {exact && worst < 1e-5, std::string("masks sum to 1 ") + (exact ? "exactly" : "NOT exactly") +
                                     ", component-sum error " + fmt("%.2e", worst)};
}

Outcome spectral_trend() {
  // 20 reals and their sigma=2 blurred copies as the fakes.
  std::mt19937_64 rng(404);
  double e[2] = {0, 0}, h[2] = {0, 0}, s[2] = {0, 0};
  for (int i = 0; i < 20; ++i) {
    const RgbImage real = synth_real_image(64, rng);
    const RgbImage fake = gaussian_blur(real, 2.0);
    for (int k = 0; k < 2; ++k) {
      const auto feats = analyze_frequency(to_grayscale(k == 0 ? real : fake));
      e[k] += feats.total_energy() / 20;
      h[k] += feats.mean_entropy() / 20;
      s[k] += feats.mean_psd() / 20;
    }
  }
  return {e[0] > e[1] && h[0] > h[1] && s[0] > s[1],
          "real/fake E " + fmt("%.1f", e[0]) + "/" + fmt("%.1f", e[1]) + ", H " + fmt("%.3f", h[0]) + "/" +
              fmt("%.3f", h[1]) + ", S " + fmt("%.4f", s[0]) + "/" + fmt("%.4f", s[1])};
}

Outcome shape_contract() {
  ModelConfig cfg;  // full geometry: 224, embed 128
  DeepfakeDetector<float> model(cfg, 1);
  std::mt19937_64 rng(505);
  ForwardTrace<float> trace;
  NoGradGuard ng;
  const auto r = model.forward(prepare_inputs<float>(random_rgb(224, rng), cfg.bins), &trace);
  const std::vector<std::pair<std::string, Shape>> want{{"input", {224, 224, 3}}, {"spatial", {56, 56, 128}},
                                                        {"frequency", {56, 56, 128}}, {"fused", {56, 56, 128}},
                                                        {"multiscale", {196, 128}}, {"class_token", {1, 128}}};
  bool ok = true;
  std::string detail;
  for (const auto& [stage, shape] : want) {
    const Shape* got = trace.find(stage);
    const bool match = got && *got == shape;
    ok = ok && match;
    if (!match) detail += stage + " is " + (got ? shape_str(*got) : "missing") + "; ";
  }
  const double p = r.p[0];
  ok = ok && p > 0 && p < 1;
  return {ok, detail + "S=F=H_fused 56x56x128, MPE 196x128, token 1x128, p=" + fmt("%.4f", p)};
}

Outcome gradient_check() {
  const auto rows = gradcheck<double>(gradcheck_geometry());
  GradcheckOptions raw;
  raw.step = 1e-5;
  raw.freeze_relu = false;
  const auto unfrozen = gradcheck<double>(gradcheck_geometry(), raw);
  bool ok = !rows.empty();
  double worst = 0, worst_raw = 0;
  std::string groups;
  for (const auto& r : rows) {
    ok = ok && r.pass && r.checked > 0;
    worst = std::max(worst, r.max_rel_error);
    groups += r.group + "=" + fmt("%.1e", r.max_rel_error) + " ";
  }
  for (const auto& r : unfrozen) {
    ok = ok && r.pass;
    worst_raw = std::max(worst_raw, r.max_rel_error);
  }
  return {ok, "h=1e-3 (ReLU masks held) worst " + fmt("%.2e", worst) + " [" + groups +
                  "]; h=1e-5 unfrozen worst " + fmt("%.2e", worst_raw)};
}

Outcome combination() {
  // Convexity is checked to one ulp: evaluated in binary64, 0.8x + 0.2x can
  // round one step above x, and the formula itself is required bit-exactly.
  bool exact = true, convex = true;
  int n = 0, ulp_excursions = 0;
  for (int i = 0; i <= 10; ++i)
    for (int j = 0; j <= 10; ++j, ++n) {
      const double pi = i / 10.0, pj = j / 10.0;
      const double want = (0.8 * pi + 0.2 * pj) / 1.0;
      const auto v = make_verdict(pi, pj);
      const auto t = combine_probabilities(Tensor<double>({1}, {pi}), Tensor<double>({1}, {pj}), 0.8, 0.2);
      exact = exact && v.p == want && t[0] == want && v.label == (want > 0.5 ? Label::kFake : Label::kReal);
      const double lo = std::min(pi, pj), hi = std::max(pi, pj);
      convex = convex && v.p >= std::nextafter(lo, -1.0) && v.p <= std::nextafter(hi, 2.0);
      ulp_excursions += v.p < lo || v.p > hi;
    }
  return {exact && convex, std::to_string(n) + " pairs, exact " + (exact ? "yes" : "no") + ", convex " +
                               (convex ? "yes" : "no") + " (" + std::to_string(ulp_excursions) +
                               " pairs sit one ulp outside by rounding)"};
}

Outcome attention_rows() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.embed_dim = 16;
  cfg.blood_dim = 16;
  DeepfakeDetector<float> model(cfg, 2);
  std::mt19937_64 rng(606);
  AttentionLog<float> log;
  ForwardTrace<float> trace;
  trace.attention = &log;
  NoGradGuard ng;
  for (int i = 0; i < 3; ++i) model.forward(prepare_inputs<float>(random_rgb(32, rng), cfg.bins), &trace);
  double worst = 0;
  bool nonneg = true;
  std::vector<std::string> seen;
  for (const auto& [site, w] : log.maps) {
    const std::string module = site.substr(0, site.find('.'));
    if (std::find(seen.begin(), seen.end(), module) == seen.end()) seen.push_back(module);
    const std::size_t rows = w.extent(0), cols = w.extent(1);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        s += double(w[r * cols + c]);
        nonneg = nonneg && w[r * cols + c] >= 0;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  const bool all_modules = seen == std::vector<std::string>{"freq", "csaf", "mpe", "ctrm", "blood"};
  std::string mods;
  for (const auto& m : seen) mods += m + " ";
  return {all_modules && nonneg && worst < 1e-6,
          std::to_string(log.maps.size()) + " maps from [ " + mods + "], worst |row sum - 1| " + fmt("%.2e", worst)};
}

Outcome scaled_experiment() {
  const fs::path data = scratch("scaled_corpus"), run = scratch("scaled_run");
  const Corpus corpus = synth(64, 64, 2024, data);
  TrainConfig cfg;
  cfg.model.image_size = 64;
  cfg.model.embed_dim = 32;
  cfg.epochs = 30;
  const auto train_set = load_dataset<float>(corpus, corpus.train, cfg.model);
  const auto val_set = load_dataset<float>(corpus, corpus.val, cfg.model);
  std::size_t first_hit = 0;
  const TrainResult r = train(train_set, val_set, cfg, run);
  for (const auto& m : r.history)
    if (!first_hit && m.val_auc >= 0.95) first_hit = m.epoch;

  // The reported AUC must equal the pairwise count on the validation scores.
  const auto model = load_model<float>(cfg, r.checkpoint.string());
  const EvalReport rep = evaluate(model, val_set);
  std::vector<ScoredLabel> scores;
  for (const auto& p : rep.predictions) scores.emplace_back(p.verdict.p, p.truth);
  bool brute_equal = scores.size() <= 50 && auc(scores) == oracle::brute_auc(scores) && rep.auc == r.best_auc;
  std::mt19937_64 rng(707);
  std::uniform_int_distribution<int> coarse(0, 7), label(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<ScoredLabel> s{{coarse(rng) / 8.0, 0}, {coarse(rng) / 8.0, 1}};
    for (int k = 2; k < 50; ++k) s.emplace_back(coarse(rng) / 8.0, label(rng));
    brute_equal = brute_equal && auc(s) == oracle::brute_auc(s);
  }
  return {r.best_auc >= 0.95 && brute_equal,
          "best val AUC " + fmt("%.4f", r.best_auc) + " (" + (first_hit ? "first >= 0.95 at epoch " + std::to_string(first_hit) : std::string("never >= 0.95")) +
              ", " + std::to_string(val_set.size()) + " val images), AUC == brute force: " +
              (brute_equal ? "yes" : "no")};
}

std::string cli_path() {
#ifdef DSDF_CLI
  return DSDF_CLI;
#else
  return "dsdf";
#endif
}

Outcome determinism() {
  const fs::path root = scratch("determinism");
  const std::string cli = cli_path();
  {
    std::ofstream cfg(root / "config.json");
    cfg << R"({"image_size": 32, "embed_dim": 16, "d_b": 16, "epochs": 3, "batch": 4, "seed": 9})";
  }
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + (root / "log.txt").string() + "\" 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  const std::string data = (root / "data").string();
  bool ok = run("synth --out \"" + data + "\" --count 24 --size 32 --seed 9");
  for (const char* name : {"a", "b"}) {
    ok = ok && run("train --deterministic --config \"" + (root / "config.json").string() + "\" --data \"" + data +
                   "\" --out \"" + (root / name).string() + "\"");
  }
  if (!ok) return {false, "CLI invocation failed; see " + (root / "log.txt").string()};
  const bool ckpt = slurp(root / "a" / kCheckpointFile) == slurp(root / "b" / kCheckpointFile);
  const bool metrics = slurp(root / "a" / kMetricsFile) == slurp(root / "b" / kMetricsFile);
  const bool nonempty = !slurp(root / "a" / kCheckpointFile).empty();
  return {ckpt && metrics && nonempty, std::string("checkpoints ") + (ckpt ? "identical" : "DIFFER") + ", metrics " +
                                           (metrics ? "identical" : "DIFFER") + " (3 epochs, 2 CLI runs)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"dft", "DFT matches direct summation; inverse round trip", 1, dft_oracle},
      {"parseval", "Parseval identity on random 64x64 images", 0, parseval},
      {"bands", "Band masks partition the spectrum; components sum to the image", 0, band_partition},
      {"trend", "Real images exceed blurred fakes in energy, entropy and PSD", 30, spectral_trend},
      {"shapes", "Full-geometry shape contract", 0, shape_contract},
      {"gradcheck", "Finite-difference gradient check, every parameter group", 120, gradient_check},
      {"combination", "Probability combination over a 121-point grid", 0, combination},
      {"attention", "Every attention matrix is row-stochastic", 0, attention_rows},
      {"experiment", "Scaled learning experiment reaches AUC >= 0.95", 300, scaled_experiment},
      {"determinism", "Deterministic runs are bit-identical", 0, determinism},
  };
  std::vector<std::string> filters(argv + 1, argv + argc);
  int failures = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const std::string& f) { return c.key.find(f) != std::string::npos; }))
      continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.2fs", secs);
    if (c.budget_s > 0) {
      const bool in_time = secs <= c.budget_s;
      o.pass = o.pass && in_time;
      timing += std::string(in_time ? " <= " : " > ") + fmt("%.0fs", c.budget_s);
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.key << ": " << c.title << " | " << o.detail << " | "
              << timing << std::endl;
    failures += !o.pass;
  }
  std::cout << (ran - failures) << "/" << ran << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
