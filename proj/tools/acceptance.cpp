// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Progress goes to standard error.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_app.hpp"
#include "msv/dsp/frontend.hpp"
#include "msv/encoder/encoder.hpp"
#include "msv/fusion/fusion.hpp"
#include "msv/metrics/metrics.hpp"
#include "msv/nn/ops.hpp"
#include "msv/rng.hpp"
#include "msv/training/losses.hpp"
#include "support/gradcases.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace msv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

std::string Fmt(const char *fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

/// Scores with optional ties from quantization.
void RandomScores(Rng &rng, int n, bool quantize, std::vector<double> &s, std::vector<int> &l) {
  s.clear();
  l.clear();
  for (int i = 0; i < n; ++i) {
    const int label = rng.Uniform(0.0, 1.0) < 0.3 ? 1 : 0;
    double v = rng.Normal() + 1.2 * label;
    if (quantize) v = std::round(v * 10.0) / 10.0;
    s.push_back(v);
    l.push_back(label);
  }
}

Outcome MetricOracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  const metrics::DcfParams p;
  Rng rng(2024);
  for (int set = 0; set < 20; ++set) {
    std::vector<double> s;
    std::vector<int> l;
    RandomScores(rng, 1000, set % 2 == 1, s, l);
    const auto sum = metrics::Evaluate(s, l, p);
    const double raw = oracle::BruteMinDcf(s, l, p.p_target, p.c_fr, p.c_fa);
    worst = std::max({worst, std::abs(sum.eer - oracle::BruteEer(s, l)), std::abs(sum.dcf.raw - raw),
                      std::abs(sum.dcf.normalized - raw / metrics::DefaultDcf(p))});
  }
  const double secs = Seconds(t0);
  return {worst <= 1e-12 && secs < 10.0, Fmt("20 sets x 1000 trials, max |diff| %.3g, %.2f s", worst, secs)};
}

Outcome GridSearch() {
  const auto t0 = Clock::now();
  bool equal = true, corners = true, counts = true;
  Rng rng(77);
  for (int set = 0; set < 10; ++set) {
    metrics::ScoreSet raw;
    raw.streams = {"FB", "LF", "HF"};
    const double sep[3] = {rng.Uniform(0.5, 2.0), rng.Uniform(0.5, 2.0), rng.Uniform(0.5, 2.0)};
    for (int i = 0; i < 300; ++i) {
      const int label = i % 3 == 0;
      std::vector<double> row;
      for (int st = 0; st < 3; ++st) row.push_back(rng.Normal() + sep[st] * label);
      raw.trial_ids.push_back("t" + std::to_string(i));
      raw.labels.push_back(label);
      raw.scores.push_back(row);
    }
    const auto norm = fusion::NormalizeScores(raw);
    fusion::SearchConfig cfg;
    const auto r = fusion::SearchWeights(norm, cfg);
    const auto b = oracle::BruteSearch(norm.scores, norm.labels, 100, cfg.dcf.p_target, cfg.dcf.c_fr, cfg.dcf.c_fa,
                                       cfg.dcf.normalize);
    counts = counts && r.candidates == 5151;
    equal = equal && r.objective == b.value && r.weights.k[0] == b.k1 && r.weights.k[1] == b.k2 &&
            r.weights.k[2] == b.k3;
    for (std::size_t st = 0; st < 3; ++st) {
      const auto col = norm.Column(st);
      corners = corners && r.objective <= fusion::EvaluateObjective(col, norm.labels, cfg);
    }
  }
  const double secs = Seconds(t0);
  return {equal && corners && counts && secs < 60.0,
          Fmt("brute-force equal: %s, 5151 candidates: %s, fused <= every single stream: %s, %.1f s",
              equal ? "yes" : "no", counts ? "yes" : "no", corners ? "yes" : "no", secs)};
}

Outcome Gradients() {
  const auto t0 = Clock::now();
  double worst_prim = 0.0, worst_e2e = 0.0;
  std::string worst_name;
  int inconsistent = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto &c : gradcases::PrimitiveCases()) {
      const auto r = c.run(seed);
      if (r.max_rel_err > worst_prim) {
        worst_prim = r.max_rel_err;
        worst_name = c.name;
      }
    }
    const auto e = gradcases::EndToEndCase(seed, gradcases::EndToEndOptions(seed));
    worst_e2e = std::max(worst_e2e, e.max_rel_err);
    inconsistent += e.inconsistent;
  }
  const double secs = Seconds(t0);
  return {worst_prim < 1e-4 && worst_e2e < 1e-3 && inconsistent == 0 && secs < 300.0,
          Fmt("%zu primitive cases x 20 seeds max rel err %.2e (%s), end-to-end %.2e, %.1f s",
              gradcases::PrimitiveCases().size(), worst_prim, worst_name.c_str(), worst_e2e, secs)};
}

Outcome LossClosedForms() {
  using nn::Tape;
  using nn::Tensor;
  const int classes = 10, n = 4, m = 2, dim = 16;
  Rng rng(5);
  auto head = training::SpeakerHead<double>::Create(dim, classes, 1);
  head.weight.value.Fill(0.0);
  Tensor<double> x({n * m, dim});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.Normal();
  std::vector<int> labels;
  for (int i = 0; i < n * m; ++i) labels.push_back(i % classes);
  double sm = 0.0, ap = 0.0;
  {
    Tape<double> tape;
    sm = tape.value(training::SoftmaxLoss(tape, tape.Constant(x), labels, head))[0];
  }
  Tensor<double> same({n * m, dim});
  for (int i = 0; i < n * m; ++i)
    for (int d = 0; d < dim; ++d) same[i * dim + d] = x[d];
  training::PrototypicalScale<double> scale;
  scale.omega.value[0] = 1.0;
  scale.bias.value[0] = 0.0;
  {
    Tape<double> tape;
    ap = tape.value(training::AngularPrototypicalLoss(tape, tape.Constant(same), n, m, scale))[0];
  }
  const double e1 = std::abs(sm - std::log(double(classes))), e2 = std::abs(ap - std::log(double(n)));
  return {e1 <= 1e-6 && e2 <= 1e-6,
          Fmt("softmax %.9f vs ln %d, angular-prototypical %.9f vs ln %d", sm, classes, ap, n)};
}

Outcome Shapes() {
  using nn::Shape;
  const encoder::EncoderConfig cfg;
  const dsp::FrontendConfig fe;
  const auto model = encoder::Encoder<float>::Create(cfg, fe, 1);
  nn::Tape<float> tape;
  std::vector<Shape> trace;
  nn::Var emb = model.Forward(tape, tape.Constant(nn::Tensor<float>({1, 40, 200, 1})), &trace);
  const std::vector<Shape> want = {{1, 40, 200, 16}, {1, 40, 200, 16}, {1, 20, 100, 32},
                                   {1, 10, 50, 64},  {1, 5, 25, 128},  {1, 25, 640}};
  bool ok = trace.size() == want.size() + 1;
  for (std::size_t i = 0; ok && i < want.size(); ++i) ok = trace[i] == want[i];
  ok = ok && tape.value(emb).shape() == Shape{1, 512};
  return {ok, ok ? "40x200x1 -> 40x200x16 -> 40x200x16 -> 20x100x32 -> 10x50x64 -> 5x25x128 -> 512"
                 : "layer trace differs from the expected chain"};
}

Outcome FrequencySelection() {
  const double ranges[7][2] = {{20, 8000}, {20, 1000}, {20, 2000}, {20, 4000}, {2000, 8000}, {1000, 8000}, {500, 8000}};
  bool inside = true;
  int filters = 0;
  for (const auto &r : ranges) {
    dsp::FrontendConfig cfg;
    cfg.f_min = r[0];
    cfg.f_max = r[1];
    const auto fb = dsp::BuildFilterbank(cfg);
    const double bin_hz = static_cast<double>(dsp::kSampleRate) / cfg.n_fft;
    for (int m = 0; m < fb.n_mels; ++m) {
      bool any = false;
      for (int k = 0; k < fb.n_bins; ++k) {
        if (fb.Weight(m, k) <= 0.0) continue;
        any = true;
        inside = inside && k * bin_hz >= r[0] && k * bin_hz <= r[1];
      }
      inside = inside && any;
      ++filters;
    }
  }
  dsp::FrontendConfig full;
  full.f_min = 20;
  full.f_max = 8000;
  const bool same = dsp::BuildFilterbank(full).weights == dsp::BuildFilterbank(dsp::FrontendConfig{}).weights;
  return {inside && same, Fmt("%d filters over 7 ranges inside their band: %s, [20,8000] equals default: %s", filters,
                              inside ? "yes" : "no", same ? "yes" : "no")};
}

// Desk-scale configuration shared by the end-to-end and determinism runs.
constexpr char kToyConfig[] =
    "encoder.base_channels=4\n"
    "encoder.blocks=1,1,1,1\n"
    "encoder.embed_dim=64\n"
    "encoder.attention_dim=32\n"
    "train.epochs=30\n"
    "train.val_every=5\n";

struct Stream {
  const char *name;
  const char *f_min;
  const char *f_max;
};
constexpr Stream kStreams[] = {{"fb", "20", "8000"}, {"lf", "20", "2000"}, {"hf", "1000", "8000"}};

int Cli(const std::vector<std::string> &args) {
  std::ostringstream out;
  const int code = cli::RunCli(args, out, std::cerr);
  std::cerr << "  msv";
  for (const auto &a : args) std::cerr << ' ' << a;
  std::cerr << "  -> " << code << (out.str().empty() ? "\n" : "\n    " + out.str());
  return code;
}

/// gen-corpus, three trained streams, embeddings, dev/test scores, weights.
bool Pipeline(const fs::path &dir, const std::string &epochs) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "toy.cfg");
    cfg << kToyConfig;
  }
  const std::string c = (dir / "corpus").string();
  auto at = [&](const std::string &name) { return (dir / name).string(); };
  if (Cli({"gen-corpus", "--out", c, "--speakers", "20", "--utts", "20", "--seconds", "3", "--split", "10,5",
           "--trials", "400", "--seed", "1"}))
    return false;
  for (const auto &s : kStreams) {
    const std::string model = at(std::string(s.name) + ".mdl");
    if (Cli({"train", "--manifest", c + "/train.tsv", "--f-min", s.f_min, "--f-max", s.f_max, "--out", model,
             "--config", at("toy.cfg"), "--epochs", epochs, "--val-manifest", c + "/dev.tsv", "--val-trials",
             c + "/dev_trials.txt"}))
      return false;
    for (const char *split : {"dev", "test"})
      if (Cli({"embed", "--model", model, "--manifest", c + "/" + split + ".tsv", "--out",
               at(std::string(s.name) + "." + split + ".emb")}))
        return false;
  }
  for (const std::string split : {"dev", "test"})
    if (Cli({"score", "--trials", c + "/" + split + "_trials.txt", "--out", at(split + ".scores"), "--embeddings",
             at("fb." + split + ".emb"), "--embeddings", at("lf." + split + ".emb"), "--embeddings",
             at("hf." + split + ".emb")}))
      return false;
  return Cli({"fuse-search", "--scores", at("dev.scores"), "--out", at("weights.txt")}) == 0;
}

Outcome DeskScale(const fs::path &work) {
  const auto t0 = Clock::now();
  const fs::path dir = work / "desk_scale";
  if (!Pipeline(dir, "30")) return {false, "pipeline command failed"};
  const double secs = Seconds(t0);

  const auto dev = metrics::LoadScores((dir / "dev.scores").string());
  const auto test = metrics::LoadScores((dir / "test.scores").string());
  const auto w = fusion::LoadWeights((dir / "weights.txt").string());
  const metrics::DcfParams p;
  double eer[3];
  for (int s = 0; s < 3; ++s) eer[s] = metrics::Evaluate(test.Column(s), test.labels, p).eer;
  const double fb_dev = metrics::Evaluate(dev.Column(0), dev.labels, p).dcf.normalized;
  const double fused_dev =
      metrics::Evaluate(fusion::FuseScores(fusion::NormalizeScores(dev), w.weights), dev.labels, p).dcf.normalized;
  const double fused_test = metrics::Evaluate(fusion::FuseScores(fusion::NormalizeScores(test), w.weights), test.labels, p).eer;
  const bool ok = secs < 1800.0 && eer[0] < 0.15 && eer[1] < 0.40 && eer[2] < 0.40 && fused_dev <= fb_dev &&
                  fused_test <= eer[0] + 0.01;
  return {ok, Fmt("test EER FB %.2f%% LF %.2f%% HF %.2f%%; dev minDCF fused %.4f vs FB %.4f; test EER fused %.2f%% "
                  "vs FB %.2f%% + 1; weights %.2f/%.2f/%.2f; %.0f s",
                  100 * eer[0], 100 * eer[1], 100 * eer[2], fused_dev, fb_dev, 100 * fused_test, 100 * eer[0],
                  w.weights.k[0], w.weights.k[1], w.weights.k[2], secs)};
}

std::string Slurp(const fs::path &p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome Determinism(const fs::path &work) {
  const fs::path a = work / "determinism_a", b = work / "determinism_b";
  if (!Pipeline(a, "2") || !Pipeline(b, "2")) return {false, "pipeline command failed"};
  std::set<std::string> files_a, files_b;
  for (const auto &e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files_a.insert(fs::relative(e.path(), a).string());
  for (const auto &e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) files_b.insert(fs::relative(e.path(), b).string());
  if (files_a != files_b) return {false, "runs produced different file sets"};
  std::map<std::string, int> kinds;
  for (const auto &f : files_a) {
    if (Slurp(a / f) != Slurp(b / f)) return {false, "differs: " + f};
    ++kinds[fs::path(f).extension().string()];
  }
  std::string detail = std::to_string(files_a.size()) + " files bit-identical across two runs (";
  for (const auto &[ext, n] : kinds) detail += std::to_string(n) + " " + (ext.empty() ? "other" : ext) + " ";
  detail.back() = ')';
  return {true, detail};
}

Outcome DcfCorners() {
  const metrics::DcfParams p;
  // Every target scores below every nontarget, so rejecting all trials is optimal.
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> l{1, 1, 0, 0};
  const auto pts = metrics::Sweep(s, l);
  const auto &corner = pts.back();
  const double corner_raw = p.c_fr * p.p_target * corner.frr + p.c_fa * (1 - p.p_target) * corner.far;
  const auto d = metrics::MinDcf(s, l, p);
  const bool ok = corner.far == 0.0 && corner.frr == 1.0 && std::abs(corner_raw - 0.05) < 1e-15 &&
                  std::abs(d.raw - 0.05) < 1e-15 && std::abs(d.normalized - 1.0) < 1e-15;
  return {ok, Fmt("reject-all raw %.6f, normalized %.6f", d.raw, d.normalized)};
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria (1-9)");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  fs::create_directories(dir);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric oracle equivalence", MetricOracle},
      {"grid-search correctness", GridSearch},
      {"gradient integrity", Gradients},
      {"loss closed forms", LossClosedForms},
      {"shape conformance", Shapes},
      {"frequency-selection filterbank", FrequencySelection},
      {"desk-scale end-to-end", [&] { return DeskScale(dir); }},
      {"determinism", [&] { return Determinism(dir); }},
      {"DCF corner values", DcfCorners},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    std::cerr << "running criterion " << id << ": " << criteria[i].first << "\n";
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
