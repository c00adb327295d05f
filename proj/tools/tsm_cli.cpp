// tsm: command-line front end for the shift engine.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 check failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsm/bench.hpp"
#include "tsm/checks.hpp"
#include "tsm/net.hpp"
#include "tsm/online.hpp"
#include "tsm/synth.hpp"
#include "tsm/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace tsm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheck = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

// "1x64x8x56x56" in N x C x T x H x W order.
ActivationShape parse_shape(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(part, &pos);
    } catch (const std::logic_error&) {
      pos = 0;
    }
    if (part.empty() || pos != part.size() || n == 0) throw UsageError("bad --shape \"" + text + "\"");
    v.push_back(static_cast<std::size_t>(n));
  }
  if (v.size() != 5) throw UsageError("--shape needs five extents NxCxTxHxW, got \"" + text + "\"");
  return {v[0], v[2], v[1], v[3], v[4]};
}

std::vector<bench::Fraction> parse_fractions(const std::string& text) {
  std::vector<bench::Fraction> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(bench::parse_fraction(part));
    } catch (const InvalidSpec& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("--fractions is empty");
  return out;
}

std::string format_row(std::span<const float> v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

void print_consensus(const Tensor& consensus) {
  const std::size_t n = consensus.extent(0), k = consensus.extent(1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = consensus.data().subspan(i * k, k);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    std::cout << "clip " << i << ": class " << best << "  consensus [" << format_row(row) << "]\n";
  }
}

// ---- shift-check ----

struct ShiftCheckArgs {
  std::uint64_t seed = 0;
  std::size_t cases = 100;
  bool inject_fault = false;
};

int cmd_shift_check(const ShiftCheckArgs& a) {
  if (a.cases == 0) throw UsageError("--cases must be at least 1");
  const auto results = checks::run_shift_checks(a.seed, a.cases, a.inject_fault);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.cases << " cases)";
    if (!r.passed) std::cout << "  first failure: " << r.detail;
    std::cout << '\n';
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitCheck;
}

// ---- infer-offline / infer-online ----

struct InferArgs {
  std::string spec, weights, clip, frames_dir, out;
  bool convert = false;
};

int cmd_infer_offline(const InferArgs& a) {
  const auto spec = load_spec(a.spec);
  const auto w = load_weights(a.weights);
  const auto clip = read_tensor(a.clip);
  const auto logits = forward_offline(clip, spec, w);
  const auto consensus = consensus_average(logits);
  fs::create_directories(a.out);
  write_tensor(fs::path(a.out) / "logits.tsmt", logits);
  write_tensor(fs::path(a.out) / "consensus.tsmt", consensus);
  print_consensus(consensus);
  return kExitOk;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
  static const std::regex pattern(R"(frame_(\d{5})\.tsmt)");
  std::map<std::size_t, fs::path> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) found.emplace(std::stoul(m[1].str()), e.path());
  }
  if (found.empty()) throw Error(dir.string() + " contains no frame_NNNNN.tsmt files");
  std::vector<fs::path> frames;
  for (const auto& [index, path] : found) {
    if (index != frames.size()) {
      char expected[32];
      std::snprintf(expected, sizeof expected, "frame_%05zu.tsmt", frames.size());
      throw Error("gap in frame numbering: " + std::string(expected) + " is missing");
    }
    frames.push_back(path);
  }
  return frames;
}

int cmd_infer_online(const InferArgs& a) {
  const auto spec = load_spec(a.spec);
  const auto w = load_weights(a.weights);
  const auto paths = list_frames(a.frames_dir);

  std::vector<Tensor> frames;
  for (const auto& p : paths) frames.push_back(read_tensor(p));
  const std::size_t batch = frame_shape(frames.front()).n;

  auto state = stream_init(spec, {.batch = batch, .convert_bidirectional = a.convert});
  for (const auto& msg : state.warnings) std::cerr << "warning: " << msg << '\n';

  std::vector<Tensor> logits;
  std::vector<double> times;
  Tensor consensus;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    StepResult r;
    try {
      r = stream_step(frames[i], w, state);
    } catch (const InvalidShape& e) {
      throw InvalidShape(paths[i].string() + ": " + e.what());
    }
    times.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count());
    logits.push_back(std::move(r.logits));
    consensus = std::move(r.consensus);
  }

  // (N, K) per frame stacked into (N, T, K).
  const std::size_t k = spec.num_classes, t = logits.size();
  auto stacked = Tensor::zeros({batch, t, k}, {Axis::N, Axis::T, Axis::C});
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < k; ++c) stacked[(n * t + f) * k + c] = logits[f][n * k + c];
    }
  }
  fs::create_directories(a.out);
  write_tensor(fs::path(a.out) / "logits.tsmt", stacked);
  write_tensor(fs::path(a.out) / "consensus.tsmt", consensus);
  print_consensus(consensus);
  std::cout << "frames: " << t << "  per-frame median: " << bench::summarize(times).median_ns / 1e6 << " ms\n";
  return kExitOk;
}

// ---- bench-shift / bench-net ----

struct BenchArgs {
  std::string shape = "1x64x8x56x56";
  std::string fractions = "0,1/8,1/4,1/2,1";
  std::string spec;
  std::size_t reps = bench::kMinReps;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  std::string csv;
};

void emit_report(const bench::CostReport& report, const std::string& csv) {
  if (csv.empty()) {
    bench::write_csv(std::cout, report);
    return;
  }
  auto out = open_out(csv);
  bench::write_csv(out, report);
  for (const auto& r : report.rows) {
    std::cout << r.label << ": median " << r.median_ns / 1e6 << " ms, overhead " << r.overhead_pct << "%";
    if (r.macs_per_frame) std::cout << ", " << r.macs_per_frame << " MACs/frame";
    std::cout << '\n';
  }
}

int cmd_bench_shift(const BenchArgs& a) {
  if (a.reps < bench::kMinReps) throw UsageError("--reps must be at least " + std::to_string(bench::kMinReps));
  emit_report(bench::bench_shift(parse_shape(a.shape), parse_fractions(a.fractions), a.reps, a.seed), a.csv);
  return kExitOk;
}

int cmd_bench_net(const BenchArgs& a) {
  if (a.reps < bench::kMinReps) throw UsageError("--reps must be at least " + std::to_string(bench::kMinReps));
  emit_report(bench::bench_network(load_spec(a.spec), a.reps, a.seed, a.batch), a.csv);
  return kExitOk;
}

// ---- gen-data ----

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t count = 100;
  std::size_t frames = 8, height = 16, width = 16;
  std::string out_dir;
  bool per_frame = false;
};

int cmd_gen_data(const GenArgs& a) {
  const auto clips = synth::gen_dataset(a.seed, a.count, a.frames, a.height, a.width);
  const fs::path root(a.out_dir);
  fs::create_directories(root);
  auto labels = open_out(root / "labels.csv");
  labels << "clip,label,row,start_col\n";
  char name[32];
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    std::snprintf(name, sizeof name, "clip_%05zu", i);
    write_tensor(root / (std::string(name) + ".tsmt"), c.clip);
    labels << name << ',' << c.label << ',' << c.row << ',' << c.start_col << '\n';
    if (!a.per_frame) continue;
    const fs::path dir = root / name;
    fs::create_directories(dir);
    char frame[32];
    for (std::size_t t = 0; t < a.frames; ++t) {
      std::snprintf(frame, sizeof frame, "frame_%05zu.tsmt", t);
      write_tensor(dir / frame, slice_frame(c.clip, 0, t));
    }
  }
  std::cout << "wrote " << clips.size() << " clips to " << root.string() << '\n';
  return kExitOk;
}

// ---- train-toy ----

struct TrainArgs {
  std::string config, out_weights, metrics_csv, out_spec;
  std::optional<std::uint64_t> seed;
};

int cmd_train_toy(const TrainArgs& a) {
  auto cfg = a.config.empty() ? synth::TrainConfig{} : synth::parse_train_config(read_text(a.config), a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto spec = synth::toy_spec(cfg);
  const auto split = synth::make_split(cfg);
  const auto result = synth::train(spec, cfg, split.train, split.test, [](const synth::EpochMetrics& m) {
    std::cout << "epoch " << m.epoch << "  loss " << m.train_loss << "  train_acc " << m.train_acc << "  test_acc "
              << m.test_acc << std::endl;
  });
  if (!a.out_weights.empty()) {
    if (fs::path(a.out_weights).has_parent_path()) fs::create_directories(fs::path(a.out_weights).parent_path());
    save_weights(result.weights, a.out_weights);
  }
  if (!a.out_spec.empty()) {
    if (fs::path(a.out_spec).has_parent_path()) fs::create_directories(fs::path(a.out_spec).parent_path());
    save_spec(spec, a.out_spec);
  }
  if (!a.metrics_csv.empty()) {
    auto out = open_out(a.metrics_csv);
    synth::write_metrics_csv(out, result.history);
  }
  std::cout << "final test accuracy " << result.history.back().test_acc << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal shift inference engine"};
  app.require_subcommand(1);

  ShiftCheckArgs check;
  auto* sc = app.add_subcommand("shift-check", "Run the shift property suite on random cases");
  sc->add_option("--seed", check.seed, "Random seed");
  sc->add_option("--cases", check.cases, "Cases per property")->capture_default_str();
  sc->add_flag("--inject-fault", check.inject_fault)->group("");

  InferArgs off;
  auto* io = app.add_subcommand("infer-offline", "Run a network over a whole clip");
  io->add_option("--spec", off.spec, "Network spec (JSON)")->required();
  io->add_option("--weights", off.weights, "Weights file")->required();
  io->add_option("--clip", off.clip, "Clip tensor (N,T,C,H,W)")->required();
  io->add_option("--out", off.out, "Output directory for logits.tsmt and consensus.tsmt")->required();

  InferArgs on;
  auto* il = app.add_subcommand("infer-online", "Stream frame_NNNNN.tsmt files through a network");
  il->add_option("--spec", on.spec, "Network spec (JSON)")->required();
  il->add_option("--weights", on.weights, "Weights file")->required();
  il->add_option("--frames-dir", on.frames_dir, "Directory of frame_NNNNN.tsmt files")->required();
  il->add_option("--out", on.out, "Output directory for logits.tsmt and consensus.tsmt")->required();
  il->add_flag("--convert-bidirectional", on.convert, "Stream a bidirectional network by dropping backward shifts");

  BenchArgs bs;
  auto* bsh = app.add_subcommand("bench-shift", "Time the offline shift at several fractions");
  bsh->add_option("--shape", bs.shape, "Activation shape NxCxTxHxW")->capture_default_str();
  bsh->add_option("--fractions", bs.fractions, "Comma-separated shifted fractions")->capture_default_str();
  bsh->add_option("--reps", bs.reps, "Timed repetitions")->capture_default_str();
  bsh->add_option("--seed", bs.seed, "Random seed");
  bsh->add_option("--csv", bs.csv, "CSV output path (default: stdout)");

  BenchArgs bn;
  auto* bnt = app.add_subcommand("bench-net", "Time a network with and without its shifts");
  bnt->add_option("--spec", bn.spec, "Network spec (JSON)")->required();
  bnt->add_option("--reps", bn.reps, "Timed repetitions")->capture_default_str();
  bnt->add_option("--batch", bn.batch, "Clips per pass")->capture_default_str()->check(CLI::PositiveNumber);
  bnt->add_option("--seed", bn.seed, "Random seed");
  bnt->add_option("--csv", bn.csv, "CSV output path (default: stdout)");

  GenArgs gen;
  auto* gd = app.add_subcommand("gen-data", "Write a synthetic moving-square dataset");
  gd->add_option("--seed", gen.seed, "Random seed");
  gd->add_option("--count", gen.count, "Number of clips (even)")->capture_default_str();
  gd->add_option("--frames", gen.frames, "Frames per clip")->capture_default_str();
  gd->add_option("--height", gen.height, "Frame height")->capture_default_str();
  gd->add_option("--width", gen.width, "Frame width")->capture_default_str();
  gd->add_option("--out-dir", gen.out_dir, "Output directory")->required();
  gd->add_flag("--per-frame", gen.per_frame, "Also write clip_NNNNN/frame_NNNNN.tsmt");

  TrainArgs tr;
  auto* tt = app.add_subcommand("train-toy", "Train the toy direction classifier");
  tt->add_option("--config", tr.config, "Training config (JSON); defaults apply to missing keys");
  tt->add_option("--seed", tr.seed, "Overrides the config seed");
  tt->add_option("--out-weights", tr.out_weights, "Where to save trained weights");
  tt->add_option("--out-spec", tr.out_spec, "Where to save the network spec");
  tt->add_option("--metrics-csv", tr.metrics_csv, "Per-epoch metrics CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sc) return cmd_shift_check(check);
    if (*io) return cmd_infer_offline(off);
    if (*il) return cmd_infer_online(on);
    if (*bsh) return cmd_bench_shift(bs);
    if (*bnt) return cmd_bench_net(bn);
    if (*gd) return cmd_gen_data(gen);
    if (*tt) return cmd_train_toy(tr);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
