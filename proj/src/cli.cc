#include "kwmlp/cli.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "kwmlp/ablation.h"
#include "kwmlp/dataset.h"
#include "kwmlp/dsp.h"
#include "kwmlp/encoder.h"
#include "kwmlp/interp_demo.h"
#include "kwmlp/io.h"
#include "kwmlp/kernels.h"
#include "kwmlp/probe.h"
#include "kwmlp/scene.h"
#include "kwmlp/synthetic.h"
#include "kwmlp/trainer.h"

namespace kwmlp::cli {
namespace {

namespace fs = std::filesystem;

// Carries an exit code out of a subcommand.
struct Failure {
  ExitCode code;
  std::string message;
};

[[noreturn]] void fail(ExitCode code, const std::string& message) { throw Failure{code, message}; }

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(kBadFlags, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

dsp::MfccConfig load_mfcc_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return dsp::parse_config_text(read_text(path));
  } catch (const std::invalid_argument& e) {
    fail(kBadFlags, std::string("bad MFCC config: ") + e.what());
  }
}

ModelWeights load_model(const std::string& path) {
  try {
    return io::load_weights(path);
  } catch (const std::exception& e) {
    fail(kBadWeights, "bad weights " + path + ": " + e.what());
  }
}

dsp::AudioBuffer load_audio(const std::string& path) {
  try {
    auto audio = dsp::read_wav(path);
    dsp::validate(audio);
    return audio;
  } catch (const std::exception& e) {
    fail(kBadAudio, "bad audio " + path + ": " + e.what());
  }
}

std::vector<data::ManifestEntry> load_manifest(const std::string& path, bool missing_is_audio) {
  if (!fs::exists(path)) fail(missing_is_audio ? kBadAudio : kBadManifest, "missing file " + path);
  try {
    auto entries = data::read_manifest(path);
    if (entries.empty()) fail(kBadManifest, "manifest " + path + " lists no clips");
    return entries;
  } catch (const data::ManifestError& e) {
    fail(kBadManifest, e.what());
  }
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  try {
    io::write_file(path, bytes);
  } catch (const std::exception& e) {
    fail(kIoFailure, e.what());
  }
}

void write_string(const std::string& path, const std::string& text) {
  try {
    io::write_text(path, text);
  } catch (const std::exception& e) {
    fail(kIoFailure, e.what());
  }
}

void write_matrix(const std::string& path, const Matrix& m, const std::string& format) {
  if (format == "bin") {
    write_bytes(path, io::serialize_embeddings(m));
  } else {
    write_string(path, io::embeddings_to_csv(m));
  }
}

// ---------------------------------------------------------------- embed

struct EmbedArgs {
  std::string weights, input, manifest, mode = "scene", scene_alg = "iterative", format = "csv",
                                          output, mfcc_config;
  int depth = 0;
};

void add_embed(CLI::App& app, EmbedArgs& a) {
  auto* c = app.add_subcommand("embed", "Compute timestamp or scene embeddings");
  c->add_option("--weights", a.weights, "KWM1 weight file")->required();
  c->add_option("--input", a.input, "Input WAV file");
  c->add_option("--manifest", a.manifest, "Manifest of WAVs; one scene row per clip");
  c->add_option("--mode", a.mode)->check(CLI::IsMember({"timestamp", "scene"}));
  c->add_option("--scene-alg", a.scene_alg)->check(CLI::IsMember({"iterative", "single", "mean"}));
  c->add_option("--depth", a.depth, "Blocks to run (default: all)");
  c->add_option("--format", a.format)->check(CLI::IsMember({"csv", "bin"}));
  c->add_option("--output", a.output)->required();
  c->add_option("--mfcc-config", a.mfcc_config, "key=value MFCC config file");
}

int cmd_embed(const EmbedArgs& a, std::ostream& out) {
  if (a.input.empty() == a.manifest.empty()) fail(kBadFlags, "give exactly one of --input, --manifest");
  if (!a.manifest.empty() && a.mode != "scene") fail(kBadFlags, "--manifest requires --mode scene");
  const auto mfcc_config = load_mfcc_config(a.mfcc_config);
  const ModelWeights weights = load_model(a.weights);
  const int depth = a.depth == 0 ? weights.config.L : a.depth;
  if (depth < 1 || depth > weights.config.L) {
    fail(kBadFlags, "--depth " + std::to_string(depth) + " out of range [1, " +
                        std::to_string(weights.config.L) + "]");
  }
  const scene::SceneConfig scene_config{16, scene::parse_algorithm(a.scene_alg)};

  std::vector<std::string> inputs;
  if (!a.input.empty()) {
    inputs.push_back(a.input);
  } else {
    for (const auto& e : load_manifest(a.manifest, true)) inputs.push_back(e.path);
  }

  auto embed_one = [&](const std::string& path) {
    const auto audio = load_audio(path);
    try {
      return encode_audio(audio, weights, depth, mfcc_config).values;
    } catch (const ShapeError& e) {
      fail(kBadWeights, std::string("weights do not fit the MFCC shape: ") + e.what());
    }
  };

  Matrix result;
  if (a.mode == "timestamp") {
    result = embed_one(inputs.front());
  } else {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto v = scene::scene_embedding(embed_one(inputs[i]), scene_config);
      if (i == 0) result = Matrix(inputs.size(), v.size());
      std::copy(v.begin(), v.end(), result.row(i).begin());
    }
  }
  write_matrix(a.output, result, a.format);
  out << a.mode << " embeddings " << result.rows() << "x" << result.cols() << " (depth " << depth
      << ") -> " << a.output << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest, out, log, mfcc_config;
  int depth = 12, epochs = 140, batch_size = 256, classes = 35, dim = 64, proj_dim = 256;
  double lr = 0.001, warmup = 10.0, weight_decay = 0.1, smoothing = 0.1, survival = 0.9;
  std::uint64_t seed = 0;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Supervised pretraining of the encoder");
  c->add_option("--manifest", a.manifest, "path<TAB>label per line")->required();
  c->add_option("--out", a.out, "Output KWM1 weight file")->required();
  c->add_option("--log", a.log, "Training log CSV (default: <out>.log.csv)");
  c->add_option("--depth", a.depth, "Number of gMLP blocks")->check(CLI::PositiveNumber);
  c->add_option("--epochs", a.epochs)->check(CLI::PositiveNumber);
  c->add_option("--batch-size", a.batch_size)->check(CLI::PositiveNumber);
  c->add_option("--classes", a.classes)->check(CLI::Range(2, 1 << 20));
  c->add_option("--dim", a.dim)->check(CLI::PositiveNumber);
  c->add_option("--proj-dim", a.proj_dim)->check(CLI::PositiveNumber);
  c->add_option("--lr", a.lr)->check(CLI::PositiveNumber);
  c->add_option("--warmup-epochs", a.warmup)->check(CLI::NonNegativeNumber);
  c->add_option("--weight-decay", a.weight_decay)->check(CLI::NonNegativeNumber);
  c->add_option("--label-smoothing", a.smoothing)->check(CLI::Range(0.0, 0.999));
  c->add_option("--survival", a.survival)->check(CLI::Range(1e-6, 1.0));
  c->add_option("--seed", a.seed);
  c->add_option("--mfcc-config", a.mfcc_config);
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  EncoderConfig enc;
  enc.L = a.depth;
  enc.n_classes = a.classes;
  enc.d = a.dim;
  enc.D = a.proj_dim;
  train::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.peak_lr = a.lr;
  tc.warmup_epochs = std::min(a.warmup, a.epochs - 1.0);
  tc.weight_decay = a.weight_decay;
  tc.label_smoothing = a.smoothing;
  tc.survival_prob = a.survival;
  tc.seed = a.seed;
  const auto mfcc_config = load_mfcc_config(a.mfcc_config);
  enc.F = mfcc_config.n_mfcc;
  enc.T = mfcc_config.frames_for(static_cast<std::size_t>(mfcc_config.sample_rate));
  try {
    enc.validate();
    tc.validate();
  } catch (const std::invalid_argument& e) {
    fail(kBadFlags, e.what());
  }

  const auto entries = load_manifest(a.manifest, false);
  for (const auto& e : entries) {
    if (e.label >= enc.n_classes) {
      fail(kBadManifest, "label " + std::to_string(e.label) + " >= --classes " +
                             std::to_string(enc.n_classes));
    }
  }
  std::vector<train::Example> examples;
  for (const auto& e : entries) {
    const auto audio = load_audio(e.path);
    for (auto& m : dsp::audio_to_mfccs(audio, mfcc_config)) examples.push_back({std::move(m), e.label});
  }

  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  int last_epoch = -1;
  auto progress = [&](const train::LogRow& row) {
    if (row.epoch != last_epoch) {
      last_epoch = row.epoch;
      out << "epoch " << row.epoch << " lr " << row.lr << " loss " << row.loss << "\n";
    }
  };
  const auto result = train::train(examples, enc, tc, progress);
  write_bytes(a.out, io::serialize_weights(result.weights));
  write_bytes(a.out + ".opt", train::serialize_optimizer(result.optimizer));
  write_string(log_path, train::log_to_csv(result.log));
  out << "trained L=" << enc.L << " on " << examples.size() << " segments, final epoch loss "
      << result.epoch_loss.back() << ", train accuracy " << train::accuracy(examples, result.weights)
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
  std::string embeddings, manifest, task = "task", algorithm = "iterative";
  int hidden = 0, epochs = 300, depth = 12;
  double lr = 0.01;
  std::uint64_t seed = 0;
};

void add_probe(CLI::App& app, ProbeArgs& a) {
  auto* c = app.add_subcommand("probe", "Fit a shallow probe on frozen embeddings");
  c->add_option("--embeddings", a.embeddings, "EMB1 or CSV, one row per manifest line")->required();
  c->add_option("--manifest", a.manifest, "Labels, in row order")->required();
  c->add_option("--hidden", a.hidden, "Hidden units (0 = linear)")->check(CLI::NonNegativeNumber);
  c->add_option("--epochs", a.epochs)->check(CLI::PositiveNumber);
  c->add_option("--lr", a.lr)->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed);
  c->add_option("--task", a.task, "Task name for the result line");
  c->add_option("--algorithm", a.algorithm, "Scene algorithm name for the result line");
  c->add_option("--depth", a.depth, "Encoder depth for the result line");
}

int cmd_probe(const ProbeArgs& a, std::ostream& out) {
  if (!fs::exists(a.embeddings)) fail(kBadAudio, "missing file " + a.embeddings);
  const auto entries = load_manifest(a.manifest, true);
  Matrix x;
  try {
    x = io::load_embeddings(a.embeddings);
  } catch (const std::exception& e) {
    fail(kShapeMismatch, std::string("bad embeddings: ") + e.what());
  }
  if (x.rows() != entries.size()) {
    fail(kShapeMismatch, "embeddings have " + std::to_string(x.rows()) + " rows, manifest has " +
                             std::to_string(entries.size()) + " labels");
  }
  std::vector<int> labels;
  for (const auto& e : entries) labels.push_back(e.label);
  probe::ProbeConfig pc;
  pc.hidden_units = a.hidden;
  pc.epochs = a.epochs;
  pc.lr = a.lr;
  pc.seed = a.seed;
  try {
    const auto fit = probe::fit_probe(x, labels, pc);
    out << probe::result_json_line(a.task, a.algorithm, a.depth, fit.accuracy) << "\n";
  } catch (const std::invalid_argument& e) {
    fail(kShapeMismatch, e.what());
  }
  return kOk;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string weights, out;
};

void add_inspect(CLI::App& app, InspectArgs& a) {
  auto* c = app.add_subcommand("inspect", "Export temporal projection matrices");
  c->add_option("--weights", a.weights)->required();
  c->add_option("--out", a.out, "Output directory")->required();
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const ModelWeights weights = load_model(a.weights);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) fail(kIoFailure, "cannot create " + a.out + ": " + ec.message());
  const auto temporal = export_temporal_weights(weights);
  nlohmann::ordered_json scores = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < temporal.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "G_block_%02zu.csv", i);
    write_string((fs::path(a.out) / name).string(), io::embeddings_to_csv(temporal[i].G));
    scores.push_back({{"block", i}, {"file", name}, {"toeplitzness", temporal[i].toeplitzness}});
  }
  nlohmann::ordered_json doc;
  doc["blocks"] = scores;
  write_string((fs::path(a.out) / "toeplitz.json").string(), doc.dump(2) + "\n");
  out << "exported " << temporal.size() << " temporal matrices to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- interp-demo

struct DemoArgs {
  int size = 1024, target = 32;
  double threshold = 0.0;
  std::string mode = "iterative", out;
};

void add_demo(CLI::App& app, DemoArgs& a) {
  auto* c = app.add_subcommand("interp-demo", "Downsample a ring image directly or iteratively");
  c->add_option("--size", a.size)->check(CLI::Range(1, 16384));
  c->add_option("--target", a.target)->check(CLI::Range(1, 16384));
  c->add_option("--mode", a.mode)->check(CLI::IsMember({"direct", "iterative"}));
  c->add_option("--threshold", a.threshold, "Count pixels strictly above this value")
      ->check(CLI::Range(0.0, 1.0));
  c->add_option("--out", a.out, "Output PGM")->required();
}

int cmd_demo(const DemoArgs& a, std::ostream& out) {
  const auto mode = demo::parse_mode(a.mode);
  const Matrix image = demo::downsample_image(demo::render_circle(a.size), a.target, mode);
  write_bytes(a.out, demo::encode_pgm(image));
  nlohmann::ordered_json j;
  j["mode"] = a.mode;
  j["size"] = a.size;
  j["target"] = a.target;
  j["threshold"] = a.threshold;
  j["nonzero"] = demo::count_nonzero(image, a.threshold);
  j["max"] = *std::max_element(image.flat().begin(), image.flat().end());
  out << j.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- init

struct InitArgs {
  std::string out;
  int depth = 12, classes = 35, dim = 64, proj_dim = 256;
  std::uint64_t seed = 0;
};

void add_init(CLI::App& app, InitArgs& a) {
  auto* c = app.add_subcommand("init", "Write randomly initialized weights");
  c->add_option("--out", a.out)->required();
  c->add_option("--depth", a.depth)->check(CLI::PositiveNumber);
  c->add_option("--classes", a.classes)->check(CLI::PositiveNumber);
  c->add_option("--dim", a.dim)->check(CLI::PositiveNumber);
  c->add_option("--proj-dim", a.proj_dim)->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed);
}

int cmd_init(const InitArgs& a, std::ostream& out) {
  EncoderConfig c;
  c.L = a.depth;
  c.n_classes = a.classes;
  c.d = a.dim;
  c.D = a.proj_dim;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    fail(kBadFlags, e.what());
  }
  const auto w = init_weights(c, a.seed);
  write_bytes(a.out, io::serialize_weights(w));
  out << "initialized L=" << c.L << " model, " << parameter_count(w) << " parameters -> " << a.out
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::vector<std::string> classes{"sine", "noise"};
  int per_class = 16;
  double min_seconds = 1.0, max_seconds = 1.0;
  std::uint64_t seed = 0;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Write a synthetic labelled WAV set and manifest");
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--classes", a.classes)->delimiter(',')->check(CLI::IsMember({"sine", "noise", "chirp"}));
  c->add_option("--per-class", a.per_class)->check(CLI::PositiveNumber);
  c->add_option("--min-seconds", a.min_seconds)->check(CLI::PositiveNumber);
  c->add_option("--max-seconds", a.max_seconds)->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed);
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.max_seconds < a.min_seconds) fail(kBadFlags, "--max-seconds below --min-seconds");
  synth::TaskSpec spec;
  spec.kinds.clear();
  for (const auto& c : a.classes) {
    spec.kinds.push_back(c == "sine" ? synth::Kind::kSine
                                     : c == "noise" ? synth::Kind::kNoise : synth::Kind::kChirp);
  }
  spec.clips_per_class = a.per_class;
  spec.min_seconds = a.min_seconds;
  spec.max_seconds = a.max_seconds;
  spec.seed = a.seed;
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) fail(kIoFailure, "cannot create " + a.out);
  const auto clips = synth::make_task(spec);
  std::vector<data::ManifestEntry> entries;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "clip_%04zu_%s.wav", i, synth::to_string(clips[i].kind).c_str());
    write_bytes((fs::path(a.out) / name).string(), dsp::encode_wav(clips[i].audio));
    entries.push_back({name, clips[i].label});
  }
  write_string((fs::path(a.out) / "manifest.tsv").string(), data::format_manifest(entries));
  out << "wrote " << clips.size() << " clips and manifest.tsv to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string out, weights;
  int per_class = 24;
  std::vector<int> depths{4, 8, 12};
  std::uint64_t seed = 0;
};

void add_ablate(CLI::App& app, AblateArgs& a) {
  auto* c = app.add_subcommand("ablate", "Scene algorithm x depth grid on a synthetic task");
  c->add_option("--out", a.out, "Report JSON")->required();
  c->add_option("--weights", a.weights, "Encoder (default: seeded random init)");
  c->add_option("--per-class", a.per_class)->check(CLI::Range(2, 100000));
  c->add_option("--depths", a.depths)->delimiter(',');
  c->add_option("--seed", a.seed);
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  ablation::AblationOptions opts;
  opts.task.clips_per_class = a.per_class;
  opts.task.seed = a.seed;
  opts.encoder_seed = a.seed;
  opts.probe.seed = a.seed;
  opts.depths = a.depths;
  std::optional<ModelWeights> weights;
  if (!a.weights.empty()) weights = load_model(a.weights);
  const int max_depth = weights ? weights->config.L : opts.encoder.L;
  for (int d : a.depths) {
    if (d < 1 || d > max_depth) fail(kBadFlags, "--depths entry " + std::to_string(d) + " out of range");
  }
  const auto report = ablation::run_ablation(opts, weights);
  write_string(a.out, report.dump(2) + "\n");
  out << report["scene_algorithms"].dump() << "\n" << report["encoder_depths"].dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- config

struct ConfigArgs {
  std::string out;
};

void add_config(CLI::App& app, ConfigArgs& a) {
  auto* c = app.add_subcommand("config", "Print or write the default MFCC config");
  c->add_option("--out", a.out);
}

int cmd_config(const ConfigArgs& a, std::ostream& out) {
  const std::string text = dsp::to_config_text(dsp::MfccConfig{});
  if (a.out.empty()) {
    out << text;
  } else {
    write_string(a.out, text);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::configure_threads_from_env();
  CLI::App app{"kwmlp: all-MLP audio embeddings"};
  app.require_subcommand(1);
  EmbedArgs embed;
  TrainArgs train_args;
  ProbeArgs probe_args;
  InspectArgs inspect;
  DemoArgs demo_args;
  InitArgs init;
  SynthArgs synth_args;
  AblateArgs ablate;
  ConfigArgs config;
  add_embed(app, embed);
  add_train(app, train_args);
  add_probe(app, probe_args);
  add_inspect(app, inspect);
  add_demo(app, demo_args);
  add_init(app, init);
  add_synth(app, synth_args);
  add_ablate(app, ablate);
  add_config(app, config);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kBadFlags;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "embed") return cmd_embed(embed, out);
    if (name == "train") return cmd_train(train_args, out);
    if (name == "probe") return cmd_probe(probe_args, out);
    if (name == "inspect") return cmd_inspect(inspect, out);
    if (name == "interp-demo") return cmd_demo(demo_args, out);
    if (name == "init") return cmd_init(init, out);
    if (name == "synth") return cmd_synth(synth_args, out);
    if (name == "ablate") return cmd_ablate(ablate, out);
    if (name == "config") return cmd_config(config, out);
  } catch (const Failure& f) {
    err << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoFailure;
  }
  err << "error: unknown subcommand " << name << "\n";
  return kBadFlags;
}

}  // namespace kwmlp::cli
