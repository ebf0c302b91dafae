#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <sstream>

#include "kwmlp/cli.h"
#include "kwmlp/dsp.h"
#include "kwmlp/io.h"
#include "kwmlp/synthetic.h"
#include "test_util.h"

namespace kwmlp::cli {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out, err;
};

Run kwmlp(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli");
    ASSERT_EQ(kwmlp({"init", "--out", path("w.kwm"), "--seed", "3"}).code, 0);
    ASSERT_EQ(kwmlp({"synth", "--out", path("clips"), "--per-class", "2"}).code, 0);
    dsp::write_wav(path("one.wav"), synth::sine(440, 1.0, 0.5));
  }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static inline fs::path dir_;
};

TEST_F(CliTest, EmbedTimestampShape) {
  for (const std::string fmt : {"csv", "bin"}) {
    const auto out = path("ts." + fmt);
    const auto r = kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("one.wav"), "--mode",
                          "timestamp", "--format", fmt, "--output", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("98x64"), std::string::npos);
    const Matrix m = io::load_embeddings(out);
    EXPECT_EQ(m.rows(), 98u);
    EXPECT_EQ(m.cols(), 64u);
  }
}

TEST_F(CliTest, EmbedSceneShapeAndIdempotence) {
  for (const std::string alg : {"iterative", "single", "mean"}) {
    const auto out = path("scene_" + alg + ".bin");
    const std::vector<std::string> args{"embed", "--weights", path("w.kwm"), "--input", path("one.wav"),
                                        "--scene-alg", alg, "--depth", "4", "--format", "bin", "--output", out};
    ASSERT_EQ(kwmlp(args).code, 0);
    const auto first = io::read_file(out);
    const Matrix m = io::load_embeddings(out);
    EXPECT_EQ(m.rows(), 1u);
    EXPECT_EQ(m.cols(), 1024u);
    ASSERT_EQ(kwmlp(args).code, 0);
    EXPECT_EQ(io::read_file(out), first);
  }
  const auto r = kwmlp({"embed", "--weights", path("w.kwm"), "--manifest", path("clips/manifest.tsv"),
                        "--output", path("scenes.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::load_embeddings(path("scenes.csv")).rows(), 4u);
}

TEST_F(CliTest, EmbedErrors) {
  auto r = kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("one.wav"), "--depth", "13",
                  "--output", path("never.csv")});
  EXPECT_EQ(r.code, kBadFlags);
  EXPECT_NE(r.err.find("range"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("never.csv")));

  io::write_text(path("junk.kwm"), "not weights");
  EXPECT_EQ(kwmlp({"embed", "--weights", path("junk.kwm"), "--input", path("one.wav"), "--output",
                   path("never.csv")}).code, kBadWeights);
  EXPECT_EQ(kwmlp({"embed", "--weights", path("missing.kwm"), "--input", path("one.wav"), "--output",
                   path("never.csv")}).code, kBadWeights);
  io::write_text(path("junk.wav"), "RIFF....");
  EXPECT_EQ(kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("junk.wav"), "--output",
                   path("never.csv")}).code, kBadAudio);
  EXPECT_EQ(kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("nope.wav"), "--output",
                   path("never.csv")}).code, kBadAudio);
  EXPECT_EQ(kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("one.wav"), "--mode", "frames",
                   "--output", path("never.csv")}).code, kBadFlags);
  EXPECT_EQ(kwmlp({"embed", "--weights", path("w.kwm"), "--output", path("never.csv")}).code, kBadFlags);
  EXPECT_EQ(kwmlp({"embed", "--bogus"}).code, kBadFlags);
  EXPECT_EQ(kwmlp({}).code, kBadFlags);
  EXPECT_FALSE(fs::exists(path("never.csv")));
}

TEST_F(CliTest, TrainWritesCheckpointAndIsReproducible) {
  for (const std::string depth : {"8", "10", "12"}) {
    const std::vector<std::string> args{"train", "--manifest", path("clips/manifest.tsv"), "--out",
                                        path("t" + depth + ".kwm"), "--depth", depth, "--epochs", "2",
                                        "--warmup-epochs", "1", "--batch-size", "2", "--classes", "2",
                                        "--dim", "8", "--proj-dim", "16", "--seed", "1"};
    const auto r = kwmlp(args);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::load_weights(path("t" + depth + ".kwm")).config.L, std::stoi(depth));
    EXPECT_TRUE(fs::exists(path("t" + depth + ".kwm.opt")));
    EXPECT_TRUE(fs::exists(path("t" + depth + ".kwm.log.csv")));
    if (depth == "8") {
      const auto first = io::read_file(path("t8.kwm"));
      const auto log = io::read_file(path("t8.kwm.log.csv"));
      ASSERT_EQ(kwmlp(args).code, 0);
      EXPECT_EQ(io::read_file(path("t8.kwm")), first);
      EXPECT_EQ(io::read_file(path("t8.kwm.log.csv")), log);
    }
  }
}

TEST_F(CliTest, TrainManifestErrors) {
  io::write_text(path("empty.tsv"), "");
  EXPECT_EQ(kwmlp({"train", "--manifest", path("empty.tsv"), "--out", path("x.kwm")}).code, kBadManifest);
  io::write_text(path("broken.tsv"), "clip.wav seven\n");
  EXPECT_EQ(kwmlp({"train", "--manifest", path("broken.tsv"), "--out", path("x.kwm")}).code, kBadManifest);
  EXPECT_EQ(kwmlp({"train", "--manifest", path("clips/manifest.tsv"), "--out", path("x.kwm"), "--classes",
                   "1"}).code, kBadFlags);
  EXPECT_FALSE(fs::exists(path("x.kwm")));
}

TEST_F(CliTest, Probe) {
  Matrix x(8, 2);
  std::string manifest;
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = i % 2 ? 1.0 + 0.1 * i : -1.0 - 0.1 * i;
    x(i, 1) = 0.05 * i;
    manifest += "c" + std::to_string(i) + ".wav\t" + std::to_string(i % 2) + "\n";
  }
  io::write_text(path("p.csv"), io::embeddings_to_csv(x));
  io::write_text(path("p.tsv"), manifest);
  auto r = kwmlp({"probe", "--embeddings", path("p.csv"), "--manifest", path("p.tsv"), "--task", "toy",
                  "--depth", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["accuracy"], 1.0);
  EXPECT_EQ(j["task"], "toy");
  EXPECT_EQ(j["depth"], 4);

  io::write_text(path("short.tsv"), "a.wav\t0\nb.wav\t1\n");
  EXPECT_EQ(kwmlp({"probe", "--embeddings", path("p.csv"), "--manifest", path("short.tsv")}).code,
            kShapeMismatch);
  std::string one_class;
  for (int i = 0; i < 8; ++i) one_class += "a.wav\t0\n";
  io::write_text(path("one_class.tsv"), one_class);
  EXPECT_EQ(kwmlp({"probe", "--embeddings", path("p.csv"), "--manifest", path("one_class.tsv")}).code,
            kShapeMismatch);
  EXPECT_EQ(kwmlp({"probe", "--embeddings", path("absent.csv"), "--manifest", path("p.tsv")}).code,
            kBadAudio);
}

TEST_F(CliTest, InspectFreshModel) {
  const auto out = path("inspect");
  ASSERT_EQ(kwmlp({"inspect", "--weights", path("w.kwm"), "--out", out}).code, 0);
  int csvs = 0;
  for (const auto& e : fs::directory_iterator(out)) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 12);
  const auto j = nlohmann::json::parse(io::read_file(out + "/toeplitz.json"));
  ASSERT_EQ(j["blocks"].size(), 12u);
  for (const auto& b : j["blocks"]) EXPECT_EQ(b["toeplitzness"], 1.0);
  EXPECT_EQ(io::load_embeddings(out + "/G_block_00.csv").rows(), 98u);
  EXPECT_EQ(kwmlp({"inspect", "--weights", path("junk.kwm"), "--out", out}).code, kBadWeights);
}

TEST_F(CliTest, InterpDemo) {
  auto count = [&](const std::string& mode) {
    const auto r = kwmlp({"interp-demo", "--mode", mode, "--out", path(mode + ".pgm")});
    EXPECT_EQ(r.code, 0) << r.err;
    return nlohmann::json::parse(r.out)["nonzero"].get<int>();
  };
  EXPECT_GT(count("iterative"), count("direct"));
  EXPECT_EQ(kwmlp({"interp-demo", "--target", "0", "--out", path("z.pgm")}).code, kBadFlags);
  EXPECT_FALSE(fs::exists(path("z.pgm")));
}

TEST_F(CliTest, InputsAreNotModified) {
  const auto before = io::read_file(path("w.kwm"));
  const auto wav = io::read_file(path("one.wav"));
  kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("one.wav"), "--output", path("s.csv")});
  kwmlp({"inspect", "--weights", path("w.kwm"), "--out", path("inspect2")});
  EXPECT_EQ(io::read_file(path("w.kwm")), before);
  EXPECT_EQ(io::read_file(path("one.wav")), wav);
}

TEST_F(CliTest, ConfigPrintsDefaults) {
  const auto r = kwmlp({"config"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(dsp::to_config_text(dsp::parse_config_text(r.out)), r.out);
  io::write_text(path("bad.cfg"), "n_mfcc=abc\n");
  EXPECT_EQ(kwmlp({"embed", "--weights", path("w.kwm"), "--input", path("one.wav"), "--mfcc-config",
                   path("bad.cfg"), "--output", path("never.csv")}).code, kBadFlags);
}

}  // namespace
}  // namespace kwmlp::cli
