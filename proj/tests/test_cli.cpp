#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "echomap/config.hpp"
#include "support.hpp"

using namespace echomap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

// Runs the CLI with `args`, capturing both streams into files under `dir`.
Run cli(const fixtures::ScratchDir& dir, const std::string& args) {
  const auto out = dir.path() / "stdout.txt", err = dir.path() / "stderr.txt";
  const std::string cmd = std::string(ECHOMAP_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text_file(out), read_text_file(err)};
}

std::string tiny_gen(const fs::path& out, int seed) {
  return "gen --rooms 3 --seed " + std::to_string(seed) + " --out " + out.string() +
         " --set preset=desk --set theta=36 --set length=32 --set max_order=1";
}

}  // namespace

TEST(RunConfig, DefaultsAreReferenceConstants) {
  RunConfig c;
  EXPECT_EQ(c.num("fs"), 16000.0);
  EXPECT_EQ(c.num("c"), 343.0);
  EXPECT_EQ(c.integer("n_mics"), 8);
  EXPECT_EQ(c.num("array_radius"), 0.05);
  EXPECT_EQ(c.integer("theta"), 360);
  EXPECT_EQ(c.integer("length"), 1000);
  EXPECT_EQ(c.num("gamma"), 0.5);
  EXPECT_EQ(c.integer("batch"), 50);
  EXPECT_EQ(c.num("weight_decay"), 5e-5);
  EXPECT_EQ(c.integer("patience"), 20);
  EXPECT_EQ(c.integer("epochs"), 200);
  EXPECT_EQ(c.num("w_max"), 4.0);
  EXPECT_EQ(c.num("snr_min"), 20.0);
  EXPECT_EQ(c.num("snr_max"), 50.0);

  auto d = c.dataset(), ref = DatasetConfig::full();
  EXPECT_EQ(d.theta, ref.theta);
  EXPECT_EQ(d.length, ref.length);
  EXPECT_EQ(d.max_order, ref.max_order);
  EXPECT_EQ(d.sampling.side_min_m, ref.sampling.side_min_m);
  EXPECT_EQ(d.sampling.tilt_max_deg, ref.sampling.tilt_max_deg);
  EXPECT_EQ(d.sampling.clearance_m, ref.sampling.clearance_m);
  auto m = c.model(d.theta, d.length);
  EXPECT_EQ(m.filters, (std::vector<int>{16, 32, 64, 64, 64}));
  EXPECT_EQ(m.kernels, (std::vector<int>{7, 5, 3, 3, 3}));
  EXPECT_EQ(m.head_hidden, 128);
  auto t = c.training();
  EXPECT_EQ(t.loss, LossKind::kRegularizedAttention);
  EXPECT_EQ(t.batch, 50);
}

TEST(RunConfig, UnknownKeysRejected) {
  fixtures::ScratchDir dir("cfg-unknown");
  RunConfig c;
  EXPECT_THROW(c.set("sample_rate", "8000"), Error);
  EXPECT_THROW(c.set_override("bogus=1"), Error);
  EXPECT_THROW(c.set_override("fs"), Error);
  write_text_file(dir.path() / "c.txt", "fs=8000\nfoo=1\n");
  EXPECT_THROW(c.load_file(dir.path() / "c.txt"), Error);
  EXPECT_THROW(c.set("preset", "huge"), Error);
}

TEST(RunConfig, PresetThenFileThenOverrides) {
  fixtures::ScratchDir dir("cfg-order");
  RunConfig c;
  // The preset line comes last but still applies first.
  write_text_file(dir.path() / "c.txt", "theta=45\npreset=desk\n");
  c.load_file(dir.path() / "c.txt");
  EXPECT_EQ(c.integer("theta"), 45);
  EXPECT_EQ(c.integer("length"), 250);
  EXPECT_EQ(c.integer("max_order"), 3);
  EXPECT_EQ(c.get("filters"), "8 16 32 32 32");
  c.set_override("length = 64");
  EXPECT_EQ(c.integer("length"), 64);
}

TEST(RunConfig, EchoRoundTrips) {
  fixtures::ScratchDir dir("cfg-echo");
  RunConfig a;
  a.set("preset", "desk");
  a.set_override("lambda=0.1");
  a.set_override("kernels=5 5 3 3 3");
  write_text_file(dir.path() / "echo.txt", a.to_string());
  RunConfig b;
  b.load_file(dir.path() / "echo.txt");
  EXPECT_EQ(a.to_string(), b.to_string());
}

TEST(RunConfig, ValidateCatchesBadValues) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.set("fs", "fast");
  EXPECT_THROW(c.validate(), Error);
  RunConfig g;
  g.set("gamma", "1.5");
  EXPECT_THROW(g.validate(), Error);
  RunConfig k;
  k.set("kernels", "7 4 3 3 3");
  EXPECT_THROW(k.validate(), Error);
}

TEST(Cli, HelpListsKeysWithReferenceDefaults) {
  fixtures::ScratchDir dir("cli-help");
  auto r = cli(dir, "--help");
  EXPECT_EQ(r.code, 0);
  for (const auto& k : config_keys()) EXPECT_NE(r.out.find(k.name), std::string::npos) << k.name;
  EXPECT_NE(r.out.find("16000"), std::string::npos);
}

TEST(Cli, BadFlagsExitTwoWithUsage) {
  fixtures::ScratchDir dir("cli-bad");
  const std::string x = (dir.path() / "x").string();
  for (const auto& args : std::vector<std::string>{"gen --rooms", "gen --rooms 2", "frobnicate",
                                 "gen --rooms 2 --out " + x + " --split holdout",
                                 "gen --rooms 2 --out " + x + " --set bogus=1",
                                 "gen --rooms 2 --out " + x + " --set fs=fast",
                                 "train --train /nonexistent --val /nonexistent --out " + dir.path().string()}) {
    auto r = cli(dir, args);
    EXPECT_EQ(r.code, 2) << args << "\n" << r.err;
    EXPECT_NE(r.err.find("Usage"), std::string::npos) << args;
  }
  EXPECT_FALSE(fs::exists(dir.path() / "x" / "manifest.txt"));
}

TEST(Cli, RuntimeFailureExitsOne) {
  fixtures::ScratchDir dir("cli-rt");
  fs::create_directories(dir.path() / "empty");
  write_text_file(dir.path() / "manifest.txt", "format_version=1\n");
  auto r = cli(dir, "eval --jdl " + (dir.path() / "empty").string() + " --lo " + (dir.path() / "empty").string() +
                        " --test " + (dir.path() / "manifest.txt").string() + " --out " +
                        (dir.path() / "o").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("echomap: "), std::string::npos) << r.err;
}

TEST(Cli, GenIsDeterministicAndEchoesConfig) {
  fixtures::ScratchDir dir("cli-gen");
  const auto a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(cli(dir, tiny_gen(a, 4)).code, 0);
  ASSERT_EQ(cli(dir, tiny_gen(b, 4)).code, 0);
  auto man = read_manifest(a / "manifest.txt");
  EXPECT_EQ(man.entries.size(), 3u);
  EXPECT_EQ(man.config.theta, 36);
  EXPECT_EQ(read_text_file(a / "manifest.txt"), read_text_file(b / "manifest.txt"));
  for (const auto& e : man.entries) {
    EXPECT_EQ(read_text_file(a / e.map_file), read_text_file(b / e.map_file));
  }
  auto echo = read_text_file(a / "effective_config.txt");
  EXPECT_NE(echo.find("theta=36\n"), std::string::npos);
  EXPECT_NE(echo.find("# seed=4\n"), std::string::npos);
  EXPECT_NE(echo.find("preset=desk\n"), std::string::npos);
  // The echo is itself a valid config file.
  RunConfig c;
  c.load_file(a / "effective_config.txt");
  EXPECT_EQ(c.integer("theta"), 36);
}
