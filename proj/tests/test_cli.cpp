#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "temp_dir.hpp"
#include "xsim/binary_io.hpp"
#include "xsim/colormap.hpp"
#include "xsim/learneval.hpp"

namespace fs = std::filesystem;
using namespace xsim;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run xsim_cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(XSIM_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& json) {
  const auto p = dir / name;
  std::ofstream(p) << json;
  return p;
}

std::string cfg(int images, int size, int runs, int seed = 11) {
  return "{\"master_seed\": " + std::to_string(seed) + ", \"image_count\": " + std::to_string(images) +
         ", \"image_size\": " + std::to_string(size) + ", \"run_count\": " + std::to_string(runs) + "}";
}

}  // namespace

TEST(Cli, GenerateThenInspectEachImage) {
  TempDir t;
  const auto c = write_config(t.path(), "c.json", cfg(10, 64, 2));
  const auto g = xsim_cli(t.path(), "generate --config " + c.string() + " --out " + (t.path() / "d").string());
  ASSERT_EQ(g.code, 0) << g.err;
  const auto m = read_manifest(t.path() / "d" / "manifest.jsonl");
  ASSERT_EQ(m.size(), 10u);
  for (const auto& e : m) {
    const auto r = xsim_cli(t.path(), "inspect --image " + (t.path() / "d" / e.path).string());
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("format XSIM v1"), std::string::npos);
    EXPECT_NE(r.out.find("size 64 x 64"), std::string::npos);
  }
}

TEST(Cli, GenerateIsByteIdenticalAcrossThreadCounts) {
  TempDir t;
  const auto c = write_config(t.path(), "c.json", cfg(12, 64, 3));
  ASSERT_EQ(xsim_cli(t.path(), "generate --threads 1 --config " + c.string() + " --out " + (t.path() / "a").string()).code, 0);
  ASSERT_EQ(xsim_cli(t.path(), "generate --threads 3 --deterministic --config " + c.string() + " --out " +
                                   (t.path() / "b").string())
                .code,
            0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(t.path() / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), t.path() / "a");
    EXPECT_EQ(slurp(e.path()), slurp(t.path() / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 12u + 3u);
}

TEST(Cli, FullPipelineWritesReportAndCurve) {
  TempDir t;
  const auto d = t.path() / "d";
  const auto c = write_config(t.path(), "c.json", cfg(48, 64, 3));
  ASSERT_EQ(xsim_cli(t.path(), "generate --config " + c.string() + " --out " + d.string()).code, 0);
  const auto manifest_before = slurp(d / "manifest.jsonl");

  auto r = xsim_cli(t.path(), "codebook --data " + d.string() + " --k 8 --patches-per-image 10 --out " +
                                  (t.path() / "cb.xcbk").string());
  ASSERT_EQ(r.code, 0) << r.err;
  r = xsim_cli(t.path(), "features --data " + d.string() + " --mode bow --model " + (t.path() / "cb.xcbk").string() +
                             " --out " + (t.path() / "f.xftr").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto feat = (t.path() / "f.xftr").string(), man = (d / "manifest.jsonl").string();
  r = xsim_cli(t.path(), "train --features " + feat + " --manifest " + man + " --out " + (t.path() / "m.xsvm").string());
  ASSERT_EQ(r.code, 0) << r.err;
  r = xsim_cli(t.path(), "eval --features " + feat + " --manifest " + man + " --protocol random --report " +
                             (t.path() / "r.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mAP"), std::string::npos);

  const auto rep = read_report(t.path() / "r.json");
  EXPECT_EQ(rep.attributes.size() + rep.excluded.size(), kAttributeCount);
  EXPECT_EQ(rep.protocol, "random");

  r = xsim_cli(t.path(), "eval --features " + feat + " --manifest " + man + " --model " +
                             (t.path() / "m.xsvm").string() + " --report " + (t.path() / "fixed.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_report(t.path() / "fixed.json").protocol, "fixed");

  const auto name = rep.attributes.front().name;
  r = xsim_cli(t.path(), "prcurve --report-inputs " + (t.path() / "r.json").string() + " --attribute \"" + name +
                             "\" --out " + (t.path() / "pr.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(t.path() / "pr.csv");
  EXPECT_EQ(csv.rfind("threshold,recall,precision\n", 0), 0u);
  EXPECT_EQ(slurp(d / "manifest.jsonl"), manifest_before);
}

TEST(Cli, LoroOnSingleRunManifestExitsTwo) {
  TempDir t;
  const auto d = t.path() / "d";
  const auto c = write_config(t.path(), "c.json", cfg(8, 64, 1));
  ASSERT_EQ(xsim_cli(t.path(), "generate --config " + c.string() + " --out " + d.string()).code, 0);
  ASSERT_EQ(xsim_cli(t.path(), "codebook --data " + d.string() + " --k 4 --patches-per-image 5 --out " +
                                   (t.path() / "cb.xcbk").string())
                .code,
            0);
  ASSERT_EQ(xsim_cli(t.path(), "features --data " + d.string() + " --mode bow --model " +
                                   (t.path() / "cb.xcbk").string() + " --out " + (t.path() / "f.xftr").string())
                .code,
            0);
  const auto r = xsim_cli(t.path(), "eval --features " + (t.path() / "f.xftr").string() + " --manifest " +
                                        (d / "manifest.jsonl").string() + " --protocol loro --report " +
                                        (t.path() / "r.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("ERROR[single-run]", 0), 0u) << r.err;
  EXPECT_FALSE(fs::exists(t.path() / "r.json"));
}

TEST(Cli, UsageAndInputErrors) {
  TempDir t;
  auto r = xsim_cli(t.path(), "inspect --image x.xsim --bogus");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("ERROR[usage]", 0), 0u);
  EXPECT_NE(r.err.find("Usage:"), std::string::npos);

  r = xsim_cli(t.path(), "");
  EXPECT_EQ(r.code, 1);

  r = xsim_cli(t.path(), "features --data . --mode sift --model m --out f");
  EXPECT_EQ(r.code, 1);

  r = xsim_cli(t.path(), "eval --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--filter-single-run"), std::string::npos);

  r = xsim_cli(t.path(), "inspect --image " + (t.path() / "missing.xsim").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("ERROR[missing-input]", 0), 0u);

  const auto bad = t.path() / "bad.xsim";
  std::ofstream(bad, std::ios::binary) << "XSIZ\x01";
  r = xsim_cli(t.path(), "inspect --image " + bad.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("ERROR[format]", 0), 0u);

  const auto c = write_config(t.path(), "c.json", R"({"image_size": 16})");
  r = xsim_cli(t.path(), "generate --config " + c.string() + " --out " + (t.path() / "d").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("ERROR[config]", 0), 0u);
}

TEST(Cli, InspectWritesFalseColorPng) {
  TempDir t;
  SyntheticImage img{3, 2, {0, 10, 100, 1000, 10000, 65535}};
  write_image(t.path() / "i.xsim", img);
  const auto r = xsim_cli(t.path(), "inspect --image " + (t.path() / "i.xsim").string() + " --png " +
                                        (t.path() / "i.png").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("min 0\nmax 65535\n"), std::string::npos);
  const auto png = slurp(t.path() / "i.png");
  ASSERT_GT(png.size(), 8u);
  EXPECT_EQ(png.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
}

TEST(FalseColor, EndpointsAndConstantImage) {
  const SyntheticImage img{2, 1, {5, 4000}};
  const auto rgb = false_color(img);
  ASSERT_EQ(rgb.size(), 6u);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(rgb[c], kFalseColorLut[0][c]);
    EXPECT_EQ(rgb[3 + c], kFalseColorLut[255][c]);
  }
  const SyntheticImage flat{2, 2, {7, 7, 7, 7}};
  for (std::size_t i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(false_color(flat)[3 * i + c], kFalseColorLut[0][c]);
}
