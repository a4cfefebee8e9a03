#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "temp_dir.hpp"
#include "xsim/dataset.hpp"

namespace xsim {
namespace {

GenerationConfig only_ring_config() {
  GenerationConfig cfg;
  for (auto& [k, p] : cfg.probabilities) p = 0.0;
  cfg.probabilities["ring"] = 1.0;
  cfg.probabilities["shot_noise"] = 1.0;
  cfg.image_size = 64;
  cfg.image_count = 10;
  cfg.run_count = 2;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Image, TwoByTwoLayoutAndRoundTrip) {
  const SyntheticImage img{2, 2, {0, 1, 65535, 42}};
  const auto bytes = encode_image(img);
  ASSERT_EQ(bytes.size(), 21u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "XSIM");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 2);  // width, little-endian
  EXPECT_EQ(bytes[9], 2);
  EXPECT_EQ(bytes[17], 0xFF);
  EXPECT_EQ(bytes[18], 0xFF);
  EXPECT_EQ(bytes[19], 42);
  EXPECT_EQ(decode_image(bytes), img);

  TempDir dir;
  write_image(dir.path() / "a.xsim", img);
  EXPECT_EQ(read_image(dir.path() / "a.xsim"), img);
}

TEST(Image, FormatErrors) {
  auto expect_format = [](std::vector<unsigned char> b, const std::string& what) {
    try {
      decode_image(std::move(b));
      FAIL() << "expected a format error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Format);
      EXPECT_NE(std::string(e.what()).find(what), std::string::npos) << e.what();
    }
  };
  expect_format({}, "bad magic");
  auto bytes = encode_image({2, 2, {0, 1, 2, 3}});
  auto cut = bytes;
  cut.pop_back();
  expect_format(cut, "truncated");
  auto extra = bytes;
  extra.push_back(0);
  expect_format(extra, "trailing");
  auto huge = bytes;
  huge[5] = huge[6] = huge[7] = huge[8] = 0xFF;
  expect_format(huge, "truncated");
}

TEST(Manifest, RoundTripPreservesUnknownFields) {
  ManifestEntry e;
  e.id = "img_000001";
  e.path = "images/img_000001.xsim";
  e.run_id = 3;
  e.seed = 0xFFFFFFFFFFFFFFFFULL;
  e.attributes.add(Attribute::CircBeamstop);
  e.attributes.add(Attribute::Ring);
  e.attributes.add_extended("Ring: Isotropic");
  e.recipe_digest = "0123456789abcdef";
  e.extra["note"] = "kept";
  const Manifest m{e};
  std::istringstream in(manifest_to_string(m));
  const auto back = parse_manifest(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], e);
  EXPECT_NE(manifest_to_string(m).find("\"Circ. Beamstop\""), std::string::npos);
}

TEST(Manifest, ErrorsNameTheLine) {
  const std::string good =
      R"({"id":"a","path":"a.xsim","run_id":0,"seed":1,"attributes":["Ring"],"recipe_digest":"0"})";
  auto expect_line = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      parse_manifest(in);
      FAIL() << "expected error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Format);
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_line(good + "\n{not json\n", "line 2");
  expect_line(good + "\n" + good + "\n", "duplicate id");
  expect_line(R"({"id":"b","path":"b","run_id":0,"seed":1,"attributes":["Rings"],"recipe_digest":"0"})",
              "line 1");
}

TEST(Config, RejectsBadValuesNamingField) {
  auto fails_on = [](const nlohmann::json& j, const std::string& field) {
    try {
      generation_config_from_json(j);
      FAIL() << "expected config error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  fails_on({{"probabilities", {{"ring", 1.5}}}}, "probabilities.ring");
  fails_on({{"image_count", 3}, {"run_count", 5}}, "image_count");
  fails_on({{"ranges", {{"noise.exposure", {{"lo", 0.0}, {"hi", 1.0}, {"scale", "log"}}}}}},
           "ranges.noise.exposure");
  fails_on({{"bogus", 1}}, "bogus");
  const auto c = generation_config_from_json({{"master_seed", 9}, {"image_size", 128}});
  EXPECT_EQ(c.master_seed, 9u);
  EXPECT_EQ(c.image_size, 128u);
  EXPECT_EQ(c.run_count, 13u);
}

TEST(Config, JsonRoundTrip) {
  GenerationConfig c;
  c.master_seed = 77;
  c.ranges["ring.amplitude"] = {1.0, 2.0, true, false};
  const auto back = generation_config_from_json(nlohmann::json(c));
  EXPECT_EQ(back.master_seed, 77u);
  EXPECT_EQ(back.ranges, c.ranges);
  EXPECT_EQ(back.probabilities, c.probabilities);
}

TEST(Sample, RingOnlyConfigGivesExactlyOneRing) {
  const auto cfg = only_ring_config();
  const auto run = make_run_template(cfg, 0);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto r = sample_recipe(cfg, run, image_seed(cfg.master_seed, s));
    ASSERT_EQ(r.modules.size(), 1u);
    EXPECT_TRUE(std::holds_alternative<Ring>(r.modules[0].spec));
  }
}

TEST(Sample, SameInputsSameDigest) {
  GenerationConfig cfg;
  const auto run = make_run_template(cfg, 4);
  for (std::uint64_t s = 0; s < 20; ++s)
    EXPECT_EQ(recipe_digest(sample_recipe(cfg, run, s)), recipe_digest(sample_recipe(cfg, run, s)));
}

TEST(Sample, AllZeroProbabilitiesFallBackToRing) {
  GenerationConfig cfg;
  for (auto& [k, p] : cfg.probabilities) p = 0.0;
  const auto scene = sample_scene(cfg, make_run_template(cfg, 0), 123);
  EXPECT_TRUE(scene.fallback);
  ASSERT_EQ(scene.recipe.modules.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<Ring>(scene.recipe.modules[0].spec));
  EXPECT_TRUE(scene.tags.has(Attribute::Ring));
}

TEST(Sample, UntaggableConfigIsAnError) {
  // A sphere alone carries no canonical attribute, and with signal to
  // background near 5 it is neither strong nor weak.
  GenerationConfig cfg;
  cfg.image_size = 64;
  for (auto& [k, p] : cfg.probabilities) p = 0.0;
  cfg.probabilities["sphere"] = 1.0;
  cfg.ranges["sphere.level"] = {1.0, 1.000001, true, false};
  cfg.ranges["sphere.first_zero_rel"] = {0.5, 0.500001, true, false};
  cfg.ranges["noise.exposure"] = {10.0, 10.00001, true, false};
  cfg.ranges["noise.background"] = {1.0, 1.000001, true, false};
  try {
    sample_scene(cfg, make_run_template(cfg, 0), 5);
    FAIL() << "expected degenerate-config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Recipe);
    EXPECT_EQ(e.code(), "degenerate-config");
  }
}

TEST(RunTemplates, NarrowToWindowAndDifferAcrossRuns) {
  GenerationConfig cfg;
  std::vector<RunTemplate> runs;
  for (int r = 0; r < 13; ++r) runs.push_back(make_run_template(cfg, r));
  for (const auto& t : runs)
    for (const auto& [k, full] : cfg.ranges) {
      const auto& sub = t.ranges.at(k);
      EXPECT_GE(sub.lo, full.lo * (1 - 1e-12));
      EXPECT_LE(sub.hi, full.hi * (1 + 1e-12));
      if (full.log)
        EXPECT_NEAR(std::log(sub.hi / sub.lo), 0.3 * std::log(full.hi / full.lo), 1e-9);
      else
        EXPECT_NEAR(sub.hi - sub.lo, 0.3 * (full.hi - full.lo), 1e-9);
    }
  for (std::size_t a = 0; a < runs.size(); ++a)
    for (std::size_t b = a + 1; b < runs.size(); ++b) EXPECT_NE(runs[a].ranges, runs[b].ranges);
}

TEST(Generate, PartitionFilesAndDeterminism) {
  auto cfg = only_ring_config();
  TempDir a, b;
  const auto m1 = generate_dataset(cfg, a.path(), 2);
  const auto m2 = generate_dataset(cfg, b.path(), 1);
  ASSERT_EQ(m1.size(), 10u);
  std::set<int> runs;
  std::set<std::string> ids;
  for (const auto& e : m1) {
    runs.insert(e.run_id);
    ids.insert(e.id);
    EXPECT_FALSE(e.attributes.empty());
    EXPECT_TRUE(std::filesystem::exists(a.path() / e.path));
    EXPECT_EQ(slurp(a.path() / e.path), slurp(b.path() / e.path));
  }
  EXPECT_EQ(runs, (std::set<int>{0, 1}));
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(slurp(a.path() / "manifest.jsonl"), slurp(b.path() / "manifest.jsonl"));
  EXPECT_EQ(read_manifest(a.path() / "manifest.jsonl"), m1);
  EXPECT_TRUE(std::filesystem::exists(a.path() / "runs.json"));
}

TEST(Generate, MasterSeedChangesNearlyAllDigests) {
  GenerationConfig cfg;
  cfg.image_count = 100;
  cfg.image_size = 64;
  std::vector<RunTemplate> runs1, runs2;
  auto cfg2 = cfg;
  cfg2.master_seed = cfg.master_seed + 1;
  for (int r = 0; r < 13; ++r) {
    runs1.push_back(make_run_template(cfg, r));
    runs2.push_back(make_run_template(cfg2, r));
  }
  int changed = 0;
  for (std::size_t i = 0; i < 100; ++i)
    changed += generate_image(cfg, runs1, i).entry.recipe_digest !=
               generate_image(cfg2, runs2, i).entry.recipe_digest;
  EXPECT_GE(changed, 99);
}

TEST(Generate, ContiguousRunAssignment) {
  EXPECT_EQ(run_of_image(0, 10, 3), 0);
  EXPECT_EQ(run_of_image(9, 10, 3), 2);
  std::vector<int> counts(13, 0);
  for (std::size_t i = 0; i < 100; ++i) ++counts[run_of_image(i, 100, 13)];
  for (int c : counts) EXPECT_GE(c, 7);
}

}  // namespace
}  // namespace xsim
