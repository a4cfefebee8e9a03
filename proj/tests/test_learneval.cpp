#include <gtest/gtest.h>

#include <set>

#include "temp_dir.hpp"
#include "xsim/learneval.hpp"

namespace xsim {
namespace {

std::vector<std::string> all_names() {
  std::vector<std::string> v;
  for (auto n : kAttributeNames) v.emplace_back(n);
  return v;
}

ManifestEntry entry(const std::string& id, int run, std::initializer_list<Attribute> attrs = {}) {
  ManifestEntry e;
  e.id = id;
  e.path = "images/" + id + ".xsim";
  e.run_id = run;
  e.recipe_digest = "0";
  for (auto a : attrs) e.attributes.add(a);
  return e;
}

// Random labels for all 17 attributes, each present with probability p.
Manifest random_manifest(std::size_t n, int runs, double p, std::uint64_t seed) {
  Manifest m;
  Stream rng(seed, "m");
  for (std::size_t i = 0; i < n; ++i) {
    auto e = entry("img_" + std::to_string(i), static_cast<int>(i * runs / n));
    for (std::size_t a = 0; a < kAttributeCount; ++a)
      if (rng.bernoulli(p)) e.attributes.add(static_cast<Attribute>(a));
    m.push_back(e);
  }
  return m;
}

FeatureTable oracle_features(const Manifest& m) {
  FeatureTable t;
  t.values = RowMatrix::Zero(static_cast<Eigen::Index>(m.size()), kAttributeCount);
  for (std::size_t i = 0; i < m.size(); ++i) {
    t.ids.push_back(m[i].id);
    for (std::size_t a = 0; a < kAttributeCount; ++a)
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = m[i].attributes.canonical.test(a) ? 1.0 : 0.0;
  }
  return t;
}

// precision@k averaged over positive ranks, with the ranking given explicitly.
double brute_ap(const std::vector<int>& ranked_labels) {
  double hits = 0, sum = 0, pos = 0;
  for (int l : ranked_labels) pos += l;
  for (std::size_t k = 0; k < ranked_labels.size(); ++k)
    if (ranked_labels[k]) sum += ++hits / static_cast<double>(k + 1);
  return sum / pos;
}

TEST(Svm, SeparableOneDimensional) {
  RowMatrix X(6, 1);
  X << -1, -2, -0.5, 1, 2, 0.5;
  const std::vector<int> y{-1, -1, -1, 1, 1, 1};
  SvmOptions o;
  o.C = 100.0;
  o.l2_normalize = false;
  const auto m = train_ovr(X, {"a"}, {y}, o);
  ASSERT_EQ(m.scorers.size(), 1u);
  const auto s = svm_scores(m, X);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(s(i, 0) > 0, y[static_cast<std::size_t>(i)] > 0);
  const auto& log = m.scorers[0].primal_log;
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_LE(log[i], log[i - 1]);
}

TEST(Svm, DuplicatedDataWithHalvedCKeepsTheBoundary) {
  Stream rng(3, "dup");
  const int n = 80;
  RowMatrix X(n, 2), X2(2 * n, 2);
  std::vector<int> y(n), y2(2 * n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    y[static_cast<std::size_t>(i)] = X(i, 0) + 0.5 * X(i, 1) + 0.3 * rng.normal() > 0.2 ? 1 : -1;
    X2.row(2 * i) = X2.row(2 * i + 1) = X.row(i);
    y2[static_cast<std::size_t>(2 * i)] = y2[static_cast<std::size_t>(2 * i + 1)] = y[static_cast<std::size_t>(i)];
  }
  SvmOptions o;
  o.l2_normalize = false;
  o.tol = 1e-8;
  o.max_epochs = 20000;
  o.C = 1.0;
  const auto a = train_ovr(X, {"a"}, {y}, o);
  o.C = 0.5;
  const auto b = train_ovr(X2, {"a"}, {y2}, o);
  RowMatrix grid(21 * 21, 2);
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j) grid.row(i * 21 + j) << -2 + 0.2 * i, -2 + 0.2 * j;
  const auto sa = svm_scores(a, grid), sb = svm_scores(b, grid);
  int compared = 0;
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    if (std::abs(sa(i, 0)) > 1e-3) {
      EXPECT_EQ(sa(i, 0) > 0, sb(i, 0) > 0) << i;
      ++compared;
    }
  EXPECT_GT(compared, 400);
}

TEST(Svm, SingleClassAttributeIsSkipped) {
  RowMatrix X = RowMatrix::Random(10, 3);
  const std::vector<int> pos(10, 1), mixed{1, -1, 1, -1, 1, -1, 1, -1, 1, -1};
  const auto m = train_ovr(X, {"all", "mixed"}, {pos, mixed});
  ASSERT_EQ(m.scorers.size(), 1u);
  EXPECT_EQ(m.scorers[0].name, "mixed");
  ASSERT_EQ(m.skipped.size(), 1u);
  EXPECT_EQ(m.skipped[0].name, "all");
  EXPECT_THROW(svm_scores(m, RowMatrix::Random(2, 4)), Error);
  RowMatrix bad = X;
  bad(3, 1) = std::nan("");
  try {
    train_ovr(bad, {"mixed"}, {mixed});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
}

TEST(Svm, PrimalLogNonIncreasingOnNoisyData) {
  Stream rng(8, "noisy");
  RowMatrix X(300, 20);
  std::vector<int> y(300);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = rng.normal();
    y[static_cast<std::size_t>(i)] = rng.bernoulli(0.3) ? 1 : -1;
  }
  const auto m = train_ovr(X, {"a"}, {y});
  const auto& log = m.scorers[0].primal_log;
  ASSERT_GT(log.size(), 2u);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_LE(log[i], log[i - 1]);
}

TEST(Ap, KnownValues) {
  EXPECT_DOUBLE_EQ(average_precision({3, 2, 1, 0}, {1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(average_precision({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}), brute_ap({1, 0, 1, 0}), 1e-15);
  EXPECT_NEAR(average_precision({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  // Ties keep input order.
  EXPECT_DOUBLE_EQ(average_precision({1, 1}, {0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({1, 1}, {1, 0}), 1.0);
  try {
    average_precision({1, 2}, {0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "undefined-ap");
  }
}

TEST(Ap, MonotoneTransformInvariance) {
  Stream rng(4, "ap");
  std::vector<double> s(500), t(500);
  std::vector<int> y(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    t[i] = std::exp(3 * s[i]) + 7;
    y[i] = rng.bernoulli(0.2);
  }
  y[0] = 1;
  EXPECT_DOUBLE_EQ(average_precision(s, y), average_precision(t, y));
}

TEST(Ap, RandomScoresGivePrevalence) {
  Stream rng(5, "ap");
  const double pi = 0.15;
  std::vector<double> s(100000);
  std::vector<int> y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform();
    y[i] = rng.bernoulli(pi);
  }
  EXPECT_NEAR(average_precision(s, y), pi, 0.02);
}

// Exhaustive sweep: for each distinct score t, predict positive iff s >= t.
std::vector<PRPoint> sweep(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> th(s.begin(), s.end());
  double pos = 0;
  for (int v : y) pos += v;
  std::vector<PRPoint> out;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (y[i] ? tp : fp) += 1;
    out.push_back({t, tp / pos, tp / (tp + fp)});
  }
  return out;
}

TEST(PrCurve, MatchesExhaustiveSweep) {
  const std::vector<double> perfect{4, 3, 2, 1}, tied{1, 2, 2, 2, 3, 3, 0};
  const std::vector<int> yp{1, 1, 0, 0}, yt{0, 1, 0, 1, 1, 0, 1};
  EXPECT_EQ(pr_curve(perfect, yp).points, sweep(perfect, yp));
  const std::vector<double> inverted{1, 2, 3, 4};
  EXPECT_EQ(pr_curve(inverted, yp).points, sweep(inverted, yp));
  const auto c = pr_curve(tied, yt, "x");
  EXPECT_EQ(c.points, sweep(tied, yt));
  EXPECT_EQ(c.points.size(), 4u);
  for (std::size_t i = 1; i < c.points.size(); ++i) EXPECT_GE(c.points[i].recall, c.points[i - 1].recall);
  const auto csv = pr_curve_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "threshold,recall,precision");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Folds, LoroPartitions) {
  const auto m = random_manifest(130, 13, 0.3, 1);
  const auto folds = loro_folds(m);
  ASSERT_EQ(folds.size(), 13u);
  std::multiset<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), m.size());
    for (auto i : f.test) {
      seen.insert(i);
      EXPECT_EQ(m[i].run_id, *f.run_id);
    }
  }
  EXPECT_EQ(seen.size(), m.size());
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), m.size());
}

TEST(Folds, SizesAndNonContiguousIds) {
  Manifest m;
  for (int i = 0; i < 3; ++i) m.push_back(entry("a" + std::to_string(i), 2));
  for (int i = 0; i < 7; ++i) m.push_back(entry("b" + std::to_string(i), 9));
  const auto f = loro_folds(m);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(*f[0].run_id, 2);
  EXPECT_EQ(f[0].test.size(), 3u);
  EXPECT_EQ(*f[1].run_id, 9);
  EXPECT_EQ(f[1].test.size(), 7u);
  Manifest one{entry("x", 4), entry("y", 4)};
  try {
    loro_folds(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "single-run");
    EXPECT_EQ(e.kind(), ErrorKind::Data);
  }
  const auto r = random_split(random_manifest(100, 4, 0.3, 2), 0.8, 7);
  EXPECT_EQ(r.train.size(), 80u);
  EXPECT_EQ(r.test.size(), 20u);
}

TEST(Filter, EngineeredSingleRunAttributes) {
  auto m = random_manifest(120, 6, 0.4, 3);
  // Restrict three attributes to one run each.
  const std::map<Attribute, int> owner{{Attribute::FCC, 1}, {Attribute::WedgeBeamstop, 4}, {Attribute::Halo, 0}};
  for (auto& e : m)
    for (const auto& [a, run] : owner)
      if (e.run_id != run) e.attributes.canonical.reset(static_cast<std::size_t>(a));
  const auto f = filter_single_run_attributes(m);
  std::map<std::string, int> dropped(f.dropped.begin(), f.dropped.end());
  EXPECT_EQ(dropped, (std::map<std::string, int>{{"FCC", 1}, {"Wedge beamstop", 4}, {"Halo", 0}}));
  EXPECT_EQ(f.kept.size(), 14u);
}

TEST(Evaluate, OracleFeaturesGivePerfectMap) {
  const auto m = random_manifest(240, 6, 0.3, 4);
  const auto t = oracle_features(m);
  for (auto p : {Protocol::Loro, Protocol::Random}) {
    EvalOptions o;
    o.protocol = p;
    const auto r = evaluate(m, t, o);
    EXPECT_DOUBLE_EQ(r.map, 1.0) << protocol_name(p);
    EXPECT_EQ(r.attributes.size(), 17u);
    for (const auto& a : r.attributes) EXPECT_DOUBLE_EQ(a.mean_ap, 1.0) << a.name;
    for (std::size_t i = 1; i < r.attributes.size(); ++i) EXPECT_LT(r.attributes[i - 1].name, r.attributes[i].name);
  }
}

TEST(Evaluate, NoiseFeaturesGivePrevalence) {
  const auto m = random_manifest(1000, 5, 0.5, 5);
  FeatureTable t;
  t.values.resize(1000, 50);
  Stream rng(6, "noise");
  for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = rng.normal();
  for (const auto& e : m) t.ids.push_back(e.id);
  EvalOptions o;
  o.protocol = Protocol::Random;
  const auto r = evaluate(m, t, o);
  EXPECT_NEAR(r.map, r.prevalence_map, 0.05);
  EXPECT_NEAR(r.prevalence_map, 0.5, 0.05);
}

TEST(Evaluate, NoTestPositivesGiveNoApTerm) {
  auto m = random_manifest(120, 3, 0.4, 7);
  for (auto& e : m)
    if (e.run_id == 2) e.attributes.canonical.reset(static_cast<std::size_t>(Attribute::Ring));
  const auto r = evaluate(m, oracle_features(m));
  const auto it = std::find_if(r.attributes.begin(), r.attributes.end(), [](const auto& a) { return a.name == "Ring"; });
  ASSERT_NE(it, r.attributes.end());
  EXPECT_EQ(it->folds_defined, 2u);
  EXPECT_FALSE(it->fold_ap[2].has_value());
  EXPECT_EQ(it->fold_notes[2], "no test positives");
}

TEST(Evaluate, FilterExcludesWithReasonAndCSelection) {
  auto m = random_manifest(150, 3, 0.4, 8);
  for (auto& e : m)
    if (e.run_id != 1) e.attributes.canonical.reset(static_cast<std::size_t>(Attribute::BCC));
  EvalOptions o;
  o.filter_single_run = true;
  o.c_grid = {0.1, 1.0, 10.0};
  const auto r = evaluate(m, oracle_features(m), o);
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0].name, "BCC");
  EXPECT_NE(r.excluded[0].reason.find("run 1"), std::string::npos);
  EXPECT_EQ(r.attributes.size(), 16u);
  for (const auto& f : r.folds) EXPECT_TRUE(f.C == 0.1 || f.C == 1.0 || f.C == 10.0);
}

TEST(Evaluate, MissingFeatureRowIsAnError) {
  const auto m = random_manifest(20, 2, 0.5, 9);
  auto t = oracle_features(m);
  t.ids[3] = "other";
  try {
    evaluate(m, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ids");
  }
}

TEST(Formats, ReportAndSvmRoundTrips) {
  TempDir dir;
  const auto m = random_manifest(90, 3, 0.4, 10);
  const auto t = oracle_features(m);
  const auto r = evaluate(m, t);
  write_report(dir.path() / "r.json", r);
  const auto back = read_report(dir.path() / "r.json");
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  const auto c = report_pr_curve(back, "Ring");
  EXPECT_DOUBLE_EQ(c.points.back().recall, 1.0);

  std::vector<std::size_t> rows(m.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto model = train_ovr(t.values, all_names(), attribute_labels(m, all_names(), rows));
  write_svm(dir.path() / "m.xsvm", model);
  EXPECT_EQ(read_svm(dir.path() / "m.xsvm"), model);
  auto bytes = encode_svm(model);
  bytes[3] = 'X';
  EXPECT_THROW(decode_svm(bytes), Error);
  bytes = encode_svm(model);
  bytes.resize(bytes.size() / 2);
  try {
    decode_svm(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  const auto fixed = evaluate_model(m, t, model);
  EXPECT_EQ(fixed.protocol, "fixed");
  EXPECT_DOUBLE_EQ(fixed.map, 1.0);
}

}  // namespace
}  // namespace xsim
