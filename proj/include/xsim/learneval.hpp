#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "xsim/attributes.hpp"
#include "xsim/binary_io.hpp"
#include "xsim/core.hpp"
#include "xsim/features.hpp"
#include "xsim/manifest.hpp"

namespace xsim {

//---------------------------------------------------------------------------//
// Linear SVM, one vs. all
//---------------------------------------------------------------------------//

struct SvmOptions {
  double C = 1.0;
  int max_epochs = 1000;
  double tol = 1e-3;  // stop when max - min projected gradient falls below
  std::uint64_t seed = 1;
  bool l2_normalize = true;
  unsigned threads = 1;
};

struct AttributeScorer {
  std::string name;
  Eigen::VectorXd w;
  double bias = 0.0;
  double C = 1.0;
  int epochs = 0;
  std::vector<double> primal_log;  // primal of the returned iterate after each pass

  friend bool operator==(const AttributeScorer& a, const AttributeScorer& b) {
    return a.name == b.name && a.w.size() == b.w.size() && a.w == b.w && a.bias == b.bias && a.C == b.C;
  }
};

struct SkippedAttribute {
  std::string name;
  std::string reason;
  friend bool operator==(const SkippedAttribute&, const SkippedAttribute&) = default;
};

struct SvmModel {
  std::size_t dim = 0;
  bool l2_normalize = true;
  std::vector<AttributeScorer> scorers;
  std::vector<SkippedAttribute> skipped;

  friend bool operator==(const SvmModel&, const SvmModel&) = default;
};

/// Row-wise L2 normalization; zero rows stay zero.
inline RowMatrix l2_normalized(const RowMatrix& X) {
  RowMatrix out = X;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

inline void check_finite(const RowMatrix& X) {
  if (!X.allFinite()) throw Error(ErrorKind::Numeric, "nan-features", "feature matrix has non-finite entries");
}

namespace detail {

/// Primal (1/2)(|w|^2 + b^2) + C sum max(0, 1 - y (w.x + b)).
inline double svm_primal(const RowMatrix& X, const std::vector<int>& y, const Eigen::VectorXd& w, double b,
                         double C) {
  const Eigen::VectorXd m = X * w;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    loss += std::max(0.0, 1.0 - y[static_cast<std::size_t>(i)] * (m(i) + b));
  return 0.5 * (w.squaredNorm() + b * b) + C * loss;
}

/// Dual coordinate descent for the L1-loss SVM with the bias as an extra
/// constant feature. X must already be normalized.
inline AttributeScorer train_binary(const RowMatrix& X, const std::vector<int>& y, const std::string& name,
                                    const SvmOptions& opt) {
  const auto n = static_cast<std::size_t>(X.rows());
  const double C = opt.C;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(X.cols());
  double b = 0.0;
  std::vector<double> alpha(n, 0.0), qii(n);
  for (std::size_t i = 0; i < n; ++i) qii[i] = X.row(static_cast<Eigen::Index>(i)).squaredNorm() + 1.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Stream rng(opt.seed, "svm." + name);

  AttributeScorer best{name, w, b, C, 0, {}};
  double best_primal = detail::svm_primal(X, y, w, b, C);
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    double pg_max = -std::numeric_limits<double>::infinity(), pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      const auto row = X.row(static_cast<Eigen::Index>(i));
      const double yi = y[i];
      const double G = yi * (row.dot(w) + b) - 1.0;
      double pg = G;
      if (alpha[i] == 0.0)
        pg = std::min(G, 0.0);
      else if (alpha[i] == C)
        pg = std::max(G, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg != 0.0) {
        const double old = alpha[i];
        alpha[i] = std::clamp(old - G / qii[i], 0.0, C);
        const double d = (alpha[i] - old) * yi;
        w += d * row.transpose();
        b += d;
      }
    }
    const double primal = detail::svm_primal(X, y, w, b, C);
    if (!std::isfinite(primal))
      throw Error(ErrorKind::Numeric, "divergence", "svm objective is not finite for " + name);
    if (primal <= best_primal) {
      best_primal = primal;
      best.w = w;
      best.bias = b;
    }
    best.primal_log.push_back(best_primal);
    best.epochs = epoch;
    if (pg_max - pg_min < opt.tol) break;
  }
  return best;
}

}  // namespace detail

/// One scorer per attribute with both classes present; labels are +1/-1
/// per attribute column. Single-class attributes are listed as skipped.
inline SvmModel train_ovr(const RowMatrix& features, const std::vector<std::string>& names,
                          const std::vector<std::vector<int>>& labels, const SvmOptions& opt = {}) {
  check_finite(features);
  if (names.size() != labels.size()) throw Error(ErrorKind::Data, "labels", "one label column per attribute");
  for (const auto& col : labels)
    if (col.size() != static_cast<std::size_t>(features.rows()))
      throw Error(ErrorKind::Data, "labels", "label count does not match feature rows");
  const RowMatrix X = opt.l2_normalize ? l2_normalized(features) : features;
  SvmModel m;
  m.dim = static_cast<std::size_t>(features.cols());
  m.l2_normalize = opt.l2_normalize;
  std::vector<std::optional<AttributeScorer>> out(names.size());
  std::vector<std::string> reason(names.size());
  parallel_for(names.size(), opt.threads, [&](std::size_t a) {
    const auto pos = std::count(labels[a].begin(), labels[a].end(), 1);
    const auto neg = static_cast<std::ptrdiff_t>(labels[a].size()) - pos;
    if (pos == 0 || neg == 0) {
      reason[a] = pos == 0 ? "no positive examples" : "no negative examples";
      return;
    }
    out[a] = detail::train_binary(X, labels[a], names[a], opt);
  });
  for (std::size_t a = 0; a < names.size(); ++a) {
    if (out[a])
      m.scorers.push_back(std::move(*out[a]));
    else
      m.skipped.push_back({names[a], reason[a]});
  }
  return m;
}

/// Decision values w.x + b, one column per scorer.
inline RowMatrix svm_scores(const SvmModel& m, const RowMatrix& features) {
  if (static_cast<std::size_t>(features.cols()) != m.dim)
    throw Error(ErrorKind::Data, "dimension", "feature length " + std::to_string(features.cols()) +
                                                  " does not match model " + std::to_string(m.dim));
  check_finite(features);
  const RowMatrix X = m.l2_normalize ? l2_normalized(features) : features;
  RowMatrix s(X.rows(), static_cast<Eigen::Index>(m.scorers.size()));
  for (std::size_t a = 0; a < m.scorers.size(); ++a)
    s.col(static_cast<Eigen::Index>(a)) = (X * m.scorers[a].w).array() + m.scorers[a].bias;
  return s;
}

//---------------------------------------------------------------------------//
// Average precision and PR curves
//---------------------------------------------------------------------------//

/// Indices by descending score; equal scores keep their input order.
inline std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

/// Mean of precision@k over the ranks k of the positives. `positive`
/// holds 0/1 flags.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw Error(ErrorKind::Data, "labels", "score and label counts differ");
  std::size_t hits = 0, total = 0;
  double sum = 0.0;
  for (int p : positive) total += p > 0;
  if (total == 0) throw Error(ErrorKind::Data, "undefined-ap", "average precision needs at least one positive");
  const auto order = ranking(scores);
  for (std::size_t k = 0; k < order.size(); ++k)
    if (positive[order[k]] > 0) sum += static_cast<double>(++hits) / static_cast<double>(k + 1);
  return sum / static_cast<double>(total);
}

struct PRPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

struct PRCurve {
  std::string attribute;
  std::vector<PRPoint> points;
};

/// One point per distinct score, predicting positive for score >= threshold.
inline PRCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& positive,
                        const std::string& attribute = {}) {
  if (scores.size() != positive.size()) throw Error(ErrorKind::Data, "labels", "score and label counts differ");
  const auto total = static_cast<double>(std::count_if(positive.begin(), positive.end(), [](int p) { return p > 0; }));
  if (total == 0) throw Error(ErrorKind::Data, "undefined-ap", "precision-recall curve needs at least one positive");
  const auto order = ranking(scores);
  PRCurve c{attribute, {}};
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (positive[order[k]] > 0 ? tp : fp) += 1.0;
    if (k + 1 < order.size() && scores[order[k + 1]] == scores[order[k]]) continue;
    c.points.push_back({scores[order[k]], tp / total, tp / (tp + fp)});
  }
  return c;
}

inline std::string pr_curve_csv(const PRCurve& c) {
  std::string out = "threshold,recall,precision\n";
  char buf[96];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.recall, p.precision);
    out += buf;
  }
  return out;
}

//---------------------------------------------------------------------------//
// Folds and attribute filtering
//---------------------------------------------------------------------------//

struct Fold {
  std::string name;
  std::optional<int> run_id;          // set for leave-one-run-out folds
  std::vector<std::size_t> train;     // manifest row indices, ascending
  std::vector<std::size_t> test;
};

/// One fold per distinct run id, ascending.
inline std::vector<Fold> loro_folds(const Manifest& m) {
  const auto runs = run_ids(m);
  if (runs.size() < 2)
    throw Error(ErrorKind::Data, "single-run",
                "leave-one-run-out needs at least two runs, manifest has " + std::to_string(runs.size()));
  std::vector<Fold> folds;
  for (int r : runs) {
    Fold f{"run " + std::to_string(r), r, {}, {}};
    for (std::size_t i = 0; i < m.size(); ++i) (m[i].run_id == r ? f.test : f.train).push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

/// A single seeded random train/test split.
inline Fold random_split(const Manifest& m, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw config_error("train_fraction", "must be in (0, 1)");
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  Stream rng(seed, "split");
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(m.size())));
  Fold f{"random", std::nullopt, {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)},
         {idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()}};
  std::sort(f.train.begin(), f.train.end());
  std::sort(f.test.begin(), f.test.end());
  return f;
}

struct AttributeFilter {
  std::vector<std::string> kept;
  std::vector<std::pair<std::string, int>> dropped;  // attribute, owning run
};

/// Drops every attribute whose positives all come from one run.
/// Attributes without positives are kept; evaluation excludes them later.
inline AttributeFilter filter_single_run_attributes(const Manifest& m) {
  AttributeFilter f;
  for (std::size_t a = 0; a < kAttributeCount; ++a) {
    std::set<int> runs;
    for (const auto& e : m)
      if (e.attributes.canonical.test(a)) runs.insert(e.run_id);
    const std::string name(kAttributeNames[a]);
    if (runs.size() == 1)
      f.dropped.emplace_back(name, *runs.begin());
    else
      f.kept.push_back(name);
  }
  return f;
}

/// +1/-1 label columns for the named attributes over the given rows.
inline std::vector<std::vector<int>> attribute_labels(const Manifest& m, const std::vector<std::string>& names,
                                                      const std::vector<std::size_t>& rows) {
  std::vector<std::vector<int>> out;
  for (const auto& name : names) {
    const auto a = attribute_from_name(name);
    if (!a) throw Error(ErrorKind::Data, "attribute", "unknown attribute " + name);
    std::vector<int> col;
    col.reserve(rows.size());
    for (std::size_t r : rows) col.push_back(m[r].attributes.has(*a) ? 1 : -1);
    out.push_back(std::move(col));
  }
  return out;
}

/// Feature rows reordered to match the manifest.
inline RowMatrix align_features(const Manifest& m, const FeatureTable& t) {
  std::map<std::string, Eigen::Index> row;
  for (std::size_t i = 0; i < t.ids.size(); ++i) row.emplace(t.ids[i], static_cast<Eigen::Index>(i));
  RowMatrix X(static_cast<Eigen::Index>(m.size()), t.values.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto it = row.find(m[i].id);
    if (it == row.end()) throw Error(ErrorKind::Data, "ids", "no feature row for id " + m[i].id);
    X.row(static_cast<Eigen::Index>(i)) = t.values.row(it->second);
  }
  return X;
}

inline RowMatrix select_rows(const RowMatrix& X, const std::vector<std::size_t>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

//---------------------------------------------------------------------------//
// Evaluation
//---------------------------------------------------------------------------//

enum class Protocol { Loro, Random, Fixed };

inline std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Loro: return "loro";
    case Protocol::Random: return "random";
    case Protocol::Fixed: return "fixed";
  }
  return "?";
}

struct EvalOptions {
  Protocol protocol = Protocol::Loro;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 1;
  bool filter_single_run = false;
  SvmOptions svm;
  std::vector<double> c_grid;  // non-empty: pick C per fold by 3-fold CV on the training rows
};

struct FoldInfo {
  std::string name;
  std::optional<int> run_id;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  double C = 1.0;
};

struct AttributeResult {
  std::string name;
  std::vector<std::optional<double>> fold_ap;  // per fold; empty when undefined
  std::vector<std::string> fold_notes;         // why a fold has no AP
  double mean_ap = 0.0;
  double prevalence = 0.0;  // mean test prevalence over the same folds
  std::size_t folds_defined = 0;
};

struct TestScore {
  std::string id;
  std::size_t fold = 0;
  double score = 0.0;
  bool positive = false;
};

struct EvalReport {
  std::string protocol;
  bool filtered = false;
  std::vector<FoldInfo> folds;
  std::vector<AttributeResult> attributes;  // sorted by name
  std::vector<SkippedAttribute> excluded;   // sorted by name
  double map = 0.0;
  double prevalence_map = 0.0;
  std::map<std::string, std::vector<TestScore>> scores;  // per attribute, test rows of every fold
};

namespace detail {

inline double cv_mean_ap(const RowMatrix& X, const std::vector<std::vector<int>>& labels,
                         const std::vector<std::string>& names, SvmOptions opt, double C, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Stream rng(seed, "cv");
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  opt.C = C;
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < n; ++i) (i % 3 == k ? te : tr).push_back(idx[i]);
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    std::vector<std::vector<int>> ltr, lte;
    for (const auto& col : labels) {
      std::vector<int> a, b;
      for (auto i : tr) a.push_back(col[i]);
      for (auto i : te) b.push_back(col[i] > 0);
      ltr.push_back(std::move(a));
      lte.push_back(std::move(b));
    }
    const auto model = train_ovr(select_rows(X, tr), names, ltr, opt);
    const auto s = svm_scores(model, select_rows(X, te));
    for (std::size_t j = 0; j < model.scorers.size(); ++j) {
      const auto a = static_cast<std::size_t>(
          std::find(names.begin(), names.end(), model.scorers[j].name) - names.begin());
      if (std::count(lte[a].begin(), lte[a].end(), 1) == 0) continue;
      std::vector<double> sc(te.size());
      for (std::size_t i = 0; i < te.size(); ++i) sc[i] = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      sum += average_precision(sc, lte[a]);
      ++terms;
    }
  }
  return terms ? sum / static_cast<double>(terms) : 0.0;
}

inline void finish_report(EvalReport& r, std::vector<AttributeResult> results) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  double sum = 0.0, prev = 0.0;
  for (auto& a : results) {
    if (a.folds_defined == 0) {
      std::string why = "no fold with a defined AP";
      for (const auto& note : a.fold_notes)
        if (!note.empty()) {
          why += " (" + note + ")";
          break;
        }
      r.excluded.push_back({a.name, why});
      continue;
    }
    sum += a.mean_ap;
    prev += a.prevalence;
    r.attributes.push_back(std::move(a));
  }
  std::sort(r.excluded.begin(), r.excluded.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  if (!r.attributes.empty()) {
    r.map = sum / static_cast<double>(r.attributes.size());
    r.prevalence_map = prev / static_cast<double>(r.attributes.size());
  }
}

// Scores one fold's test rows and accumulates per-attribute AP terms.
inline void score_fold(const Manifest& m, const RowMatrix& X, const SvmModel& model, const Fold& fold,
                       std::size_t fold_index, std::size_t fold_count, EvalReport& r,
                       std::map<std::string, AttributeResult>& acc, const std::vector<std::string>& names) {
  const auto s = svm_scores(model, select_rows(X, fold.test));
  for (const auto& name : names) {
    auto& res = acc[name];
    res.name = name;
    res.fold_ap.resize(fold_count);
    res.fold_notes.resize(fold_count);
  }
  const auto labels = attribute_labels(m, names, fold.test);
  for (std::size_t a = 0; a < names.size(); ++a) {
    auto& res = acc[names[a]];
    std::vector<int> pos(fold.test.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = labels[a][i] > 0;
    const auto n_pos = std::count(pos.begin(), pos.end(), 1);
    const auto it = std::find_if(model.scorers.begin(), model.scorers.end(),
                                 [&](const AttributeScorer& sc) { return sc.name == names[a]; });
    if (it == model.scorers.end()) {
      const auto sk = std::find_if(model.skipped.begin(), model.skipped.end(),
                                   [&](const SkippedAttribute& x) { return x.name == names[a]; });
      res.fold_notes[fold_index] = "not trained: " + (sk != model.skipped.end() ? sk->reason : "absent from model");
      continue;
    }
    const auto col = static_cast<Eigen::Index>(it - model.scorers.begin());
    std::vector<double> sc(fold.test.size());
    for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = s(static_cast<Eigen::Index>(i), col);
    auto& out = r.scores[names[a]];
    for (std::size_t i = 0; i < sc.size(); ++i) out.push_back({m[fold.test[i]].id, fold_index, sc[i], pos[i] > 0});
    if (n_pos == 0) {
      res.fold_notes[fold_index] = "no test positives";
      continue;
    }
    const double ap = average_precision(sc, pos);
    res.fold_ap[fold_index] = ap;
    ++res.folds_defined;
    res.mean_ap += (ap - res.mean_ap) / static_cast<double>(res.folds_defined);
    const double p = static_cast<double>(n_pos) / static_cast<double>(pos.size());
    res.prevalence += (p - res.prevalence) / static_cast<double>(res.folds_defined);
  }
}

}  // namespace detail

/// Trains and scores per fold. Attribute AP is the mean over folds with at
/// least one test positive; mAP is the mean over attributes with any AP.
inline EvalReport evaluate(const Manifest& m, const FeatureTable& features, const EvalOptions& opt = {}) {
  if (opt.protocol == Protocol::Fixed)
    throw Error(ErrorKind::Usage, "usage", "the fixed protocol needs a trained model (evaluate_model)");
  const RowMatrix X = align_features(m, features);
  check_finite(X);
  EvalReport r;
  r.protocol = protocol_name(opt.protocol);
  r.filtered = opt.filter_single_run;
  std::vector<Fold> folds;
  if (opt.protocol == Protocol::Loro)
    folds = loro_folds(m);
  else
    folds.push_back(random_split(m, opt.train_fraction, opt.split_seed));

  std::vector<std::string> names;
  if (opt.filter_single_run) {
    const auto f = filter_single_run_attributes(m);
    names = f.kept;
    for (const auto& [name, run] : f.dropped)
      r.excluded.push_back({name, "single-run attribute (all positives in run " + std::to_string(run) + ")"});
  } else {
    for (auto n : kAttributeNames) names.emplace_back(n);
  }

  std::map<std::string, AttributeResult> acc;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const auto& fold = folds[k];
    const RowMatrix Xtr = select_rows(X, fold.train);
    const auto ytr = attribute_labels(m, names, fold.train);
    SvmOptions svm = opt.svm;
    if (!opt.c_grid.empty()) {
      double best = -1.0;
      for (double C : opt.c_grid) {
        const double v = detail::cv_mean_ap(Xtr, ytr, names, opt.svm, C, opt.split_seed + k);
        if (v > best) {
          best = v;
          svm.C = C;
        }
      }
    }
    const auto model = train_ovr(Xtr, names, ytr, svm);
    r.folds.push_back({fold.name, fold.run_id, fold.train.size(), fold.test.size(), svm.C});
    detail::score_fold(m, X, model, fold, k, folds.size(), r, acc, names);
  }
  std::vector<AttributeResult> results;
  for (auto& [name, res] : acc) results.push_back(std::move(res));
  detail::finish_report(r, std::move(results));
  return r;
}

/// Scores every manifest row with an already trained model.
inline EvalReport evaluate_model(const Manifest& m, const FeatureTable& features, const SvmModel& model) {
  const RowMatrix X = align_features(m, features);
  EvalReport r;
  r.protocol = protocol_name(Protocol::Fixed);
  Fold all{"all", std::nullopt, {}, {}};
  all.test.resize(m.size());
  std::iota(all.test.begin(), all.test.end(), 0);
  std::vector<std::string> names;
  for (const auto& s : model.scorers) names.push_back(s.name);
  for (const auto& s : model.skipped) names.push_back(s.name);
  const double C = model.scorers.empty() ? 0.0 : model.scorers.front().C;
  r.folds.push_back({all.name, std::nullopt, 0, all.test.size(), C});
  std::map<std::string, AttributeResult> acc;
  detail::score_fold(m, X, model, all, 0, 1, r, acc, names);
  std::vector<AttributeResult> results;
  for (auto& [name, res] : acc) results.push_back(std::move(res));
  detail::finish_report(r, std::move(results));
  return r;
}

//---------------------------------------------------------------------------//
// Report JSON
//---------------------------------------------------------------------------//

inline nlohmann::json report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["protocol"] = r.protocol;
  j["filter_single_run"] = r.filtered;
  j["map"] = r.map;
  j["prevalence_map"] = r.prevalence_map;
  j["folds"] = json::array();
  for (const auto& f : r.folds) {
    json jf{{"name", f.name}, {"train", f.train_count}, {"test", f.test_count}, {"C", f.C}};
    if (f.run_id) jf["run_id"] = *f.run_id;
    j["folds"].push_back(jf);
  }
  j["attributes"] = json::array();
  for (const auto& a : r.attributes) {
    json ap = json::array(), notes = json::array();
    for (std::size_t k = 0; k < a.fold_ap.size(); ++k) {
      ap.push_back(a.fold_ap[k] ? json(*a.fold_ap[k]) : json(nullptr));
      notes.push_back(a.fold_notes[k]);
    }
    j["attributes"].push_back({{"name", a.name},
                               {"ap", a.mean_ap},
                               {"prevalence", a.prevalence},
                               {"folds_defined", a.folds_defined},
                               {"fold_ap", ap},
                               {"fold_notes", notes}});
  }
  j["excluded"] = json::array();
  for (const auto& e : r.excluded) j["excluded"].push_back({{"name", e.name}, {"reason", e.reason}});
  j["scores"] = json::object();
  for (const auto& [name, list] : r.scores) {
    json rows = json::array();
    for (const auto& t : list) rows.push_back({{"id", t.id}, {"fold", t.fold}, {"score", t.score}, {"positive", t.positive}});
    j["scores"][name] = rows;
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    j.at("protocol").get_to(r.protocol);
    j.at("filter_single_run").get_to(r.filtered);
    j.at("map").get_to(r.map);
    j.at("prevalence_map").get_to(r.prevalence_map);
    for (const auto& f : j.at("folds")) {
      FoldInfo fi;
      f.at("name").get_to(fi.name);
      f.at("train").get_to(fi.train_count);
      f.at("test").get_to(fi.test_count);
      f.at("C").get_to(fi.C);
      if (f.contains("run_id")) fi.run_id = f.at("run_id").get<int>();
      r.folds.push_back(fi);
    }
    for (const auto& a : j.at("attributes")) {
      AttributeResult res;
      a.at("name").get_to(res.name);
      a.at("ap").get_to(res.mean_ap);
      a.at("prevalence").get_to(res.prevalence);
      a.at("folds_defined").get_to(res.folds_defined);
      for (const auto& v : a.at("fold_ap")) res.fold_ap.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      a.at("fold_notes").get_to(res.fold_notes);
      r.attributes.push_back(std::move(res));
    }
    for (const auto& e : j.at("excluded")) r.excluded.push_back({e.at("name").get<std::string>(), e.at("reason").get<std::string>()});
    for (const auto& [name, rows] : j.at("scores").items())
      for (const auto& t : rows)
        r.scores[name].push_back({t.at("id").get<std::string>(), t.at("fold").get<std::size_t>(),
                                  t.at("score").get<double>(), t.at("positive").get<bool>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("report: ") + e.what());
  }
}

inline void write_report(const std::filesystem::path& p, const EvalReport& r) {
  const auto s = report_to_json(r).dump(2) + "\n";
  io::write_file(p, {s.begin(), s.end()});
}

inline EvalReport read_report(const std::filesystem::path& p) {
  const auto bytes = io::read_file(p);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw format_error(p.string() + ": " + e.what());
  }
  return report_from_json(j);
}

/// PR curve of one attribute from the test scores stored in a report,
/// pooled over folds.
inline PRCurve report_pr_curve(const EvalReport& r, const std::string& attribute) {
  const auto it = r.scores.find(attribute);
  if (it == r.scores.end()) throw Error(ErrorKind::Data, "attribute", "report has no scores for " + attribute);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& t : it->second) {
    s.push_back(t.score);
    y.push_back(t.positive ? 1 : 0);
  }
  return pr_curve(s, y, attribute);
}

//---------------------------------------------------------------------------//
// XSVM: "XSVM" | u8 version=1 | u32 dim | u8 l2_normalize | u32 scorers |
// per scorer: str name, f64 C, f64 bias, dim*f64 weights | u32 skipped |
// per skipped: str name, str reason.
//---------------------------------------------------------------------------//

inline constexpr std::string_view kSvmMagic = "XSVM";

inline std::vector<unsigned char> encode_svm(const SvmModel& m) {
  io::ByteWriter w;
  w.magic(kSvmMagic);
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(m.dim));
  w.u8(m.l2_normalize ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(m.scorers.size()));
  for (const auto& s : m.scorers) {
    w.str(s.name);
    w.f64(s.C);
    w.f64(s.bias);
    for (Eigen::Index i = 0; i < s.w.size(); ++i) w.f64(s.w(i));
  }
  w.u32(static_cast<std::uint32_t>(m.skipped.size()));
  for (const auto& s : m.skipped) {
    w.str(s.name);
    w.str(s.reason);
  }
  return w.bytes();
}

inline SvmModel decode_svm(std::vector<unsigned char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kSvmMagic);
  r.expect_version(1);
  SvmModel m;
  m.dim = r.u32();
  m.l2_normalize = r.u8() != 0;
  const std::uint32_t n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    AttributeScorer s;
    s.name = r.str();
    s.C = r.f64();
    s.bias = r.f64();
    r.expect_at_least(m.dim * 8);
    s.w.resize(static_cast<Eigen::Index>(m.dim));
    for (std::size_t i = 0; i < m.dim; ++i) s.w(static_cast<Eigen::Index>(i)) = r.f64();
    m.scorers.push_back(std::move(s));
  }
  const std::uint32_t ns = r.u32();
  for (std::uint32_t k = 0; k < ns; ++k) {
    SkippedAttribute s;
    s.name = r.str();
    s.reason = r.str();
    m.skipped.push_back(std::move(s));
  }
  r.expect_end();
  return m;
}

inline void write_svm(const std::filesystem::path& p, const SvmModel& m) { io::write_file(p, encode_svm(m)); }
inline SvmModel read_svm(const std::filesystem::path& p) { return decode_svm(io::read_file(p)); }

}  // namespace xsim
