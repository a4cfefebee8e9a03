// xsim: batch driver for dataset generation, features, training and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "png_out.hpp"
#include "xsim/autoencoder.hpp"
#include "xsim/colormap.hpp"
#include "xsim/dataset.hpp"
#include "xsim/features.hpp"
#include "xsim/learneval.hpp"

namespace fs = std::filesystem;
using namespace xsim;

namespace {

struct Common {
  unsigned threads = default_threads();
  bool deterministic = false;
};

void add_common(CLI::App* s, Common& c) {
  s->add_option("--threads", c.threads, "Worker thread cap")->check(CLI::Range(1u, 4096u));
  s->add_flag("--deterministic", c.deterministic, "Ordered reductions (always on; accepted for scripts)");
}

void need_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error(ErrorKind::Io, "missing-input", p.string() + ": no such file");
}

void need_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw Error(ErrorKind::Io, "missing-input", p.string() + ": no such directory");
  need_file(p / "manifest.jsonl");
}

void make_parent(const fs::path& p) {
  if (!p.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw Error(ErrorKind::Io, "io", "cannot create " + p.parent_path().string());
}

// Patches drawn per image from independent child streams, so the result
// does not depend on the thread count.
PatchSet sample_patches(const fs::path& data, const Manifest& m, std::size_t images, std::size_t per_image,
                        int patch, std::uint64_t seed, std::string_view label, unsigned threads) {
  std::vector<PatchSet> parts(images);
  const Stream base(seed, label);
  parallel_for(images, threads, [&](std::size_t i) {
    Stream rng = base.child(i);
    parts[i] = extract_patches(read_image(data / m[i].path), per_image, patch, rng, m[i].id);
  });
  return concat_patches(parts);
}

//---------------------------------------------------------------------------//

struct GenerateArgs {
  Common c;
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> image_count;
};

int run_generate(const GenerateArgs& a) {
  need_file(a.config);
  auto cfg = load_generation_config(a.config);
  if (a.seed) cfg.master_seed = *a.seed;
  if (a.image_count) cfg.image_count = *a.image_count;
  cfg.validate();
  const std::string out = a.out.empty() ? cfg.output_dir : a.out;
  if (out.empty()) throw Error(ErrorKind::Usage, "usage", "no output directory (--out or output_dir)");
  const auto m = generate_dataset(cfg, out, a.c.threads);
  std::printf("generated %zu images in %zu runs under %s\n", m.size(), cfg.run_count, out.c_str());
  return 0;
}

//---------------------------------------------------------------------------//

struct CodebookArgs {
  Common c;
  std::string data, out;
  std::size_t k = 256, per_image = 100, max_images = 0;
  int patch = 32, max_iters = 50;
  double tol = 1e-4;
  std::uint64_t seed = 1;
};

int run_codebook(const CodebookArgs& a) {
  need_dir(a.data);
  const auto m = read_manifest(fs::path(a.data) / "manifest.jsonl");
  const std::size_t n = a.max_images ? std::min(a.max_images, m.size()) : m.size();
  const auto ps = sample_patches(a.data, m, n, a.per_image, a.patch, a.seed, "codebook.patches", a.c.threads);
  KMeansOptions ko;
  ko.k = a.k;
  ko.max_iters = a.max_iters;
  ko.tol = a.tol;
  ko.seed = a.seed;
  ko.threads = a.c.threads;
  const auto cb = train_codebook(ps, ko);
  for (std::size_t i = 0; i < cb.objective.size(); ++i)
    std::printf("iter %zu objective %.6f\n", i + 1, cb.objective[i]);
  std::size_t empty = 0;
  for (auto u : cb.usage) empty += u == 0;
  make_parent(a.out);
  write_codebook(a.out, cb);
  std::printf("codebook K=%zu d=%zu from %zu patches (%zu images), %zu unused centroids -> %s\n", cb.k(),
              cb.dim(), ps.count(), n, empty, a.out.c_str());
  return 0;
}

//---------------------------------------------------------------------------//

struct AeTrainArgs {
  Common c;
  std::string data, out;
  bool grad_check = false;
  std::size_t patches = 10000;
  int epochs = 200, c1 = 16, c2 = 32, bottleneck = 64;
  std::size_t batch = 64;
  double lr = 1e-2;
  std::uint64_t seed = 1;
  std::string precision = "f32";
};

template <typename T>
void train_and_write(const AeTrainArgs& a, const PatchMatrix& X) {
  AEArchitecture arch;
  arch.c1 = a.c1;
  arch.c2 = a.c2;
  arch.bottleneck = a.bottleneck;
  auto model = init_autoencoder<T>(arch, a.seed);
  TrainOptions to;
  to.epochs = a.epochs;
  to.learning_rate = a.lr;
  to.batch_size = a.batch;
  to.seed = a.seed;
  to.threads = a.c.threads;
  to.on_epoch = [](int e, double loss, double lr) {
    std::printf("epoch %d loss %.6f lr %.3g\n", e, loss, lr);
    std::fflush(stdout);
  };
  train_autoencoder(model, X, to);
  std::printf("%s\n", format_reconstruction_stats(reconstruction_stats(model, X)).c_str());
  make_parent(a.out);
  write_autoencoder(a.out, model);
}

int run_ae_train(const AeTrainArgs& a) {
  need_dir(a.data);
  const auto m = read_manifest(fs::path(a.data) / "manifest.jsonl");
  if (m.empty() || a.patches == 0) throw Error(ErrorKind::Data, "empty", "no patches to train on");
  const std::size_t per_image = (a.patches + m.size() - 1) / m.size();
  const std::size_t images = std::min(m.size(), (a.patches + per_image - 1) / per_image);
  auto ps = sample_patches(a.data, m, images, per_image, 32, a.seed, "ae.patches", a.c.threads);
  const PatchMatrix X = ps.data.topRows(static_cast<Eigen::Index>(a.patches));

  if (a.grad_check) {
    AEArchitecture tiny;
    tiny.c1 = 2;
    tiny.c2 = 2;
    tiny.bottleneck = 4;
    const auto r = gradient_check(gradient_check_model(tiny, a.seed), X.topRows(3));
    const auto L = ae_layout(tiny);
    for (std::size_t t = 0; t < L.size(); ++t)
      std::printf("grad-check %-17s max rel %.3e\n", L[t].name, r.tensor_max_rel[t]);
    std::printf("grad-check %zu coordinates (%zu near zero, %zu across a kink): max rel %.3e, max abs %.3e, "
                "%zu failures\n",
                r.checked, r.small, r.kinked, r.max_rel_error, r.max_abs_error, r.failures);
    if (r.failures > 0) throw Error(ErrorKind::Numeric, "grad-check", "gradient check failed");
  }

  if (a.precision == "f64")
    train_and_write<double>(a, X);
  else
    train_and_write<float>(a, X);
  return 0;
}

//---------------------------------------------------------------------------//

struct FeaturesArgs {
  Common c;
  std::string data, mode, model, out, assign = "soft";
  std::vector<double> scales = {1.0, 1.5, 2.0};
};

template <typename Encoder>
FeatureTable extract_all(const fs::path& data, const Manifest& m, const Encoder& enc, const FeatureOptions& fo,
                         unsigned threads) {
  FeatureTable t;
  t.values.resize(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(kPyramidCells * enc.dim()));
  parallel_for(m.size(), threads, [&](std::size_t i) {
    const auto v = image_feature(read_image(data / m[i].path), enc, fo);
    t.values.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  });
  for (const auto& e : m) t.ids.push_back(e.id);
  return t;
}

int run_features(const FeaturesArgs& a) {
  need_dir(a.data);
  need_file(a.model);
  const auto m = read_manifest(fs::path(a.data) / "manifest.jsonl");
  FeatureOptions fo;
  fo.scales = a.scales;
  FeatureTable t;
  if (a.mode == "bow") {
    const auto cb = read_codebook(a.model);
    t = extract_all(a.data, m, HardEncoder{cb}, fo, a.c.threads);
  } else {
    const auto ae = read_autoencoder<double>(a.model);
    if (a.assign == "hard")
      t = extract_all(a.data, m, ArgmaxEncoder<double>{ae}, fo, a.c.threads);
    else
      t = extract_all(a.data, m, SoftEncoder<double>{ae}, fo, a.c.threads);
  }
  make_parent(a.out);
  write_feature_table(a.out, t);
  std::printf("%zu feature vectors of length %td (%s) -> %s\n", t.ids.size(), t.values.cols(), a.mode.c_str(),
              a.out.c_str());
  return 0;
}

//---------------------------------------------------------------------------//

struct SvmArgs {
  double C = 1.0;
  int max_epochs = 1000;
  double tol = 1e-3;
  std::uint64_t seed = 1;
  bool no_normalize = false;
};

void add_svm(CLI::App* s, SvmArgs& v) {
  s->add_option("--C", v.C, "SVM cost")->check(CLI::PositiveNumber);
  s->add_option("--max-epochs", v.max_epochs, "Coordinate descent passes")->check(CLI::PositiveNumber);
  s->add_option("--tol", v.tol, "Projected gradient gap");
  s->add_option("--svm-seed", v.seed, "Coordinate order seed");
  s->add_flag("--no-normalize", v.no_normalize, "Skip L2 normalization of features");
}

SvmOptions svm_options(const SvmArgs& v, unsigned threads) {
  SvmOptions o;
  o.C = v.C;
  o.max_epochs = v.max_epochs;
  o.tol = v.tol;
  o.seed = v.seed;
  o.l2_normalize = !v.no_normalize;
  o.threads = threads;
  return o;
}

struct TrainArgs {
  Common c;
  std::string features, manifest, out;
  SvmArgs svm;
};

int run_train(const TrainArgs& a) {
  need_file(a.features);
  need_file(a.manifest);
  const auto m = read_manifest(a.manifest);
  const RowMatrix X = align_features(m, read_feature_table(a.features));
  std::vector<std::string> names;
  for (auto n : kAttributeNames) names.emplace_back(n);
  std::vector<std::size_t> rows(m.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto model = train_ovr(X, names, attribute_labels(m, names, rows), svm_options(a.svm, a.c.threads));
  for (const auto& s : model.scorers)
    std::printf("%-22s passes %4d primal %.6g\n", s.name.c_str(), s.epochs,
                s.primal_log.empty() ? 0.0 : s.primal_log.back());
  for (const auto& s : model.skipped) std::printf("%-22s skipped: %s\n", s.name.c_str(), s.reason.c_str());
  make_parent(a.out);
  write_svm(a.out, model);
  return 0;
}

//---------------------------------------------------------------------------//

struct EvalArgs {
  Common c;
  std::string features, manifest, model, protocol, report;
  bool filter = false;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 1;
  std::vector<double> c_grid;
  SvmArgs svm;
};

void print_report(const EvalReport& r) {
  for (const auto& f : r.folds)
    std::printf("fold %-8s train %5zu test %5zu C %g\n", f.name.c_str(), f.train_count, f.test_count, f.C);
  for (const auto& a : r.attributes)
    std::printf("%-22s AP %.4f  prevalence %.4f  folds %zu/%zu\n", a.name.c_str(), a.mean_ap, a.prevalence,
                a.folds_defined, a.fold_ap.size());
  for (const auto& e : r.excluded) std::printf("%-22s excluded: %s\n", e.name.c_str(), e.reason.c_str());
  std::printf("mAP %.4f over %zu attributes (prevalence baseline %.4f)\n", r.map, r.attributes.size(),
              r.prevalence_map);
}

int run_eval(EvalArgs a) {
  need_file(a.features);
  need_file(a.manifest);
  if (!a.model.empty()) need_file(a.model);
  if (a.protocol.empty()) a.protocol = a.model.empty() ? "loro" : "fixed";
  if (a.protocol == "fixed" && a.model.empty())
    throw Error(ErrorKind::Usage, "usage", "--protocol fixed needs --model");
  const auto m = read_manifest(a.manifest);
  const auto ft = read_feature_table(a.features);
  EvalReport r;
  if (a.protocol == "fixed") {
    if (a.filter) throw Error(ErrorKind::Usage, "usage", "--filter-single-run needs a retraining protocol");
    r = evaluate_model(m, ft, read_svm(a.model));
  } else {
    EvalOptions eo;
    eo.protocol = a.protocol == "loro" ? Protocol::Loro : Protocol::Random;
    eo.train_fraction = a.train_fraction;
    eo.split_seed = a.split_seed;
    eo.filter_single_run = a.filter;
    eo.svm = svm_options(a.svm, a.c.threads);
    eo.c_grid = a.c_grid;
    if (!a.model.empty()) {
      // A supplied model fixes the hyperparameters used for per-fold retraining.
      const auto sm = read_svm(a.model);
      if (sm.dim != static_cast<std::size_t>(ft.values.cols()))
        throw Error(ErrorKind::Data, "dimension", "model and feature dimensions differ");
      if (!sm.scorers.empty()) eo.svm.C = sm.scorers.front().C;
      eo.svm.l2_normalize = sm.l2_normalize;
    }
    r = evaluate(m, ft, eo);
  }
  print_report(r);
  make_parent(a.report);
  write_report(a.report, r);
  return 0;
}

//---------------------------------------------------------------------------//

struct PrcurveArgs {
  Common c;
  std::vector<std::string> reports;
  std::string attribute, out;
};

int run_prcurve(const PrcurveArgs& a) {
  for (const auto& p : a.reports) need_file(p);
  EvalReport merged;
  std::size_t fold_base = 0;
  for (const auto& p : a.reports) {
    const auto r = read_report(p);
    if (auto it = r.scores.find(a.attribute); it != r.scores.end())
      for (auto s : it->second) {
        s.fold += fold_base;
        merged.scores[a.attribute].push_back(std::move(s));
      }
    fold_base += r.folds.size();
  }
  if (!merged.scores.contains(a.attribute))
    throw Error(ErrorKind::Data, "attribute", "no scores for attribute " + a.attribute);
  const auto curve = report_pr_curve(merged, a.attribute);
  const auto text = pr_curve_csv(curve);
  make_parent(a.out);
  io::write_file(a.out, {text.begin(), text.end()});
  std::printf("%zu points for %s -> %s\n", curve.points.size(), a.attribute.c_str(), a.out.c_str());
  return 0;
}

//---------------------------------------------------------------------------//

struct InspectArgs {
  Common c;
  std::string image, png;
};

int run_inspect(const InspectArgs& a) {
  need_file(a.image);
  const auto img = read_image(a.image);
  std::uint16_t lo = 0, hi = 0;
  double sum = 0.0;
  if (!img.pixels.empty()) {
    const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    lo = *mn;
    hi = *mx;
    for (auto v : img.pixels) sum += v;
  }
  const double mean = img.pixels.empty() ? 0.0 : sum / static_cast<double>(img.pixels.size());
  std::printf("file %s\nformat XSIM v%u\nsize %u x %u\nmin %u\nmax %u\nmean %.4f\n", a.image.c_str(),
              unsigned{kImageVersion}, img.width, img.height, unsigned{lo}, unsigned{hi}, mean);
  if (!a.png.empty()) {
    make_parent(a.png);
    cli::write_png_rgb(a.png, img.width, img.height, false_color(img));
    std::printf("false color -> %s\n", a.png.c_str());
  }
  return 0;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return 1;
    case ErrorKind::Numeric: return 3;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic x-ray scattering images, features, classifiers and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a labeled image dataset");
  g->add_option("--config", gen.config, "Generation config JSON")->required();
  g->add_option("--out", gen.out, "Output directory (default: output_dir from the config)");
  g->add_option("--seed", gen.seed, "Override master_seed");
  g->add_option("--image-count", gen.image_count, "Override image_count");
  add_common(g, gen.c);

  CodebookArgs cba;
  auto* cb = app.add_subcommand("codebook", "Train a k-means codebook on random patches");
  cb->add_option("--data", cba.data, "Dataset directory")->required();
  cb->add_option("--k", cba.k, "Codebook size")->check(CLI::PositiveNumber);
  cb->add_option("--out", cba.out, "Output XCBK file")->required();
  cb->add_option("--patches-per-image", cba.per_image, "Random patches per image")->check(CLI::PositiveNumber);
  cb->add_option("--max-images", cba.max_images, "Use only the first N images (0: all)");
  cb->add_option("--patch-size", cba.patch, "Patch side")->check(CLI::PositiveNumber);
  cb->add_option("--max-iters", cba.max_iters, "Lloyd iterations")->check(CLI::PositiveNumber);
  cb->add_option("--tol", cba.tol, "Relative objective decrease to stop");
  cb->add_option("--seed", cba.seed, "Patch sampling and seeding");
  add_common(cb, cba.c);

  AeTrainArgs aea;
  auto* ae = app.add_subcommand("ae-train", "Train the convolutional autoencoder on random patches");
  ae->add_option("--data", aea.data, "Dataset directory")->required();
  ae->add_option("--out", aea.out, "Output XAEM file")->required();
  ae->add_flag("--grad-check", aea.grad_check, "Finite-difference check on a tiny network first");
  ae->add_option("--patches", aea.patches, "Training patches")->check(CLI::PositiveNumber);
  ae->add_option("--epochs", aea.epochs, "Epochs")->check(CLI::PositiveNumber);
  ae->add_option("--batch", aea.batch, "Batch size")->check(CLI::PositiveNumber);
  ae->add_option("--lr", aea.lr, "Initial step size")->check(CLI::PositiveNumber);
  ae->add_option("--c1", aea.c1, "First conv maps");
  ae->add_option("--c2", aea.c2, "Second conv maps");
  ae->add_option("--bottleneck", aea.bottleneck, "Softmax bottleneck size");
  ae->add_option("--seed", aea.seed, "Initialization, patches and shuffling");
  ae->add_option("--precision", aea.precision, "Training arithmetic, f32 or f64 (the file stores f64)")
      ->check(CLI::IsMember({"f32", "f64"}));
  add_common(ae, aea.c);

  FeaturesArgs fa;
  auto* fe = app.add_subcommand("features", "Extract pyramid features for every image");
  fe->add_option("--data", fa.data, "Dataset directory")->required();
  fe->add_option("--mode", fa.mode, "bow or ae")->required()->check(CLI::IsMember({"bow", "ae"}));
  fe->add_option("--model", fa.model, "XCBK codebook (bow) or XAEM model (ae)")->required();
  fe->add_option("--out", fa.out, "Output XFTR file (ids go to FILE.ids)")->required();
  fe->add_option("--scales", fa.scales, "Scale factors")->delimiter(',');
  fe->add_option("--assign", fa.assign, "ae mode: soft (bottleneck sums) or hard (argmax counts)")
      ->check(CLI::IsMember({"soft", "hard"}));
  add_common(fe, fa.c);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train one-vs-rest linear SVMs on all rows");
  tr->add_option("--features", ta.features, "XFTR file")->required();
  tr->add_option("--manifest", ta.manifest, "manifest.jsonl")->required();
  tr->add_option("--out", ta.out, "Output XSVM file")->required();
  add_svm(tr, ta.svm);
  add_common(tr, ta.c);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate under a protocol and write a JSON report");
  ev->add_option("--features", ea.features, "XFTR file")->required();
  ev->add_option("--manifest", ea.manifest, "manifest.jsonl")->required();
  ev->add_option("--model", ea.model, "XSVM file: applied as-is (fixed) or sets C and normalization");
  ev->add_option("--protocol", ea.protocol, "loro, random or fixed")
      ->check(CLI::IsMember({"loro", "random", "fixed"}));
  ev->add_flag("--filter-single-run", ea.filter, "Drop attributes whose positives come from one run");
  ev->add_option("--report", ea.report, "Output report JSON")->required();
  ev->add_option("--train-fraction", ea.train_fraction, "Random split training share")
      ->check(CLI::Range(0.0, 1.0));
  ev->add_option("--split-seed", ea.split_seed, "Random split seed");
  ev->add_option("--c-grid", ea.c_grid, "Candidate C values, chosen per fold by 3-fold CV")->delimiter(',');
  add_svm(ev, ea.svm);
  add_common(ev, ea.c);

  PrcurveArgs pa;
  auto* pr = app.add_subcommand("prcurve", "Precision-recall curve CSV from report test scores");
  pr->add_option("--report-inputs", pa.reports, "Report JSON files (scores are pooled)")->required();
  pr->add_option("--attribute", pa.attribute, "Attribute name")->required();
  pr->add_option("--out", pa.out, "Output CSV")->required();
  add_common(pr, pa.c);

  InspectArgs ia;
  auto* in = app.add_subcommand("inspect", "Print an image header and count statistics");
  in->add_option("--image", ia.image, "XSIM file")->required();
  in->add_option("--png", ia.png, "Write a false-color PNG view");
  add_common(in, ia.c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR[usage] " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 1;
  }

  try {
    if (*g) return run_generate(gen);
    if (*cb) return run_codebook(cba);
    if (*ae) return run_ae_train(aea);
    if (*fe) return run_features(fa);
    if (*tr) return run_train(ta);
    if (*ev) return run_eval(ea);
    if (*pr) return run_prcurve(pa);
    if (*in) return run_inspect(ia);
  } catch (const Error& e) {
    std::cerr << "ERROR[" << e.code() << "] " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "ERROR[internal] " << e.what() << "\n";
    return 2;
  }
  return 1;
}
