#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "xsim/binary_io.hpp"
#include "xsim/core.hpp"
#include "xsim/image.hpp"

namespace xsim {

using PatchMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//---------------------------------------------------------------------------//
// Patches
//---------------------------------------------------------------------------//

struct PatchOrigin {
  std::string image_id;
  double cx = 0.0;  // patch center in source resolution
  double cy = 0.0;
};

/// Standardized square patches, one per row of `data` (d = size * size).
struct PatchSet {
  int size = 32;
  PatchMatrix data;
  std::vector<PatchOrigin> origins;

  std::size_t count() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(size) * size; }
};

inline PatchSet concat_patches(const std::vector<PatchSet>& parts) {
  PatchSet out;
  if (parts.empty()) return out;
  out.size = parts.front().size;
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.data.rows();
  out.data.resize(rows, static_cast<Eigen::Index>(out.dim()));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.size != out.size) throw Error(ErrorKind::Data, "patch-size", "mixed patch sizes");
    out.data.middleRows(at, p.data.rows()) = p.data;
    at += p.data.rows();
    out.origins.insert(out.origins.end(), p.origins.begin(), p.origins.end());
  }
  return out;
}

/// log1p of the raw counts.
inline Grid<float> log_image(const SyntheticImage& img) {
  Grid<float> g(img.width, img.height, 0.0f);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    g.data[i] = static_cast<float>(std::log1p(static_cast<double>(img.pixels[i])));
  return g;
}

/// Copies the patch with top-left (x0, y0) into `out` and standardizes it:
/// subtract the mean, divide by (std + 1e-6).
inline void standardized_patch(const Grid<float>& g, std::size_t x0, std::size_t y0, int size,
                               float* out) {
  const std::size_t s = static_cast<std::size_t>(size);
  double sum = 0.0;
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const float v = g(x0 + x, y0 + y);
      out[y * s + x] = v;
      sum += v;
    }
  const double n = static_cast<double>(s * s);
  const double mean = sum / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < s * s; ++i) ss += (out[i] - mean) * (out[i] - mean);
  const double inv = 1.0 / (std::sqrt(ss / n) + 1e-6);
  for (std::size_t i = 0; i < s * s; ++i) out[i] = static_cast<float>((out[i] - mean) * inv);
}

/// `count` patches at uniformly drawn top-left corners.
inline PatchSet extract_patches(const SyntheticImage& image, std::size_t count, int patch_size,
                                Stream& rng, const std::string& image_id = {}) {
  if (patch_size < 1 || image.width < static_cast<std::uint32_t>(patch_size) ||
      image.height < static_cast<std::uint32_t>(patch_size))
    throw Error(ErrorKind::Data, "patch-size", "image smaller than patch size");
  const auto g = log_image(image);
  PatchSet ps;
  ps.size = patch_size;
  ps.data.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(ps.dim()));
  ps.origins.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, image.width - patch_size));
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, image.height - patch_size));
    standardized_patch(g, x0, y0, patch_size, ps.data.row(static_cast<Eigen::Index>(i)).data());
    ps.origins.push_back({image_id, x0 + 0.5 * patch_size, y0 + 0.5 * patch_size});
  }
  return ps;
}

//---------------------------------------------------------------------------//
// Codebook
//---------------------------------------------------------------------------//

struct Codebook {
  RowMatrix centroids;               // K x d
  std::vector<std::uint64_t> usage;  // training assignments per centroid
  std::vector<double> objective;     // mean squared distance per Lloyd iteration

  std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }
};

namespace detail {

inline double sq_dist(const float* x, const double* c, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = static_cast<double>(x[j]) - c[j];
    s += t * t;
  }
  return s;
}

/// Nearest-centroid search. Candidates come from a float GEMM; every
/// centroid within a rounding margin of the best is rescored in double, so
/// the result is the exact double nearest with ties to the lowest index.
/// `prev` (optional) keeps a previous label unless another centroid is
/// strictly closer.
struct NearestSearch {
  const RowMatrix& centroids;
  Eigen::MatrixXf cf;  // d x K
  Eigen::VectorXf cnorm;

  explicit NearestSearch(const RowMatrix& c)
      : centroids(c), cf(c.transpose().cast<float>()), cnorm(cf.colwise().squaredNorm().transpose()) {}

  void run(const PatchMatrix& X, Eigen::Index begin, Eigen::Index end, std::vector<std::uint32_t>& label,
           std::vector<double>& dist, const std::vector<std::uint32_t>* prev) const {
    const auto d = static_cast<std::size_t>(centroids.cols());
    const Eigen::Index K = centroids.rows();
    constexpr Eigen::Index kBlock = 512;
    Eigen::MatrixXf G;
    for (Eigen::Index b0 = begin; b0 < end; b0 += kBlock) {
      const Eigen::Index nb = std::min(kBlock, end - b0);
      G.noalias() = X.middleRows(b0, nb) * cf;
      for (Eigen::Index r = 0; r < nb; ++r) {
        const Eigen::Index i = b0 + r;
        const float xn = X.row(i).squaredNorm();
        float best = std::numeric_limits<float>::infinity();
        for (Eigen::Index k = 0; k < K; ++k) best = std::min(best, xn - 2.0f * G(r, k) + cnorm(k));
        const float margin = 1e-4f * (xn + cnorm.maxCoeff()) + 1e-6f;
        const float* xi = X.row(i).data();
        std::uint32_t arg = 0;
        double bd = std::numeric_limits<double>::infinity();
        if (prev) {
          arg = (*prev)[static_cast<std::size_t>(i)];
          bd = sq_dist(xi, centroids.row(arg).data(), d);
        }
        for (Eigen::Index k = 0; k < K; ++k) {
          if (xn - 2.0f * G(r, k) + cnorm(k) > best + margin) continue;
          const double dk = sq_dist(xi, centroids.row(k).data(), d);
          if (dk < bd) {
            bd = dk;
            arg = static_cast<std::uint32_t>(k);
          }
        }
        label[static_cast<std::size_t>(i)] = arg;
        dist[static_cast<std::size_t>(i)] = bd;
      }
    }
  }
};

inline void nearest_all(const NearestSearch& ns, const PatchMatrix& X, std::vector<std::uint32_t>& label,
                        std::vector<double>& dist, const std::vector<std::uint32_t>* prev,
                        unsigned threads) {
  const Eigen::Index n = X.rows();
  label.resize(static_cast<std::size_t>(n));
  dist.resize(static_cast<std::size_t>(n));
  constexpr Eigen::Index kChunk = 4096;
  const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const Eigen::Index b = static_cast<Eigen::Index>(c) * kChunk;
    ns.run(X, b, std::min(n, b + kChunk), label, dist, prev);
  });
}

}  // namespace detail

struct KMeansOptions {
  std::size_t k = 256;
  int max_iters = 50;
  double tol = 1e-4;  // stop when the relative objective decrease falls below
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// k-means++ seeding ("kmeans++" stream) followed by Lloyd iterations.
inline Codebook train_codebook(const PatchMatrix& X, const KMeansOptions& opt) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto d = static_cast<std::size_t>(X.cols());
  const std::size_t K = opt.k;
  if (K < 1) throw config_error("k", "must be >= 1");
  if (n < K) throw Error(ErrorKind::Data, "too-few-patches",
                         std::to_string(n) + " patches for K=" + std::to_string(K));
  if (!X.allFinite()) throw Error(ErrorKind::Numeric, "non-finite", "patch data is not finite");

  Codebook cb;
  cb.centroids.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
  Stream rng(opt.seed, "kmeans++");
  auto set_center = [&](std::size_t k, std::size_t i) {
    for (std::size_t j = 0; j < d; ++j)
      cb.centroids(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };
  set_center(0, static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::sq_dist(X.row(static_cast<Eigen::Index>(i)).data(), cb.centroids.row(0).data(), d);
  for (std::size_t k = 1; k < K; ++k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    }
    set_center(k, pick);
    const double* c = cb.centroids.row(static_cast<Eigen::Index>(k)).data();
    parallel_for(n, opt.threads > 1 ? opt.threads : 1, [&](std::size_t i) {
      d2[i] = std::min(d2[i], detail::sq_dist(X.row(static_cast<Eigen::Index>(i)).data(), c, d));
    });
  }

  std::vector<std::uint32_t> label, prev;
  std::vector<double> dist;
  for (int it = 0; it < opt.max_iters; ++it) {
    detail::NearestSearch ns(cb.centroids);
    detail::nearest_all(ns, X, label, dist, it == 0 ? nullptr : &prev, opt.threads);
    const double obj = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(n);
    const bool changed = it == 0 || label != prev;
    const bool converged =
        !cb.objective.empty() &&
        (cb.objective.back() - obj) <= opt.tol * std::max(cb.objective.back(), 1e-300);
    cb.objective.push_back(obj);
    prev = label;
    if (!changed || converged) break;

    // Update step. Sums run in patch order, so the result is independent
    // of the thread count.
    RowMatrix sums = RowMatrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(label[i]) += X.row(static_cast<Eigen::Index>(i)).cast<double>();
      ++counts[label[i]];
    }
    std::vector<char> taken(n, 0);
    for (std::size_t k = 0; k < K; ++k) {
      if (counts[k] > 0) {
        cb.centroids.row(static_cast<Eigen::Index>(k)) = sums.row(static_cast<Eigen::Index>(k)) / static_cast<double>(counts[k]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i] && dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      taken[far] = 1;
      set_center(k, far);
    }
  }
  cb.usage.assign(K, 0);
  for (auto l : prev) ++cb.usage[l];
  return cb;
}

inline Codebook train_codebook(const PatchSet& patches, const KMeansOptions& opt) {
  return train_codebook(patches.data, opt);
}

/// Hard assignment labels for every row of X.
inline std::vector<std::uint32_t> nearest_centroids(const Codebook& cb, const PatchMatrix& X,
                                                     unsigned threads = 1) {
  if (static_cast<std::size_t>(X.cols()) != cb.dim())
    throw Error(ErrorKind::Data, "dimension", "descriptor length " + std::to_string(X.cols()) +
                                                  " does not match codebook " + std::to_string(cb.dim()));
  std::vector<std::uint32_t> label;
  std::vector<double> dist;
  detail::nearest_all(detail::NearestSearch(cb.centroids), X, label, dist, nullptr, threads);
  return label;
}

/// Patch encoder producing one-hot rows at the nearest centroid.
struct HardEncoder {
  const Codebook& codebook;

  std::size_t dim() const { return codebook.k(); }
  RowMatrix encode(const PatchMatrix& X) const {
    const auto label = nearest_centroids(codebook, X);
    RowMatrix out = RowMatrix::Zero(X.rows(), static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < label.size(); ++i) out(static_cast<Eigen::Index>(i), label[i]) = 1.0;
    return out;
  }
};

/// Single-patch assignment vector via any encoder.
template <typename Encoder>
Eigen::VectorXd assign(const Encoder& enc, const float* patch, std::size_t d) {
  PatchMatrix x = Eigen::Map<const PatchMatrix>(patch, 1, static_cast<Eigen::Index>(d));
  return enc.encode(x).row(0).transpose();
}

//---------------------------------------------------------------------------//
// Spatial pyramid
//---------------------------------------------------------------------------//

inline constexpr int kPyramidLevels = 3;
inline constexpr std::size_t kPyramidCells = 1 + 4 + 16;

/// Sum-pools assignment rows into 1x1, 2x2 and 4x4 cells of a crop of size
/// (crop_w, crop_h). Centers are crop-relative; the right and bottom edges
/// belong to the last cell. Blocks are level-major with row-major cells and
/// each level block is L1-normalized on its own.
inline std::vector<double> spm_pool(const RowMatrix& assignments,
                                    const std::vector<std::pair<double, double>>& centers,
                                    double crop_w, double crop_h) {
  const auto K = static_cast<std::size_t>(assignments.cols());
  std::vector<double> out(kPyramidCells * K, 0.0);
  std::size_t base = 0;
  for (int level = 0; level < kPyramidLevels; ++level) {
    const int cells = 1 << level;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      const auto [cx, cy] = centers[i];
      const int gx = std::clamp(static_cast<int>(std::floor(cx * cells / crop_w)), 0, cells - 1);
      const int gy = std::clamp(static_cast<int>(std::floor(cy * cells / crop_h)), 0, cells - 1);
      double* cell = out.data() + base + static_cast<std::size_t>(gy * cells + gx) * K;
      for (std::size_t k = 0; k < K; ++k) cell[k] += assignments(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
    const std::size_t len = static_cast<std::size_t>(cells * cells) * K;
    double l1 = 0.0;
    for (std::size_t j = 0; j < len; ++j) l1 += std::abs(out[base + j]);
    if (l1 > 0.0)
      for (std::size_t j = 0; j < len; ++j) out[base + j] /= l1;
    base += len;
  }
  return out;
}

//---------------------------------------------------------------------------//
// Multi-scale, multi-crop image features
//---------------------------------------------------------------------------//

/// Bilinear resize (pixel-center aligned, edge clamped).
inline Grid<float> resize_bilinear(const Grid<float>& src, std::size_t w, std::size_t h) {
  Grid<float> out(w, h, 0.0f);
  const double sx = static_cast<double>(src.width) / w, sy = static_cast<double>(src.height) / h;
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      const double top = src(x0, y0) * (1 - tx) + src(x1, y0) * tx;
      const double bot = src(x0, y1) * (1 - tx) + src(x1, y1) * tx;
      out(x, y) = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

/// Scale and crop protocol. For an N x N image the scales resize it to
/// N * {1, 1.5, 2} and the crops are 224 * N / 256 pixels.
struct FeatureOptions {
  std::vector<double> scales = {1.0, 1.5, 2.0};
  double crop_fraction = 224.0 / 256.0;
  int patch_size = 32;
  int stride = 16;
};

struct CropGeometry {
  std::size_t scaled_w = 0, scaled_h = 0;
  std::size_t crop = 0;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;  // center, then the 4 corners
};

inline CropGeometry crop_geometry(std::size_t w, std::size_t h, double scale, const FeatureOptions& opt) {
  CropGeometry g;
  g.scaled_w = static_cast<std::size_t>(std::lround(w * scale));
  g.scaled_h = static_cast<std::size_t>(std::lround(h * scale));
  g.crop = static_cast<std::size_t>(std::lround(std::min(w, h) * opt.crop_fraction));
  g.crop = std::min({g.crop, g.scaled_w, g.scaled_h});
  if (g.crop < static_cast<std::size_t>(opt.patch_size))
    throw Error(ErrorKind::Data, "patch-size", "crop smaller than patch size");
  const std::size_t mx = g.scaled_w - g.crop, my = g.scaled_h - g.crop;
  g.offsets = {{mx / 2, my / 2}, {0, 0}, {mx, 0}, {0, my}, {mx, my}};
  return g;
}

/// Encoder-agnostic image feature: for each scale, every dense-grid patch
/// of every crop is encoded once, pooled per crop, and the 15 crop vectors
/// are averaged. The result has 21 * enc.dim() entries.
template <typename Encoder>
std::vector<double> image_feature(const SyntheticImage& image, const Encoder& enc,
                                  const FeatureOptions& opt = {}) {
  const std::size_t K = enc.dim();
  const auto base = log_image(image);
  const auto ps = static_cast<std::size_t>(opt.patch_size);
  const auto stride = static_cast<std::size_t>(std::max(1, opt.stride));
  std::vector<double> acc(kPyramidCells * K, 0.0);
  std::size_t n_crops = 0;
  for (double scale : opt.scales) {
    const auto geo = crop_geometry(image.width, image.height, scale, opt);
    const auto scaled = (geo.scaled_w == base.width && geo.scaled_h == base.height)
                            ? base
                            : resize_bilinear(base, geo.scaled_w, geo.scaled_h);
    // Distinct patch corners across the five crops of this scale.
    std::map<std::pair<std::size_t, std::size_t>, Eigen::Index> slot;
    for (const auto& [ox, oy] : geo.offsets)
      for (std::size_t y = 0; y + ps <= geo.crop; y += stride)
        for (std::size_t x = 0; x + ps <= geo.crop; x += stride) slot.try_emplace({ox + x, oy + y}, 0);
    PatchMatrix X(static_cast<Eigen::Index>(slot.size()), static_cast<Eigen::Index>(ps * ps));
    Eigen::Index row = 0;
    for (auto& [pos, r] : slot) {
      r = row;
      standardized_patch(scaled, pos.first, pos.second, opt.patch_size, X.row(row).data());
      ++row;
    }
    const RowMatrix codes = enc.encode(X);
    for (const auto& [ox, oy] : geo.offsets) {
      std::vector<std::pair<double, double>> centers;
      std::vector<Eigen::Index> rows;
      for (std::size_t y = 0; y + ps <= geo.crop; y += stride)
        for (std::size_t x = 0; x + ps <= geo.crop; x += stride) {
          rows.push_back(slot.at({ox + x, oy + y}));
          centers.emplace_back(x + 0.5 * ps, y + 0.5 * ps);
        }
      RowMatrix a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(K));
      for (std::size_t i = 0; i < rows.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = codes.row(rows[i]);
      const auto v = spm_pool(a, centers, static_cast<double>(geo.crop), static_cast<double>(geo.crop));
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[j];
      ++n_crops;
    }
  }
  for (auto& v : acc) v /= static_cast<double>(n_crops);
  return acc;
}

//---------------------------------------------------------------------------//
// File formats
//---------------------------------------------------------------------------//

// XCBK: "XCBK" | u8 version=1 | u32 K | u32 d | K*d f64, row-major.
inline constexpr std::string_view kCodebookMagic = "XCBK";

inline std::vector<unsigned char> encode_codebook(const Codebook& cb) {
  io::ByteWriter w;
  w.magic(kCodebookMagic);
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(cb.k()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.raw(cb.centroids.data(), cb.k() * cb.dim() * sizeof(double));
  return w.bytes();
}

inline Codebook decode_codebook(std::vector<unsigned char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kCodebookMagic);
  r.expect_version(1);
  const std::uint64_t K = r.u32(), d = r.u32();
  if (K < 1 || d < 1) throw format_error("empty codebook at offset 5");
  r.expect_remaining(static_cast<std::size_t>(K * d * 8));
  Codebook cb;
  cb.centroids.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
  r.raw(cb.centroids.data(), static_cast<std::size_t>(K * d * 8));
  if (!cb.centroids.allFinite()) throw format_error("non-finite centroid");
  return cb;
}

inline void write_codebook(const std::filesystem::path& p, const Codebook& cb) {
  io::write_file(p, encode_codebook(cb));
}
inline Codebook read_codebook(const std::filesystem::path& p) { return decode_codebook(io::read_file(p)); }

/// Feature matrix keyed by manifest id (row i belongs to ids[i]).
struct FeatureTable {
  std::vector<std::string> ids;
  RowMatrix values;

  friend bool operator==(const FeatureTable& a, const FeatureTable& b) {
    return a.ids == b.ids && a.values.rows() == b.values.rows() && a.values.cols() == b.values.cols() &&
           a.values == b.values;
  }
};

// XFTR: "XFTR" | u32 rows | u32 cols | rows*cols f64, row-major.
inline constexpr std::string_view kFeatureMagic = "XFTR";

inline std::vector<unsigned char> encode_features(const RowMatrix& m) {
  io::ByteWriter w;
  w.magic(kFeatureMagic);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  return w.bytes();
}

inline RowMatrix decode_features(std::vector<unsigned char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kFeatureMagic);
  const std::uint64_t rows = r.u32(), cols = r.u32();
  r.expect_remaining(static_cast<std::size_t>(rows * cols * 8));
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.raw(m.data(), static_cast<std::size_t>(rows * cols * 8));
  return m;
}

inline std::filesystem::path feature_ids_path(const std::filesystem::path& p) {
  auto s = p;
  s += ".ids";
  return s;
}

/// Writes FILE (XFTR) plus FILE.ids with one manifest id per line.
inline void write_feature_table(const std::filesystem::path& p, const FeatureTable& t) {
  if (t.ids.size() != static_cast<std::size_t>(t.values.rows()))
    throw Error(ErrorKind::Data, "ids", "id count does not match feature rows");
  std::string ids;
  for (const auto& id : t.ids) ids += id + "\n";
  io::write_file(p, encode_features(t.values));
  io::write_file(feature_ids_path(p), {ids.begin(), ids.end()});
}

inline FeatureTable read_feature_table(const std::filesystem::path& p) {
  FeatureTable t;
  t.values = decode_features(io::read_file(p));
  const auto raw = io::read_file(feature_ids_path(p));
  std::string cur;
  for (unsigned char c : raw) {
    if (c == '\n') {
      t.ids.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(c));
    }
  }
  if (!cur.empty()) t.ids.push_back(cur);
  if (t.ids.size() != static_cast<std::size_t>(t.values.rows()))
    throw format_error(feature_ids_path(p).string() + ": " + std::to_string(t.ids.size()) +
                       " ids for " + std::to_string(t.values.rows()) + " rows");
  return t;
}

}  // namespace xsim
