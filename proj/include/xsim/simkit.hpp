#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "xsim/attributes.hpp"
#include "xsim/core.hpp"
#include "xsim/geometry.hpp"
#include "xsim/image.hpp"

namespace xsim {

//---------------------------------------------------------------------------//
// Module specifications
//---------------------------------------------------------------------------//

/// Two-fold angular envelope exp(kappa * (cos(2 (phi - phi0)) - 1)); peak 1.
struct Anisotropy {
  double kappa = 0.0;
  double phi0 = 0.0;
  friend bool operator==(const Anisotropy&, const Anisotropy&) = default;
};

struct Ring {
  double q0 = 0.1;
  double sigma_q = 0.002;
  double amplitude = 1.0;
  std::optional<Anisotropy> anisotropy;
  int n_orders = 1;
  double order_decay = 1.0;
  friend bool operator==(const Ring&, const Ring&) = default;
};

/// Broad ring; sigma_q / max(q0, sigma_q) >= halo_breadth_ratio.
struct Halo {
  double q0 = 0.1;
  double sigma_q = 0.05;
  double amplitude = 1.0;
  std::optional<Anisotropy> anisotropy;
  friend bool operator==(const Halo&, const Halo&) = default;
};

struct DiffuseLowQ {
  double amplitude = 1.0;
  double power = 3.0;
  double q_floor = 0.005;
  friend bool operator==(const DiffuseLowQ&, const DiffuseLowQ&) = default;
};

struct DiffuseHighQ {
  double amplitude = 1.0;
  double q_onset = 0.2;
  double softness = 0.02;
  friend bool operator==(const DiffuseHighQ&, const DiffuseHighQ&) = default;
};

struct SphereFF {
  double radius_A = 50.0;
  double amplitude = 1.0;
  double polydispersity = 0.0;  // sigma_R / R
  friend bool operator==(const SphereFF&, const SphereFF&) = default;
};

enum class Symmetry : std::uint8_t { FCC, BCC };

struct SpotTexture {
  int n_spots = 6;
  double spot_sigma_phi = 0.05;
  friend bool operator==(const SpotTexture&, const SpotTexture&) = default;
};

struct Lattice {
  Symmetry symmetry = Symmetry::BCC;
  double lattice_const_A = 100.0;
  double peak_sigma_q = 0.002;
  int n_orders = 3;
  std::optional<SpotTexture> spots;  // nullopt = powder
  double dw_factor = 0.0;
  double amplitude = 1.0;
  friend bool operator==(const Lattice&, const Lattice&) = default;
};

struct Point3 {
  double x = 0, y = 0, z = 0;
  friend bool operator==(const Point3&, const Point3&) = default;
};

struct DebyeCloud {
  std::vector<Point3> points;
  double strength = 1.0;
  int q_samples = 256;
  friend bool operator==(const DebyeCloud&, const DebyeCloud&) = default;
};

struct Peak {
  double q = 0.1;
  double phi = 0.0;
  double sigma_q = 0.003;
  double sigma_phi = 0.05;
  double amplitude = 1.0;
  friend bool operator==(const Peak&, const Peak&) = default;
};

struct PeakSet {
  std::vector<Peak> peaks;
  friend bool operator==(const PeakSet&, const PeakSet&) = default;
};

using ModuleSpec = std::variant<Ring, Halo, DiffuseLowQ, DiffuseHighQ, SphereFF,
                                Lattice, DebyeCloud, PeakSet>;

/// A module together with the sub-seed for its stochastic choices.
struct Module {
  ModuleSpec spec;
  std::uint64_t seed = 0;
  friend bool operator==(const Module&, const Module&) = default;
};

struct NoiseSpec {
  double background_level = 1.0;  // expected counts per pixel
  double read_sigma = 0.0;         // counts
  bool shot_noise = true;
  double exposure_scale = 100.0;   // unitless intensity -> expected counts
  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

struct SceneRecipe {
  std::vector<Module> modules;
  NoiseSpec noise;
  MaskSpec mask;
  DetectorConfig detector;
  std::uint64_t seed = 0;
  friend bool operator==(const SceneRecipe&, const SceneRecipe&) = default;
};

struct TagThresholds {
  double halo_breadth_ratio = 0.35;
  int ring_many_threshold = 5;
  double high_background = 50.0;
  double strong = 20.0;
  double weak = 2.0;
  /// An order is visible when its weight relative to the first order of the
  /// same module is at least this fraction and its q lies on the detector.
  double visibility = 0.05;

  void validate() const {
    if (!(halo_breadth_ratio > 0.0 && halo_breadth_ratio <= 1.0))
      throw config_error("thresholds.halo_breadth_ratio", "must be in (0, 1]");
    if (ring_many_threshold < 1)
      throw config_error("thresholds.ring_many_threshold", "must be >= 1");
    if (!(strong > weak))
      throw config_error("thresholds.strong", "must exceed thresholds.weak");
    if (!(visibility > 0.0 && visibility <= 1.0))
      throw config_error("thresholds.visibility", "must be in (0, 1]");
  }
};

//---------------------------------------------------------------------------//
// Validation
//---------------------------------------------------------------------------//

namespace detail {
inline void require(bool ok, const char* field, const char* why) {
  if (!ok) throw config_error(field, why);
}
inline void check_anisotropy(const std::optional<Anisotropy>& a, const char* f) {
  if (a) require(a->kappa >= 0.0 && std::isfinite(a->phi0), f, "kappa must be >= 0");
}
}  // namespace detail

inline void validate_module(const ModuleSpec& spec,
                            const TagThresholds& th = {}) {
  using detail::require;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Ring>) {
          require(m.q0 > 0.0, "ring.q0", "must be > 0");
          require(m.sigma_q > 0.0, "ring.sigma_q", "must be > 0");
          require(m.amplitude >= 0.0, "ring.amplitude", "must be >= 0");
          require(m.n_orders >= 1, "ring.n_orders", "must be >= 1");
          require(m.order_decay > 0.0 && m.order_decay <= 1.0,
                  "ring.order_decay", "must be in (0, 1]");
          detail::check_anisotropy(m.anisotropy, "ring.anisotropy");
        } else if constexpr (std::is_same_v<T, Halo>) {
          require(m.q0 >= 0.0, "halo.q0", "must be >= 0");
          require(m.sigma_q > 0.0, "halo.sigma_q", "must be > 0");
          require(m.sigma_q / std::max(m.q0, m.sigma_q) >= th.halo_breadth_ratio,
                  "halo.sigma_q", "too narrow for a halo");
          require(m.amplitude >= 0.0, "halo.amplitude", "must be >= 0");
          detail::check_anisotropy(m.anisotropy, "halo.anisotropy");
        } else if constexpr (std::is_same_v<T, DiffuseLowQ>) {
          require(m.amplitude >= 0.0, "diffuse_low_q.amplitude", "must be >= 0");
          require(m.power >= 2.0 && m.power <= 4.0, "diffuse_low_q.power",
                  "must be in [2, 4]");
          require(m.q_floor > 0.0, "diffuse_low_q.q_floor", "must be > 0");
        } else if constexpr (std::is_same_v<T, DiffuseHighQ>) {
          require(m.amplitude >= 0.0, "diffuse_high_q.amplitude", "must be >= 0");
          require(m.q_onset > 0.0, "diffuse_high_q.q_onset", "must be > 0");
          require(m.softness > 0.0, "diffuse_high_q.softness", "must be > 0");
        } else if constexpr (std::is_same_v<T, SphereFF>) {
          require(m.radius_A > 0.0, "sphere.radius_A", "must be > 0");
          require(m.amplitude >= 0.0, "sphere.amplitude", "must be >= 0");
          require(m.polydispersity >= 0.0 && m.polydispersity <= 0.3,
                  "sphere.polydispersity", "must be in [0, 0.3]");
        } else if constexpr (std::is_same_v<T, Lattice>) {
          require(m.lattice_const_A > 0.0, "lattice.lattice_const_A", "must be > 0");
          require(m.peak_sigma_q > 0.0, "lattice.peak_sigma_q", "must be > 0");
          require(m.n_orders >= 1 && m.n_orders <= 8, "lattice.n_orders",
                  "must be in [1, 8]");
          require(m.dw_factor >= 0.0, "lattice.dw_factor", "must be >= 0");
          require(m.amplitude >= 0.0, "lattice.amplitude", "must be >= 0");
          if (m.spots) {
            require(m.spots->n_spots >= 2 && m.spots->n_spots <= 24,
                    "lattice.spots.n_spots", "must be in [2, 24]");
            require(m.spots->spot_sigma_phi > 0.0, "lattice.spots.spot_sigma_phi",
                    "must be > 0");
          }
        } else if constexpr (std::is_same_v<T, DebyeCloud>) {
          require(!m.points.empty(), "debye.points", "must be non-empty");
          require(m.strength >= 0.0, "debye.strength", "must be >= 0");
          require(m.q_samples >= 64, "debye.q_samples", "must be >= 64");
        } else if constexpr (std::is_same_v<T, PeakSet>) {
          for (const auto& p : m.peaks) {
            require(p.q >= 0.0, "peaks.q", "must be >= 0");
            require(p.sigma_q > 0.0 && p.sigma_phi > 0.0, "peaks.sigma",
                    "must be > 0");
            require(p.amplitude >= 0.0, "peaks.amplitude", "must be >= 0");
          }
        }
      },
      spec);
}

inline void validate_recipe(const SceneRecipe& r, const TagThresholds& th = {}) {
  if (r.modules.empty())
    throw Error(ErrorKind::Recipe, "recipe", "recipe has no modules");
  r.detector.validate();
  r.mask.validate();
  for (const auto& m : r.modules) validate_module(m.spec, th);
  const auto& n = r.noise;
  detail::require(n.background_level >= 0.0, "noise.background_level", "must be >= 0");
  detail::require(n.read_sigma >= 0.0, "noise.read_sigma", "must be >= 0");
  detail::require(n.exposure_scale > 0.0, "noise.exposure_scale", "must be > 0");
}

//---------------------------------------------------------------------------//
// Kernels
//---------------------------------------------------------------------------//

inline double anisotropy_envelope(const std::optional<Anisotropy>& a, double phi) {
  if (!a) return 1.0;
  return std::exp(a->kappa * (std::cos(2.0 * (phi - a->phi0)) - 1.0));
}

namespace detail {
inline Grid<double> ring_field(const QMap& qm, double q0, double sigma,
                               double amplitude, int n_orders, double decay,
                               const std::optional<Anisotropy>& aniso) {
  Grid<double> out(qm.width, qm.height, 0.0);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double q = qm.q[i];
    double sum = 0.0;
    double weight = amplitude;
    for (int n = 1; n <= n_orders; ++n) {
      const double d = q - n * q0;
      sum += weight * std::exp(-d * d * inv2s2);
      weight *= decay;
    }
    out.data[i] = sum * anisotropy_envelope(aniso, qm.phi[i]);
  }
  return out;
}
}  // namespace detail

/// Sum over orders n of amplitude * decay^(n-1) * G(q - n q0) * A(phi).
inline Grid<double> eval_ring(const Ring& r, const QMap& qm) {
  return detail::ring_field(qm, r.q0, r.sigma_q, r.amplitude, r.n_orders,
                            r.order_decay, r.anisotropy);
}

inline Grid<double> eval_ring(const Halo& h, const QMap& qm) {
  return detail::ring_field(qm, h.q0, h.sigma_q, h.amplitude, 1, 1.0,
                            h.anisotropy);
}

inline Grid<double> eval_diffuse(const DiffuseLowQ& d, const QMap& qm) {
  Grid<double> out(qm.width, qm.height, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = d.amplitude * std::pow(std::max(qm.q[i], d.q_floor), -d.power);
  return out;
}

inline Grid<double> eval_diffuse(const DiffuseHighQ& d, const QMap& qm) {
  Grid<double> out(qm.width, qm.height, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = (qm.q[i] - d.q_onset) / d.softness;
    out.data[i] = d.amplitude / (1.0 + std::exp(-t));
  }
  return out;
}

/// Sphere amplitude 3 (sin x - x cos x) / x^3, x = qR; F(0) = 1.
inline double sphere_form_factor(double q, double radius) {
  const double x = q * radius;
  if (std::abs(x) < 1e-3) {
    const double x2 = x * x;
    return 1.0 - x2 / 10.0 + x2 * x2 / 280.0;
  }
  return 3.0 * (std::sin(x) - x * std::cos(x)) / (x * x * x);
}

/// Quadrature of a radius distribution: Gaussian truncated at R +- 3 sigma,
/// Simpson nodes, weights normalized to 1.
struct RadiusQuadrature {
  std::vector<double> radii;
  std::vector<double> weights;

  RadiusQuadrature(double radius, double polydispersity, int nodes = 31) {
    const double sigma = polydispersity * radius;
    if (sigma <= 0.0) {
      radii = {radius};
      weights = {1.0};
      return;
    }
    if (nodes % 2 == 0) ++nodes;
    const double lo = std::max(radius - 3.0 * sigma, 1e-3 * radius);
    const double hi = radius + 3.0 * sigma;
    const double h = (hi - lo) / (nodes - 1);
    double total = 0.0;
    for (int i = 0; i < nodes; ++i) {
      const double r = lo + i * h;
      const double simpson = (i == 0 || i == nodes - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double z = (r - radius) / sigma;
      const double w = simpson * std::exp(-0.5 * z * z);
      radii.push_back(r);
      weights.push_back(w);
      total += w;
    }
    for (auto& w : weights) w /= total;
  }

  double mean_intensity(double q) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < radii.size(); ++i) {
      const double f = sphere_form_factor(q, radii[i]);
      acc += weights[i] * f * f;
    }
    return acc;
  }
};

/// <F^2> over the truncated Gaussian radius distribution.
inline double sphere_intensity(double q, double radius, double polydispersity) {
  return RadiusQuadrature(radius, polydispersity).mean_intensity(q);
}

inline Grid<double> eval_sphere(const SphereFF& s, const QMap& qm) {
  const RadiusQuadrature quad(s.radius_A, s.polydispersity);
  Grid<double> out(qm.width, qm.height, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = s.amplitude * quad.mean_intensity(qm.q[i]);
  return out;
}

/// Allowed h^2 + k^2 + l^2 values, ascending and distinct.
/// BCC: h + k + l even. FCC: h, k, l all even or all odd.
inline std::vector<int> allowed_miller_sums(Symmetry sym, int count) {
  std::vector<int> out;
  for (int m = 1; static_cast<int>(out.size()) < count; ++m) {
    bool found = false;
    const int hmax = static_cast<int>(std::sqrt(static_cast<double>(m))) + 1;
    for (int h = 0; h <= hmax && !found; ++h)
      for (int k = 0; k <= h && !found; ++k)
        for (int l = 0; l <= k && !found; ++l) {
          if (h * h + k * k + l * l != m) continue;
          if (sym == Symmetry::BCC)
            found = (h + k + l) % 2 == 0;
          else
            found = (h % 2 == k % 2) && (k % 2 == l % 2);
        }
    if (found) out.push_back(m);
  }
  return out;
}

/// q_hkl = (2 pi / a) sqrt(h^2 + k^2 + l^2) for the first n_orders reflections.
inline std::vector<double> lattice_peak_positions(Symmetry sym, double a,
                                                  int n_orders) {
  std::vector<double> q;
  for (int m : allowed_miller_sums(sym, n_orders))
    q.push_back(2.0 * std::numbers::pi / a * std::sqrt(static_cast<double>(m)));
  return q;
}

/// Global rotation of a spot texture, drawn from the module seed.
inline double spot_rotation(std::uint64_t module_seed) {
  Stream s(module_seed, "lattice.spots");
  return s.uniform(0.0, 2.0 * std::numbers::pi);
}

inline Grid<double> eval_lattice(const Lattice& l, const QMap& qm,
                                 std::uint64_t module_seed = 0) {
  const auto peaks = lattice_peak_positions(l.symmetry, l.lattice_const_A, l.n_orders);
  std::vector<double> heights;
  for (double qn : peaks) heights.push_back(l.amplitude * std::exp(-l.dw_factor * qn * qn));
  std::vector<double> spot_angles;
  if (l.spots) {
    const double rot = spot_rotation(module_seed);
    for (int s = 0; s < l.spots->n_spots; ++s)
      spot_angles.push_back(rot + 2.0 * std::numbers::pi * s / l.spots->n_spots);
  }
  const double sigma = l.peak_sigma_q;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double cutoff = 10.0 * sigma;

  Grid<double> out(qm.width, qm.height, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double q = qm.q[i];
    double radial = 0.0;
    for (std::size_t n = 0; n < peaks.size(); ++n) {
      const double d = q - peaks[n];
      if (std::abs(d) > cutoff) continue;
      radial += heights[n] * std::exp(-d * d * inv2s2);
    }
    if (radial == 0.0) continue;
    if (l.spots) {
      const double sp = l.spots->spot_sigma_phi;
      double angular = 0.0;
      for (double a : spot_angles) {
        const double d = angle_distance(qm.phi[i], a);
        angular += std::exp(-d * d / (2.0 * sp * sp));
      }
      radial *= angular;
    }
    out.data[i] = radial;
  }
  return out;
}

/// sin(x)/x with a series branch near 0.
inline double sinc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

/// Debye equation, unit scattering lengths: I(q) = sum_i sum_j sinc(q r_ij).
inline std::vector<double> debye_intensity(const std::vector<Point3>& points,
                                           const std::vector<double>& q_values) {
  const std::size_t n = points.size();
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = points[i].x - points[j].x;
      const double dy = points[i].y - points[j].y;
      const double dz = points[i].z - points[j].z;
      dist.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
    }
  std::vector<double> out;
  out.reserve(q_values.size());
  for (double q : q_values) {
    double cross = 0.0;
    for (double r : dist) cross += sinc(q * r);
    out.push_back(static_cast<double>(n) + 2.0 * cross);
  }
  return out;
}

/// Debye profile on a linear 1-D q grid spanning the map, interpolated
/// radially; scaled so that strength is the forward (q = 0) intensity.
inline Grid<double> eval_debye(const DebyeCloud& c, const QMap& qm) {
  const double qmax = *std::max_element(qm.q.begin(), qm.q.end());
  const int ns = c.q_samples;
  std::vector<double> qs(ns);
  for (int i = 0; i < ns; ++i) qs[i] = qmax * i / (ns - 1);
  auto prof = debye_intensity(c.points, qs);
  const double n2 = static_cast<double>(c.points.size()) * c.points.size();
  for (auto& v : prof) v = std::max(0.0, v) * c.strength / n2;

  Grid<double> out(qm.width, qm.height, 0.0);
  const double step = qmax > 0.0 ? qmax / (ns - 1) : 1.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = qm.q[i] / step;
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(t), ns - 2);
    const double f = std::clamp(t - static_cast<double>(k), 0.0, 1.0);
    out.data[i] = prof[k] * (1.0 - f) + prof[k + 1] * f;
  }
  return out;
}

inline Grid<double> eval_peaks(const PeakSet& p, const QMap& qm) {
  Grid<double> out(qm.width, qm.height, 0.0);
  for (const auto& pk : p.peaks) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double dq = (qm.q[i] - pk.q) / pk.sigma_q;
      if (std::abs(dq) > 10.0) continue;
      const double dphi = angle_distance(qm.phi[i], pk.phi) / pk.sigma_phi;
      out.data[i] += pk.amplitude * std::exp(-0.5 * (dq * dq + dphi * dphi));
    }
  }
  return out;
}

inline Grid<double> eval_module(const Module& m, const QMap& qm) {
  return std::visit(
      [&](const auto& s) -> Grid<double> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Ring> || std::is_same_v<T, Halo>)
          return eval_ring(s, qm);
        else if constexpr (std::is_same_v<T, DiffuseLowQ> ||
                           std::is_same_v<T, DiffuseHighQ>)
          return eval_diffuse(s, qm);
        else if constexpr (std::is_same_v<T, SphereFF>)
          return eval_sphere(s, qm);
        else if constexpr (std::is_same_v<T, Lattice>)
          return eval_lattice(s, qm, m.seed);
        else if constexpr (std::is_same_v<T, DebyeCloud>)
          return eval_debye(s, qm);
        else
          return eval_peaks(s, qm);
      },
      m.spec);
}

}  // namespace xsim
