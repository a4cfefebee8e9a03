#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <variant>
#include <vector>

#include "xsim/core.hpp"

namespace xsim {

/// Flat detector perpendicular to the beam. Pixel (x, y) has its center at
/// (x + 0.5, y + 0.5); the beam center is real-valued and may lie outside
/// the grid.
struct DetectorConfig {
  std::uint32_t width_px = 256;
  std::uint32_t height_px = 256;
  double pixel_size_mm = 0.4;
  double sample_distance_mm = 1000.0;
  double wavelength_A = 1.0;
  double beam_center_x = 128.0;
  double beam_center_y = 128.0;

  void validate() const {
    if (width_px < 16) throw config_error("width_px", "must be >= 16");
    if (height_px < 16) throw config_error("height_px", "must be >= 16");
    if (!(pixel_size_mm > 0.0))
      throw config_error("pixel_size_mm", "must be > 0");
    if (!(sample_distance_mm > 0.0))
      throw config_error("sample_distance_mm", "must be > 0");
    if (!(wavelength_A > 0.0))
      throw config_error("wavelength_A", "must be > 0");
    if (!(sample_distance_mm > pixel_size_mm))
      throw config_error("sample_distance_mm", "must exceed pixel_size_mm");
    if (!std::isfinite(beam_center_x))
      throw config_error("beam_center_x", "must be finite");
    if (!std::isfinite(beam_center_y))
      throw config_error("beam_center_y", "must be finite");
  }

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// Per-pixel scattering-vector magnitude (1/Å) and azimuth (radians).
/// phi is measured from +x, counterclockwise as seen on the image (rows grow
/// downward), in (-pi, pi].
struct QMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> q;
  std::vector<double> phi;

  double q_at(std::size_t x, std::size_t y) const { return q[y * width + x]; }
  double phi_at(std::size_t x, std::size_t y) const {
    return phi[y * width + x];
  }
};

/// q = (4 pi / lambda) sin(theta / 2), theta = atan(r * pixel / distance).
inline double q_from_radius(const DetectorConfig& cfg, double radius_px) {
  const double theta =
      std::atan(radius_px * cfg.pixel_size_mm / cfg.sample_distance_mm);
  return 4.0 * std::numbers::pi / cfg.wavelength_A * std::sin(0.5 * theta);
}

/// Inverse of q_from_radius (returns pixels).
inline double radius_from_q(const DetectorConfig& cfg, double q) {
  const double s = q * cfg.wavelength_A / (4.0 * std::numbers::pi);
  if (s >= 1.0) return INFINITY;
  const double theta = 2.0 * std::asin(s);
  if (theta >= 0.5 * std::numbers::pi) return INFINITY;
  return std::tan(theta) * cfg.sample_distance_mm / cfg.pixel_size_mm;
}

inline QMap build_qmap(const DetectorConfig& cfg) {
  cfg.validate();
  QMap m;
  m.width = cfg.width_px;
  m.height = cfg.height_px;
  m.q.resize(m.width * m.height);
  m.phi.resize(m.width * m.height);
  for (std::size_t y = 0; y < m.height; ++y) {
    const double dy = static_cast<double>(y) + 0.5 - cfg.beam_center_y;
    for (std::size_t x = 0; x < m.width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cfg.beam_center_x;
      const std::size_t i = y * m.width + x;
      // The pixel whose square contains the beam center reads q = 0.
      if (std::abs(dx) <= 0.5 && std::abs(dy) <= 0.5) {
        m.q[i] = 0.0;
        m.phi[i] = 0.0;
        continue;
      }
      m.q[i] = q_from_radius(cfg, std::hypot(dx, dy));
      m.phi[i] = std::atan2(-dy, dx);
      if (m.phi[i] == -std::numbers::pi) m.phi[i] = std::numbers::pi;
    }
  }
  return m;
}

inline bool beam_on_image(const DetectorConfig& cfg) {
  return cfg.beam_center_x >= 0.0 &&
         cfg.beam_center_x < static_cast<double>(cfg.width_px) &&
         cfg.beam_center_y >= 0.0 &&
         cfg.beam_center_y < static_cast<double>(cfg.height_px);
}

//---------------------------------------------------------------------------//
// Masks
//---------------------------------------------------------------------------//

struct NoBeamstop {
  friend bool operator==(const NoBeamstop&, const NoBeamstop&) = default;
};
/// Bar from the beam center out to the edge along angle_rad.
struct LinearBeamstop {
  double width_px = 8.0;
  double angle_rad = 0.0;
  friend bool operator==(const LinearBeamstop&, const LinearBeamstop&) = default;
};
struct CircularBeamstop {
  double radius_px = 10.0;
  friend bool operator==(const CircularBeamstop&, const CircularBeamstop&) = default;
};
/// Angular sector |phi - orientation| <= half_angle out to radius_px.
struct WedgeBeamstop {
  double half_angle_rad = 0.3;
  double orientation_rad = 0.0;
  double radius_px = 200.0;
  friend bool operator==(const WedgeBeamstop&, const WedgeBeamstop&) = default;
};

using Beamstop =
    std::variant<NoBeamstop, LinearBeamstop, CircularBeamstop, WedgeBeamstop>;

enum class GapAxis : std::uint8_t { Rows, Columns };

struct GapBand {
  std::int64_t start_px = 0;
  std::int64_t width_px = 1;
  GapAxis axis = GapAxis::Rows;
  friend bool operator==(const GapBand&, const GapBand&) = default;
};

struct MaskSpec {
  Beamstop beamstop = NoBeamstop{};
  std::vector<GapBand> gaps;

  void validate() const {
    std::visit(
        [](const auto& b) {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, LinearBeamstop>) {
            if (!(b.width_px > 0.0))
              throw config_error("mask.linear.width_px", "must be > 0");
          } else if constexpr (std::is_same_v<T, CircularBeamstop>) {
            if (!(b.radius_px > 0.0))
              throw config_error("mask.circular.radius_px", "must be > 0");
          } else if constexpr (std::is_same_v<T, WedgeBeamstop>) {
            if (!(b.half_angle_rad > 0.0 &&
                  b.half_angle_rad <= 0.5 * std::numbers::pi))
              throw config_error("mask.wedge.half_angle_rad",
                                 "must be in (0, pi/2]");
            if (!(b.radius_px > 0.0))
              throw config_error("mask.wedge.radius_px", "must be > 0");
          }
        },
        beamstop);
    for (const auto& g : gaps)
      if (g.width_px <= 0) throw config_error("mask.gap.width_px", "must be > 0");
  }

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Smallest absolute difference between two angles, in [0, pi].
inline double angle_distance(double a, double b) {
  double d = std::remainder(a - b, 2.0 * std::numbers::pi);
  return std::abs(d);
}

/// true = shadowed.
inline Grid<std::uint8_t> rasterize_mask(const DetectorConfig& cfg,
                                         const MaskSpec& spec) {
  cfg.validate();
  spec.validate();
  Grid<std::uint8_t> mask(cfg.width_px, cfg.height_px, 0);
  const double cx = cfg.beam_center_x;
  const double cy = cfg.beam_center_y;

  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, NoBeamstop>) {
          return;
        } else {
          for (std::size_t y = 0; y < mask.height; ++y) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            for (std::size_t x = 0; x < mask.width; ++x) {
              const double dx = static_cast<double>(x) + 0.5 - cx;
              bool shadow = false;
              if constexpr (std::is_same_v<T, CircularBeamstop>) {
                shadow = dx * dx + dy * dy <= b.radius_px * b.radius_px;
              } else if constexpr (std::is_same_v<T, LinearBeamstop>) {
                // Direction in image coordinates (y down, angle CCW).
                const double ux = std::cos(b.angle_rad);
                const double uy = -std::sin(b.angle_rad);
                const double along = dx * ux + dy * uy;
                const double across = std::abs(-dx * uy + dy * ux);
                shadow = along >= -0.5 * b.width_px && across <= 0.5 * b.width_px;
              } else if constexpr (std::is_same_v<T, WedgeBeamstop>) {
                const double r2 = dx * dx + dy * dy;
                if (r2 <= b.radius_px * b.radius_px) {
                  const double phi = std::atan2(-dy, dx);
                  shadow = r2 == 0.0 ||
                           angle_distance(phi, b.orientation_rad) <= b.half_angle_rad;
                }
              }
              if (shadow) mask(x, y) = 1;
            }
          }
        }
      },
      spec.beamstop);

  for (const auto& g : spec.gaps) {
    const std::int64_t limit = g.axis == GapAxis::Rows
                                   ? static_cast<std::int64_t>(mask.height)
                                   : static_cast<std::int64_t>(mask.width);
    const std::int64_t lo = std::max<std::int64_t>(0, g.start_px);
    const std::int64_t hi = std::min<std::int64_t>(limit, g.start_px + g.width_px);
    for (std::int64_t i = lo; i < hi; ++i) {
      if (g.axis == GapAxis::Rows) {
        for (std::size_t x = 0; x < mask.width; ++x)
          mask(x, static_cast<std::size_t>(i)) = 1;
      } else {
        for (std::size_t y = 0; y < mask.height; ++y)
          mask(static_cast<std::size_t>(i), y) = 1;
      }
    }
  }
  return mask;
}

}  // namespace xsim
