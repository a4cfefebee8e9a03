#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <vector>

#include "xsim/recipe_json.hpp"
#include "xsim/simkit.hpp"

namespace xsim {

/// Summation order for a module list that does not depend on list order:
/// by sub-seed, then variant, then serialized parameters.
inline std::vector<std::size_t> canonical_module_order(const std::vector<Module>& mods) {
  std::vector<std::tuple<std::uint64_t, std::size_t, std::uint64_t, std::size_t>> keys;
  keys.reserve(mods.size());
  for (std::size_t i = 0; i < mods.size(); ++i)
    keys.emplace_back(mods[i].seed, mods[i].spec.index(), fnv1a64(json(mods[i]).dump()), i);
  std::sort(keys.begin(), keys.end());
  std::vector<std::size_t> order;
  for (const auto& k : keys) order.push_back(std::get<3>(k));
  return order;
}

inline Grid<double> compose_scene(const SceneRecipe& recipe, const QMap& qmap) {
  if (recipe.modules.empty())
    throw Error(ErrorKind::Recipe, "recipe", "recipe has no modules");
  Grid<double> total(qmap.width, qmap.height, 0.0);
  for (std::size_t idx : canonical_module_order(recipe.modules)) {
    const auto g = eval_module(recipe.modules[idx], qmap);
    for (std::size_t i = 0; i < total.size(); ++i) total.data[i] += g.data[i];
  }
  return total;
}

/// Pre-noise intensity: element-wise sum of every module's field.
inline Grid<double> compose_scene(const SceneRecipe& recipe) {
  if (recipe.modules.empty())
    throw Error(ErrorKind::Recipe, "recipe", "recipe has no modules");
  return compose_scene(recipe, build_qmap(recipe.detector));
}

/// Expected counts, shot noise, read noise, mask, clamp, round.
/// Draws come from rng.child("shot") and rng.child("read") in pixel order;
/// masked pixels still consume draws so the streams stay aligned.
inline SyntheticImage corrupt_and_quantize(const Grid<double>& intensity,
                                           const NoiseSpec& noise,
                                           const Grid<std::uint8_t>& mask,
                                           const Stream& rng) {
  if (mask.size() != intensity.size())
    throw config_error("mask", "dimensions differ from intensity grid");
  Stream shot = rng.child("shot");
  Stream read = rng.child("read");
  SyntheticImage img;
  img.width = static_cast<std::uint32_t>(intensity.width);
  img.height = static_cast<std::uint32_t>(intensity.height);
  img.pixels.resize(intensity.size());
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const double lambda =
        noise.exposure_scale * intensity.data[i] + noise.background_level;
    double counts = noise.shot_noise ? static_cast<double>(shot.poisson(lambda)) : lambda;
    if (noise.read_sigma > 0.0) counts += noise.read_sigma * read.normal();
    if (mask.data[i]) counts = 0.0;
    counts = std::clamp(counts, 0.0, 65535.0);
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(counts));
  }
  return img;
}

//---------------------------------------------------------------------------//
// Tagging
//---------------------------------------------------------------------------//

/// Signal-to-background ratio: 99.9th percentile of expected signal counts
/// over unshadowed pixels divided by (background + 1).
inline double signal_to_background(const Grid<double>& intensity,
                                   const Grid<std::uint8_t>& mask,
                                   const NoiseSpec& noise) {
  std::vector<double> vals;
  vals.reserve(intensity.size());
  for (std::size_t i = 0; i < intensity.size(); ++i)
    if (!mask.data[i]) vals.push_back(noise.exposure_scale * intensity.data[i]);
  if (vals.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(
      std::floor(0.999 * static_cast<double>(vals.size() - 1)));
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(k), vals.end());
  return vals[k] / (noise.background_level + 1.0);
}

/// q positions of the orders of Ring and Lattice modules that are visible:
/// on the detector's q range and within `visibility` of the first order.
inline std::vector<std::pair<double, double>> visible_orders(const Module& m,
                                                             double q_lo, double q_hi,
                                                             double visibility) {
  std::vector<std::pair<double, double>> out;  // (q, width)
  if (const auto* r = std::get_if<Ring>(&m.spec)) {
    double w = 1.0;
    for (int n = 1; n <= r->n_orders; ++n, w *= r->order_decay) {
      const double q = n * r->q0;
      if (w >= visibility && q >= q_lo && q <= q_hi) out.emplace_back(q, r->sigma_q);
    }
  } else if (const auto* l = std::get_if<Lattice>(&m.spec)) {
    const auto peaks = lattice_peak_positions(l->symmetry, l->lattice_const_A, l->n_orders);
    for (double q : peaks) {
      const double w = std::exp(-l->dw_factor * (q * q - peaks.front() * peaks.front()));
      if (w >= visibility && q >= q_lo && q <= q_hi) out.emplace_back(q, l->peak_sigma_q);
    }
  }
  return out;
}

/// Rule table mapping a recipe to its attributes. `intensity` must be
/// compose_scene(recipe) for the same detector.
inline AttributeSet derive_tags(const SceneRecipe& recipe, const Grid<double>& intensity,
                                const TagThresholds& th = {}) {
  th.validate();
  AttributeSet tags;
  const QMap qm = build_qmap(recipe.detector);
  const auto [qmin_it, qmax_it] = std::minmax_element(qm.q.begin(), qm.q.end());
  const double q_lo = *qmin_it, q_hi = *qmax_it;

  std::vector<std::pair<double, double>> all_orders;
  for (const auto& m : recipe.modules) {
    const auto orders = visible_orders(m, q_lo, q_hi, th.visibility);
    all_orders.insert(all_orders.end(), orders.begin(), orders.end());
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Ring>) {
            tags.add(Attribute::Ring);
            tags.add_extended(s.anisotropy ? "Ring: Anisotropic" : "Ring: Isotropic");
            if (orders.size() >= 2) tags.add(Attribute::HigherOrders);
          } else if constexpr (std::is_same_v<T, Halo>) {
            tags.add(Attribute::Halo);
            tags.add_extended(s.anisotropy ? "Halo: Anisotropic" : "Halo: Isotropic");
          } else if constexpr (std::is_same_v<T, DiffuseLowQ>) {
            tags.add(Attribute::DiffuseLowQ);
          } else if constexpr (std::is_same_v<T, DiffuseHighQ>) {
            tags.add(Attribute::DiffuseHighQ);
          } else if constexpr (std::is_same_v<T, SphereFF>) {
            tags.add_extended("Form factor: Sphere");
          } else if constexpr (std::is_same_v<T, Lattice>) {
            tags.add(Attribute::StructureFactor);
            tags.add(s.symmetry == Symmetry::BCC ? Attribute::BCC : Attribute::FCC);
            if (!s.spots) tags.add(Attribute::Polycrystalline);
            else tags.add_extended("Lattice: Spots");
            if (orders.size() >= 2) tags.add(Attribute::HigherOrders);
          } else if constexpr (std::is_same_v<T, DebyeCloud>) {
            tags.add_extended("Debye cloud");
          } else if constexpr (std::is_same_v<T, PeakSet>) {
            tags.add_extended("Peaks");
          }
        },
        m.spec);
  }

  // Distinct maxima: orders closer than twice the wider peak width merge.
  std::sort(all_orders.begin(), all_orders.end());
  int distinct = 0;
  double last_q = -INFINITY, last_w = 0.0;
  for (const auto& [q, w] : all_orders) {
    if (q - last_q > 2.0 * std::max(w, last_w)) ++distinct;
    last_q = q;
    last_w = w;
  }
  if (distinct >= th.ring_many_threshold) tags.add(Attribute::ManyRings);

  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, LinearBeamstop>) tags.add(Attribute::LinearBeamstop);
        else if constexpr (std::is_same_v<T, CircularBeamstop>) tags.add(Attribute::CircBeamstop);
        else if constexpr (std::is_same_v<T, WedgeBeamstop>) tags.add(Attribute::WedgeBeamstop);
      },
      recipe.mask.beamstop);
  if (!recipe.mask.gaps.empty()) tags.add_extended("Detector gaps");

  if (!beam_on_image(recipe.detector)) tags.add(Attribute::BeamOffImage);
  if (recipe.noise.background_level >= th.high_background)
    tags.add(Attribute::HighBackground);

  const auto mask = rasterize_mask(recipe.detector, recipe.mask);
  const double s = signal_to_background(intensity, mask, recipe.noise);
  if (s >= th.strong) tags.add(Attribute::StrongScattering);
  else if (s <= th.weak) tags.add(Attribute::WeakScattering);
  return tags;
}

inline AttributeSet derive_tags(const SceneRecipe& recipe, const TagThresholds& th = {}) {
  return derive_tags(recipe, compose_scene(recipe), th);
}

/// Full render: compose, corrupt with the recipe's "noise" stream, quantize.
inline SyntheticImage render_scene(const SceneRecipe& recipe, const Grid<double>& intensity) {
  const auto mask = rasterize_mask(recipe.detector, recipe.mask);
  return corrupt_and_quantize(intensity, recipe.noise, mask, Stream(recipe.seed, "noise"));
}

}  // namespace xsim
