#pragma once

#include <nlohmann/json.hpp>

#include "xsim/simkit.hpp"

// JSON mapping for recipes. The dump of a recipe is canonical (object keys
// are sorted by nlohmann::json), so its FNV-1a hash serves as the digest.

namespace xsim {

using nlohmann::json;

namespace detail {
template <typename T>
void opt_to_json(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v; else j[key] = nullptr;
}
template <typename T>
void opt_from_json(const json& j, const char* key, std::optional<T>& v) {
  if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<T>();
  else v.reset();
}
}  // namespace detail

inline void to_json(json& j, const Anisotropy& a) { j = {{"kappa", a.kappa}, {"phi0", a.phi0}}; }
inline void from_json(const json& j, Anisotropy& a) {
  j.at("kappa").get_to(a.kappa);
  j.at("phi0").get_to(a.phi0);
}

inline void to_json(json& j, const Ring& r) {
  j = {{"q0", r.q0}, {"sigma_q", r.sigma_q}, {"amplitude", r.amplitude},
       {"n_orders", r.n_orders}, {"order_decay", r.order_decay}};
  detail::opt_to_json(j, "anisotropy", r.anisotropy);
}
inline void from_json(const json& j, Ring& r) {
  j.at("q0").get_to(r.q0);
  j.at("sigma_q").get_to(r.sigma_q);
  j.at("amplitude").get_to(r.amplitude);
  j.at("n_orders").get_to(r.n_orders);
  j.at("order_decay").get_to(r.order_decay);
  detail::opt_from_json(j, "anisotropy", r.anisotropy);
}

inline void to_json(json& j, const Halo& h) {
  j = {{"q0", h.q0}, {"sigma_q", h.sigma_q}, {"amplitude", h.amplitude}};
  detail::opt_to_json(j, "anisotropy", h.anisotropy);
}
inline void from_json(const json& j, Halo& h) {
  j.at("q0").get_to(h.q0);
  j.at("sigma_q").get_to(h.sigma_q);
  j.at("amplitude").get_to(h.amplitude);
  detail::opt_from_json(j, "anisotropy", h.anisotropy);
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DiffuseLowQ, amplitude, power, q_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DiffuseHighQ, amplitude, q_onset, softness)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SphereFF, radius_A, amplitude, polydispersity)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SpotTexture, n_spots, spot_sigma_phi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Point3, x, y, z)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DebyeCloud, points, strength, q_samples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Peak, q, phi, sigma_q, sigma_phi, amplitude)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PeakSet, peaks)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NoiseSpec, background_level, read_sigma,
                                   shot_noise, exposure_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DetectorConfig, width_px, height_px,
                                   pixel_size_mm, sample_distance_mm,
                                   wavelength_A, beam_center_x, beam_center_y)

inline void to_json(json& j, const Lattice& l) {
  j = {{"symmetry", l.symmetry == Symmetry::BCC ? "BCC" : "FCC"},
       {"lattice_const_A", l.lattice_const_A},
       {"peak_sigma_q", l.peak_sigma_q},
       {"n_orders", l.n_orders},
       {"dw_factor", l.dw_factor},
       {"amplitude", l.amplitude}};
  detail::opt_to_json(j, "spots", l.spots);
}
inline void from_json(const json& j, Lattice& l) {
  const auto sym = j.at("symmetry").get<std::string>();
  if (sym == "BCC") l.symmetry = Symmetry::BCC;
  else if (sym == "FCC") l.symmetry = Symmetry::FCC;
  else throw config_error("lattice.symmetry", "unknown symmetry " + sym);
  j.at("lattice_const_A").get_to(l.lattice_const_A);
  j.at("peak_sigma_q").get_to(l.peak_sigma_q);
  j.at("n_orders").get_to(l.n_orders);
  j.at("dw_factor").get_to(l.dw_factor);
  j.at("amplitude").get_to(l.amplitude);
  detail::opt_from_json(j, "spots", l.spots);
}

inline constexpr std::array<const char*, 8> kModuleTypeNames = {
    "ring", "halo", "diffuse_low_q", "diffuse_high_q",
    "sphere", "lattice", "debye", "peaks"};

inline void to_json(json& j, const Module& m) {
  std::visit([&](const auto& s) { j = json{{"params", s}}; }, m.spec);
  j["type"] = kModuleTypeNames[m.spec.index()];
  j["seed"] = m.seed;
}

inline void from_json(const json& j, Module& m) {
  const auto type = j.at("type").get<std::string>();
  const auto& p = j.at("params");
  if (type == "ring") m.spec = p.get<Ring>();
  else if (type == "halo") m.spec = p.get<Halo>();
  else if (type == "diffuse_low_q") m.spec = p.get<DiffuseLowQ>();
  else if (type == "diffuse_high_q") m.spec = p.get<DiffuseHighQ>();
  else if (type == "sphere") m.spec = p.get<SphereFF>();
  else if (type == "lattice") m.spec = p.get<Lattice>();
  else if (type == "debye") m.spec = p.get<DebyeCloud>();
  else if (type == "peaks") m.spec = p.get<PeakSet>();
  else throw config_error("module.type", "unknown module type " + type);
  j.at("seed").get_to(m.seed);
}

inline void to_json(json& j, const MaskSpec& m) {
  json b;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, NoBeamstop>) b = {{"type", "none"}};
        else if constexpr (std::is_same_v<T, LinearBeamstop>)
          b = {{"type", "linear"}, {"width_px", s.width_px}, {"angle_rad", s.angle_rad}};
        else if constexpr (std::is_same_v<T, CircularBeamstop>)
          b = {{"type", "circular"}, {"radius_px", s.radius_px}};
        else
          b = {{"type", "wedge"}, {"half_angle_rad", s.half_angle_rad},
               {"orientation_rad", s.orientation_rad}, {"radius_px", s.radius_px}};
      },
      m.beamstop);
  json gaps = json::array();
  for (const auto& g : m.gaps)
    gaps.push_back({{"start_px", g.start_px}, {"width_px", g.width_px},
                    {"axis", g.axis == GapAxis::Rows ? "rows" : "columns"}});
  j = {{"beamstop", b}, {"gaps", gaps}};
}

inline void from_json(const json& j, MaskSpec& m) {
  const auto& b = j.at("beamstop");
  const auto type = b.at("type").get<std::string>();
  if (type == "none") m.beamstop = NoBeamstop{};
  else if (type == "linear")
    m.beamstop = LinearBeamstop{b.at("width_px").get<double>(), b.at("angle_rad").get<double>()};
  else if (type == "circular")
    m.beamstop = CircularBeamstop{b.at("radius_px").get<double>()};
  else if (type == "wedge")
    m.beamstop = WedgeBeamstop{b.at("half_angle_rad").get<double>(),
                               b.at("orientation_rad").get<double>(),
                               b.at("radius_px").get<double>()};
  else throw config_error("mask.beamstop.type", "unknown beamstop " + type);
  m.gaps.clear();
  for (const auto& g : j.at("gaps")) {
    GapBand band;
    g.at("start_px").get_to(band.start_px);
    g.at("width_px").get_to(band.width_px);
    band.axis = g.at("axis").get<std::string>() == "rows" ? GapAxis::Rows : GapAxis::Columns;
    m.gaps.push_back(band);
  }
}

inline void to_json(json& j, const SceneRecipe& r) {
  j = {{"modules", r.modules}, {"noise", r.noise}, {"mask", r.mask},
       {"detector", r.detector}, {"seed", r.seed}};
}
inline void from_json(const json& j, SceneRecipe& r) {
  j.at("modules").get_to(r.modules);
  j.at("noise").get_to(r.noise);
  j.at("mask").get_to(r.mask);
  j.at("detector").get_to(r.detector);
  j.at("seed").get_to(r.seed);
}

inline std::uint64_t recipe_digest(const SceneRecipe& r) {
  return fnv1a64(json(r).dump());
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = kDigits[v & 0xF];
  return s;
}

}  // namespace xsim
