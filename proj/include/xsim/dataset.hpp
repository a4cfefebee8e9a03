#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xsim/manifest.hpp"
#include "xsim/recipe_json.hpp"
#include "xsim/scene.hpp"

namespace xsim {

//---------------------------------------------------------------------------//
// Configuration
//---------------------------------------------------------------------------//

/// Sampled parameter range. `log` samples uniformly in log space; `integer`
/// samples whole numbers in [round(lo), round(hi)].
struct ParamRange {
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;
  bool integer = false;

  double sample(Stream& rng) const {
    if (integer) {
      const auto a = static_cast<std::int64_t>(std::llround(lo));
      const auto b = std::max(a, static_cast<std::int64_t>(std::llround(hi)));
      return static_cast<double>(rng.uniform_int(a, b));
    }
    if (log) return std::exp(rng.uniform(std::log(lo), std::log(hi)));
    return rng.uniform(lo, hi);
  }
  double midpoint() const {
    if (log) return std::sqrt(lo * hi);
    return integer ? std::round(0.5 * (lo + hi)) : 0.5 * (lo + hi);
  }
  /// Sub-interval covering `fraction` of this range (in its own scale),
  /// starting at offset u * (1 - fraction).
  ParamRange narrowed(double fraction, double u) const {
    ParamRange r = *this;
    if (log) {
      const double a = std::log(lo), b = std::log(hi);
      const double start = a + u * (1.0 - fraction) * (b - a);
      r.lo = std::exp(start);
      r.hi = std::exp(start + fraction * (b - a));
    } else {
      const double start = lo + u * (1.0 - fraction) * (hi - lo);
      r.lo = start;
      r.hi = start + fraction * (hi - lo);
    }
    return r;
  }

  friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

inline void to_json(nlohmann::json& j, const ParamRange& r) {
  j = {{"lo", r.lo}, {"hi", r.hi},
       {"scale", r.integer ? "int" : (r.log ? "log" : "linear")}};
}
inline void from_json(const nlohmann::json& j, ParamRange& r) {
  j.at("lo").get_to(r.lo);
  j.at("hi").get_to(r.hi);
  const auto scale = j.value("scale", std::string("linear"));
  r.log = scale == "log";
  r.integer = scale == "int";
  if (!r.log && !r.integer && scale != "linear")
    throw config_error("ranges.scale", "unknown scale " + scale);
}

// Parameters expressed in "rel" units are relative to q_ref, the q at half
// the image size from the beam center for the run's detector preset.
inline std::map<std::string, ParamRange> default_ranges() {
  auto lin = [](double a, double b) { return ParamRange{a, b, false, false}; };
  auto lg = [](double a, double b) { return ParamRange{a, b, true, false}; };
  auto in = [](double a, double b) { return ParamRange{a, b, false, true}; };
  return {
      {"ring.q0_rel", lg(0.08, 0.7)},
      {"ring.sigma_rel", lg(0.01, 0.04)},  // sigma_q / q0
      {"ring.amplitude", lg(0.5, 20.0)},
      {"ring.kappa", lg(0.5, 6.0)},
      {"ring.n_orders", in(1, 6)},
      {"ring.order_decay", lin(0.3, 0.95)},
      {"halo.q0_rel", lg(0.15, 0.9)},
      {"halo.breadth", lin(0.4, 0.8)},  // sigma_q / q0
      {"halo.amplitude", lg(0.5, 10.0)},
      {"halo.kappa", lg(0.5, 4.0)},
      {"diffuse_low_q.level", lg(0.2, 5.0)},  // intensity at q = 0.1 q_ref
      {"diffuse_low_q.power", lin(2.0, 4.0)},
      {"diffuse_low_q.q_floor_rel", lg(0.01, 0.04)},
      {"diffuse_high_q.level", lg(0.5, 10.0)},
      {"diffuse_high_q.onset_rel", lin(0.4, 1.2)},
      {"diffuse_high_q.softness_rel", lg(0.05, 0.3)},
      {"sphere.first_zero_rel", lg(0.15, 0.7)},
      {"sphere.level", lg(0.5, 20.0)},
      {"sphere.polydispersity", lin(0.0, 0.25)},
      {"lattice.q1_rel", lg(0.08, 0.45)},
      {"lattice.sigma_rel", lg(0.006, 0.03)},  // peak_sigma_q / q1
      {"lattice.n_orders", in(1, 8)},
      {"lattice.dw", lin(0.0, 1.0)},  // dw_factor * q1^2
      {"lattice.amplitude", lg(0.5, 20.0)},
      {"lattice.n_spots", in(2, 24)},
      {"lattice.spot_sigma_phi", lg(0.03, 0.15)},
      {"debye.n_points", in(8, 40)},
      {"debye.extent", lg(4.0, 20.0)},  // cluster radius * q_ref
      {"debye.strength", lg(0.5, 20.0)},
      {"peaks.count", in(1, 8)},
      {"peaks.q_rel", lin(0.1, 0.9)},
      {"peaks.sigma_rel", lg(0.01, 0.04)},
      {"peaks.sigma_phi", lg(0.02, 0.1)},
      {"peaks.amplitude", lg(0.5, 20.0)},
      {"noise.background", lg(0.3, 200.0)},
      {"noise.read_sigma", lin(0.0, 4.0)},
      {"noise.exposure", lg(1.0, 1000.0)},
      {"beam.center", lin(0.3, 0.7)},        // fraction of the image size
      {"beam.off_offset", lin(0.02, 0.3)},   // fraction outside the edge
      {"mask.linear_width", lin(0.02, 0.06)},
      {"mask.circular_radius", lin(0.03, 0.1)},
      {"mask.wedge_half_angle", lin(0.08, 0.4)},
      {"mask.wedge_radius", lin(0.7, 1.5)},
      {"gaps.width", in(2, 6)},
  };
}

inline std::map<std::string, double> default_probabilities() {
  return {
      {"ring", 0.45},           {"halo", 0.3},
      {"diffuse_low_q", 0.35},  {"diffuse_high_q", 0.25},
      {"sphere", 0.2},          {"lattice", 0.3},
      {"debye", 0.15},          {"peaks", 0.2},
      {"ring_anisotropic", 0.4}, {"halo_anisotropic", 0.3},
      {"lattice_spots", 0.4},
      {"beamstop_linear", 0.2}, {"beamstop_circular", 0.2},
      {"beamstop_wedge", 0.15}, {"gaps", 0.2},
      {"beam_off", 0.12},       {"shot_noise", 0.9},
      {"waxs", 0.5},
  };
}

struct GenerationConfig {
  std::uint64_t master_seed = 1;
  std::size_t image_count = 100;
  std::uint32_t image_size = 256;
  std::size_t run_count = 13;
  double run_window = 0.3;  // run sub-range width as a fraction of the full range
  std::map<std::string, double> probabilities = default_probabilities();
  std::map<std::string, ParamRange> ranges = default_ranges();
  TagThresholds thresholds;
  std::string output_dir;

  double p(const std::string& key) const { return probabilities.at(key); }

  void validate() const {
    if (image_size < 64) throw config_error("image_size", "must be >= 64");
    if (run_count < 1) throw config_error("run_count", "must be >= 1");
    if (image_count < run_count) throw config_error("image_count", "must be >= run_count");
    if (!(run_window > 0.0 && run_window <= 1.0))
      throw config_error("run_window", "must be in (0, 1]");
    for (const auto& [k, v] : probabilities)
      if (!(v >= 0.0 && v <= 1.0)) throw config_error("probabilities." + k, "must be in [0, 1]");
    if (p("beamstop_linear") + p("beamstop_circular") + p("beamstop_wedge") > 1.0 + 1e-12)
      throw config_error("probabilities.beamstop_*", "must sum to <= 1");
    for (const auto& [k, r] : ranges) {
      if (!(r.hi >= r.lo)) throw config_error("ranges." + k, "hi must be >= lo");
      if (r.log && !(r.lo > 0.0 && r.hi > r.lo))
        throw config_error("ranges." + k, "log range must be positive and non-degenerate");
    }
    thresholds.validate();
  }
};

inline void to_json(nlohmann::json& j, const TagThresholds& t) {
  j = {{"halo_breadth_ratio", t.halo_breadth_ratio},
       {"ring_many_threshold", t.ring_many_threshold},
       {"high_background", t.high_background},
       {"strong", t.strong},
       {"weak", t.weak},
       {"visibility", t.visibility}};
}

inline void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = {{"master_seed", c.master_seed}, {"image_count", c.image_count},
       {"image_size", c.image_size},   {"run_count", c.run_count},
       {"run_window", c.run_window},   {"probabilities", c.probabilities},
       {"ranges", c.ranges},           {"thresholds", c.thresholds}};
}

/// Reads a config document. Missing keys keep their defaults; unknown
/// probability or range keys are rejected.
inline GenerationConfig generation_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kTop = {"master_seed", "image_count", "image_size",
                                             "run_count", "run_window", "probabilities",
                                             "ranges", "thresholds", "output_dir"};
  GenerationConfig c;
  try {
    for (const auto& [k, v] : j.items())
      if (!kTop.contains(k)) throw config_error(k, "unknown configuration key");
    c.master_seed = j.value("master_seed", c.master_seed);
    c.image_count = j.value("image_count", c.image_count);
    c.image_size = j.value("image_size", c.image_size);
    c.run_count = j.value("run_count", c.run_count);
    c.run_window = j.value("run_window", c.run_window);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("probabilities"))
      for (const auto& [k, v] : j.at("probabilities").items()) {
        if (!c.probabilities.contains(k)) throw config_error("probabilities." + k, "unknown key");
        c.probabilities[k] = v.get<double>();
      }
    if (j.contains("ranges"))
      for (const auto& [k, v] : j.at("ranges").items()) {
        if (!c.ranges.contains(k)) throw config_error("ranges." + k, "unknown key");
        c.ranges[k] = v.get<ParamRange>();
      }
    if (j.contains("thresholds")) {
      const auto& t = j.at("thresholds");
      auto& th = c.thresholds;
      th.halo_breadth_ratio = t.value("halo_breadth_ratio", th.halo_breadth_ratio);
      th.ring_many_threshold = t.value("ring_many_threshold", th.ring_many_threshold);
      th.high_background = t.value("high_background", th.high_background);
      th.strong = t.value("strong", th.strong);
      th.weak = t.value("weak", th.weak);
      th.visibility = t.value("visibility", th.visibility);
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config", e.what());
  }
  c.validate();
  return c;
}

inline GenerationConfig load_generation_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "io", "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path.string(), e.what());
  }
  return generation_config_from_json(j);
}

//---------------------------------------------------------------------------//
// Detector presets and run templates
//---------------------------------------------------------------------------//

enum class Preset { SAXS, WAXS };

inline const char* preset_name(Preset p) { return p == Preset::SAXS ? "SAXS" : "WAXS"; }

/// 102.4 mm square detector at 1.0 Å; SAXS at 1000 mm, WAXS at 200 mm.
inline DetectorConfig preset_detector(Preset p, std::uint32_t size) {
  DetectorConfig d;
  d.width_px = d.height_px = size;
  d.pixel_size_mm = 102.4 / size;
  d.sample_distance_mm = p == Preset::SAXS ? 1000.0 : 200.0;
  d.wavelength_A = 1.0;
  d.beam_center_x = d.beam_center_y = 0.5 * size;
  return d;
}

inline double reference_q(Preset p, std::uint32_t size) {
  return q_from_radius(preset_detector(p, size), 0.5 * size);
}

struct RunTemplate {
  int run_id = 0;
  Preset preset = Preset::SAXS;
  std::map<std::string, ParamRange> ranges;
};

inline nlohmann::json run_template_to_json(const RunTemplate& t) {
  return {{"run_id", t.run_id}, {"preset", preset_name(t.preset)}, {"ranges", t.ranges}};
}

/// Each run fixes a detector preset and narrows every range to a random
/// sub-interval of cfg.run_window width, drawn from stream "run.<id>".
inline RunTemplate make_run_template(const GenerationConfig& cfg, int run_id) {
  Stream rng(cfg.master_seed, "run." + std::to_string(run_id));
  RunTemplate t;
  t.run_id = run_id;
  t.preset = rng.bernoulli(cfg.p("waxs")) ? Preset::WAXS : Preset::SAXS;
  for (const auto& [k, r] : cfg.ranges) t.ranges[k] = r.narrowed(cfg.run_window, rng.uniform());
  return t;
}

/// Run template that keeps the full ranges (no narrowing).
inline RunTemplate full_range_template(const GenerationConfig& cfg, Preset preset) {
  return RunTemplate{0, preset, cfg.ranges};
}

//---------------------------------------------------------------------------//
// Recipe sampling
//---------------------------------------------------------------------------//

struct SampledScene {
  SceneRecipe recipe;
  AttributeSet tags;
  Grid<double> intensity;
  int attempts = 0;
  bool fallback = false;
};

inline constexpr int kMaxRecipeAttempts = 64;

namespace detail {

struct RecipeDraw {
  const GenerationConfig& cfg;
  const RunTemplate& run;
  Stream& rng;
  double q_ref;
  std::uint32_t size;

  double draw(const std::string& key) { return run.ranges.at(key).sample(rng); }
  int draw_int(const std::string& key) { return static_cast<int>(draw(key)); }
  double angle() { return rng.uniform(-std::numbers::pi, std::numbers::pi); }

  Ring ring() {
    Ring r;
    r.q0 = draw("ring.q0_rel") * q_ref;
    r.sigma_q = draw("ring.sigma_rel") * r.q0;
    r.amplitude = draw("ring.amplitude");
    r.n_orders = draw_int("ring.n_orders");
    r.order_decay = draw("ring.order_decay");
    if (rng.bernoulli(cfg.p("ring_anisotropic"))) r.anisotropy = Anisotropy{draw("ring.kappa"), angle()};
    return r;
  }
  Halo halo() {
    Halo h;
    h.q0 = draw("halo.q0_rel") * q_ref;
    h.sigma_q = std::max(draw("halo.breadth"), cfg.thresholds.halo_breadth_ratio) * h.q0;
    h.amplitude = draw("halo.amplitude");
    if (rng.bernoulli(cfg.p("halo_anisotropic"))) h.anisotropy = Anisotropy{draw("halo.kappa"), angle()};
    return h;
  }
  DiffuseLowQ diffuse_low() {
    DiffuseLowQ d;
    d.power = draw("diffuse_low_q.power");
    d.q_floor = draw("diffuse_low_q.q_floor_rel") * q_ref;
    d.amplitude = draw("diffuse_low_q.level") * std::pow(0.1 * q_ref, d.power);
    return d;
  }
  DiffuseHighQ diffuse_high() {
    DiffuseHighQ d;
    d.amplitude = draw("diffuse_high_q.level");
    d.q_onset = draw("diffuse_high_q.onset_rel") * q_ref;
    d.softness = draw("diffuse_high_q.softness_rel") * q_ref;
    return d;
  }
  SphereFF sphere() {
    SphereFF s;
    s.radius_A = 4.4934 / (draw("sphere.first_zero_rel") * q_ref);
    s.amplitude = draw("sphere.level");
    s.polydispersity = std::min(0.3, draw("sphere.polydispersity"));
    return s;
  }
  Lattice lattice() {
    Lattice l;
    l.symmetry = rng.bernoulli(0.5) ? Symmetry::BCC : Symmetry::FCC;
    const double m1 = l.symmetry == Symmetry::BCC ? 2.0 : 3.0;
    const double q1 = draw("lattice.q1_rel") * q_ref;
    l.lattice_const_A = 2.0 * std::numbers::pi * std::sqrt(m1) / q1;
    l.peak_sigma_q = draw("lattice.sigma_rel") * q1;
    l.n_orders = std::clamp(draw_int("lattice.n_orders"), 1, 8);
    l.dw_factor = draw("lattice.dw") / (q1 * q1);
    l.amplitude = draw("lattice.amplitude");
    if (rng.bernoulli(cfg.p("lattice_spots")))
      l.spots = SpotTexture{std::clamp(draw_int("lattice.n_spots"), 2, 24),
                            draw("lattice.spot_sigma_phi")};
    return l;
  }
  DebyeCloud debye(std::uint64_t module_seed) {
    DebyeCloud c;
    c.strength = draw("debye.strength");
    c.q_samples = 256;
    const int n = std::max(1, draw_int("debye.n_points"));
    const double radius = draw("debye.extent") / q_ref;
    Stream pts(module_seed, "debye.points");
    while (static_cast<int>(c.points.size()) < n) {
      const Point3 p{pts.uniform(-1, 1), pts.uniform(-1, 1), pts.uniform(-1, 1)};
      if (p.x * p.x + p.y * p.y + p.z * p.z > 1.0) continue;
      c.points.push_back({p.x * radius, p.y * radius, p.z * radius});
    }
    return c;
  }
  PeakSet peaks() {
    PeakSet s;
    const int n = std::max(1, draw_int("peaks.count"));
    for (int i = 0; i < n; ++i) {
      Peak p;
      p.q = draw("peaks.q_rel") * q_ref;
      p.phi = angle();
      p.sigma_q = draw("peaks.sigma_rel") * p.q;
      p.sigma_phi = draw("peaks.sigma_phi");
      p.amplitude = draw("peaks.amplitude");
      s.peaks.push_back(p);
    }
    return s;
  }

  DetectorConfig detector() {
    DetectorConfig d = preset_detector(run.preset, size);
    const double s = size;
    d.beam_center_x = draw("beam.center") * s;
    d.beam_center_y = draw("beam.center") * s;
    if (rng.bernoulli(cfg.p("beam_off"))) {
      const double off = draw("beam.off_offset") * s;
      switch (rng.uniform_int(0, 3)) {
        case 0: d.beam_center_x = -off; break;
        case 1: d.beam_center_x = s + off; break;
        case 2: d.beam_center_y = -off; break;
        default: d.beam_center_y = s + off; break;
      }
    }
    return d;
  }

  MaskSpec mask() {
    MaskSpec m;
    const double s = size;
    const double u = rng.uniform();
    const double pl = cfg.p("beamstop_linear"), pc = cfg.p("beamstop_circular"),
                 pw = cfg.p("beamstop_wedge");
    if (u < pl) m.beamstop = LinearBeamstop{draw("mask.linear_width") * s, angle()};
    else if (u < pl + pc) m.beamstop = CircularBeamstop{draw("mask.circular_radius") * s};
    else if (u < pl + pc + pw)
      m.beamstop = WedgeBeamstop{draw("mask.wedge_half_angle"), angle(), draw("mask.wedge_radius") * s};
    if (rng.bernoulli(cfg.p("gaps"))) {
      const auto bands = rng.uniform_int(1, 2);
      const auto axis = rng.bernoulli(0.5) ? GapAxis::Rows : GapAxis::Columns;
      for (int b = 0; b < bands; ++b) {
        GapBand g;
        g.axis = axis;
        g.width_px = std::max(1, draw_int("gaps.width"));
        g.start_px = rng.uniform_int(0, static_cast<std::int64_t>(size) - g.width_px);
        m.gaps.push_back(g);
      }
    }
    return m;
  }

  NoiseSpec noise() {
    NoiseSpec n;
    n.background_level = draw("noise.background");
    n.read_sigma = draw("noise.read_sigma");
    n.shot_noise = rng.bernoulli(cfg.p("shot_noise"));
    n.exposure_scale = draw("noise.exposure");
    return n;
  }
};

}  // namespace detail

/// Draws modules by per-variant Bernoulli trials, plus detector, mask and
/// noise, from the image's "recipe" stream. Empty module lists are
/// re-drawn; after kMaxRecipeAttempts the recipe falls back to one Ring at
/// the run's midpoint parameters. Recipes whose canonical tags are empty are
/// re-drawn too, and if every attempt ends that way the config is degenerate.
inline SampledScene sample_scene(const GenerationConfig& cfg, const RunTemplate& run,
                                 std::uint64_t image_seed) {
  static const std::array<std::string, 8> kSlots = {
      "ring", "halo", "diffuse_low_q", "diffuse_high_q", "sphere", "lattice", "debye", "peaks"};
  const Stream base(image_seed, "recipe");
  const double q_ref = reference_q(run.preset, cfg.image_size);
  int empty_tag_rejections = 0;

  for (int attempt = 0; attempt < kMaxRecipeAttempts; ++attempt) {
    Stream rng = base.child(static_cast<std::uint64_t>(attempt));
    detail::RecipeDraw draw{cfg, run, rng, q_ref, cfg.image_size};
    SampledScene out;
    auto& r = out.recipe;
    r.seed = image_seed;
    r.detector = draw.detector();
    for (std::size_t slot = 0; slot < kSlots.size(); ++slot) {
      if (!rng.bernoulli(cfg.p(kSlots[slot]))) continue;
      const std::uint64_t mseed = rng.child("recipe.module." + std::to_string(slot))();
      Module m;
      m.seed = mseed;
      switch (slot) {
        case 0: m.spec = draw.ring(); break;
        case 1: m.spec = draw.halo(); break;
        case 2: m.spec = draw.diffuse_low(); break;
        case 3: m.spec = draw.diffuse_high(); break;
        case 4: m.spec = draw.sphere(); break;
        case 5: m.spec = draw.lattice(); break;
        case 6: m.spec = draw.debye(mseed); break;
        default: m.spec = draw.peaks(); break;
      }
      r.modules.push_back(std::move(m));
    }
    r.mask = draw.mask();
    r.noise = draw.noise();
    if (r.modules.empty()) continue;
    validate_recipe(r, cfg.thresholds);
    out.intensity = compose_scene(r);
    out.tags = derive_tags(r, out.intensity, cfg.thresholds);
    if (out.tags.empty()) {
      ++empty_tag_rejections;
      continue;
    }
    out.attempts = attempt + 1;
    return out;
  }
  if (empty_tag_rejections == kMaxRecipeAttempts)
    throw Error(ErrorKind::Recipe, "degenerate-config",
                "64 consecutive recipes had no canonical attribute");

  // Fallback: one isotropic Ring at midpoint parameters, clean detector.
  SampledScene out;
  auto& r = out.recipe;
  r.seed = image_seed;
  r.detector = preset_detector(run.preset, cfg.image_size);
  Ring ring;
  ring.q0 = run.ranges.at("ring.q0_rel").midpoint() * q_ref;
  ring.sigma_q = run.ranges.at("ring.sigma_rel").midpoint() * ring.q0;
  ring.amplitude = run.ranges.at("ring.amplitude").midpoint();
  r.modules.push_back({ring, base.child("recipe.module.0")()});
  r.noise.background_level = run.ranges.at("noise.background").midpoint();
  r.noise.exposure_scale = run.ranges.at("noise.exposure").midpoint();
  r.noise.read_sigma = 0.0;
  r.noise.shot_noise = true;
  out.intensity = compose_scene(r);
  out.tags = derive_tags(r, out.intensity, cfg.thresholds);
  out.attempts = kMaxRecipeAttempts;
  out.fallback = true;
  return out;
}

inline SceneRecipe sample_recipe(const GenerationConfig& cfg, const RunTemplate& run,
                                 std::uint64_t image_seed) {
  return sample_scene(cfg, run, image_seed).recipe;
}

//---------------------------------------------------------------------------//
// Generation
//---------------------------------------------------------------------------//

/// Images are assigned to runs in contiguous blocks: run = i * runs / count.
inline int run_of_image(std::size_t index, std::size_t image_count, std::size_t run_count) {
  return static_cast<int>(index * run_count / image_count);
}

inline std::string image_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu", index);
  return buf;
}

struct GeneratedImage {
  ManifestEntry entry;
  SyntheticImage image;
  SceneRecipe recipe;
};

inline GeneratedImage generate_image(const GenerationConfig& cfg,
                                     const std::vector<RunTemplate>& runs, std::size_t index) {
  const std::uint64_t seed = image_seed(cfg.master_seed, index);
  const int run = run_of_image(index, cfg.image_count, cfg.run_count);
  auto scene = sample_scene(cfg, runs[static_cast<std::size_t>(run)], seed);
  GeneratedImage g;
  g.image = render_scene(scene.recipe, scene.intensity);
  g.entry.id = image_id(index);
  g.entry.path = "images/" + g.entry.id + ".xsim";
  g.entry.run_id = run;
  g.entry.seed = seed;
  g.entry.attributes = scene.tags;
  g.entry.recipe_digest = hex64(recipe_digest(scene.recipe));
  g.recipe = std::move(scene.recipe);
  return g;
}

/// Writes images/, manifest.jsonl, runs.json and config.json under
/// `out_dir`. Returns the manifest ordered by image index.
inline Manifest generate_dataset(const GenerationConfig& cfg,
                                 const std::filesystem::path& out_dir, unsigned threads = 1) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw Error(ErrorKind::Io, "io", "cannot create " + (out_dir / "images").string());

  std::vector<RunTemplate> runs;
  for (std::size_t r = 0; r < cfg.run_count; ++r) runs.push_back(make_run_template(cfg, static_cast<int>(r)));

  Manifest manifest(cfg.image_count);
  parallel_for(cfg.image_count, threads, [&](std::size_t i) {
    auto g = generate_image(cfg, runs, i);
    write_image(out_dir / g.entry.path, g.image);
    manifest[i] = std::move(g.entry);
  });

  nlohmann::json run_doc = nlohmann::json::array();
  for (const auto& t : runs) run_doc.push_back(run_template_to_json(t));
  const auto runs_text = run_doc.dump(1) + "\n";
  io::write_file(out_dir / "runs.json", {runs_text.begin(), runs_text.end()});
  const auto cfg_text = nlohmann::json(cfg).dump(1) + "\n";
  io::write_file(out_dir / "config.json", {cfg_text.begin(), cfg_text.end()});
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace xsim
