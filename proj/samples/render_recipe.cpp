// Builds one scene by hand, renders it and prints the derived tags.
//
//   render_recipe [out.xsim]

#include <cmath>
#include <cstdio>

#include "xsim/scene.hpp"

using namespace xsim;

int main(int argc, char** argv) {
  SceneRecipe r;
  r.seed = 42;
  const double q_edge = q_from_radius(r.detector, 128.0);

  Ring ring;
  ring.q0 = 0.25 * q_edge;
  ring.sigma_q = 0.01 * q_edge;
  ring.amplitude = 3.0;
  ring.n_orders = 3;
  ring.order_decay = 0.5;
  r.modules.push_back({ring, 1});

  DiffuseLowQ diffuse;
  diffuse.q_floor = 0.02 * q_edge;
  diffuse.amplitude = 0.2 * std::pow(0.1 * q_edge, diffuse.power);
  r.modules.push_back({diffuse, 2});

  r.mask.beamstop = CircularBeamstop{6.0};
  r.noise.exposure_scale = 200.0;
  r.noise.background_level = 4.0;

  const auto intensity = compose_scene(r);
  const auto img = render_scene(r, intensity);
  const auto tags = derive_tags(r, intensity);

  std::printf("%u x %u image\n", img.width, img.height);
  for (const auto& t : tags.canonical_names()) std::printf("  %s\n", t.c_str());
  for (const auto& t : tags.extended) std::printf("  (%s)\n", t.c_str());
  if (argc > 1) write_image(argv[1], img);
  return 0;
}
