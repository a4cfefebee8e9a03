#pragma once

#include <array>
#include <bitset>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xsim {

/// The 17 canonical attributes, in table order.
enum class Attribute : unsigned {
  BCC,
  BeamOffImage,
  CircBeamstop,
  DiffuseHighQ,
  DiffuseLowQ,
  FCC,
  Halo,
  HighBackground,
  HigherOrders,
  LinearBeamstop,
  ManyRings,
  Polycrystalline,
  Ring,
  StrongScattering,
  StructureFactor,
  WeakScattering,
  WedgeBeamstop,
};

inline constexpr std::size_t kAttributeCount = 17;

inline constexpr std::array<std::string_view, kAttributeCount> kAttributeNames = {
    "BCC",
    "Beam Off Image",
    "Circ. Beamstop",
    "Diffuse high-q",
    "Diffuse low-q",
    "FCC",
    "Halo",
    "High background",
    "Higher orders",
    "Linear beamstop",
    "Many rings",
    "Polycrystalline",
    "Ring",
    "Strong scattering",
    "Structure factor",
    "Weak scattering",
    "Wedge beamstop",
};

constexpr std::string_view attribute_name(Attribute a) {
  return kAttributeNames[static_cast<std::size_t>(a)];
}

inline std::optional<Attribute> attribute_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kAttributeCount; ++i)
    if (kAttributeNames[i] == name) return static_cast<Attribute>(i);
  return std::nullopt;
}

/// Canonical subset plus free-form extended tags (e.g. "Ring: Anisotropic").
struct AttributeSet {
  std::bitset<kAttributeCount> canonical;
  std::vector<std::string> extended;

  bool has(Attribute a) const { return canonical.test(static_cast<std::size_t>(a)); }
  void add(Attribute a) { canonical.set(static_cast<std::size_t>(a)); }
  void add_extended(std::string tag) {
    for (const auto& t : extended)
      if (t == tag) return;
    extended.push_back(std::move(tag));
  }
  bool empty() const { return canonical.none(); }

  std::vector<std::string> canonical_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < kAttributeCount; ++i)
      if (canonical.test(i)) out.emplace_back(kAttributeNames[i]);
    return out;
  }

  friend bool operator==(const AttributeSet&, const AttributeSet&) = default;
};

}  // namespace xsim
