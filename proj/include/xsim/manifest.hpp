#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xsim/attributes.hpp"
#include "xsim/binary_io.hpp"
#include "xsim/core.hpp"

namespace xsim {

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the dataset root
  int run_id = 0;
  std::uint64_t seed = 0;
  AttributeSet attributes;
  std::string recipe_digest;  // 16 hex digits
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, kept

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
  nlohmann::json j = e.extra;
  j["id"] = e.id;
  j["path"] = e.path;
  j["run_id"] = e.run_id;
  j["seed"] = e.seed;
  j["attributes"] = e.attributes.canonical_names();
  j["extended"] = e.attributes.extended;
  j["recipe_digest"] = e.recipe_digest;
  return j;
}

/// Parses one manifest line. Unknown canonical names are an error since the
/// attribute vocabulary is closed; unknown keys go to `extra`.
inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKnown = {"id", "path", "run_id", "seed",
                                               "attributes", "extended", "recipe_digest"};
  ManifestEntry e;
  j.at("id").get_to(e.id);
  j.at("path").get_to(e.path);
  j.at("run_id").get_to(e.run_id);
  j.at("seed").get_to(e.seed);
  for (const auto& name : j.at("attributes")) {
    const auto a = attribute_from_name(name.get<std::string>());
    if (!a) throw std::invalid_argument("unknown attribute \"" + name.get<std::string>() + "\"");
    e.attributes.add(*a);
  }
  if (j.contains("extended")) j.at("extended").get_to(e.attributes.extended);
  j.at("recipe_digest").get_to(e.recipe_digest);
  for (const auto& [key, value] : j.items())
    if (!kKnown.contains(key)) e.extra[key] = value;
  return e;
}

inline std::string manifest_to_string(const Manifest& m) {
  std::string out;
  for (const auto& e : m) {
    out += manifest_entry_to_json(e).dump();
    out += '\n';
  }
  return out;
}

inline Manifest parse_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto e = manifest_entry_from_json(nlohmann::json::parse(line));
      if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate id " + e.id);
      m.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw format_error("manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return m;
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  const auto s = manifest_to_string(m);
  io::write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "io", "cannot open " + path.string());
  return parse_manifest(in);
}

/// Distinct run ids, ascending.
inline std::vector<int> run_ids(const Manifest& m) {
  std::set<int> s;
  for (const auto& e : m) s.insert(e.run_id);
  return {s.begin(), s.end()};
}

}  // namespace xsim
