#include <atomic>
#include <thread>

#include "shapemat/error.hpp"
#include "shapemat/material.hpp"
#include "shapemat/parallel.hpp"

namespace shapemat {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedInput: return "malformed input";
    case ErrorKind::EmptyMesh: return "empty mesh";
    case ErrorKind::UnknownComponent: return "unknown component";
    case ErrorKind::DegenerateGeometry: return "degenerate geometry";
    case ErrorKind::MissingUnaries: return "missing unaries";
    case ErrorKind::OracleSize: return "oracle size";
    case ErrorKind::MissingData: return "missing data";
    case ErrorKind::InvalidK: return "invalid k";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Io: return "io";
  }
  return "error";
}

std::string_view material_name(Material m) {
  switch (m) {
    case Material::Wood: return "wood";
    case Material::Plastic: return "plastic";
    case Material::Metal: return "metal";
    case Material::Glass: return "glass";
    case Material::Fabric: return "fabric";
  }
  return "?";
}

std::optional<Material> parse_material(std::string_view name) {
  for (Material m : kAllMaterials)
    if (material_name(m) == name) return m;
  // Leather is folded into fabric.
  if (name == "leather") return Material::Fabric;
  return std::nullopt;
}

std::vector<Material> MaterialLabelSet::materials() const {
  std::vector<Material> out;
  for (Material m : kAllMaterials)
    if (contains(m)) out.push_back(m);
  return out;
}

std::vector<std::string> MaterialLabelSet::names() const {
  std::vector<std::string> out;
  for (Material m : materials()) out.emplace_back(material_name(m));
  return out;
}

MaterialLabelSet MaterialLabelSet::from_names(const std::vector<std::string>& names) {
  MaterialLabelSet s;
  for (const auto& n : names) {
    auto m = parse_material(n);
    if (!m) throw Error(ErrorKind::MalformedInput, "unknown material '" + n + "'");
    s.insert(*m);
  }
  return s;
}

namespace {
std::atomic<unsigned> g_threads{0};
}

void set_thread_count(unsigned n) { g_threads = n; }

unsigned thread_count() {
  unsigned n = g_threads.load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

}  // namespace shapemat
