#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace shapemat {

// Fixed material order; also the argmax tie-break order.
enum class Material : std::uint8_t { Wood = 0, Plastic = 1, Metal = 2, Glass = 3, Fabric = 4 };

inline constexpr int kNumMaterials = 5;

inline constexpr std::array<Material, kNumMaterials> kAllMaterials = {
    Material::Wood, Material::Plastic, Material::Metal, Material::Glass, Material::Fabric};

std::string_view material_name(Material m);
std::optional<Material> parse_material(std::string_view name);

inline constexpr int index_of(Material m) { return static_cast<int>(m); }

/// Set of materials attached to a component or sample. "metal or plastic"
/// is stored as {metal, plastic}.
class MaterialLabelSet {
 public:
  constexpr MaterialLabelSet() = default;
  constexpr MaterialLabelSet(std::initializer_list<Material> ms) {
    for (Material m : ms) insert(m);
  }

  static constexpr MaterialLabelSet from_bits(std::uint8_t bits) {
    MaterialLabelSet s;
    s.bits_ = bits & 0x1F;
    return s;
  }

  constexpr void insert(Material m) { bits_ |= bit(m); }
  constexpr void erase(Material m) { bits_ &= static_cast<std::uint8_t>(~bit(m)); }
  constexpr bool contains(Material m) const { return (bits_ & bit(m)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const {
    int n = 0;
    for (std::uint8_t b = bits_; b; b &= static_cast<std::uint8_t>(b - 1)) ++n;
    return n;
  }
  constexpr bool intersects(MaterialLabelSet o) const { return (bits_ & o.bits_) != 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  /// t_{m,p} indicator.
  constexpr double indicator(Material m) const { return contains(m) ? 1.0 : 0.0; }

  std::vector<Material> materials() const;
  std::vector<std::string> names() const;
  static MaterialLabelSet from_names(const std::vector<std::string>& names);

  friend constexpr bool operator==(MaterialLabelSet a, MaterialLabelSet b) { return a.bits_ == b.bits_; }

 private:
  static constexpr std::uint8_t bit(Material m) { return static_cast<std::uint8_t>(1u << index_of(m)); }
  std::uint8_t bits_ = 0;
};

}  // namespace shapemat
