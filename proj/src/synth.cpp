#include "shapemat/synth.hpp"

#include <Eigen/Geometry>
#include <array>
#include <algorithm>
#include <cmath>
#include <functional>
#include <json.hpp>
#include <random>
#include <set>

#include "shapemat/error.hpp"

namespace shapemat {

namespace {

using Key = std::array<double, 3>;

// Accumulates components; vertices are shared only within a component.
class Builder {
 public:
  void begin(const std::string& name) {
    names_.push_back(name);
    comp_start_vertex_ = static_cast<int>(verts_.size());
    comp_start_face_ = static_cast<int>(faces_.size());
    index_.clear();
  }

  int vertex(const Vec3& p) {
    const Key k{p.x(), p.y(), p.z()};
    auto it = index_.find(k);
    if (it != index_.end()) return it->second;
    verts_.push_back(p);
    const int id = static_cast<int>(verts_.size()) - 1;
    index_.emplace(k, id);
    return id;
  }

  void tri(int a, int b, int c) {
    faces_.emplace_back(a, b, c);
    face_comp_.push_back(static_cast<int>(names_.size()) - 1);
  }

  // Counter-clockwise seen from outside; split into a fan around the center.
  void quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const int ia = vertex(a), ib = vertex(b), ic = vertex(c), id = vertex(d);
    const int m = vertex((a + b + c + d) / 4.0);
    tri(ia, ib, m);
    tri(ib, ic, m);
    tri(ic, id, m);
    tri(id, ia, m);
  }

  /// Applies x -> linear * x + offset to the current component; reverses the
  /// winding when `linear` flips orientation.
  void transform_current(const Mat3& linear, const Vec3& offset) {
    for (std::size_t v = comp_start_vertex_; v < verts_.size(); ++v) verts_[v] = linear * verts_[v] + offset;
    if (linear.determinant() < 0)
      for (std::size_t f = comp_start_face_; f < faces_.size(); ++f) std::swap(faces_[f][1], faces_[f][2]);
    index_.clear();
  }

  std::vector<Vec3>& vertices() { return verts_; }

  LabeledMesh finish() const { return LabeledMesh::build(verts_, faces_, names_, face_comp_); }

 private:
  std::vector<Vec3> verts_;
  std::vector<Tri> faces_;
  std::vector<std::string> names_;
  std::vector<int> face_comp_;
  std::map<Key, int> index_;
  int comp_start_vertex_ = 0;
  int comp_start_face_ = 0;
};

void add_box(Builder& b, const Vec3& center, const Vec3& half, int n) {
  for (int k = 0; k < 3; ++k) {
    const int u = (k + 1) % 3, v = (k + 2) % 3;
    for (double s : {1.0, -1.0}) {
      auto at = [&](int i, int j) {
        Vec3 p;
        p[k] = center[k] + s * half[k];
        p[u] = center[u] + half[u] * (2.0 * i / n - 1.0);
        p[v] = center[v] + half[v] * (2.0 * j / n - 1.0);
        return p;
      };
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (s > 0)
            b.quad(at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
          else
            b.quad(at(i, j), at(i, j + 1), at(i + 1, j + 1), at(i + 1, j));
        }
    }
  }
}

// Upright cylinder from y0 to y1.
void add_cylinder(Builder& b, const Vec3& base, double radius, double y0, double y1, int segments, int rings) {
  auto at = [&](int j, int k) {
    const double phi = 2.0 * M_PI * (j % segments) / segments;
    return Vec3(base.x() + radius * std::cos(phi), y0 + (y1 - y0) * k / rings, base.z() + radius * std::sin(phi));
  };
  for (int j = 0; j < segments; ++j)
    for (int k = 0; k < rings; ++k) b.quad(at(j, k), at(j, k + 1), at(j + 1, k + 1), at(j + 1, k));
  const int top = b.vertex(Vec3(base.x(), y1, base.z()));
  const int bottom = b.vertex(Vec3(base.x(), y0, base.z()));
  for (int j = 0; j < segments; ++j) {
    b.tri(top, b.vertex(at(j + 1, rings)), b.vertex(at(j, rings)));
    b.tri(bottom, b.vertex(at(j, 0)), b.vertex(at(j + 1, 0)));
  }
}

void add_leg(Builder& b, PartShape shape, const Vec3& base, double half_width, double y1, int res) {
  if (shape == PartShape::Cylinder)
    add_cylinder(b, base, half_width, 0.0, y1, 4 * res, res);
  else
    add_box(b, Vec3(base.x(), y1 / 2, base.z()), Vec3(half_width, y1 / 2, half_width), res);
}

std::string role_of(const std::string& component) {
  if (component.rfind("leg", 0) == 0) return "legs";
  if (component.rfind("door", 0) == 0) return "doors";
  if (component.rfind("handle", 0) == 0) return "handles";
  return component;
}

LabeledMesh apply_materials(const LabeledMesh& mesh, const std::map<std::string, MaterialLabelSet>& materials) {
  LabelDocument doc;
  for (const auto& c : mesh.components()) {
    auto it = materials.find(role_of(c.name));
    if (it != materials.end() && !it->second.empty()) doc[c.name] = it->second;
  }
  return attach_labels(mesh, doc);
}

MaterialLabelSet one(Material m) {
  MaterialLabelSet s;
  s.insert(m);
  return s;
}

void build_table(Builder& b, const SynthSpec& spec) {
  const int res = std::max(1, spec.resolution);
  const double half = spec.width / 2;
  const double t = 0.05 * spec.width / 1.2;
  const double h = spec.height;
  const int n = std::max(1, spec.legs);
  b.begin("top");
  if (spec.top_shape == PartShape::Box) {
    add_box(b, Vec3(0, h - t / 2, 0), Vec3(half, t / 2, half), res);
  } else {
    const int seg = n * ((8 * res + n - 1) / n);
    add_cylinder(b, Vec3::Zero(), half, h - t, h, seg, 1);
  }
  const double reach = spec.top_shape == PartShape::Box && n == 4 ? 0.85 * half * std::sqrt(2.0) : 0.8 * half;
  const Vec3 base(reach * std::cos(M_PI / 4), 0.0, reach * std::sin(M_PI / 4));
  const double leg_half = 0.03 * spec.width / 1.2;
  for (int i = 0; i < n; ++i) {
    b.begin("leg_" + std::to_string(i));
    add_leg(b, spec.leg_shape, base, leg_half, h - t, res);
    const Mat3 rot = Eigen::AngleAxisd(2.0 * M_PI * i / n, Vec3::UnitY()).toRotationMatrix();
    if (i > 0) b.transform_current(rot, Vec3::Zero());
  }
}

void build_chair(Builder& b, const SynthSpec& spec) {
  const int res = std::max(1, spec.resolution);
  const double s = spec.width / 1.2;
  const double seat_y = 0.6 * spec.height;
  const double seat_t = 0.03 * s;
  b.begin("seat");
  add_box(b, Vec3(0, seat_y, 0), Vec3(0.25 * s, seat_t, 0.25 * s), res);
  b.begin("back");
  const double back_half = 0.25 * s;
  add_box(b, Vec3(0, seat_y + seat_t + back_half, -0.225 * s), Vec3(0.25 * s, back_half, 0.025 * s), res);
  const double a = 0.21 * s;
  const std::array<Vec3, 4> spots{Vec3(a, 0, a), Vec3(-a, 0, a), Vec3(a, 0, -a), Vec3(-a, 0, -a)};
  const int n = std::clamp(spec.legs, 1, 4);
  for (int i = 0; i < n; ++i) {
    b.begin("leg_" + std::to_string(i));
    add_leg(b, spec.leg_shape, Vec3::Zero(), 0.025 * s, seat_y - seat_t, res);
    b.transform_current(Mat3::Identity(), spots[i]);
  }
}

void build_cabinet(Builder& b, const SynthSpec& spec) {
  const int res = std::max(1, spec.resolution);
  const double s = spec.width / 1.2;
  const double H = spec.height * 4.0 / 3.0;
  const double depth = 0.225 * s;
  b.begin("body");
  add_box(b, Vec3(0, H / 2, 0), Vec3(0.4 * s, H / 2, depth), res);
  for (int i = 0; i < 2; ++i) {
    const double x = (i == 0 ? 1 : -1) * 0.2 * s;
    b.begin("door_" + std::to_string(i));
    add_box(b, Vec3(x, H / 2, depth + 0.01 * s), Vec3(0.19 * s, 0.45 * H, 0.01 * s), res);
  }
  for (int i = 0; i < 2; ++i) {
    const double x = (i == 0 ? 1 : -1) * 0.05 * s;
    b.begin("handle_" + std::to_string(i));
    add_box(b, Vec3(x, 0.55 * H, depth + 0.035 * s), Vec3(0.012 * s, 0.06 * s, 0.015 * s), std::max(1, res / 2));
  }
}

}  // namespace

const char* category_name(Category c) {
  switch (c) {
    case Category::Table: return "table";
    case Category::Chair: return "chair";
    case Category::Cabinet: return "cabinet";
  }
  return "?";
}

Category parse_category(const std::string& name) {
  if (name == "table") return Category::Table;
  if (name == "chair") return Category::Chair;
  if (name == "cabinet") return Category::Cabinet;
  throw Error(ErrorKind::MalformedInput, "unknown category '" + name + "'");
}

std::map<std::string, MaterialLabelSet> default_materials(Category category) {
  switch (category) {
    case Category::Table: return {{"top", one(Material::Wood)}, {"legs", one(Material::Metal)}};
    case Category::Chair:
      return {{"seat", one(Material::Fabric)}, {"back", one(Material::Wood)}, {"legs", one(Material::Metal)}};
    case Category::Cabinet:
      return {{"body", one(Material::Wood)}, {"doors", one(Material::Glass)}, {"handles", one(Material::Metal)}};
  }
  return {};
}

LabeledMesh generate(const SynthSpec& spec) {
  if (!(spec.width > 0) || !(spec.height > 0)) throw Error(ErrorKind::MalformedInput, "synth dimensions must be positive");
  if (spec.jitter < 0) throw Error(ErrorKind::MalformedInput, "jitter must be non-negative");
  Builder b;
  switch (spec.category) {
    case Category::Table: build_table(b, spec); break;
    case Category::Chair: build_chair(b, spec); break;
    case Category::Cabinet: build_cabinet(b, spec); break;
  }
  LabeledMesh mesh = b.finish();
  if (spec.jitter > 0) {
    const double bound = spec.jitter * mesh.bounding_sphere().radius;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> mag(0.0, bound);
    for (Vec3& v : b.vertices()) {
      Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
      if (dir.norm() == 0) continue;
      v += dir.normalized() * mag(rng);
    }
    mesh = b.finish();
  }
  const auto materials = spec.materials.empty() ? default_materials(spec.category) : spec.materials;
  return apply_materials(mesh, materials);
}

LabeledMesh mirrored_chair_fixture() {
  Builder b;
  const int res = 4;
  struct Part {
    std::string name;
    std::function<void(Builder&)> make;
  };
  const std::vector<Part> half{
      {"seat", [&](Builder& x) { add_box(x, Vec3(-0.125, 0.45, 0), Vec3(0.125, 0.03, 0.25), res); }},
      {"back", [&](Builder& x) { add_box(x, Vec3(-0.125, 0.73, -0.225), Vec3(0.125, 0.25, 0.025), res); }},
      {"leg_front", [&](Builder& x) { add_cylinder(x, Vec3(-0.21, 0, 0.21), 0.025, 0.0, 0.42, 16, 4); }},
      {"leg_back", [&](Builder& x) { add_box(x, Vec3(-0.21, 0.21, -0.21), Vec3(0.03, 0.21, 0.03), res); }},
      {"arm", [&](Builder& x) { add_box(x, Vec3(-0.27, 0.62, 0.02), Vec3(0.025, 0.02, 0.2), res); }},
      {"arm_post", [&](Builder& x) { add_box(x, Vec3(-0.27, 0.535, 0.19), Vec3(0.02, 0.065, 0.02), res); }},
  };
  const Mat3 mirror = Vec3(-1, 1, 1).asDiagonal();
  for (const auto& p : half) {
    b.begin(p.name + "_left");
    p.make(b);
  }
  for (const auto& p : half) {
    b.begin(p.name + "_right");
    p.make(b);
    b.transform_current(mirror, Vec3::Zero());
  }
  LabelDocument doc;
  for (const char* side : {"_left", "_right"}) {
    const std::string s(side);
    doc["seat" + s] = one(Material::Fabric);
    doc["back" + s] = one(Material::Wood);
    doc["leg_front" + s] = one(Material::Metal);
    doc["leg_back" + s] = one(Material::Metal);
    doc["arm" + s] = one(Material::Plastic);
    doc["arm_post" + s] = one(Material::Plastic);
  }
  return attach_labels(b.finish(), doc);
}

std::vector<std::pair<int, int>> symmetric_leg_face_pairs(const LabeledMesh& mesh) {
  std::vector<const Component*> legs;
  for (const auto& c : mesh.components())
    if (c.name.rfind("leg", 0) == 0) legs.push_back(&c);
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < legs.size(); ++i)
    for (std::size_t j = i + 1; j < legs.size(); ++j) {
      if (legs[i]->faces.size() != legs[j]->faces.size()) continue;
      for (std::size_t k = 0; k < legs[i]->faces.size(); ++k) out.emplace_back(legs[i]->faces[k], legs[j]->faces[k]);
    }
  return out;
}

Eigen::MatrixXd uniform_confusion_bias() { return Eigen::MatrixXd::Constant(kNumMaterials, kNumMaterials, 0.2); }

Eigen::MatrixXd default_confusion_bias() {
  Eigen::MatrixXd bias = uniform_confusion_bias();
  const std::array<std::pair<Material, Material>, 2> partners{
      {{Material::Glass, Material::Wood}, {Material::Plastic, Material::Metal}}};
  for (auto [a, b] : partners) {
    bias.row(index_of(a)) *= 0.5;
    bias.row(index_of(b)) *= 0.5;
    bias(index_of(a), index_of(b)) += 0.5;
    bias(index_of(b), index_of(a)) += 0.5;
  }
  return bias;
}

Eigen::MatrixXd corrupt_unaries(const std::vector<MaterialLabelSet>& truths, double noise_rate,
                                const Eigen::MatrixXd& confusion_bias, std::uint64_t seed) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw Error(ErrorKind::MalformedInput, "noise rate must be in [0, 1]");
  const Eigen::MatrixXd bias = confusion_bias.size() == 0 ? default_confusion_bias() : confusion_bias;
  if (bias.rows() != kNumMaterials || bias.cols() != kNumMaterials || (bias.array() < 0).any())
    throw Error(ErrorKind::MalformedInput, "confusion bias must be a non-negative 5x5 matrix");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(truths.size()), kNumMaterials);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto mats = truths[i].materials();
    if (mats.empty()) {
      out.row(static_cast<Eigen::Index>(i)).setConstant(0.2);
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, mats.size() - 1);
    int label = index_of(mats[pick(rng)]);
    if (coin(rng) < noise_rate) {
      const Eigen::VectorXd row = bias.row(label).transpose();
      std::discrete_distribution<int> draw(row.data(), row.data() + row.size());
      label = draw(rng);
    }
    out.row(static_cast<Eigen::Index>(i)).setConstant(0.025);
    out(static_cast<Eigen::Index>(i), label) = 0.9;
  }
  return out;
}

namespace {

MaterialLabelSet pick_labels(std::mt19937_64& rng, std::initializer_list<Material> options) {
  const std::vector<Material> opts(options);
  std::uniform_int_distribution<std::size_t> pick(0, opts.size() - 1);
  MaterialLabelSet s = one(opts[pick(rng)]);
  // Occasional multi-label parts.
  if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.1) s.insert(opts[pick(rng)]);
  return s;
}

SynthSpec random_spec(Category c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SynthSpec s;
  s.category = c;
  s.seed = rng();
  s.leg_shape = u(rng) < 0.5 ? PartShape::Cylinder : PartShape::Box;
  s.top_shape = u(rng) < 0.7 ? PartShape::Box : PartShape::Cylinder;
  using M = Material;
  switch (c) {
    case Category::Table:
      s.width = 1.0 + 0.4 * u(rng);
      s.height = 0.7 + 0.1 * u(rng);
      s.materials = {{"top", pick_labels(rng, {M::Wood, M::Glass, M::Plastic, M::Metal})},
                     {"legs", pick_labels(rng, {M::Metal, M::Wood, M::Plastic})}};
      break;
    case Category::Chair:
      s.width = 1.0 + 0.3 * u(rng);
      s.height = 0.7 + 0.1 * u(rng);
      s.materials = {{"seat", pick_labels(rng, {M::Fabric, M::Wood, M::Plastic})},
                     {"back", pick_labels(rng, {M::Fabric, M::Wood, M::Plastic})},
                     {"legs", pick_labels(rng, {M::Metal, M::Wood})}};
      break;
    case Category::Cabinet:
      s.width = 1.0 + 0.4 * u(rng);
      s.height = 0.65 + 0.2 * u(rng);
      s.materials = {{"body", pick_labels(rng, {M::Wood, M::Plastic, M::Metal})},
                     {"doors", pick_labels(rng, {M::Wood, M::Glass})},
                     {"handles", pick_labels(rng, {M::Metal, M::Plastic})}};
      break;
  }
  return s;
}

}  // namespace

std::vector<SynthSpec> benchmark_specs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SynthSpec> out;
  for (int i = 0; i < 12; ++i) out.push_back(random_spec(Category::Table, rng));
  for (int i = 0; i < 12; ++i) out.push_back(random_spec(Category::Chair, rng));
  for (int i = 0; i < 6; ++i) out.push_back(random_spec(Category::Cabinet, rng));
  return out;
}

std::vector<SynthSpec> random_specs(int count, std::uint64_t seed) {
  static constexpr std::array<Category, 5> kCycle{Category::Table, Category::Chair, Category::Table, Category::Chair,
                                                  Category::Cabinet};
  std::mt19937_64 rng(seed);
  std::vector<SynthSpec> out;
  for (int i = 0; i < count; ++i) out.push_back(random_spec(kCycle[i % kCycle.size()], rng));
  return out;
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    SynthSpec s;
    static const std::set<std::string> known{"category", "legs",  "leg_shape", "top_shape", "materials",
                                             "jitter",   "seed",  "resolution", "width",    "height"};
    for (const auto& [key, value] : j.items())
      if (!known.count(key)) throw Error(ErrorKind::MalformedInput, "unknown synth spec key '" + key + "'");
    s.category = parse_category(j.value("category", std::string("table")));
    s.legs = j.value("legs", s.legs);
    auto shape = [](const std::string& v) {
      if (v == "box") return PartShape::Box;
      if (v == "cylinder" || v == "round") return PartShape::Cylinder;
      throw Error(ErrorKind::MalformedInput, "unknown part shape '" + v + "'");
    };
    s.leg_shape = shape(j.value("leg_shape", std::string("cylinder")));
    s.top_shape = shape(j.value("top_shape", std::string("box")));
    s.jitter = j.value("jitter", 0.0);
    s.seed = j.value("seed", std::uint64_t{0});
    s.resolution = j.value("resolution", s.resolution);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    if (j.contains("materials"))
      for (const auto& [role, names] : j.at("materials").items())
        s.materials[role] = MaterialLabelSet::from_names(names.get<std::vector<std::string>>());
    if (s.legs < 1) throw Error(ErrorKind::MalformedInput, "a shape needs at least one leg");
    if (s.resolution < 1) throw Error(ErrorKind::MalformedInput, "resolution must be positive");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedInput, std::string("synth spec: ") + e.what());
  }
}

std::string synth_spec_json(const SynthSpec& spec) {
  nlohmann::ordered_json j;
  j["category"] = category_name(spec.category);
  j["legs"] = spec.legs;
  j["leg_shape"] = spec.leg_shape == PartShape::Box ? "box" : "cylinder";
  j["top_shape"] = spec.top_shape == PartShape::Box ? "box" : "cylinder";
  nlohmann::ordered_json mats = nlohmann::ordered_json::object();
  for (const auto& [role, set] : spec.materials) mats[role] = set.names();
  j["materials"] = mats;
  j["jitter"] = spec.jitter;
  j["seed"] = spec.seed;
  j["resolution"] = spec.resolution;
  j["width"] = spec.width;
  j["height"] = spec.height;
  return j.dump(2);
}

}  // namespace shapemat
