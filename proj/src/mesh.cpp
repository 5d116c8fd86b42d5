#include "shapemat/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "shapemat/error.hpp"

namespace shapemat {

namespace {

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Faces incident to each undirected edge, in face order.
std::unordered_map<std::uint64_t, std::vector<int>> edge_faces(const std::vector<Tri>& faces) {
  std::unordered_map<std::uint64_t, std::vector<int>> map;
  map.reserve(faces.size() * 2);
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces[f][k];
      const int b = faces[f][(k + 1) % 3];
      if (a == b) continue;
      auto& list = map[edge_key(a, b)];
      if (list.empty() || list.back() != f) list.push_back(f);
    }
  }
  return map;
}

BoundingSphere bounding_sphere_of(const std::vector<Vec3>& vertices) {
  BoundingSphere s;
  if (vertices.empty()) return s;
  Vec3 lo = vertices.front(), hi = vertices.front();
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  s.center = 0.5 * (lo + hi);
  double r2 = 0.0;
  for (const auto& v : vertices) r2 = std::max(r2, (v - s.center).squaredNorm());
  s.radius = std::sqrt(r2);
  return s;
}

}  // namespace

LabeledMesh LabeledMesh::build(std::vector<Vec3> vertices, std::vector<Tri> faces,
                               const std::vector<std::string>& component_names,
                               const std::vector<int>& face_component) {
  if (faces.empty()) throw Error(ErrorKind::EmptyMesh, "mesh has no faces");
  if (face_component.size() != faces.size())
    throw Error(ErrorKind::MalformedInput, "face/component count mismatch");

  const int nv = static_cast<int>(vertices.size());
  for (const auto& t : faces)
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= nv) throw Error(ErrorKind::MalformedInput, "face index out of range");

  LabeledMesh mesh;
  mesh.vertices_ = std::move(vertices);
  mesh.faces_ = std::move(faces);

  // Compact components: drop names that own no faces.
  std::vector<int> remap(component_names.size(), -1);
  for (int c : face_component) {
    if (c < 0 || c >= static_cast<int>(component_names.size()))
      throw Error(ErrorKind::MalformedInput, "face component out of range");
    remap[c] = 0;
  }
  for (std::size_t c = 0; c < component_names.size(); ++c) {
    if (remap[c] < 0) continue;
    remap[c] = static_cast<int>(mesh.components_.size());
    mesh.components_.push_back(Component{component_names[c], {}, std::nullopt});
  }
  mesh.face_component_.resize(mesh.faces_.size());
  for (std::size_t f = 0; f < mesh.faces_.size(); ++f) {
    const int c = remap[face_component[f]];
    mesh.face_component_[f] = c;
    mesh.components_[c].faces.push_back(static_cast<int>(f));
  }

  const std::size_t nf = mesh.faces_.size();
  mesh.normals_.assign(nf, Vec3::Zero());
  mesh.areas_.assign(nf, 0.0);
  mesh.centroids_.assign(nf, Vec3::Zero());
  std::vector<char> degenerate(nf, 0);
  for (std::size_t f = 0; f < nf; ++f) {
    const Vec3 a = mesh.corner(f, 0), b = mesh.corner(f, 1), c = mesh.corner(f, 2);
    const Vec3 cross = (b - a).cross(c - a);
    const double len = cross.norm();
    mesh.areas_[f] = 0.5 * len;
    mesh.centroids_[f] = (a + b + c) / 3.0;
    if (len > 0.0 && std::isfinite(len)) {
      mesh.normals_[f] = cross / len;
    } else {
      degenerate[f] = 1;
    }
  }

  // Zero-area faces take the area-weighted mean normal of their edge neighbours.
  if (std::find(degenerate.begin(), degenerate.end(), 1) != degenerate.end()) {
    const auto edges = edge_faces(mesh.faces_);
    for (std::size_t f = 0; f < nf; ++f) {
      if (!degenerate[f]) continue;
      Vec3 acc = Vec3::Zero();
      for (int k = 0; k < 3; ++k) {
        const int a = mesh.faces_[f][k], b = mesh.faces_[f][(k + 1) % 3];
        if (a == b) continue;
        auto it = edges.find(edge_key(a, b));
        if (it == edges.end()) continue;
        for (int g : it->second)
          if (g != static_cast<int>(f) && !degenerate[g]) acc += mesh.areas_[g] * mesh.normals_[g];
      }
      const double n = acc.norm();
      mesh.normals_[f] = n > 0.0 ? Vec3(acc / n) : kUpAxis;
    }
  }

  mesh.sphere_ = bounding_sphere_of(mesh.vertices_);
  return mesh;
}

std::optional<int> LabeledMesh::find_component(const std::string& name) const {
  for (std::size_t c = 0; c < components_.size(); ++c)
    if (components_[c].name == name) return static_cast<int>(c);
  return std::nullopt;
}

MaterialLabelSet LabeledMesh::face_labels(int face) const {
  const auto& comp = components_[face_component_[face]];
  return comp.labels.value_or(MaterialLabelSet{});
}

double LabeledMesh::total_area() const { return std::accumulate(areas_.begin(), areas_.end(), 0.0); }

double LabeledMesh::component_area(int component) const {
  double a = 0.0;
  for (int f : components_[component].faces) a += areas_[f];
  return a;
}

Vec3 LabeledMesh::point_at(int face, const Vec3& bary) const {
  return bary[0] * corner(face, 0) + bary[1] * corner(face, 1) + bary[2] * corner(face, 2);
}

LabeledMesh LabeledMesh::with_labels(const std::map<std::string, MaterialLabelSet>& labels) const {
  LabeledMesh out = *this;
  for (auto& comp : out.components_) {
    auto it = labels.find(comp.name);
    comp.labels = it == labels.end() ? std::nullopt : std::optional<MaterialLabelSet>(it->second);
  }
  return out;
}

double dihedral_term(const Vec3& n1, const Vec3& n2) {
  const double c = std::clamp(n1.dot(n2), -1.0, 1.0);
  return std::acos(c) / M_PI;
}

// ---------------------------------------------------------------------------
// OBJ

LabeledMesh parse_obj(std::istream& in, const std::string& source_name) {
  std::vector<Vec3> vertices;
  std::vector<Tri> faces;
  std::vector<std::string> names;
  std::vector<int> face_component;
  std::unordered_map<std::string, int> name_index;
  int current = -1;

  auto component_id = [&](const std::string& name) {
    auto it = name_index.find(name);
    if (it != name_index.end()) return it->second;
    const int id = static_cast<int>(names.size());
    names.push_back(name);
    name_index.emplace(name, id);
    return id;
  };
  auto fail = [&](int line, const std::string& what) {
    throw Error(ErrorKind::MalformedInput, source_name + ":" + std::to_string(line) + ": " + what);
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;

    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail(line_no, "vertex needs three coordinates");
      vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        int idx = 0;
        try {
          std::size_t used = 0;
          idx = std::stoi(head, &used);
          if (used != head.size()) fail(line_no, "bad face index '" + tok + "'");
        } catch (const std::logic_error&) {
          fail(line_no, "bad face index '" + tok + "'");
        }
        if (idx == 0) fail(line_no, "face index 0 (indices are 1-based)");
        const int resolved = idx > 0 ? idx - 1 : static_cast<int>(vertices.size()) + idx;
        if (resolved < 0 || resolved >= static_cast<int>(vertices.size()))
          fail(line_no, "face index " + std::to_string(idx) + " out of range");
        poly.push_back(resolved);
      }
      if (poly.size() < 3) fail(line_no, "face needs at least three vertices");
      if (current < 0) current = component_id("default");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        faces.emplace_back(poly[0], poly[k], poly[k + 1]);
        face_component.push_back(current);
      }
    } else if (tag == "g") {
      std::string name;
      ls >> name;
      current = component_id(name.empty() ? "default" : name);
    }
    // vn, vt, o, s, usemtl, mtllib: ignored.
  }
  if (faces.empty()) throw Error(ErrorKind::EmptyMesh, source_name + ": no faces");
  return LabeledMesh::build(std::move(vertices), std::move(faces), names, face_component);
}

LabeledMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return parse_obj(in, path.string());
}

void write_obj(std::ostream& out, const LabeledMesh& mesh) {
  char buf[128];
  for (const auto& v : mesh.vertices()) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& comp : mesh.components()) {
    out << "g " << comp.name << '\n';
    for (int f : comp.faces) {
      const Tri& t = mesh.faces()[f];
      out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
  }
}

void save_obj(const std::filesystem::path& path, const LabeledMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  write_obj(out, mesh);
}

// ---------------------------------------------------------------------------
// Adjacency

FaceAdjacency compute_adjacency(const LabeledMesh& mesh) {
  FaceAdjacency adj;
  const auto& normals = mesh.face_normals();
  const auto edges = edge_faces(mesh.faces());

  // Deterministic order regardless of hash layout.
  std::vector<std::pair<int, int>> face_pairs;
  for (const auto& [key, list] : edges) {
    for (std::size_t i = 0; i < list.size(); ++i)
      for (std::size_t j = i + 1; j < list.size(); ++j)
        face_pairs.emplace_back(std::min(list[i], list[j]), std::max(list[i], list[j]));
  }
  std::sort(face_pairs.begin(), face_pairs.end());
  face_pairs.erase(std::unique(face_pairs.begin(), face_pairs.end()), face_pairs.end());

  adj.pairs.reserve(face_pairs.size());
  for (auto [a, b] : face_pairs) adj.pairs.push_back({a, b, dihedral_term(normals[a], normals[b])});

  // Union-find over edge-sharing faces.
  std::vector<int> parent(mesh.num_faces());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& p : adj.pairs) {
    const int ra = find(p.a), rb = find(p.b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  adj.connected_component.assign(mesh.num_faces(), -1);
  std::vector<int> root_id(mesh.num_faces(), -1);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int r = find(f);
    if (root_id[r] < 0) root_id[r] = adj.num_connected_components++;
    adj.connected_component[f] = root_id[r];
  }
  return adj;
}

// ---------------------------------------------------------------------------
// Labels

LabelDocument parse_label_document(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedInput, std::string("label document: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::MalformedInput, "label document must be an object");
  LabelDocument out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_array())
      throw Error(ErrorKind::MalformedInput, "labels for '" + it.key() + "' must be an array");
    std::vector<std::string> names;
    for (const auto& v : it.value()) {
      if (!v.is_string()) throw Error(ErrorKind::MalformedInput, "material names must be strings");
      names.push_back(v.get<std::string>());
    }
    auto set = MaterialLabelSet::from_names(names);
    if (set.empty()) throw Error(ErrorKind::MalformedInput, "empty label set for '" + it.key() + "'");
    out.emplace(it.key(), set);
  }
  return out;
}

LabelDocument load_label_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_label_document(ss.str());
}

std::string label_document_json(const LabeledMesh& mesh) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& comp : mesh.components())
    if (comp.labels) doc[comp.name] = comp.labels->names();
  return doc.dump(2);
}

LabeledMesh attach_labels(const LabeledMesh& mesh, const LabelDocument& labels) {
  for (const auto& [name, set] : labels)
    if (!mesh.find_component(name)) throw Error(ErrorKind::UnknownComponent, "no component named '" + name + "'");
  return mesh.with_labels(labels);
}

}  // namespace shapemat
