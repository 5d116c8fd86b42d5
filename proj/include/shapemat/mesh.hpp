#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shapemat/material.hpp"

namespace shapemat {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Tri = Eigen::Vector3i;

/// Upright axis is fixed to +Y; there is no orientation detection.
inline const Vec3 kUpAxis = Vec3::UnitY();

struct Component {
  std::string name;
  std::vector<int> faces;
  std::optional<MaterialLabelSet> labels;
};

struct BoundingSphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

/// Indexed triangle mesh split into named components. Immutable once built;
/// derived quantities (normals, areas, centroids, bounding sphere) are
/// computed by build().
class LabeledMesh {
 public:
  LabeledMesh() = default;

  /// `face_component[f]` indexes into `component_names`. Components that end
  /// up with no faces are dropped.
  static LabeledMesh build(std::vector<Vec3> vertices, std::vector<Tri> faces,
                           const std::vector<std::string>& component_names,
                           const std::vector<int>& face_component);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Tri>& faces() const { return faces_; }
  const std::vector<Component>& components() const { return components_; }
  const std::vector<Vec3>& face_normals() const { return normals_; }
  const std::vector<double>& face_areas() const { return areas_; }
  const std::vector<Vec3>& face_centroids() const { return centroids_; }
  const BoundingSphere& bounding_sphere() const { return sphere_; }

  int num_faces() const { return static_cast<int>(faces_.size()); }
  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int component_of(int face) const { return face_component_[face]; }
  std::optional<int> find_component(const std::string& name) const;

  /// Label set of the component owning `face`; empty if the component is unlabeled.
  MaterialLabelSet face_labels(int face) const;
  double total_area() const;
  double component_area(int component) const;

  Vec3 corner(int face, int k) const { return vertices_[faces_[face][k]]; }
  Vec3 point_at(int face, const Vec3& barycentric) const;

  LabeledMesh with_labels(const std::map<std::string, MaterialLabelSet>& labels) const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Tri> faces_;
  std::vector<Component> components_;
  std::vector<int> face_component_;
  std::vector<Vec3> normals_;
  std::vector<double> areas_;
  std::vector<Vec3> centroids_;
  BoundingSphere sphere_;
};

struct AdjacentPair {
  int a = 0;
  int b = 0;
  /// Angle between face normals divided by pi, in [0, 1].
  double omega = 0.0;
};

struct FaceAdjacency {
  std::vector<AdjacentPair> pairs;
  /// Edge-connected component id per face.
  std::vector<int> connected_component;
  int num_connected_components = 0;
};

double dihedral_term(const Vec3& n1, const Vec3& n2);

LabeledMesh parse_obj(std::istream& in, const std::string& source_name = "<stream>");
LabeledMesh load_obj(const std::filesystem::path& path);
void write_obj(std::ostream& out, const LabeledMesh& mesh);
void save_obj(const std::filesystem::path& path, const LabeledMesh& mesh);

FaceAdjacency compute_adjacency(const LabeledMesh& mesh);

using LabelDocument = std::map<std::string, MaterialLabelSet>;

LabelDocument parse_label_document(const std::string& json_text);
LabelDocument load_label_document(const std::filesystem::path& path);
std::string label_document_json(const LabeledMesh& mesh);

/// Components named in the document carry labels; others carry none.
LabeledMesh attach_labels(const LabeledMesh& mesh, const LabelDocument& labels);

}  // namespace shapemat
