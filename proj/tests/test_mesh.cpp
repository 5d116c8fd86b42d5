#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "oracles/geometry_ref.hpp"
#include "shapemat/bvh.hpp"
#include "shapemat/kdtree.hpp"
#include "shapemat/mesh.hpp"
#include "shapemat/synth.hpp"

using namespace shapemat;
using fixtures::error_kind;

TEST_CASE("cube obj with two groups") {
  const auto mesh = fixtures::cube();
  CHECK(mesh.num_faces() == 12);
  REQUIRE(mesh.components().size() == 2);
  CHECK(mesh.components()[0].name == "top");
  CHECK(mesh.components()[0].faces.size() == 2);
  CHECK(mesh.components()[1].faces.size() == 10);
  CHECK(mesh.total_area() == doctest::Approx(6.0));
  for (const auto& n : mesh.face_normals()) CHECK(std::abs(n.norm() - 1.0) < 1e-9);
  // Outward orientation of the top face.
  const int f = mesh.components()[0].faces[0];
  CHECK(mesh.face_normals()[f].y() == doctest::Approx(1.0));
  const auto& s = mesh.bounding_sphere();
  for (const auto& v : mesh.vertices()) CHECK((v - s.center).norm() <= s.radius * (1 + 1e-6));
}

TEST_CASE("quad face is fan triangulated and keeps its area") {
  const auto mesh = fixtures::parse("v 0 0 0\nv 2 0 0\nv 2 3 0\nv 0 3 0\nf 1 2 3 4\n");
  CHECK(mesh.num_faces() == 2);
  REQUIRE(mesh.components().size() == 1);
  CHECK(mesh.components()[0].name == "default");
  CHECK(std::abs(mesh.total_area() - 6.0) <= 1e-9 * 6.0);
}

TEST_CASE("obj errors") {
  CHECK(error_kind([] { fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n"); }) == ErrorKind::MalformedInput);
  CHECK(error_kind([] { fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\n"); }) == ErrorKind::EmptyMesh);
  CHECK(error_kind([] { fixtures::parse("v 0 0\n"); }) == ErrorKind::MalformedInput);
  CHECK(error_kind([] { fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"); }) == ErrorKind::MalformedInput);
  try {
    fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 x\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":5:") != std::string::npos);
  }
}

TEST_CASE("obj negative indices, slashes and ignored directives") {
  const auto mesh = fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf -3/1/1 -2/1/1 -1/1/1\n");
  CHECK(mesh.num_faces() == 1);
}

TEST_CASE("obj round trip") {
  const auto mesh = fixtures::cube();
  std::stringstream ss;
  write_obj(ss, mesh);
  const auto back = parse_obj(ss);
  CHECK(back.num_faces() == mesh.num_faces());
  CHECK(back.components().size() == mesh.components().size());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    CHECK(back.component_of(f) == mesh.component_of(f));
    CHECK((back.face_centroids()[f] - mesh.face_centroids()[f]).norm() < 1e-12);
  }
}

TEST_CASE("dihedral term") {
  CHECK(dihedral_term(Vec3::UnitZ(), Vec3::UnitZ()) == 0.0);
  CHECK(dihedral_term(Vec3::UnitZ(), Vec3::UnitX()) == doctest::Approx(0.5));
  CHECK(dihedral_term(Vec3::UnitZ(), -Vec3::UnitZ()) == doctest::Approx(1.0));
}

TEST_CASE("adjacency of coplanar and perpendicular triangle pairs") {
  const auto flat = fixtures::parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n");
  auto adj = compute_adjacency(flat);
  REQUIRE(adj.pairs.size() == 1);
  CHECK(adj.pairs[0].omega == 0.0);

  const auto bent = fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 4 2\n");
  adj = compute_adjacency(bent);
  REQUIRE(adj.pairs.size() == 1);
  CHECK(adj.pairs[0].omega == doctest::Approx(0.5));
}

TEST_CASE("cube adjacency matches a brute-force shared-edge scan") {
  const auto mesh = fixtures::cube();
  const auto adj = compute_adjacency(mesh);
  CHECK(adj.pairs.size() == 18);
  CHECK(adj.num_connected_components == 1);
  std::set<std::pair<int, int>> got;
  for (const auto& p : adj.pairs) {
    CHECK(p.a != p.b);
    got.insert({std::min(p.a, p.b), std::max(p.a, p.b)});
    CHECK(p.omega == dihedral_term(mesh.face_normals()[p.a], mesh.face_normals()[p.b]));
    CHECK(p.omega >= 0.0);
    CHECK(p.omega <= 1.0);
  }
  const auto ref = oracle::shared_edge_pairs(mesh);
  CHECK(got == std::set<std::pair<int, int>>(ref.begin(), ref.end()));
}

TEST_CASE("non-manifold edge connects every incident face pair") {
  const auto mesh = fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 2 5\n");
  const auto adj = compute_adjacency(mesh);
  CHECK(adj.pairs.size() == 3);
}

TEST_CASE("zero-area face takes the neighbour normal") {
  const auto mesh = fixtures::parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 2 0 0\nf 1 2 3\nf 1 4 2\n");
  CHECK(mesh.face_areas()[1] == 0.0);
  CHECK(std::abs(mesh.face_normals()[1].norm() - 1.0) < 1e-9);
  CHECK((mesh.face_normals()[1] - mesh.face_normals()[0]).norm() < 1e-9);
}

TEST_CASE("separate pieces are separate connected components") {
  const auto mesh = fixtures::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 0 0\nv 6 0 0\nv 5 1 0\nf 1 2 3\nf 4 5 6\n");
  const auto adj = compute_adjacency(mesh);
  CHECK(adj.pairs.empty());
  CHECK(adj.num_connected_components == 2);
  CHECK(adj.connected_component[0] != adj.connected_component[1]);
}

TEST_CASE("attach labels") {
  const auto mesh = fixtures::cube();
  auto labeled = attach_labels(mesh, parse_label_document(R"({"top": ["glass"], "rest": ["wood"]})"));
  CHECK(labeled.components()[0].labels == MaterialLabelSet{Material::Glass});
  CHECK(labeled.components()[1].labels == MaterialLabelSet{Material::Wood});

  labeled = attach_labels(mesh, parse_label_document(R"({"rest": ["metal", "plastic"]})"));
  CHECK(labeled.components()[1].labels == MaterialLabelSet{Material::Metal, Material::Plastic});
  CHECK(!labeled.components()[0].labels.has_value());
  CHECK(labeled.face_labels(labeled.components()[0].faces[0]).empty());

  CHECK(error_kind([&] { attach_labels(mesh, parse_label_document(R"({"ghost": ["wood"]})")); }) ==
        ErrorKind::UnknownComponent);
  CHECK(error_kind([] { parse_label_document(R"({"top": ["unobtainium"]})"); }) == ErrorKind::MalformedInput);
  CHECK(error_kind([] { parse_label_document("[1, 2]"); }) == ErrorKind::MalformedInput);
}

TEST_CASE("label document round trip") {
  const auto mesh = attach_labels(fixtures::cube(), parse_label_document(R"({"top": ["glass", "wood"]})"));
  const auto doc = parse_label_document(label_document_json(mesh));
  REQUIRE(doc.count("top") == 1);
  CHECK(doc.at("top") == MaterialLabelSet{Material::Glass, Material::Wood});
  CHECK(doc.count("rest") == 0);
}

TEST_CASE("component face counts add up") {
  const auto mesh = generate(SynthSpec{});
  std::size_t total = 0;
  for (const auto& c : mesh.components()) total += c.faces.size();
  CHECK(total == static_cast<std::size_t>(mesh.num_faces()));
}

TEST_CASE("kd-tree agrees with linear scans") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  pts.push_back(pts[10]);  // duplicate: ties go to the lower index
  const KdTree3 tree(pts);
  for (int t = 0; t < 200; ++t) {
    const Vec3 q(u(rng), u(rng), u(rng));
    CHECK(tree.nearest(q) == oracle::nearest(pts, q));
    CHECK(tree.k_nearest(q, 7) == oracle::k_nearest(pts, q, 7));
    std::vector<int> within;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i)
      if ((pts[i] - q).norm() <= 0.3) within.push_back(i);
    CHECK(tree.within(q, 0.3) == within);
  }
  CHECK(tree.nearest(pts[10]) == 10);
  CHECK(KdTree3().nearest(Vec3::Zero()) == -1);
}

TEST_CASE("bvh ray and closest-point queries agree with exhaustive scans") {
  const auto mesh = generate(SynthSpec{});
  const TriangleBvh bvh(mesh);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const double R = mesh.bounding_sphere().radius;
  for (int t = 0; t < 100; ++t) {
    const Vec3 o = mesh.bounding_sphere().center + 1.5 * R * Vec3(n(rng), n(rng), n(rng)).normalized();
    const Vec3 d = (mesh.bounding_sphere().center + 0.5 * R * Vec3(n(rng), n(rng), n(rng)) - o).normalized();
    const auto hit = bvh.intersect(o, d);
    const auto ref = oracle::first_hit(mesh, o, d);
    REQUIRE(hit.has_value() == ref.has_value());
    if (hit) CHECK(hit->t == doctest::Approx(*ref).epsilon(1e-12));
    CHECK(bvh.occluded(o, d) == ref.has_value());

    const Vec3 p = mesh.bounding_sphere().center + R * Vec3(n(rng), n(rng), n(rng));
    CHECK(bvh.closest_point(p).dist2 == doctest::Approx(oracle::closest_dist2(mesh, p)).epsilon(1e-12));
  }
}

TEST_CASE("closest point on triangle beats a dense barycentric grid") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const Vec3 a(n(rng), n(rng), n(rng)), b(n(rng), n(rng), n(rng)), c(n(rng), n(rng), n(rng));
    const Vec3 p(n(rng), n(rng), n(rng));
    const double got = (closest_point_on_triangle(p, a, b, c) - p).norm();
    double grid = INFINITY;
    const int N = 200;
    for (int i = 0; i <= N; ++i)
      for (int j = 0; i + j <= N; ++j) {
        const double u = double(i) / N, v = double(j) / N;
        grid = std::min(grid, ((1 - u - v) * a + u * b + v * c - p).norm());
      }
    CHECK(got <= grid + 1e-12);
    CHECK(got >= grid - 0.02 * ((b - a).norm() + (c - a).norm()));
  }
}

TEST_CASE("ray triangle") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  auto t = ray_triangle(Vec3(0.2, 0.2, 1), Vec3(0, 0, -1), a, b, c);
  REQUIRE(t.has_value());
  CHECK(*t == doctest::Approx(1.0));
  CHECK(!ray_triangle(Vec3(0.8, 0.8, 1), Vec3(0, 0, -1), a, b, c));
  CHECK(!ray_triangle(Vec3(0.2, 0.2, 1), Vec3(1, 0, 0), a, b, c));
}
