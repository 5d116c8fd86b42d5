#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "shapemat/mesh.hpp"

namespace shapemat {

struct SurfaceSample {
  Vec3 position = Vec3::Zero();
  int face = -1;
  Vec3 barycentric = Vec3(1.0 / 3, 1.0 / 3, 1.0 / 3);
  Vec3 normal = kUpAxis;
  MaterialLabelSet labels;
  bool visible = true;
  Eigen::VectorXd features;
};

struct SamplingOptions {
  int relax_iterations = 20;
  /// Fraction of most-crowded samples reconsidered per relaxation pass.
  double relax_fraction = 0.1;
  int relax_candidates = 8;
};

struct VisibilityOptions {
  int rays = 64;
  /// Ray origin offset along the sample normal, in bounding radii.
  double offset = 1e-4;
};

/// Plain area-weighted draw; no relaxation.
std::vector<SurfaceSample> sample_area_weighted(const LabeledMesh& mesh, int n, std::uint64_t seed);

/// Sample-elimination style evening: each pass moves the most crowded
/// samples to the best of a few fresh area-weighted candidates.
void relax_samples(const LabeledMesh& mesh, std::vector<SurfaceSample>& samples, const SamplingOptions& options,
                   std::uint64_t seed);

std::vector<SurfaceSample> sample_surface_points(const LabeledMesh& mesh, int n, std::uint64_t seed,
                                                 const SamplingOptions& options = {});

/// Evenly spread unit directions (Fibonacci lattice).
std::vector<Vec3> sphere_directions(int count);

/// Sets `visible` on every sample.
std::vector<SurfaceSample> mark_visibility(const LabeledMesh& mesh, std::vector<SurfaceSample> samples,
                                           const VisibilityOptions& options = {});
/// Marks visibility and drops externally invisible samples.
std::vector<SurfaceSample> visibility_filter(const LabeledMesh& mesh, std::vector<SurfaceSample> samples,
                                             const VisibilityOptions& options = {});

struct SubsampleResult {
  std::vector<SurfaceSample> samples;
  /// Set when fewer than the requested count were available.
  bool warning = false;
};

/// Greedy farthest-point subsampling from a seeded random start.
SubsampleResult subsample_even(const std::vector<SurfaceSample>& samples, int k, std::uint64_t seed);

/// Samples with an empty label set removed.
std::vector<SurfaceSample> labeled_only(const std::vector<SurfaceSample>& samples);

void write_samples_jsonl(std::ostream& out, const std::vector<SurfaceSample>& samples);
std::vector<SurfaceSample> read_samples_jsonl(std::istream& in);

}  // namespace shapemat
