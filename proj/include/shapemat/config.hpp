#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "shapemat/crf.hpp"
#include "shapemat/descriptor_net.hpp"
#include "shapemat/geodesics.hpp"
#include "shapemat/sampling.hpp"
#include "shapemat/symmetry.hpp"

namespace shapemat {

/// Pipeline settings as "section.key" -> value text. Every key has a
/// default taken from the owning module; unknown keys are rejected.
///
/// File format:
///   # comment
///   [geodesic]
///   rho = 0.1
class PipelineConfig {
 public:
  enum class Type { Int, UInt, Double, OptionalDouble, String, IntList, Bool };

  struct Entry {
    std::string key;
    Type type;
    std::string default_value;
  };

  PipelineConfig();

  static const std::vector<Entry>& schema();
  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);

  /// Validates the key and the value's type.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::optional<double> get_optional_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// FNV-1a over the canonical "key=value\n" listing.
  std::uint64_t hash() const;

  SamplingOptions sampling() const;
  VisibilityOptions visibility() const;
  GeodesicOptions geodesic() const;
  SymmetryOptions symmetry() const;
  DescriptorTrainOptions descriptor() const;
  CrfTrainOptions crf_training() const;
  MeanFieldOptions mean_field() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace shapemat
