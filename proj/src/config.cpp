#include "shapemat/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "shapemat/error.hpp"

namespace shapemat {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(int v) { return std::to_string(v); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, out);
  return r.ec == std::errc() && r.ptr == end && !text.empty();
}

bool valid(PipelineConfig::Type type, const std::string& v) {
  using T = PipelineConfig::Type;
  switch (type) {
    case T::Int: {
      int x;
      return parse_number(v, x);
    }
    case T::UInt: {
      std::uint64_t x;
      return parse_number(v, x);
    }
    case T::Double: {
      double x;
      return parse_number(v, x);
    }
    case T::OptionalDouble: {
      double x;
      return v.empty() || parse_number(v, x);
    }
    case T::String: return true;
    case T::Bool: return v == "true" || v == "false";
    case T::IntList: {
      std::stringstream ss(v);
      std::string item;
      int count = 0;
      while (std::getline(ss, item, ',')) {
        int x;
        if (!parse_number(trim(item), x)) return false;
        ++count;
      }
      return count > 0;
    }
  }
  return false;
}

}  // namespace

const std::vector<PipelineConfig::Entry>& PipelineConfig::schema() {
  static const std::vector<Entry> entries = [] {
    using T = Type;
    const SamplingOptions so;
    const VisibilityOptions vo;
    const GeodesicOptions go;
    const SymmetryOptions sy;
    const DescriptorTrainOptions dt;
    const CrfTrainOptions ct;
    const MeanFieldOptions mf;
    return std::vector<Entry>{
        {"general.seed", T::UInt, "1"},
        {"general.threads", T::Int, "0"},
        {"sampling.points", T::Int, "150"},
        {"sampling.subsample", T::Int, "75"},
        {"sampling.relax_iterations", T::Int, fmt(so.relax_iterations)},
        {"sampling.relax_fraction", T::Double, fmt(so.relax_fraction)},
        {"sampling.relax_candidates", T::Int, fmt(so.relax_candidates)},
        {"sampling.visibility_rays", T::Int, fmt(vo.rays)},
        {"sampling.visibility_offset", T::Double, fmt(vo.offset)},
        {"geodesic.rho", T::Double, fmt(go.rho)},
        {"geodesic.cap", T::Int, fmt(go.cap)},
        {"geodesic.diameter_seeds", T::Int, fmt(go.diameter_seeds)},
        {"symmetry.samples_per_component", T::Int, fmt(sy.samples_per_component)},
        {"symmetry.rmsd_threshold", T::Double, fmt(sy.rmsd_threshold)},
        {"symmetry.residual_cutoff", T::Double, fmt(sy.residual_cutoff)},
        {"symmetry.init_rotations", T::Int, fmt(sy.init_rotations)},
        {"symmetry.icp_iterations", T::Int, fmt(sy.icp_iterations)},
        {"symmetry.coarse_icp_tol", T::Double, fmt(sy.coarse_icp_tol)},
        {"symmetry.icp_tol", T::Double, fmt(sy.icp_tol)},
        {"symmetry.cluster_angle_deg", T::Double, fmt(sy.cluster_angle_deg)},
        {"symmetry.cluster_axis_deg", T::Double, fmt(sy.cluster_axis_deg)},
        {"symmetry.cluster_translation", T::Double, fmt(sy.cluster_translation)},
        {"symmetry.min_coverage", T::Double, fmt(sy.min_coverage)},
        {"symmetry.shape_tolerance", T::Double, fmt(sy.shape_tolerance)},
        {"descriptor.variant", T::String, "multitask"},
        {"descriptor.epochs", T::Int, fmt(dt.epochs)},
        {"descriptor.learning_rate", T::Double, fmt(dt.learning_rate)},
        {"descriptor.lambda_class", T::OptionalDouble, ""},
        {"descriptor.lambda_contr", T::OptionalDouble, ""},
        {"descriptor.margin", T::Double, fmt(dt.margin)},
        {"descriptor.dim", T::Int, fmt(dt.shape.descriptor)},
        {"descriptor.batch_pairs", T::Int, fmt(dt.batch_pairs)},
        {"descriptor.negatives_per_positive", T::Int, fmt(dt.negatives_per_positive)},
        {"descriptor.pairs_per_epoch", T::Int, fmt(dt.pairs_per_epoch)},
        {"crf.learning_rate", T::Double, fmt(ct.learning_rate)},
        {"crf.iterations", T::Int, fmt(ct.iterations)},
        {"crf.init_weight", T::Double, "1"},
        {"crf.max_iter", T::Int, fmt(mf.max_iter)},
        {"crf.tol", T::Double, fmt(mf.tol)},
        {"crf.damping", T::Double, fmt(mf.damping)},
        {"crf.threshold", T::Double, "0.5"},
        {"eval.k", T::IntList, "1,30,100"},
        {"eval.balance", T::Bool, "true"},
    };
  }();
  return entries;
}

PipelineConfig::PipelineConfig() {
  for (const auto& e : schema()) values_[e.key] = e.default_value;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  for (const auto& e : schema()) {
    if (e.key != key) continue;
    if (!valid(e.type, value))
      throw Error(ErrorKind::MalformedInput, "invalid value '" + value + "' for config key '" + key + "'");
    values_[key] = value;
    return;
  }
  throw Error(ErrorKind::MalformedInput, "unknown config key '" + key + "'");
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig cfg;
  std::stringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw Error(ErrorKind::MalformedInput, "config line " + std::to_string(line_no) + ": bad section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::MalformedInput, "config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw Error(ErrorKind::MalformedInput, "config line " + std::to_string(line_no) + ": key outside a section");
    cfg.set(section + "." + trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& PipelineConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::MalformedInput, "unknown config key '" + key + "'");
  return it->second;
}

int PipelineConfig::get_int(const std::string& key) const {
  int v = 0;
  parse_number(get(key), v);
  return v;
}

std::uint64_t PipelineConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  parse_number(get(key), v);
  return v;
}

double PipelineConfig::get_double(const std::string& key) const {
  double v = 0;
  parse_number(get(key), v);
  return v;
}

std::optional<double> PipelineConfig::get_optional_double(const std::string& key) const {
  const auto& s = get(key);
  if (s.empty()) return std::nullopt;
  double v = 0;
  parse_number(s, v);
  return v;
}

bool PipelineConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<int> PipelineConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    parse_number(trim(item), v);
    out.push_back(v);
  }
  return out;
}

std::uint64_t PipelineConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : values_)
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  return h;
}

SamplingOptions PipelineConfig::sampling() const {
  SamplingOptions o;
  o.relax_iterations = get_int("sampling.relax_iterations");
  o.relax_fraction = get_double("sampling.relax_fraction");
  o.relax_candidates = get_int("sampling.relax_candidates");
  return o;
}

VisibilityOptions PipelineConfig::visibility() const {
  VisibilityOptions o;
  o.rays = get_int("sampling.visibility_rays");
  o.offset = get_double("sampling.visibility_offset");
  return o;
}

GeodesicOptions PipelineConfig::geodesic() const {
  GeodesicOptions o;
  o.rho = get_double("geodesic.rho");
  o.cap = get_int("geodesic.cap");
  o.diameter_seeds = get_int("geodesic.diameter_seeds");
  return o;
}

SymmetryOptions PipelineConfig::symmetry() const {
  SymmetryOptions o;
  o.samples_per_component = get_int("symmetry.samples_per_component");
  o.rmsd_threshold = get_double("symmetry.rmsd_threshold");
  o.residual_cutoff = get_double("symmetry.residual_cutoff");
  o.init_rotations = get_int("symmetry.init_rotations");
  o.icp_iterations = get_int("symmetry.icp_iterations");
  o.coarse_icp_tol = get_double("symmetry.coarse_icp_tol");
  o.icp_tol = get_double("symmetry.icp_tol");
  o.cluster_angle_deg = get_double("symmetry.cluster_angle_deg");
  o.cluster_axis_deg = get_double("symmetry.cluster_axis_deg");
  o.cluster_translation = get_double("symmetry.cluster_translation");
  o.min_coverage = get_double("symmetry.min_coverage");
  o.shape_tolerance = get_double("symmetry.shape_tolerance");
  return o;
}

DescriptorTrainOptions PipelineConfig::descriptor() const {
  DescriptorTrainOptions o;
  o.variant = parse_variant(get("descriptor.variant"));
  o.epochs = get_int("descriptor.epochs");
  o.seed = get_uint("general.seed");
  o.learning_rate = get_double("descriptor.learning_rate");
  o.lambda_class = get_optional_double("descriptor.lambda_class");
  o.lambda_contr = get_optional_double("descriptor.lambda_contr");
  o.margin = get_double("descriptor.margin");
  o.shape.descriptor = get_int("descriptor.dim");
  o.batch_pairs = get_int("descriptor.batch_pairs");
  o.negatives_per_positive = get_int("descriptor.negatives_per_positive");
  o.pairs_per_epoch = get_int("descriptor.pairs_per_epoch");
  return o;
}

MeanFieldOptions PipelineConfig::mean_field() const {
  MeanFieldOptions o;
  o.max_iter = get_int("crf.max_iter");
  o.tol = get_double("crf.tol");
  o.damping = get_double("crf.damping");
  return o;
}

CrfTrainOptions PipelineConfig::crf_training() const {
  CrfTrainOptions o;
  o.learning_rate = get_double("crf.learning_rate");
  o.iterations = get_int("crf.iterations");
  o.inference = mean_field();
  return o;
}

}  // namespace shapemat
