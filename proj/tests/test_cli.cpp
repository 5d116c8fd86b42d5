#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fixtures.hpp"
#include "shapemat/cli.hpp"
#include "shapemat/config.hpp"
#include "shapemat/synth.hpp"

using namespace shapemat;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

int run(std::vector<std::string> args) { return run_cli(args); }

}  // namespace

TEST_CASE("config parsing, defaults and validation") {
  const PipelineConfig def;
  CHECK(def.geodesic().rho == GeodesicOptions{}.rho);
  CHECK(def.geodesic().cap == GeodesicOptions{}.cap);
  CHECK(def.symmetry().rmsd_threshold == SymmetryOptions{}.rmsd_threshold);
  CHECK(def.descriptor().margin == kDefaultMargin);
  CHECK(def.descriptor().learning_rate == DescriptorTrainOptions{}.learning_rate);
  CHECK(!def.descriptor().lambda_class.has_value());
  CHECK(def.crf_training().learning_rate == CrfTrainOptions{}.learning_rate);
  CHECK(def.mean_field().damping == MeanFieldOptions{}.damping);
  CHECK(def.get_int_list("eval.k") == std::vector<int>{1, 30, 100});
  CHECK(def.get_int("sampling.subsample") == 75);

  const auto cfg = PipelineConfig::parse("# comment\n[geodesic]\nrho = 0.25\n\n[descriptor]\nlambda_class=0.5\n"
                                         "variant = classification\n[eval]\nk = 2, 5\n");
  CHECK(cfg.geodesic().rho == 0.25);
  CHECK(cfg.descriptor().lambda_class == 0.5);
  CHECK(cfg.descriptor().variant == TrainVariant::Classification);
  CHECK(cfg.get_int_list("eval.k") == std::vector<int>{2, 5});
  CHECK(cfg.hash() != def.hash());
  CHECK(PipelineConfig().hash() == def.hash());

  for (const char* bad : {"[geodesic]\nradius = 1\n", "[geodesic]\nrho = fast\n", "rho = 0.1\n", "[geodesic\nrho=1\n",
                          "[geodesic]\nrho\n", "[eval]\nbalance = yes\n", "[eval]\nk = 1,,2\n"})
    CHECK_MESSAGE(fixtures::error_kind([&] { PipelineConfig::parse(bad); }) == ErrorKind::MalformedInput, bad);
  CHECK(fixtures::error_kind([] { PipelineConfig::load("/nonexistent/shapemat.cfg"); }) == ErrorKind::Io);
}

TEST_CASE("exit codes") {
  CHECK(run({}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"geodesic", "--mesh", "x.obj", "--no-such-flag"}) == 2);
  CHECK(run({"geodesic"}) == 2);
  CHECK(run({"--help"}) == 0);
  const auto dir = fixtures::temp_dir("cli_codes");
  CHECK(run({"geodesic", "--mesh", (dir / "missing.obj").string(), "--out", dir.string()}) == 1);
  spit(dir / "bad.obj", "v 0 0 0\nf 1 2 3\n");
  CHECK(run({"geodesic", "--mesh", (dir / "bad.obj").string(), "--out", dir.string()}) == 1);
  spit(dir / "bad.cfg", "[geodesic]\nnope = 1\n");
  CHECK(run({"synth", "--config", (dir / "bad.cfg").string(), "--out", dir.string()}) == 1);
  CHECK(run({"synth", "--seed", "x", "--out", dir.string()}) == 1);
}

TEST_CASE("synth, sample, geodesic, symmetry, infer and eval chain together") {
  const auto dir = fixtures::temp_dir("cli_chain");
  const auto t = dir / "t";
  SynthSpec spec;
  spec.materials = default_materials(Category::Table);
  spec.resolution = 2;
  spit(dir / "table4.json", synth_spec_json(spec));
  REQUIRE(run({"synth", "--spec", (dir / "table4.json").string(), "--out", t.string()}) == 0);
  CHECK(fs::exists(t / "mesh.obj"));
  CHECK(fs::exists(t / "labels.json"));

  REQUIRE(run({"sample", "--mesh", (t / "mesh.obj").string(), "-n", "150", "-k", "75", "--out", t.string()}) == 0);
  CHECK(lines(t / "samples.jsonl").size() == 75);
  REQUIRE(run({"geodesic", "--mesh", (t / "mesh.obj").string(), "--out", t.string()}) == 0);
  REQUIRE(run({"symmetry", "--mesh", (t / "mesh.obj").string(), "--out", t.string()}) == 0);
  const auto sym = nlohmann::json::parse(slurp(t / "symmetry.json"));
  CHECK(sym.dump().size() > 2);

  // Corrupted unaries and an all-zero weight file: the CRF passes unaries through.
  std::ifstream sin(t / "samples.jsonl");
  const auto samples = read_samples_jsonl(sin);
  std::vector<MaterialLabelSet> truths;
  for (const auto& s : samples) truths.push_back(s.labels);
  const Eigen::MatrixXd unaries = corrupt_unaries(truths, 0.4, {}, 5);
  {
    std::ofstream u(t / "unaries.jsonl");
    write_unaries_jsonl(u, unaries);
  }
  spit(dir / "zero.json", weights_json(CrfWeights::constant(0.0)));
  REQUIRE(run({"infer", "--mesh", (t / "mesh.obj").string(), "--samples", (t / "samples.jsonl").string(), "--unaries",
               (t / "unaries.jsonl").string(), "--weights", (dir / "zero.json").string(), "--geodesic",
               (t / "geodesic.jsonl").string(), "--symmetry", (t / "symmetry.json").string(), "--out",
               t.string()}) == 0);
  const auto mesh = load_obj(t / "mesh.obj");
  const auto faces = lines(t / "faces.jsonl");
  REQUIRE(faces.size() == static_cast<std::size_t>(mesh.num_faces()));
  for (int f = 0; f < mesh.num_faces(); ++f) {
    int nearest = 0;
    for (int s = 1; s < static_cast<int>(samples.size()); ++s)
      if ((samples[s].position - mesh.face_centroids()[f]).squaredNorm() <
          (samples[nearest].position - mesh.face_centroids()[f]).squaredNorm())
        nearest = s;
    Eigen::Index best;
    unaries.row(nearest).maxCoeff(&best);
    const auto j = nlohmann::json::parse(faces[f]);
    CHECK(j.at("face").get<int>() == f);
    CHECK(j.at("top1").get<std::string>() == material_name(kAllMaterials[best]));
  }

  REQUIRE(run({"eval", "--pred", (t / "faces.jsonl").string(), "--truth", (t / "samples.jsonl").string(), "--out",
               (dir / "eval").string()}) == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval" / "report.json"));
  CHECK(report.at("top1_accuracy").contains("mean"));
  CHECK(report.at("top1_accuracy").contains("per_class"));
  CHECK(fs::exists(dir / "eval" / "confusion.csv"));
  CHECK(run({"eval", "--pred", (t / "faces.jsonl").string(), "--out", dir.string()}) == 2);
  CHECK(run({"eval", "--pred", (t / "faces.jsonl").string(), "--truth", (t / "samples.jsonl").string(), "--truth",
             (t / "samples.jsonl").string(), "--out", dir.string()}) == 1);
}

TEST_CASE("descriptor and CRF training stages write checkpoints") {
  const auto dir = fixtures::temp_dir("cli_train");
  const auto t = dir / "t";
  REQUIRE(run({"synth", "--category", "chair", "--out", t.string()}) == 0);
  REQUIRE(run({"sample", "--mesh", (t / "mesh.obj").string(), "-n", "60", "-k", "40", "--out", t.string()}) == 0);
  REQUIRE(run({"train-desc", "--shape", t.string(), "--epochs", "2", "--out", dir.string()}) == 0);
  CHECK(lines(dir / "desc_loss.csv").size() == 3);
  REQUIRE(run({"predict", "--net", (dir / "net.json").string(), "--mesh", (t / "mesh.obj").string(), "--samples",
               (t / "samples.jsonl").string(), "--out", t.string()}) == 0);
  CHECK(lines(t / "predictions.jsonl").size() == 40);
  REQUIRE(run({"train-crf", "--shape", t.string(), "--iterations", "2", "--out", dir.string()}) == 0);
  const auto w = parse_weights_json(slurp(dir / "crf_weights.json"));
  CHECK((w.flatten().array() >= 0).all());
  CHECK(lines(dir / "crf_trace.csv").size() == 3);
  REQUIRE(run({"eval", "--pred", (t / "predictions.jsonl").string(), "--truth", (t / "samples.jsonl").string(),
               "--k", "1,5", "--out", (dir / "eval").string()}) == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval" / "report.json"));
  CHECK(report.at("precision_at_k").size() == 2);
}
