#include "shapemat/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <thread>

#include "shapemat/config.hpp"
#include "shapemat/crf.hpp"
#include "shapemat/descriptor_net.hpp"
#include "shapemat/error.hpp"
#include "shapemat/evaluation.hpp"
#include "shapemat/features.hpp"
#include "shapemat/geodesics.hpp"
#include "shapemat/mesh.hpp"
#include "shapemat/parallel.hpp"
#include "shapemat/sampling.hpp"
#include "shapemat/symmetry.hpp"
#include "shapemat/synth.hpp"

namespace shapemat {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

/// Mesh plus labels from `labels` or, failing that, a labels.json beside it.
LabeledMesh load_mesh(const fs::path& mesh_path, const std::string& labels_path = {}) {
  LabeledMesh mesh = load_obj(mesh_path);
  fs::path labels = labels_path.empty() ? mesh_path.parent_path() / "labels.json" : fs::path(labels_path);
  if (!labels_path.empty() || fs::exists(labels)) mesh = attach_labels(mesh, load_label_document(labels));
  return mesh;
}

std::vector<SurfaceSample> load_samples(const fs::path& path) {
  auto in = open_in(path);
  return read_samples_jsonl(in);
}

Eigen::MatrixXd load_unaries(const fs::path& path, int num_samples) {
  auto in = open_in(path);
  return read_unaries_jsonl(in, num_samples);
}

// unaries.jsonl, else predictions.jsonl.
fs::path shape_unaries(const fs::path& dir) {
  if (fs::exists(dir / "unaries.jsonl")) return dir / "unaries.jsonl";
  return dir / "predictions.jsonl";
}

void load_symmetry(const fs::path& path, std::vector<SymmetryPair>& pairs) {
  std::vector<DetectedSymmetry> syms;
  read_symmetry_json(read_text(path), syms, pairs);
}

std::vector<DistancePair> load_geodesic(const fs::path& path) {
  auto in = open_in(path);
  return read_pairs_jsonl(in);
}

struct Override {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

// Everything a handler needs once arguments are parsed.
struct Context {
  PipelineConfig config;
  fs::path out;
  std::uint64_t seed() const { return config.get_uint("general.seed"); }
};

// --- subcommands ------------------------------------------------------------

struct SynthArgs {
  std::string spec, category = "table";
  bool benchmark = false;
  double jitter = 0.0;
  bool seed_given = false;
};

void cmd_synth(const Context& ctx, const SynthArgs& a) {
  auto emit = [&](const SynthSpec& spec, const fs::path& dir) {
    const LabeledMesh mesh = generate(spec);
    auto obj = open_out(dir / "mesh.obj");
    write_obj(obj, mesh);
    write_text(dir / "labels.json", label_document_json(mesh));
    write_text(dir / "spec.json", synth_spec_json(spec));
  };
  if (a.benchmark) {
    const auto specs = benchmark_specs(ctx.seed());
    for (std::size_t i = 0; i < specs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "shape_%02zu", i);
      emit(specs[i], ctx.out / name);
    }
    return;
  }
  SynthSpec spec;
  if (!a.spec.empty()) {
    spec = parse_synth_spec(read_text(a.spec));
  } else {
    spec.category = parse_category(a.category);
    spec.materials = default_materials(spec.category);
    spec.jitter = a.jitter;
    spec.seed = ctx.seed();
  }
  if (a.seed_given) spec.seed = ctx.seed();
  emit(spec, ctx.out);
}

struct SampleArgs {
  std::string mesh, labels;
};

void cmd_sample(const Context& ctx, const SampleArgs& a) {
  const LabeledMesh mesh = load_mesh(a.mesh, a.labels);
  const auto& cfg = ctx.config;
  auto samples = sample_surface_points(mesh, cfg.get_int("sampling.points"), ctx.seed(), cfg.sampling());
  samples = visibility_filter(mesh, std::move(samples), cfg.visibility());
  auto sub = subsample_even(samples, cfg.get_int("sampling.subsample"), ctx.seed());
  if (sub.warning)
    std::cerr << "warning: only " << sub.samples.size() << " visible samples available\n";
  auto out = open_out(ctx.out / "samples.jsonl");
  write_samples_jsonl(out, sub.samples);
}

void cmd_symmetry(const Context& ctx, const std::string& mesh_path) {
  const LabeledMesh mesh = load_mesh(mesh_path);
  const auto opts = ctx.config.symmetry();
  const auto syms = detect_symmetries(mesh, opts, ctx.seed());
  const auto pairs = symmetry_pairs(mesh, syms, opts.residual_cutoff);
  std::cerr << "detected " << syms.size() << " symmetries, " << pairs.size() << " face pairs\n";
  write_text(ctx.out / "symmetry.json", symmetry_json(syms, pairs));
}

void cmd_geodesic(const Context& ctx, const std::string& mesh_path) {
  const LabeledMesh mesh = load_mesh(mesh_path);
  const auto pairs = geodesic_pairs(mesh, ctx.config.geodesic(), ctx.seed());
  auto out = open_out(ctx.out / "geodesic.jsonl");
  write_pairs_jsonl(out, pairs);
}

void cmd_train_desc(const Context& ctx, const std::vector<std::string>& shapes) {
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<MaterialLabelSet> labels;
  Eigen::Index rows = 0;
  for (const auto& dir : shapes) {
    const LabeledMesh mesh = load_mesh(fs::path(dir) / "mesh.obj");
    const auto samples = labeled_only(load_samples(fs::path(dir) / "samples.jsonl"));
    if (samples.empty()) continue;
    blocks.push_back(extract_features(mesh, samples));
    rows += blocks.back().rows();
    for (const auto& s : samples) labels.push_back(s.labels);
  }
  if (rows == 0) throw Error(ErrorKind::MissingData, "no labeled samples in the training shapes");
  Eigen::MatrixXd features(rows, blocks.front().cols());
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    features.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  const auto result = train_descriptor(features, labels, ctx.config.descriptor());
  write_text(ctx.out / "net.json", result.net.to_json());
  std::ostringstream trace;
  trace << std::setprecision(17) << "epoch,class,contrastive,total\n";
  for (std::size_t e = 0; e < result.trace.size(); ++e)
    trace << e << ',' << result.trace[e].class_term << ',' << result.trace[e].contr_term << ','
          << result.trace[e].total << '\n';
  write_text(ctx.out / "desc_loss.csv", trace.str());
}

struct PredictArgs {
  std::string net, mesh, samples;
};

void cmd_predict(const Context& ctx, const PredictArgs& a) {
  const DescriptorNet net = DescriptorNet::from_json(read_text(a.net));
  const LabeledMesh mesh = load_mesh(a.mesh);
  const auto samples = load_samples(a.samples);
  const Eigen::MatrixXd features = extract_features(mesh, samples);
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd probs(n, net.shape().classes), desc(n, net.shape().descriptor);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = predict_probs(net, features.row(i).transpose());
    probs.row(i) = p.probs.transpose();
    desc.row(i) = p.descriptor.transpose();
  }
  auto out = open_out(ctx.out / "predictions.jsonl");
  write_predictions_jsonl(out, probs, desc);
}

CrfGraph graph_for(const LabeledMesh& mesh, const std::vector<SurfaceSample>& samples, const Eigen::MatrixXd& unaries,
                   const std::vector<DistancePair>& dist, const std::vector<SymmetryPair>& sym, const CrfWeights& w) {
  const FaceAdjacency adj = compute_adjacency(mesh);
  return build_crf(mesh, samples, unaries, adj, dist, sym, w);
}

void cmd_train_crf(const Context& ctx, const std::vector<std::string>& shapes) {
  const CrfWeights init = CrfWeights::constant(ctx.config.get_double("crf.init_weight"));
  std::vector<TrainingShape> dataset;
  for (const auto& d : shapes) {
    const fs::path dir(d);
    const LabeledMesh mesh = load_mesh(dir / "mesh.obj");
    const auto samples = load_samples(dir / "samples.jsonl");
    const auto unaries = load_unaries(shape_unaries(dir), static_cast<int>(samples.size()));
    std::vector<DistancePair> dist;
    if (fs::exists(dir / "geodesic.jsonl")) dist = load_geodesic(dir / "geodesic.jsonl");
    std::vector<SymmetryPair> sym;
    if (fs::exists(dir / "symmetry.json")) load_symmetry(dir / "symmetry.json", sym);
    dataset.push_back({graph_for(mesh, samples, unaries, dist, sym, init), face_label_matrix(mesh)});
  }
  const auto result = train_crf(std::move(dataset), init, ctx.config.crf_training());
  write_text(ctx.out / "crf_weights.json", weights_json(result.weights));
  std::ostringstream trace;
  trace << std::setprecision(17) << "iteration,approx_log_likelihood\n";
  for (std::size_t i = 0; i < result.trace.size(); ++i) trace << i << ',' << result.trace[i] << '\n';
  write_text(ctx.out / "crf_trace.csv", trace.str());
}

struct InferArgs {
  std::string mesh, samples, unaries, weights, geodesic, symmetry;
};

void cmd_infer(const Context& ctx, const InferArgs& a) {
  const LabeledMesh mesh = load_mesh(a.mesh);
  const auto samples = load_samples(a.samples);
  const auto unaries = load_unaries(a.unaries, static_cast<int>(samples.size()));
  const CrfWeights w = parse_weights_json(read_text(a.weights));
  std::vector<DistancePair> dist;
  if (!a.geodesic.empty()) dist = load_geodesic(a.geodesic);
  std::vector<SymmetryPair> sym;
  if (!a.symmetry.empty()) load_symmetry(a.symmetry, sym);
  const CrfGraph graph = graph_for(mesh, samples, unaries, dist, sym, w);
  const Marginals marginals = mean_field_infer(graph, ctx.config.mean_field());
  if (!marginals.converged) std::cerr << "warning: mean-field did not converge\n";
  const auto preds = predict_labels(marginals, ctx.config.get_double("crf.threshold"));
  auto out = open_out(ctx.out / "faces.jsonl");
  write_face_predictions_jsonl(out, preds, marginals);
}

struct EvalArgs {
  std::vector<std::string> pred, truth;
};

void cmd_eval(const Context& ctx, const EvalArgs& a) {
  if (a.pred.size() != a.truth.size())
    throw Error(ErrorKind::Alignment, "--pred and --truth must be given the same number of times");
  std::vector<Material> top1;
  std::vector<MaterialLabelSet> truths, desc_truths;
  std::vector<Eigen::RowVectorXd> descriptors;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    const auto samples = load_samples(a.truth[i]);
    const std::string text = read_text(a.pred[i]);
    const auto first_nl = text.find('\n');
    const auto first = nlohmann::json::parse(text.substr(0, first_nl));
    if (first.contains("face")) {
      std::map<int, Material> by_face;
      std::stringstream in(text);
      std::string line;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line);
        const auto m = parse_material(j.at("top1").get<std::string>());
        if (!m) throw Error(ErrorKind::MalformedInput, "unknown material in face predictions");
        by_face[j.at("face").get<int>()] = *m;
      }
      for (const auto& s : samples) {
        auto it = by_face.find(s.face);
        if (it == by_face.end()) throw Error(ErrorKind::Alignment, "no face prediction for a truth sample");
        top1.push_back(it->second);
        truths.push_back(s.labels);
      }
    } else {
      std::stringstream in(text);
      Eigen::MatrixXd probs, desc;
      read_predictions_jsonl(in, probs, desc);
      if (probs.rows() != static_cast<Eigen::Index>(samples.size()))
        throw Error(ErrorKind::Alignment, "prediction and truth sample counts differ");
      const auto arg = argmax_materials(probs);
      top1.insert(top1.end(), arg.begin(), arg.end());
      for (std::size_t k = 0; k < samples.size(); ++k) {
        truths.push_back(samples[k].labels);
        if (!samples[k].labels.empty()) {
          descriptors.push_back(desc.row(static_cast<Eigen::Index>(k)));
          desc_truths.push_back(samples[k].labels);
        }
      }
    }
  }

  EvalReport report;
  report.top1 = top1_accuracy(top1, truths);
  report.confusion = confusion_matrix(top1, truths);
  if (!descriptors.empty()) {
    std::vector<int> keep(descriptors.size());
    std::iota(keep.begin(), keep.end(), 0);
    if (ctx.config.get_bool("eval.balance")) keep = balance_database(desc_truths, ctx.seed());
    Eigen::MatrixXd db(static_cast<Eigen::Index>(keep.size()), descriptors.front().size());
    std::vector<MaterialLabelSet> db_labels;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      db.row(static_cast<Eigen::Index>(i)) = descriptors[keep[i]];
      db_labels.push_back(desc_truths[keep[i]]);
    }
    for (int k : ctx.config.get_int_list("eval.k")) {
      if (k > db.rows() - 1) {
        std::cerr << "warning: skipping precision@" << k << ", the database holds " << db.rows() << " points\n";
        continue;
      }
      report.ks.push_back(k);
      report.precision.push_back(precision_at_k(db, db_labels, db, db_labels, k, true));
    }
  }
  write_text(ctx.out / "report.json", report_json(report));
  fs::create_directories(ctx.out);
  write_report_csv(report, ctx.out.string());
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Material labeling toolkit for 3D meshes", "shapemat"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, out_dir = ".";
  std::deque<Override> overrides;
  auto bind = [&](CLI::App* sub, const std::string& flags, const std::string& key, const std::string& help) {
    overrides.push_back({key, {}, nullptr});
    overrides.back().option = sub->add_option(flags, overrides.back().value, help);
  };
  app.add_option("--config", config_path, "key=value config file with [sections]");
  app.add_option("--out", out_dir, "output directory");
  bind(&app, "--seed", "general.seed", "random seed");
  bind(&app, "--threads", "general.threads", "worker threads (0 = all cores)");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic shape");
  synth->add_option("--spec", synth_args.spec, "JSON shape spec");
  synth->add_option("--category", synth_args.category, "table | chair | cabinet")->excludes("--spec");
  synth->add_option("--jitter", synth_args.jitter, "vertex jitter in bounding radii")->excludes("--spec");
  synth->add_flag("--benchmark", synth_args.benchmark, "write the 30-shape benchmark suite");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "draw visible, evenly spread surface samples");
  sample->add_option("--mesh", sample_args.mesh, "OBJ mesh")->required();
  sample->add_option("--labels", sample_args.labels, "label JSON (default: labels.json beside the mesh)");
  bind(sample, "-n,--points", "sampling.points", "samples drawn before filtering");
  bind(sample, "-k,--subsample", "sampling.subsample", "samples kept");

  std::string sym_mesh;
  auto* symmetry = app.add_subcommand("symmetry", "detect rigid symmetries and symmetric face pairs");
  symmetry->add_option("--mesh", sym_mesh, "OBJ mesh")->required();
  bind(symmetry, "--rmsd-threshold", "symmetry.rmsd_threshold", "ICP acceptance in bounding radii");

  std::string geo_mesh;
  auto* geodesic = app.add_subcommand("geodesic", "geodesic face pairs within rho * diameter");
  geodesic->add_option("--mesh", geo_mesh, "OBJ mesh")->required();
  bind(geodesic, "--rho", "geodesic.rho", "radius as a fraction of the geodesic diameter");
  bind(geodesic, "--cap", "geodesic.cap", "nearest pairs kept per face (<= 0: all)");

  std::vector<std::string> desc_shapes;
  auto* train_desc = app.add_subcommand("train-desc", "train the descriptor network");
  train_desc->add_option("--shape", desc_shapes, "shape directory with mesh.obj and samples.jsonl")->required();
  bind(train_desc, "--epochs", "descriptor.epochs", "training epochs");
  bind(train_desc, "--variant", "descriptor.variant", "multitask | classification | contrastive");
  bind(train_desc, "--lambda-class", "descriptor.lambda_class", "classification loss weight");
  bind(train_desc, "--lambda-contr", "descriptor.lambda_contr", "contrastive loss weight");
  bind(train_desc, "--margin", "descriptor.margin", "contrastive margin");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "per-sample material probabilities and descriptors");
  predict->add_option("--net", predict_args.net, "network checkpoint")->required();
  predict->add_option("--mesh", predict_args.mesh, "OBJ mesh")->required();
  predict->add_option("--samples", predict_args.samples, "samples JSON-lines")->required();

  std::vector<std::string> crf_shapes;
  auto* train_crf_cmd = app.add_subcommand("train-crf", "learn CRF pairwise weights");
  train_crf_cmd->add_option("--shape", crf_shapes, "shape directory with mesh, labels, samples, unaries")->required();
  bind(train_crf_cmd, "--lr", "crf.learning_rate", "gradient step size");
  bind(train_crf_cmd, "--iterations", "crf.iterations", "gradient steps");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "CRF smoothing of per-sample unaries into face labels");
  infer->add_option("--mesh", infer_args.mesh, "OBJ mesh")->required();
  infer->add_option("--samples", infer_args.samples, "samples JSON-lines")->required();
  infer->add_option("--unaries", infer_args.unaries, "unary or prediction JSON-lines")->required();
  infer->add_option("--weights", infer_args.weights, "CRF weights JSON")->required();
  infer->add_option("--geodesic", infer_args.geodesic, "geodesic pairs JSON-lines");
  infer->add_option("--symmetry", infer_args.symmetry, "symmetry JSON");
  bind(infer, "--threshold", "crf.threshold", "marginal threshold for label sets");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "precision@k, top-1 accuracy and confusion matrix");
  eval->add_option("--pred", eval_args.pred, "face or sample predictions (repeatable)")->required();
  eval->add_option("--truth", eval_args.truth, "samples JSON-lines with labels (repeatable)")->required();
  bind(eval, "--k", "eval.k", "comma-separated k list");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.config = PipelineConfig::load(config_path);
    bool seed_given = false;
    for (const auto& o : overrides)
      if (o.option->count() > 0) {
        ctx.config.set(o.key, o.value);
        if (o.key == "general.seed") seed_given = true;
      }
    ctx.out = out_dir;
    const int threads = ctx.config.get_int("general.threads");
    set_thread_count(threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency()));

    CLI::App* sub = app.get_subcommands().front();
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(ctx.config.hash()));
    std::cerr << "shapemat " << sub->get_name() << ": seed=" << ctx.seed() << " config_hash=" << hash << '\n';

    if (sub == synth) {
      synth_args.seed_given = seed_given;
      cmd_synth(ctx, synth_args);
    } else if (sub == sample) {
      cmd_sample(ctx, sample_args);
    } else if (sub == symmetry) {
      cmd_symmetry(ctx, sym_mesh);
    } else if (sub == geodesic) {
      cmd_geodesic(ctx, geo_mesh);
    } else if (sub == train_desc) {
      cmd_train_desc(ctx, desc_shapes);
    } else if (sub == predict) {
      cmd_predict(ctx, predict_args);
    } else if (sub == train_crf_cmd) {
      cmd_train_crf(ctx, crf_shapes);
    } else if (sub == infer) {
      cmd_infer(ctx, infer_args);
    } else if (sub == eval) {
      cmd_eval(ctx, eval_args);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace shapemat
