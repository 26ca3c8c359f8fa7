// Command-line front end: synth, cluster, train, eval, pipeline.
//
// Every subcommand starts from the built-in defaults, applies the optional
// --config file, then any --set key=value overrides, then --seed/--threads.
// All outputs go under --out-dir.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ufcl/ufcl.hpp"

namespace fs = std::filesystem;
using namespace ufcl;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out_dir = "out";
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig c;
  if (!g.config_path.empty()) c = load_config(g.config_path, c);
  for (const auto& kv : g.overrides) apply_override(c, kv);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  c.validate();
  return c;
}

Matrix read_matrix(const std::string& path) { return load_matrix(path, format_from_path(path)); }

std::vector<int> read_labels_if(const std::string& path) {
  return path.empty() ? std::vector<int>{} : load_labels(path);
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  detail::write_file(path, j.dump(2) + "\n");
}

nlohmann::ordered_json metric(double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nullptr; }

void save_dataset(const fs::path& dir, const SynthDataset& ds) {
  save_matrix(dir / "train.bin", ds.train);
  save_labels(dir / "train_labels.txt", ds.train_labels);
  save_matrix(dir / "test.bin", ds.test);
  save_labels(dir / "test_labels.txt", ds.test_labels);
  save_matrix(dir / "class_means.bin", ds.class_means);
}

int cmd_synth(const Globals& g) {
  const auto c = resolve_config(g);
  const auto ds = synth_dataset(synth_options(c));
  save_dataset(g.out_dir, ds);
  detail::write_file(fs::path(g.out_dir) / "config.txt", to_text(c));
  std::cout << "wrote " << ds.train.rows() << " train and " << ds.test.rows() << " test rows to " << g.out_dir
            << "\n";
  return 0;
}

struct ClusterArgs {
  std::string input;
  std::string labels;
};

int cmd_cluster(const Globals& g, const ClusterArgs& a) {
  const auto c = resolve_config(g);
  const auto x = read_matrix(a.input);
  const auto assignment = cluster_features(x, c);
  save_assignment(fs::path(g.out_dir) / "assignment.txt", assignment);
  nlohmann::ordered_json j;
  j["num_clusters"] = assignment.num_clusters;
  j["num_outliers"] = assignment.num_outliers();
  if (!a.labels.empty()) {
    const auto truth = load_labels(a.labels);
    j["acc"] = clustering_acc(assignment, truth);
    j["nmi"] = nmi(assignment, truth);
    j["ari"] = ari(assignment, truth);
  }
  write_json(fs::path(g.out_dir) / "cluster.json", j);
  std::cout << j.dump() << "\n";
  return 0;
}

struct DataArgs {
  std::string train;
  std::string train_labels;
  std::string test;
  std::string test_labels;
  std::string resume;
};

TrainingData load_training_data(const DataArgs& a) {
  TrainingData d;
  d.train = read_matrix(a.train);
  d.train_labels = read_labels_if(a.train_labels);
  if (!d.train_labels.empty() && d.train_labels.size() != d.train.rows()) {
    throw FormatError(a.train_labels + ": label count does not match " + a.train);
  }
  if (!a.test.empty()) {
    d.test = read_matrix(a.test);
    d.test_labels = read_labels_if(a.test_labels);
    if (d.test_labels.size() != d.test.rows()) {
      throw FormatError("held-out split needs one label per row (" + a.test + ")");
    }
  }
  return d;
}

int run_training(const Globals& g, const PipelineConfig& c, const TrainingData& data, const std::string& resume) {
  std::optional<TrainerState> state;
  if (!resume.empty()) state = load_checkpoint(resume);
  detail::write_file(fs::path(g.out_dir) / "config.txt", to_text(c));
  const auto res = run_pipeline(c, data, g.out_dir, std::move(state), &std::cerr);
  save_matrix(fs::path(g.out_dir) / "train_embeddings.bin", encode_all(res.state.encoder, data.train, c.threads));
  std::cout << "wrote " << res.reports.size() << " epoch reports to " << (fs::path(g.out_dir) / "reports.jsonl").string()
            << "\n";
  return 0;
}

int cmd_train(const Globals& g, const DataArgs& a) {
  const auto c = resolve_config(g);
  return run_training(g, c, load_training_data(a), a.resume);
}

int cmd_pipeline(const Globals& g, const std::string& resume) {
  const auto c = resolve_config(g);
  const auto ds = synth_dataset(synth_options(c));
  save_dataset(fs::path(g.out_dir) / "data", ds);
  return run_training(g, c, TrainingData{ds.train, ds.train_labels, ds.test, ds.test_labels}, resume);
}

struct EvalArgs {
  std::string checkpoint;
  std::string train;
  std::string train_labels;
  std::string test;
  std::string test_labels;
  std::string assignment;
  std::string labels;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const auto c = resolve_config(g);
  nlohmann::ordered_json j;
  if (!a.assignment.empty()) {
    if (a.labels.empty()) throw ParameterError("--assignment needs --labels");
    const auto pred = load_assignment(a.assignment);
    const auto truth = load_labels(a.labels);
    j["num_clusters"] = pred.num_clusters;
    j["num_outliers"] = pred.num_outliers();
    j["acc"] = clustering_acc(pred, truth);
    j["nmi"] = nmi(pred, truth);
    j["ari"] = ari(pred, truth);
  }
  if (!a.train.empty()) {
    if (a.train_labels.empty() || a.test.empty() || a.test_labels.empty()) {
      throw ParameterError("k-NN evaluation needs --train, --train-labels, --test and --test-labels");
    }
    auto train = load_embeddings(a.train, format_from_path(a.train), a.train_labels);
    auto test = load_embeddings(a.test, format_from_path(a.test), a.test_labels);
    if (!a.checkpoint.empty()) {
      // raw inputs: encode with the trained encoder first
      const auto st = load_checkpoint(a.checkpoint);
      train.features = encode_all(st.encoder, train.features, c.threads);
      test.features = encode_all(st.encoder, test.features, c.threads);
    }
    j["top1"] = metric(weighted_knn_top1({train.features, train.labels}, {test.features, test.labels}, c.eval_k,
                                         c.eval_temperature, c.threads));
  }
  if (j.empty()) throw ParameterError("nothing to evaluate: pass --assignment/--labels and/or --train/--test");
  write_json(fs::path(g.out_dir) / "eval.json", j);
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised fine-grained clustering and contrastive learning at desk scale"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", g.overrides, "override one config key (key=value), repeatable");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--threads", g.threads, "worker threads");
  app.add_option("-o,--out-dir", g.out_dir, "output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark");

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster", "cluster a feature matrix");
  cluster->add_option("input", ca.input, "feature matrix (.bin or .csv)")->required()->check(CLI::ExistingFile);
  cluster->add_option("--labels", ca.labels, "ground-truth labels for metrics")->check(CLI::ExistingFile);

  DataArgs da;
  auto* train = app.add_subcommand("train", "run the clustering-learning loop on input files");
  train->add_option("--train", da.train, "raw training inputs")->required()->check(CLI::ExistingFile);
  train->add_option("--train-labels", da.train_labels, "training labels (evaluation only)")
      ->check(CLI::ExistingFile);
  train->add_option("--test", da.test, "held-out inputs for k-NN Top-1")->check(CLI::ExistingFile);
  train->add_option("--test-labels", da.test_labels, "held-out labels")->check(CLI::ExistingFile);
  train->add_option("--resume", da.resume, "checkpoint directory to continue from")->check(CLI::ExistingDirectory);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score an assignment and/or a weighted k-NN split");
  eval->add_option("--assignment", ea.assignment, "predicted labels file")->check(CLI::ExistingFile);
  eval->add_option("--labels", ea.labels, "ground-truth labels for --assignment")->check(CLI::ExistingFile);
  eval->add_option("--train", ea.train, "memory features")->check(CLI::ExistingFile);
  eval->add_option("--train-labels", ea.train_labels, "memory labels")->check(CLI::ExistingFile);
  eval->add_option("--test", ea.test, "query features")->check(CLI::ExistingFile);
  eval->add_option("--test-labels", ea.test_labels, "query labels")->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", ea.checkpoint, "encode raw inputs with this checkpoint first")
      ->check(CLI::ExistingDirectory);

  std::string pipeline_resume;
  auto* pipeline = app.add_subcommand("pipeline", "synthesize data, then train and evaluate");
  pipeline->add_option("--resume", pipeline_resume, "checkpoint directory to continue from")
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(g.out_dir);
    if (synth->parsed()) return cmd_synth(g);
    if (cluster->parsed()) return cmd_cluster(g, ca);
    if (train->parsed()) return cmd_train(g, da);
    if (eval->parsed()) return cmd_eval(g, ea);
    if (pipeline->parsed()) return cmd_pipeline(g, pipeline_resume);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
