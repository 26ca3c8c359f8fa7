#pragma once

// The clustering-learning loop. Each epoch encodes every training example,
// clusters the features into pseudo labels, builds feature agents, then runs
// contrastive iterations (ClusterNCE + Adam + momentum agent updates) on
// class-balanced batches of clustered examples, and finally evaluates.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufcl/clustering.hpp"
#include "ufcl/common.hpp"
#include "ufcl/config.hpp"
#include "ufcl/encoder.hpp"
#include "ufcl/evaluation.hpp"
#include "ufcl/io.hpp"
#include "ufcl/membank.hpp"
#include "ufcl/neighbors.hpp"

namespace ufcl {

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t num_clusters = 0;
  std::size_t num_outliers = 0;
  double top1 = std::numeric_limits<double>::quiet_NaN();
  double acc = std::numeric_limits<double>::quiet_NaN();
  double nmi = std::numeric_limits<double>::quiet_NaN();
  double ari = std::numeric_limits<double>::quiet_NaN();
  double mean_loss = 0.0;
};

/// One JSON object, fixed key order. Unavailable metrics are null.
inline std::string to_json_line(const EpochReport& r) {
  auto real = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["num_clusters"] = r.num_clusters;
  j["num_outliers"] = r.num_outliers;
  j["top1"] = real(r.top1);
  j["acc"] = real(r.acc);
  j["nmi"] = real(r.nmi);
  j["ari"] = real(r.ari);
  j["mean_loss"] = real(r.mean_loss);
  return j.dump();
}

inline EpochReport report_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  auto real = [&j](const char* k) {
    return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
  };
  EpochReport r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.num_clusters = j.at("num_clusters").get<std::size_t>();
  r.num_outliers = j.at("num_outliers").get<std::size_t>();
  r.top1 = real("top1");
  r.acc = real("acc");
  r.nmi = real("nmi");
  r.ari = real("ari");
  r.mean_loss = real("mean_loss");
  return r;
}

/// Raw inputs for training; labels are optional and used only for evaluation.
struct TrainingData {
  Matrix train;
  std::vector<int> train_labels;
  Matrix test;
  std::vector<int> test_labels;
};

/// Everything carried from one epoch to the next.
struct TrainerState {
  EncoderParams encoder;
  FeatureAgentBank bank;
  std::size_t next_epoch = 0;
};

inline EncoderShape encoder_shape(const PipelineConfig& c, std::size_t input_dim) {
  EncoderShape s;
  s.input_dim = input_dim;
  s.hidden_dim = c.hidden_dim;
  s.output_dim = c.output_dim;
  s.gem = c.gem;
  s.gem_height = c.gem_height;
  s.gem_width = c.gem_width;
  s.shared_gem_exponent = c.gem_shared;
  return s;
}

inline TrainerState init_state(const PipelineConfig& c, std::size_t input_dim) {
  auto rng = make_rng(c.seed, SeedStream::encoder_init);
  TrainerState st;
  st.encoder = make_encoder(encoder_shape(c, input_dim), rng);
  st.encoder.optimizer.lr = c.lr;
  st.encoder.optimizer.weight_decay = c.weight_decay;
  st.bank.momentum = c.momentum_m;
  st.bank.temperature = c.loss_temperature;
  return st;
}

/// Class-balanced batch: cluster slots are filled from successive random
/// permutations of the clusters, then each slot draws `instances_per_class`
/// members (without replacement when the cluster is large enough). Outliers
/// are never sampled. The result is trimmed to `batch_size`.
template <typename Rng>
std::vector<std::size_t> batch_sampler(const ClusterAssignment& assignment, std::size_t batch_size,
                                       std::size_t instances_per_class, Rng& rng) {
  if (instances_per_class < 1 || batch_size < 1) throw ParameterError("batch sizes must be >= 1");
  const auto groups = assignment.members();
  if (groups.empty()) throw ParameterError("batch_sampler needs at least one cluster");
  const std::size_t slots = (batch_size + instances_per_class - 1) / instances_per_class;
  std::vector<std::size_t> out;
  out.reserve(slots * instances_per_class);
  std::vector<std::size_t> order(groups.size());
  std::size_t cursor = order.size();
  for (std::size_t s = 0; s < slots; ++s) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto& members = groups[order[cursor++]];
    if (members.size() >= instances_per_class) {
      std::vector<std::size_t> pool = members;
      for (std::size_t i = 0; i < instances_per_class; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        out.push_back(pool[i]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t i = 0; i < instances_per_class; ++i) out.push_back(members[pick(rng)]);
    }
  }
  out.resize(std::min(out.size(), batch_size));
  return out;
}

inline ClusterAssignment cluster_features(const EmbeddingMatrix& features, const PipelineConfig& c) {
  const auto d = clustering_distances(features, c.distance_kind, c.jaccard_k, c.threads);
  if (c.clustering == ClusteringKind::dbscan) return dbscan(d, c.dbscan_eps, c.dbscan_min_pts);
  HdbscanOptions opt;
  opt.min_cluster_size = c.min_cluster_size;
  opt.min_samples = c.min_samples;
  opt.threads = c.threads;
  return hdbscan(d, opt);
}

/// One contrastive iteration on the given batch rows. Returns the loss.
inline double train_iteration(TrainerState& st, const Matrix& inputs, const ClusterAssignment& assignment,
                              std::span<const std::size_t> rows, std::size_t threads) {
  std::vector<EncoderTrace> traces(rows.size());
  parallel_for(rows.size(), threads,
               [&](std::size_t i) { traces[i] = encoder_forward_trace(st.encoder, inputs.row(rows[i])); });
  MiniBatch batch;
  batch.features = Matrix(rows.size(), st.encoder.shape.output_dim);
  batch.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(traces[i].output.begin(), traces[i].output.end(), batch.features.row(i).begin());
    batch.labels[i] = assignment.labels[rows[i]];
  }
  const auto nce = cluster_nce_loss(batch, st.bank);

  auto grads = EncoderGradients::zeros_like(st.encoder);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    encoder_backward(st.encoder, inputs.row(rows[i]), traces[i], nce.feature_gradients.row(i), grads);
  }
  adam_step(st.encoder, grads);
  for (int k : nce.classes) {
    momentum_update(st.bank, static_cast<std::size_t>(k), batch_class_mean(batch, k));
  }
  return nce.loss;
}

inline EpochReport evaluate(const TrainerState& st, const PipelineConfig& c, const TrainingData& data,
                            const ClusterAssignment& assignment, std::size_t epoch, double mean_loss) {
  EpochReport r;
  r.epoch = epoch;
  r.num_clusters = assignment.num_clusters;
  r.num_outliers = assignment.num_outliers();
  r.mean_loss = mean_loss;
  if (!data.train_labels.empty()) {
    r.acc = clustering_acc(assignment, data.train_labels);
    r.nmi = nmi(assignment, data.train_labels);
    r.ari = ari(assignment, data.train_labels);
    if (data.test.rows() > 0 && data.test_labels.size() == data.test.rows()) {
      const LabeledEmbeddings memory{encode_all(st.encoder, data.train, c.threads), data.train_labels};
      const LabeledEmbeddings queries{encode_all(st.encoder, data.test, c.threads), data.test_labels};
      r.top1 = weighted_knn_top1(memory, queries, c.eval_k, c.eval_temperature, c.threads);
    }
  }
  return r;
}

/// Runs epoch `st.next_epoch` and advances it. Agents are rebuilt from the
/// fresh clustering at the start of every epoch.
inline EpochReport run_epoch(TrainerState& st, const PipelineConfig& c, const TrainingData& data,
                             std::ostream* log = nullptr) {
  const std::size_t epoch = st.next_epoch;
  const auto features = encode_all(st.encoder, data.train, c.threads);
  const auto assignment = cluster_features(features, c);

  double mean_loss = 0.0;
  if (assignment.num_clusters == 0) {
    if (log) *log << "warning: epoch " << epoch << " found no clusters; training skipped\n";
  } else {
    st.bank = init_agents(features, assignment, c.weight_scheme, c.momentum_m, c.loss_temperature);
    auto rng = make_rng(c.seed, SeedStream::epoch_sampler, epoch);
    double total = 0.0;
    for (std::size_t it = 0; it < c.iterations_per_epoch; ++it) {
      const auto rows = batch_sampler(assignment, c.batch_size, c.instances_per_class, rng);
      total += train_iteration(st, data.train, assignment, rows, c.threads);
    }
    mean_loss = total / static_cast<double>(c.iterations_per_epoch);
  }
  ++st.next_epoch;
  return evaluate(st, c, data, assignment, epoch, mean_loss);
}

// ---------------------------------------------------------------------------
// Checkpoints: a directory of binary matrices plus a key=value state file.

inline void save_checkpoint(const std::filesystem::path& dir, const TrainerState& st) {
  std::filesystem::create_directories(dir);
  const auto& e = st.encoder;
  const auto& opt = e.optimizer;
  save_matrix(dir / "encoder_hidden.bin", e.hidden_weights);
  save_matrix(dir / "encoder_weights.bin", e.weights);
  save_matrix(dir / "gem_exponents.bin", Matrix(1, e.gem_exponents.size(), e.gem_exponents));
  save_matrix(dir / "adam_first.bin", Matrix(1, opt.first_moment.size(), opt.first_moment));
  save_matrix(dir / "adam_second.bin", Matrix(1, opt.second_moment.size(), opt.second_moment));
  save_matrix(dir / "bank_agents.bin", st.bank.agents);
  std::string meta;
  auto put = [&meta](const std::string& k, const std::string& v) { meta += k + " = " + v + "\n"; };
  put("next_epoch", std::to_string(st.next_epoch));
  put("input_dim", std::to_string(e.shape.input_dim));
  put("hidden_dim", std::to_string(e.shape.hidden_dim));
  put("output_dim", std::to_string(e.shape.output_dim));
  put("gem", e.shape.gem ? "true" : "false");
  put("gem_height", std::to_string(e.shape.gem_height));
  put("gem_width", std::to_string(e.shape.gem_width));
  put("gem_shared", e.shape.shared_gem_exponent ? "true" : "false");
  put("adam_step", std::to_string(opt.step));
  put("adam_lr", detail::format_double(opt.lr));
  put("adam_weight_decay", detail::format_double(opt.weight_decay));
  put("adam_beta1", detail::format_double(opt.beta1));
  put("adam_beta2", detail::format_double(opt.beta2));
  put("adam_epsilon", detail::format_double(opt.epsilon));
  put("bank_momentum", detail::format_double(st.bank.momentum));
  put("bank_temperature", detail::format_double(st.bank.temperature));
  detail::write_file(dir / "state.txt", meta);
}

inline TrainerState load_checkpoint(const std::filesystem::path& dir) {
  std::map<std::string, std::string> kv;
  {
    std::istringstream in(detail::read_file(dir / "state.txt", std::ios::in));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
  }
  auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw FormatError((dir / "state.txt").string() + ": missing key '" + k + "'");
    return it->second;
  };
  auto count = [&](const std::string& k) { return detail::parse_number<std::size_t>(k, get(k)); };
  auto real = [&](const std::string& k) { return detail::parse_double(get(k)); };

  TrainerState st;
  st.next_epoch = count("next_epoch");
  auto& e = st.encoder;
  e.shape.input_dim = count("input_dim");
  e.shape.hidden_dim = count("hidden_dim");
  e.shape.output_dim = count("output_dim");
  e.shape.gem = get("gem") == "true";
  e.shape.gem_height = count("gem_height");
  e.shape.gem_width = count("gem_width");
  e.shape.shared_gem_exponent = get("gem_shared") == "true";
  e.hidden_weights = load_matrix(dir / "encoder_hidden.bin");
  e.weights = load_matrix(dir / "encoder_weights.bin");
  e.gem_exponents = load_matrix(dir / "gem_exponents.bin").values();
  auto& opt = e.optimizer;
  opt.step = count("adam_step");
  opt.lr = real("adam_lr");
  opt.weight_decay = real("adam_weight_decay");
  opt.beta1 = real("adam_beta1");
  opt.beta2 = real("adam_beta2");
  opt.epsilon = real("adam_epsilon");
  opt.first_moment = load_matrix(dir / "adam_first.bin").values();
  opt.second_moment = load_matrix(dir / "adam_second.bin").values();
  st.bank.agents = load_matrix(dir / "bank_agents.bin");
  st.bank.momentum = real("bank_momentum");
  st.bank.temperature = real("bank_temperature");
  validate(e);
  return st;
}

struct PipelineResult {
  std::vector<EpochReport> reports;
  TrainerState state;
};

/// Runs epochs [state.next_epoch, config.epochs). Reports are appended to
/// `out_dir/reports.jsonl` as they are produced; the checkpoint is written to
/// `out_dir/checkpoint` at the end (and every `checkpoint_every` epochs).
inline PipelineResult run_pipeline(const PipelineConfig& c, const TrainingData& data,
                                   const std::filesystem::path& out_dir,
                                   std::optional<TrainerState> resume = std::nullopt,
                                   std::ostream* log = nullptr) {
  c.validate();
  if (data.train.rows() == 0) throw ParameterError("training data is empty");
  PipelineResult result;
  result.state = resume ? std::move(*resume) : init_state(c, data.train.cols());
  if (result.state.encoder.shape.input_dim != data.train.cols()) {
    throw ShapeError("checkpoint input_dim does not match the training data");
  }
  // hyper-parameters come from the config even when resuming
  result.state.encoder.optimizer.lr = c.lr;
  result.state.encoder.optimizer.weight_decay = c.weight_decay;

  std::filesystem::create_directories(out_dir);
  const auto report_path = out_dir / "reports.jsonl";
  std::ofstream reports(report_path, resume ? std::ios::app : std::ios::trunc);
  if (!reports) throw IoError("cannot open " + report_path.string() + " for writing");
  const auto checkpoint_dir = out_dir / "checkpoint";

  while (result.state.next_epoch < c.epochs) {
    auto r = run_epoch(result.state, c, data, log);
    reports << to_json_line(r) << '\n';
    reports.flush();
    if (!reports) throw IoError("write failed for " + report_path.string());
    if (log) {
      *log << "epoch " << r.epoch << ": clusters=" << r.num_clusters << " outliers=" << r.num_outliers
           << " acc=" << r.acc << " top1=" << r.top1 << " loss=" << r.mean_loss << '\n';
    }
    result.reports.push_back(r);
    if (c.checkpoint_every && result.state.next_epoch % c.checkpoint_every == 0) {
      save_checkpoint(checkpoint_dir, result.state);
    }
  }
  save_checkpoint(checkpoint_dir, result.state);
  return result;
}

}  // namespace ufcl
