#pragma once

// Flat key=value configuration mirroring PipelineConfig. Blank lines and
// lines starting with '#' are ignored; unknown keys are an error.

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ufcl/common.hpp"
#include "ufcl/io.hpp"
#include "ufcl/membank.hpp"
#include "ufcl/neighbors.hpp"
#include "ufcl/synth.hpp"

namespace ufcl {

enum class ClusteringKind { hdbscan, dbscan };

struct PipelineConfig {
  std::size_t epochs = 50;
  std::size_t iterations_per_epoch = 50;
  std::size_t batch_size = 256;
  std::size_t instances_per_class = 4;
  double lr = 0.00035;
  double weight_decay = 5e-4;
  double momentum_m = 0.1;
  double loss_temperature = 0.05;
  std::size_t eval_k = 5;
  double eval_temperature = 0.07;

  ClusteringKind clustering = ClusteringKind::hdbscan;
  std::size_t min_cluster_size = 5;
  std::size_t min_samples = 0;  // 0: same as min_cluster_size
  double dbscan_eps = 0.4;
  std::size_t dbscan_min_pts = 4;
  DistanceKind distance_kind = DistanceKind::jaccard;
  std::size_t jaccard_k = 30;
  WeightScheme weight_scheme{WeightKind::mean, WeightSign::as_written};

  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  // encoder
  std::size_t output_dim = 32;
  std::size_t hidden_dim = 0;
  bool gem = false;
  std::size_t gem_height = 1;
  std::size_t gem_width = 1;
  bool gem_shared = false;

  // synthetic data (synth / pipeline subcommands)
  SynthOptions synth;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ParameterError(std::string(name) + " must be >= 1");
    };
    positive(iterations_per_epoch, "iterations_per_epoch");
    positive(batch_size, "batch_size");
    positive(instances_per_class, "instances_per_class");
    positive(eval_k, "eval_k");
    positive(jaccard_k, "jaccard_k");
    positive(output_dim, "output_dim");
    positive(threads, "threads");
    positive(dbscan_min_pts, "dbscan_min_pts");
    if (min_cluster_size < 2) throw ParameterError("min_cluster_size must be >= 2");
    if (!(lr > 0.0)) throw ParameterError("lr must be > 0");
    if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
    if (!(loss_temperature > 0.0)) throw ParameterError("loss_temperature must be > 0");
    if (!(eval_temperature > 0.0)) throw ParameterError("eval_temperature must be > 0");
    if (!(dbscan_eps > 0.0)) throw ParameterError("dbscan_eps must be > 0");
    if (momentum_m < 0.0 || momentum_m > 1.0) throw ParameterError("momentum_m must be in [0, 1]");
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ParameterError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ParameterError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

struct ConfigField {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
ConfigField count_field(T PipelineConfig::*member, const char* key) {
  return {[member, key](PipelineConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

inline ConfigField real_field(double PipelineConfig::*member, const char* key) {
  return {[member, key](PipelineConfig& c, const std::string& v) {
            try {
              c.*member = parse_double(v);
            } catch (const FormatError&) {
              throw ParameterError(std::string("config key '") + key + "': cannot parse '" + v + "'");
            }
          },
          [member](const PipelineConfig& c) { return format_double(c.*member); }};
}

inline ConfigField bool_field(bool PipelineConfig::*member, const char* key) {
  return {[member, key](PipelineConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

template <typename T>
ConfigField synth_count(T SynthOptions::*member, const char* key) {
  return {[member, key](PipelineConfig& c, const std::string& v) { c.synth.*member = parse_number<T>(key, v); },
          [member](const PipelineConfig& c) { return std::to_string(c.synth.*member); }};
}

inline ConfigField synth_real(double SynthOptions::*member, const char* key) {
  return {[member, key](PipelineConfig& c, const std::string& v) {
            try {
              c.synth.*member = parse_double(v);
            } catch (const FormatError&) {
              throw ParameterError(std::string("config key '") + key + "': cannot parse '" + v + "'");
            }
          },
          [member](const PipelineConfig& c) { return format_double(c.synth.*member); }};
}

template <typename E>
ConfigField enum_field(E PipelineConfig::*member, const char* key, std::vector<std::pair<std::string, E>> names) {
  return {[member, key, names](PipelineConfig& c, const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                c.*member = e;
                return;
              }
            }
            throw ParameterError(std::string("config key '") + key + "': unknown value '" + v + "'");
          },
          [member, names](const PipelineConfig& c) {
            for (const auto& [n, e] : names) {
              if (e == c.*member) return n;
            }
            return std::string("?");
          }};
}

// Ordered so that to_text() output is stable.
inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  using C = PipelineConfig;
  static const std::vector<std::pair<std::string, ConfigField>> fields = {
      {"epochs", count_field(&C::epochs, "epochs")},
      {"iterations_per_epoch", count_field(&C::iterations_per_epoch, "iterations_per_epoch")},
      {"batch_size", count_field(&C::batch_size, "batch_size")},
      {"instances_per_class", count_field(&C::instances_per_class, "instances_per_class")},
      {"lr", real_field(&C::lr, "lr")},
      {"weight_decay", real_field(&C::weight_decay, "weight_decay")},
      {"momentum_m", real_field(&C::momentum_m, "momentum_m")},
      {"loss_temperature", real_field(&C::loss_temperature, "loss_temperature")},
      {"eval_k", count_field(&C::eval_k, "eval_k")},
      {"eval_temperature", real_field(&C::eval_temperature, "eval_temperature")},
      {"clustering", enum_field(&C::clustering, "clustering",
                                {{"hdbscan", ClusteringKind::hdbscan}, {"dbscan", ClusteringKind::dbscan}})},
      {"min_cluster_size", count_field(&C::min_cluster_size, "min_cluster_size")},
      {"min_samples", count_field(&C::min_samples, "min_samples")},
      {"dbscan_eps", real_field(&C::dbscan_eps, "dbscan_eps")},
      {"dbscan_min_pts", count_field(&C::dbscan_min_pts, "dbscan_min_pts")},
      {"distance_kind", enum_field(&C::distance_kind, "distance_kind",
                                   {{"jaccard", DistanceKind::jaccard}, {"euclidean", DistanceKind::euclidean}})},
      {"jaccard_k", count_field(&C::jaccard_k, "jaccard_k")},
      {"weight_scheme",
       {[](C& c, const std::string& v) {
          if (v == "zero") c.weight_scheme.kind = WeightKind::zero;
          else if (v == "min") c.weight_scheme.kind = WeightKind::min;
          else if (v == "mean") c.weight_scheme.kind = WeightKind::mean;
          else throw ParameterError("config key 'weight_scheme': unknown value '" + v + "'");
        },
        [](const C& c) {
          switch (c.weight_scheme.kind) {
            case WeightKind::zero: return std::string("zero");
            case WeightKind::min: return std::string("min");
            case WeightKind::mean: break;
          }
          return std::string("mean");
        }}},
      {"weight_sign",
       {[](C& c, const std::string& v) {
          if (v == "as_written") c.weight_scheme.sign = WeightSign::as_written;
          else if (v == "inverted") c.weight_scheme.sign = WeightSign::inverted;
          else throw ParameterError("config key 'weight_sign': unknown value '" + v + "'");
        },
        [](const C& c) {
          return std::string(c.weight_scheme.sign == WeightSign::as_written ? "as_written" : "inverted");
        }}},
      {"seed", count_field(&C::seed, "seed")},
      {"threads", count_field(&C::threads, "threads")},
      {"checkpoint_every", count_field(&C::checkpoint_every, "checkpoint_every")},
      {"output_dim", count_field(&C::output_dim, "output_dim")},
      {"hidden_dim", count_field(&C::hidden_dim, "hidden_dim")},
      {"gem", bool_field(&C::gem, "gem")},
      {"gem_height", count_field(&C::gem_height, "gem_height")},
      {"gem_width", count_field(&C::gem_width, "gem_width")},
      {"gem_shared", bool_field(&C::gem_shared, "gem_shared")},
      {"synth_classes", synth_count(&SynthOptions::classes, "synth_classes")},
      {"synth_per_class", synth_count(&SynthOptions::per_class, "synth_per_class")},
      {"synth_test_per_class", synth_count(&SynthOptions::test_per_class, "synth_test_per_class")},
      {"synth_dim", synth_count(&SynthOptions::dim, "synth_dim")},
      {"synth_separation", synth_real(&SynthOptions::separation, "synth_separation")},
      {"synth_spread", synth_real(&SynthOptions::spread, "synth_spread")},
      {"synth_noise_frac", synth_real(&SynthOptions::noise_frac, "synth_noise_frac")},
  };
  return fields;
}

}  // namespace detail

inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : detail::config_fields()) {
    if (name == key) {
      field.set(c, value);
      return;
    }
  }
  throw ParameterError("unknown config key '" + key + "'");
}

/// Applies one "key=value" assignment.
inline void apply_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ParameterError("expected key=value, got '" + assignment + "'");
  set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline PipelineConfig parse_config(const std::string& text, PipelineConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    try {
      apply_override(base, t);
    } catch (const ParameterError& e) {
      throw ParameterError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {}) {
  try {
    return parse_config(detail::read_file(path, std::ios::in), std::move(base));
  } catch (const ParameterError& e) {
    throw ParameterError(path.string() + ": " + e.what());
  }
}

inline std::string to_text(const PipelineConfig& c) {
  std::string out;
  for (const auto& [name, field] : detail::config_fields()) out += name + " = " + field.get(c) + "\n";
  return out;
}

inline SynthOptions synth_options(const PipelineConfig& c) {
  SynthOptions s = c.synth;
  s.seed = c.seed;
  return s;
}

}  // namespace ufcl
