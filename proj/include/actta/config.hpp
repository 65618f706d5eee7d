#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actta/adapt.hpp"
#include "actta/errors.hpp"
#include "actta/network.hpp"
#include "actta/shiftgen.hpp"

namespace actta {

using nlohmann::json;

struct ModelConfig {
  std::size_t hidden_width = 64;
  std::size_t hidden_blocks = 3;
  NormKind norm = NormKind::kBatch;
  BaseKind base = BaseKind::kRelu;
  std::optional<double> base_beta;  // sigmoid_gate requires it; relu may
                                    // override its slope-gate sharpness
  Granularity granularity = Granularity::kPerChannel;
  double depth_ratio = 1.0;
  std::uint64_t init_seed = 0;

  BaseActivation base_activation() const {
    switch (base) {
      case BaseKind::kRelu: {
        BaseActivation b = BaseActivation::relu();
        if (base_beta) {
          if (!(*base_beta > 0.0)) {
            throw ValidationError("model.base_beta", "must be positive");
          }
          b.beta = *base_beta;
        }
        return b;
      }
      case BaseKind::kSwish:
        return BaseActivation::swish();
      case BaseKind::kGeluApprox:
        return BaseActivation::gelu_approx();
      case BaseKind::kSigmoidGate:
        if (!base_beta) {
          throw ValidationError("model.base_beta",
                                "required when base is sigmoid_gate");
        }
        return BaseActivation::sigmoid_gate(*base_beta);
    }
    throw ValidationError("model.base", "invalid base kind");
  }
};

struct PretrainConfig {
  std::size_t epochs = 200;
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct AdaptSettings {
  AdaptConfig config;
  std::vector<CorruptionKind> continual_kinds = {
      CorruptionKind::kAdditiveGaussian, CorruptionKind::kMeanShift,
      CorruptionKind::kScale, CorruptionKind::kContrast,
      CorruptionKind::kImpulse};
};

struct ExperimentConfig {
  DatasetSpec dataset{6000, 16, 5, 10.0, 1.0, 1};
  ModelConfig model;
  PretrainConfig pretrain;
  AdaptSettings adapt;
  std::string output_dir = "out";
};

namespace detail_config {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& path) {
  if (!j.is_object()) {
    throw ValidationError(path, "must be a JSON object");
  }
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ValidationError(path + "." + key, "unknown field");
    }
  }
}

template <typename T>
T get_field(const json& j, const char* key, T fallback,
            const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(path + "." + key, "has the wrong type");
  }
}

inline std::string get_string(const json& j, const char* key,
                              const std::string& fallback,
                              const std::string& path) {
  return get_field<std::string>(j, key, fallback, path);
}

}  // namespace detail_config

inline void validate_experiment_config(const ExperimentConfig& cfg) {
  validate_dataset_spec(cfg.dataset);
  if (cfg.model.hidden_width < 2) {
    throw ValidationError("model.hidden_width", "must be >= 2");
  }
  if (cfg.model.hidden_blocks < 1) {
    throw ValidationError("model.hidden_blocks", "must be >= 1");
  }
  if (!(cfg.model.depth_ratio >= 0.0 && cfg.model.depth_ratio <= 1.0)) {
    throw ValidationError("model.depth_ratio", "must be in [0, 1]");
  }
  cfg.model.base_activation();  // throws on a bad base/base_beta pair
  if (cfg.pretrain.batch_size < 2) {
    throw ValidationError("pretrain.batch_size", "must be >= 2");
  }
  if (!(cfg.pretrain.lr > 0.0)) {
    throw ValidationError("pretrain.lr", "must be positive");
  }
  if (!(cfg.pretrain.momentum >= 0.0 && cfg.pretrain.momentum < 1.0)) {
    throw ValidationError("pretrain.momentum", "must be in [0, 1)");
  }
  validate_adapt_config(cfg.adapt.config);
  if (cfg.adapt.continual_kinds.empty()) {
    throw ValidationError("adapt.continual_kinds", "must not be empty");
  }
  if (cfg.output_dir.empty()) {
    throw ValidationError("output_dir", "must not be empty");
  }
}

inline ExperimentConfig config_from_json(const json& j) {
  using detail_config::check_keys;
  using detail_config::get_field;
  using detail_config::get_string;
  ExperimentConfig cfg;
  check_keys(j, {"dataset", "model", "pretrain", "adapt", "output_dir"},
             "config");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d,
               {"n_samples", "dims", "n_classes", "class_separation",
                "noise_sigma", "seed"},
               "dataset");
    cfg.dataset.n_samples =
        get_field<std::size_t>(d, "n_samples", cfg.dataset.n_samples,
                               "dataset");
    cfg.dataset.dims =
        get_field<std::size_t>(d, "dims", cfg.dataset.dims, "dataset");
    cfg.dataset.n_classes = get_field<std::size_t>(
        d, "n_classes", cfg.dataset.n_classes, "dataset");
    cfg.dataset.class_separation = get_field<double>(
        d, "class_separation", cfg.dataset.class_separation, "dataset");
    cfg.dataset.noise_sigma = get_field<double>(
        d, "noise_sigma", cfg.dataset.noise_sigma, "dataset");
    cfg.dataset.seed =
        get_field<std::uint64_t>(d, "seed", cfg.dataset.seed, "dataset");
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m,
               {"hidden_width", "hidden_blocks", "norm", "base", "base_beta",
                "granularity", "depth_ratio", "init_seed"},
               "model");
    cfg.model.hidden_width = get_field<std::size_t>(
        m, "hidden_width", cfg.model.hidden_width, "model");
    cfg.model.hidden_blocks = get_field<std::size_t>(
        m, "hidden_blocks", cfg.model.hidden_blocks, "model");
    cfg.model.norm =
        parse_norm_kind(get_string(m, "norm", "batch", "model"));
    cfg.model.base =
        parse_base_kind(get_string(m, "base", "relu", "model"));
    if (m.contains("base_beta")) {
      cfg.model.base_beta =
          get_field<double>(m, "base_beta", 0.0, "model");
    }
    cfg.model.granularity =
        parse_granularity(get_string(m, "granularity", "channel", "model"));
    cfg.model.depth_ratio =
        get_field<double>(m, "depth_ratio", cfg.model.depth_ratio, "model");
    cfg.model.init_seed = get_field<std::uint64_t>(
        m, "init_seed", cfg.model.init_seed, "model");
  }

  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    check_keys(p, {"epochs", "lr", "momentum", "batch_size", "seed"},
               "pretrain");
    cfg.pretrain.epochs =
        get_field<std::size_t>(p, "epochs", cfg.pretrain.epochs, "pretrain");
    cfg.pretrain.lr = get_field<double>(p, "lr", cfg.pretrain.lr, "pretrain");
    cfg.pretrain.momentum = get_field<double>(
        p, "momentum", cfg.pretrain.momentum, "pretrain");
    cfg.pretrain.batch_size = get_field<std::size_t>(
        p, "batch_size", cfg.pretrain.batch_size, "pretrain");
    cfg.pretrain.seed =
        get_field<std::uint64_t>(p, "seed", cfg.pretrain.seed, "pretrain");
  }

  if (j.contains("adapt")) {
    const auto& a = j.at("adapt");
    check_keys(a,
               {"base_lr", "batch_size", "n_batches", "seed", "selection",
                "group_lr_multipliers", "pass_through_tau",
                "continual_kinds"},
               "adapt");
    auto& ac = cfg.adapt.config;
    ac.base_lr = get_field<double>(a, "base_lr", ac.base_lr, "adapt");
    ac.batch_size =
        get_field<std::size_t>(a, "batch_size", ac.batch_size, "adapt");
    ac.n_batches =
        get_field<std::size_t>(a, "n_batches", ac.n_batches, "adapt");
    ac.seed = get_field<std::uint64_t>(a, "seed", ac.seed, "adapt");
    ac.pass_through_tau = get_field<double>(a, "pass_through_tau",
                                            ac.pass_through_tau, "adapt");
    if (a.contains("selection")) {
      const auto& s = a.at("selection");
      check_keys(s, {"enabled", "e0_factor", "weighting"}, "adapt.selection");
      const bool enabled =
          detail_config::get_field<bool>(s, "enabled", true,
                                         "adapt.selection");
      if (!enabled) {
        ac.selection.reset();
      } else {
        SelectionConfig sc;
        sc.e0_factor = detail_config::get_field<double>(
            s, "e0_factor", sc.e0_factor, "adapt.selection");
        sc.weighting = detail_config::get_field<bool>(
            s, "weighting", sc.weighting, "adapt.selection");
        ac.selection = sc;
      }
    }
    if (a.contains("group_lr_multipliers")) {
      const auto& g = a.at("group_lr_multipliers");
      if (!g.is_object()) {
        throw ValidationError("adapt.group_lr_multipliers",
                              "must be a JSON object");
      }
      for (const auto& [key, val] : g.items()) {
        if (!known_param_groups().count(key)) {
          throw ValidationError("adapt.group_lr_multipliers." + key,
                                "unknown parameter group");
        }
        if (!val.is_number()) {
          throw ValidationError("adapt.group_lr_multipliers." + key,
                                "must be a number");
        }
        const double mult = val.get<double>();
        if (!(mult > 0.0)) {
          throw ValidationError("adapt.group_lr_multipliers." + key,
                                "must be positive");
        }
        ac.group_lr_multipliers[key] = mult;
      }
    }
    if (a.contains("continual_kinds")) {
      const auto& ck = a.at("continual_kinds");
      if (!ck.is_array()) {
        throw ValidationError("adapt.continual_kinds", "must be an array");
      }
      cfg.adapt.continual_kinds.clear();
      for (const auto& item : ck) {
        if (!item.is_string()) {
          throw ValidationError("adapt.continual_kinds",
                                "entries must be strings");
        }
        cfg.adapt.continual_kinds.push_back(
            parse_corruption_kind(item.get<std::string>()));
      }
    }
  }

  cfg.output_dir = get_string(j, "output_dir", cfg.output_dir, "config");
  validate_experiment_config(cfg);
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = {{"n_samples", cfg.dataset.n_samples},
                  {"dims", cfg.dataset.dims},
                  {"n_classes", cfg.dataset.n_classes},
                  {"class_separation", cfg.dataset.class_separation},
                  {"noise_sigma", cfg.dataset.noise_sigma},
                  {"seed", cfg.dataset.seed}};
  json m = {{"hidden_width", cfg.model.hidden_width},
            {"hidden_blocks", cfg.model.hidden_blocks},
            {"norm", norm_kind_name(cfg.model.norm)},
            {"base", base_kind_name(cfg.model.base)},
            {"granularity", granularity_name(cfg.model.granularity)},
            {"depth_ratio", cfg.model.depth_ratio},
            {"init_seed", cfg.model.init_seed}};
  if (cfg.model.base_beta) m["base_beta"] = *cfg.model.base_beta;
  j["model"] = m;
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                   {"lr", cfg.pretrain.lr},
                   {"momentum", cfg.pretrain.momentum},
                   {"batch_size", cfg.pretrain.batch_size},
                   {"seed", cfg.pretrain.seed}};
  const auto& ac = cfg.adapt.config;
  json sel;
  if (ac.selection) {
    sel = {{"enabled", true},
           {"e0_factor", ac.selection->e0_factor},
           {"weighting", ac.selection->weighting}};
  } else {
    sel = {{"enabled", false}};
  }
  json kinds = json::array();
  for (auto k : cfg.adapt.continual_kinds) {
    kinds.push_back(corruption_kind_name(k));
  }
  j["adapt"] = {{"base_lr", ac.base_lr},
                {"batch_size", ac.batch_size},
                {"n_batches", ac.n_batches},
                {"seed", ac.seed},
                {"selection", sel},
                {"group_lr_multipliers", ac.group_lr_multipliers},
                {"pass_through_tau", ac.pass_through_tau},
                {"continual_kinds", kinds}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << config_to_json(cfg).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace actta
