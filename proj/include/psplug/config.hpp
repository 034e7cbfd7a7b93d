#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "psplug/digest.hpp"
#include "psplug/encoders.hpp"
#include "psplug/errors.hpp"
#include "psplug/styles.hpp"
#include "psplug/tasks.hpp"
#include "psplug/toy_backbone.hpp"
#include "psplug/trainer.hpp"

namespace psplug {

struct BackboneSpec {
  std::string kind = "toy";
  std::uint64_t seed = 1234;
  int vocab = 98;
  int hidden = 24;
  int layers = 2;
  int max_context = 256;
  double weight_scale = 0.1;
};

struct EncoderSpec {
  std::string kind = "hashing";
  int dim = 768;
  int max_tokens = 4096;
};

struct SummarizerSpec {
  std::string kind = "extractive";  // or "backbone"
  int max_words = 64;
};

struct PathsSpec {
  std::string data_dir;
  std::string cache_dir;
  std::string checkpoint;
  std::string report_dir;
  std::string pairs_file;
};

struct RetrievalSpec {
  int k = 4;
  int max_tokens = 240;
};

struct ProfileSpec {
  int history_k = 10;
};

struct JudgeSpec {
  std::string model = "placeholder-judge";
  int in_flight = 4;
  int max_retries = 3;
};

struct RunConfig {
  Task task = Task::lamp7;
  StyleName style = StyleName::none;
  double alpha = 1.0;
  BackboneSpec backbone;
  EncoderSpec encoder;
  SummarizerSpec summarizer;
  PathsSpec paths;
  TrainConfig train;
  DecodingConfig decoding;
  RetrievalSpec retrieval;
  ProfileSpec profile;
  JudgeSpec judge;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::string& scope,
                                std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || key == a;
    if (!known) {
      throw ConfigError("unknown config key '" + (scope.empty() ? key : scope + "." + key) + "'");
    }
  }
}

template <class T>
void read_field(const nlohmann::json& obj, const std::string& scope, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + (scope.empty() ? std::string(key) : scope + "." + key) +
                      "': " + e.what());
  }
}

inline std::string read_string_field(const nlohmann::json& obj, const std::string& scope,
                                     const char* key, std::string fallback) {
  read_field(obj, scope, key, fallback);
  return fallback;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown_keys(root, "",
                              {"task", "style", "alpha", "backbone", "encoder", "summarizer",
                               "paths", "train", "decoding", "retrieval", "profile", "judge"});
  RunConfig cfg;
  cfg.task = parse_task(detail::read_string_field(root, "", "task", "LaMP-7"));
  cfg.style = parse_style(detail::read_string_field(root, "", "style", "none"));
  detail::read_field(root, "", "alpha", cfg.alpha);
  if (cfg.alpha < 0.0) throw ConfigError("alpha must be non-negative");

  if (root.contains("backbone")) {
    const nlohmann::json& j = root.at("backbone");
    detail::reject_unknown_keys(
        j, "backbone", {"kind", "seed", "vocab", "hidden", "layers", "max_context",
                        "weight_scale"});
    detail::read_field(j, "backbone", "kind", cfg.backbone.kind);
    detail::read_field(j, "backbone", "seed", cfg.backbone.seed);
    detail::read_field(j, "backbone", "vocab", cfg.backbone.vocab);
    detail::read_field(j, "backbone", "hidden", cfg.backbone.hidden);
    detail::read_field(j, "backbone", "layers", cfg.backbone.layers);
    detail::read_field(j, "backbone", "max_context", cfg.backbone.max_context);
    detail::read_field(j, "backbone", "weight_scale", cfg.backbone.weight_scale);
  }
  if (root.contains("encoder")) {
    const nlohmann::json& j = root.at("encoder");
    detail::reject_unknown_keys(j, "encoder", {"kind", "dim", "max_tokens"});
    detail::read_field(j, "encoder", "kind", cfg.encoder.kind);
    detail::read_field(j, "encoder", "dim", cfg.encoder.dim);
    detail::read_field(j, "encoder", "max_tokens", cfg.encoder.max_tokens);
    if (cfg.encoder.dim < 1) throw ConfigError("encoder.dim must be >= 1");
    if (cfg.encoder.max_tokens < 1) throw ConfigError("encoder.max_tokens must be >= 1");
  }
  if (root.contains("summarizer")) {
    const nlohmann::json& j = root.at("summarizer");
    detail::reject_unknown_keys(j, "summarizer", {"kind", "max_words"});
    detail::read_field(j, "summarizer", "kind", cfg.summarizer.kind);
    detail::read_field(j, "summarizer", "max_words", cfg.summarizer.max_words);
    if (cfg.summarizer.max_words < 1) throw ConfigError("summarizer.max_words must be >= 1");
  }
  if (root.contains("paths")) {
    const nlohmann::json& j = root.at("paths");
    detail::reject_unknown_keys(
        j, "paths", {"data_dir", "cache_dir", "checkpoint", "report_dir", "pairs_file"});
    detail::read_field(j, "paths", "data_dir", cfg.paths.data_dir);
    detail::read_field(j, "paths", "cache_dir", cfg.paths.cache_dir);
    detail::read_field(j, "paths", "checkpoint", cfg.paths.checkpoint);
    detail::read_field(j, "paths", "report_dir", cfg.paths.report_dir);
    detail::read_field(j, "paths", "pairs_file", cfg.paths.pairs_file);
  }
  if (root.contains("train")) {
    const nlohmann::json& j = root.at("train");
    detail::reject_unknown_keys(
        j, "train",
        {"beta", "learning_rate", "epochs", "batch_size", "seed", "early_stop_patience",
         "weight_decay", "heldout_fraction", "alpha_train", "style_mix", "mean_per_token",
         "ref_mode"});
    detail::read_field(j, "train", "beta", cfg.train.beta);
    detail::read_field(j, "train", "learning_rate", cfg.train.learning_rate);
    detail::read_field(j, "train", "epochs", cfg.train.epochs);
    detail::read_field(j, "train", "batch_size", cfg.train.batch_size);
    detail::read_field(j, "train", "seed", cfg.train.seed);
    detail::read_field(j, "train", "early_stop_patience", cfg.train.early_stop_patience);
    detail::read_field(j, "train", "weight_decay", cfg.train.weight_decay);
    detail::read_field(j, "train", "heldout_fraction", cfg.train.heldout_fraction);
    detail::read_field(j, "train", "alpha_train", cfg.train.alpha_train);
    detail::read_field(j, "train", "mean_per_token", cfg.train.mean_per_token);
    if (j.contains("style_mix") && !j.at("style_mix").is_null()) {
      double mix = 0.0;
      detail::read_field(j, "train", "style_mix", mix);
      cfg.train.style_mix = mix;
    }
    const std::string ref_mode = detail::read_string_field(j, "train", "ref_mode", "zero_prefix");
    if (ref_mode == "zero_prefix") {
      cfg.train.ref_mode = TrainConfig::RefMode::zero_prefix;
    } else if (ref_mode == "no_prefix") {
      cfg.train.ref_mode = TrainConfig::RefMode::no_prefix;
    } else {
      throw ConfigError("train.ref_mode must be zero_prefix or no_prefix, got '" + ref_mode +
                        "'");
    }
    cfg.train.validate();
  }
  if (root.contains("decoding")) {
    const nlohmann::json& j = root.at("decoding");
    detail::reject_unknown_keys(j, "decoding", {"max_new_tokens", "temperature"});
    detail::read_field(j, "decoding", "max_new_tokens", cfg.decoding.max_new_tokens);
    detail::read_field(j, "decoding", "temperature", cfg.decoding.temperature);
    if (cfg.decoding.max_new_tokens < 1) throw ConfigError("decoding.max_new_tokens must be >= 1");
    if (cfg.decoding.temperature != 0.0) {
      throw ConfigError("decoding.temperature must be 0.0 (greedy decoding only)");
    }
  }
  if (root.contains("retrieval")) {
    const nlohmann::json& j = root.at("retrieval");
    detail::reject_unknown_keys(j, "retrieval", {"k", "max_tokens"});
    detail::read_field(j, "retrieval", "k", cfg.retrieval.k);
    detail::read_field(j, "retrieval", "max_tokens", cfg.retrieval.max_tokens);
    if (cfg.retrieval.k < 1) throw ConfigError("retrieval.k must be >= 1");
    if (cfg.retrieval.max_tokens < 1) throw ConfigError("retrieval.max_tokens must be >= 1");
  }
  if (root.contains("profile")) {
    const nlohmann::json& j = root.at("profile");
    detail::reject_unknown_keys(j, "profile", {"history_k"});
    detail::read_field(j, "profile", "history_k", cfg.profile.history_k);
    if (cfg.profile.history_k < 1) throw ConfigError("profile.history_k must be >= 1");
  }
  if (root.contains("judge")) {
    const nlohmann::json& j = root.at("judge");
    detail::reject_unknown_keys(j, "judge", {"model", "in_flight", "max_retries"});
    detail::read_field(j, "judge", "model", cfg.judge.model);
    detail::read_field(j, "judge", "in_flight", cfg.judge.in_flight);
    detail::read_field(j, "judge", "max_retries", cfg.judge.max_retries);
    if (cfg.judge.in_flight < 1) throw ConfigError("judge.in_flight must be >= 1");
    if (cfg.judge.max_retries < 0) throw ConfigError("judge.max_retries must be >= 0");
  }
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json train = {
      {"beta", cfg.train.beta},
      {"learning_rate", cfg.train.learning_rate},
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"seed", cfg.train.seed},
      {"early_stop_patience", cfg.train.early_stop_patience},
      {"weight_decay", cfg.train.weight_decay},
      {"heldout_fraction", cfg.train.heldout_fraction},
      {"alpha_train", cfg.train.alpha_train},
      {"mean_per_token", cfg.train.mean_per_token},
      {"ref_mode",
       cfg.train.ref_mode == TrainConfig::RefMode::zero_prefix ? "zero_prefix" : "no_prefix"},
  };
  if (cfg.train.style_mix) train["style_mix"] = *cfg.train.style_mix;
  return {
      {"task", std::string(to_string(cfg.task))},
      {"style", std::string(to_string(cfg.style))},
      {"alpha", cfg.alpha},
      {"backbone",
       {{"kind", cfg.backbone.kind},
        {"seed", cfg.backbone.seed},
        {"vocab", cfg.backbone.vocab},
        {"hidden", cfg.backbone.hidden},
        {"layers", cfg.backbone.layers},
        {"max_context", cfg.backbone.max_context},
        {"weight_scale", cfg.backbone.weight_scale}}},
      {"encoder",
       {{"kind", cfg.encoder.kind},
        {"dim", cfg.encoder.dim},
        {"max_tokens", cfg.encoder.max_tokens}}},
      {"summarizer", {{"kind", cfg.summarizer.kind}, {"max_words", cfg.summarizer.max_words}}},
      {"paths",
       {{"data_dir", cfg.paths.data_dir},
        {"cache_dir", cfg.paths.cache_dir},
        {"checkpoint", cfg.paths.checkpoint},
        {"report_dir", cfg.paths.report_dir},
        {"pairs_file", cfg.paths.pairs_file}}},
      {"train", std::move(train)},
      {"decoding",
       {{"max_new_tokens", cfg.decoding.max_new_tokens},
        {"temperature", cfg.decoding.temperature}}},
      {"retrieval", {{"k", cfg.retrieval.k}, {"max_tokens", cfg.retrieval.max_tokens}}},
      {"profile", {{"history_k", cfg.profile.history_k}}},
      {"judge",
       {{"model", cfg.judge.model},
        {"in_flight", cfg.judge.in_flight},
        {"max_retries", cfg.judge.max_retries}}},
  };
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_run_config(root);
}

// Canonical content hash: nlohmann serializes object keys in sorted order, so
// semantically identical configs digest identically.
inline std::string run_config_digest(const RunConfig& cfg) {
  return sha256_hex(run_config_to_json(cfg).dump());
}

// ---------------------------------------------------------------------------
// Component factories.
// ---------------------------------------------------------------------------

inline std::shared_ptr<Backbone> make_backbone(const BackboneSpec& spec) {
  if (spec.kind != "toy") {
    throw ConfigError("unknown backbone kind '" + spec.kind + "' (supported: toy)");
  }
  ToyBackbone::Config cfg;
  cfg.vocab = spec.vocab;
  cfg.hidden = spec.hidden;
  cfg.layers = spec.layers;
  cfg.max_seq = spec.max_context;
  cfg.seed = spec.seed;
  cfg.weight_scale = spec.weight_scale;
  return make_toy_backbone(cfg);
}

inline std::shared_ptr<SentenceEncoder> make_encoder(const EncoderSpec& spec) {
  if (spec.kind != "hashing") {
    throw ConfigError("unknown encoder kind '" + spec.kind + "' (supported: hashing)");
  }
  return std::make_shared<HashingEncoder>(spec.dim, spec.max_tokens);
}

inline std::shared_ptr<TextGenerator> make_summarizer(const SummarizerSpec& spec,
                                                      std::shared_ptr<const Backbone> backbone,
                                                      const DecodingConfig& decoding) {
  if (spec.kind == "extractive") {
    return std::make_shared<ExtractiveSummarizer>(spec.max_words);
  }
  if (spec.kind == "backbone") {
    if (backbone == nullptr) throw ConfigError("backbone summarizer needs a backbone handle");
    return std::make_shared<BackboneSummarizer>(std::move(backbone), decoding);
  }
  throw ConfigError("unknown summarizer kind '" + spec.kind +
                    "' (supported: extractive, backbone)");
}

}  // namespace psplug
