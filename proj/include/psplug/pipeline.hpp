#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psplug/bm25.hpp"
#include "psplug/config.hpp"
#include "psplug/datasets.hpp"
#include "psplug/judge.hpp"
#include "psplug/metrics.hpp"
#include "psplug/pairs.hpp"
#include "psplug/plugin.hpp"
#include "psplug/profiles.hpp"
#include "psplug/trainer.hpp"

namespace psplug {

namespace detail {

inline const std::string& require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("config key '") + key + "' is required");
  return value;
}

inline std::string shortest_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("cannot format value");
  return std::string(buf, end);
}

// First number appearing in the text; regression tasks fall back to the
// scale midpoint when the model produced no digits at all.
inline double parse_predicted_number(const std::string& text, double fallback = 3.0) {
  for (size_t i = 0; i < text.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(text[i])) ||
        (text[i] == '-' && i + 1 < text.size() &&
         std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      return std::strtod(text.c_str() + i, nullptr);
    }
  }
  return fallback;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// build-profiles: summarize each user's history once and cache e_u.
// ---------------------------------------------------------------------------

struct BuildProfilesResult {
  int built = 0;
  int skipped = 0;
  int rebuilt = 0;
};

inline BuildProfilesResult cmd_build_profiles(const RunConfig& cfg, bool force = false) {
  const LampData data =
      load_lamp(detail::require_path(cfg.paths.data_dir, "paths.data_dir"), cfg.task);
  ProfileStore store(detail::require_path(cfg.paths.cache_dir, "paths.cache_dir"));
  const auto encoder = make_encoder(cfg.encoder);
  std::shared_ptr<const Backbone> backbone;
  if (cfg.summarizer.kind == "backbone") backbone = make_backbone(cfg.backbone);
  const auto summarizer = make_summarizer(cfg.summarizer, backbone, cfg.decoding);

  BuildProfilesResult result;
  for (const UserRecord& user : data.users) {
    bool rebuild_after_corruption = false;
    if (!force && store.contains(user.user_id)) {
      try {
        store.get(user.user_id);
        result.skipped += 1;
        continue;
      } catch (const CacheIntegrityError& e) {
        std::cerr << "warning: " << e.what() << "; rebuilding\n";
        rebuild_after_corruption = true;
      }
    }
    const ProfileDescriptor descriptor =
        build_profile(user, *summarizer, cfg.profile.history_k);
    const ProfileEmbedding embedding = encode_profile(descriptor, *encoder, cfg.encoder.dim);
    store.put(embedding, descriptor.text);
    (rebuild_after_corruption ? result.rebuilt : result.built) += 1;
  }
  return result;
}

// ---------------------------------------------------------------------------
// make-pairs: one preference pair per example, negatives sampled from the
// style-conditioned reference policy (never from user state).
// ---------------------------------------------------------------------------

struct MakePairsResult {
  int written = 0;
  int dropped = 0;
  std::filesystem::path path;
};

inline MakePairsResult cmd_make_pairs(const RunConfig& cfg) {
  const LampData data =
      load_lamp(detail::require_path(cfg.paths.data_dir, "paths.data_dir"), cfg.task);
  const auto backbone = make_backbone(cfg.backbone);

  MakePairsResult result;
  result.path = detail::require_path(cfg.paths.pairs_file, "paths.pairs_file");
  std::vector<PreferencePair> pairs;
  for (const TaskExample& example : data.examples) {
    try {
      const std::string negative =
          sample_negative(example.input_text, cfg.style, cfg.task, *backbone, cfg.decoding);
      pairs.push_back(make_pair(cfg.task, example.user_id, example.input_text, cfg.style,
                                example.gold_output, negative));
    } catch (const DegenerateSampleError& e) {
      std::cerr << "dropping " << example.example_id << ": " << e.what() << "\n";
      result.dropped += 1;
    } catch (const DegeneratePairError& e) {
      std::cerr << "dropping " << example.example_id << ": " << e.what() << "\n";
      result.dropped += 1;
    }
  }
  write_pairs_jsonl(result.path, pairs);
  result.written = int(pairs.size());
  return result;
}

// ---------------------------------------------------------------------------
// train: fit phi on the pair dataset; emit checkpoint + report.
// ---------------------------------------------------------------------------

struct TrainResult {
  TrainReport report;
  std::filesystem::path checkpoint;
  std::filesystem::path report_path;  // empty when no report_dir configured
};

inline ProfileLookup store_profile_lookup(std::shared_ptr<ProfileStore> store) {
  return [store = std::move(store)](const std::string& user_id) -> Vector {
    std::optional<ProfileEmbedding> hit = store->get(user_id);
    if (!hit) {
      throw DataError("no cached profile for user " + user_id +
                      " — run build-profiles first");
    }
    return hit->e_u;
  };
}

inline TrainResult cmd_train(const RunConfig& cfg) {
  const std::vector<PreferencePair> pairs =
      read_pairs_jsonl(detail::require_path(cfg.paths.pairs_file, "paths.pairs_file"));
  auto store = std::make_shared<ProfileStore>(
      detail::require_path(cfg.paths.cache_dir, "paths.cache_dir"));
  const auto backbone = make_backbone(cfg.backbone);

  TrainOutcome outcome = train(pairs, store_profile_lookup(store), *backbone, cfg.train);
  outcome.report.config_echo = run_config_to_json(cfg).dump(2) + "\n";
  if (outcome.report.backbone_digest_before != outcome.report.backbone_digest_after) {
    throw NumericError("backbone parameters changed during training — the backbone must stay "
                       "frozen");
  }

  TrainResult result;
  result.report = outcome.report;
  result.checkpoint = detail::require_path(cfg.paths.checkpoint, "paths.checkpoint");
  CheckpointMeta meta;
  meta.backbone_id = backbone->parameter_digest();
  meta.config_digest = run_config_digest(cfg);
  save_checkpoint(result.checkpoint, outcome.params, meta);

  if (!cfg.paths.report_dir.empty()) {
    result.report_path = std::filesystem::path(cfg.paths.report_dir) / "train_report.txt";
    atomic_write_file(result.report_path, outcome.report.to_text());
  }
  return result;
}

// ---------------------------------------------------------------------------
// generate: decode with the personalized prefix at a chosen alpha.
// ---------------------------------------------------------------------------

struct GenerationRecord {
  std::string example_id;
  std::string user_id;
  double alpha = 1.0;
  std::string input_text;
  std::string output;
};

inline void write_generations_jsonl(const std::filesystem::path& path,
                                    std::span<const GenerationRecord> records) {
  std::string out;
  for (const GenerationRecord& r : records) {
    out += nlohmann::json{{"id", r.example_id},
                          {"user_id", r.user_id},
                          {"alpha", r.alpha},
                          {"input", r.input_text},
                          {"output", r.output}}
               .dump();
    out += "\n";
  }
  atomic_write_file(path, out);
}

inline std::vector<GenerationRecord> read_generations_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open generations file " + path.string());
  std::vector<GenerationRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (trim(line).empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      GenerationRecord r;
      r.example_id = j.at("id").get<std::string>();
      r.user_id = j.at("user_id").get<std::string>();
      r.alpha = j.at("alpha").get<double>();
      r.input_text = j.at("input").get<std::string>();
      r.output = j.at("output").get<std::string>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

namespace detail {

struct LoadedCheckpoint {
  PluginParams params;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint_for(const RunConfig& cfg, const Backbone& backbone) {
  auto [params, meta] =
      load_checkpoint(require_path(cfg.paths.checkpoint, "paths.checkpoint"));
  if (meta.backbone_id != backbone.parameter_digest()) {
    throw ConfigError("checkpoint was trained against a different backbone (saved id " +
                      meta.backbone_id.substr(0, 12) + "..., configured backbone " +
                      backbone.parameter_digest().substr(0, 12) + "...)");
  }
  if (meta.config_digest != run_config_digest(cfg)) {
    std::cerr << "note: config differs from the one used at training time\n";
  }
  return {std::move(params), std::move(meta)};
}

// Rendered prompt tokens with room reserved for the prefix rows and the
// tokens to be generated.
inline std::vector<int> prompt_tokens(const Backbone& handle, const std::string& rendered,
                                      int prefix_rows, const DecodingConfig& decoding) {
  return context_tokens(handle, rendered, prefix_rows + decoding.max_new_tokens);
}

}  // namespace detail

inline std::vector<GenerationRecord> generate_with_prefix(const RunConfig& cfg, double alpha,
                                                          const LampData& data,
                                                          const Backbone& backbone,
                                                          const PluginParams& params,
                                                          ProfileStore& store) {
  if (alpha < 0.0) throw UsageError("alpha must be non-negative");
  std::vector<GenerationRecord> records;
  for (const TaskExample& example : data.examples) {
    std::optional<ProfileEmbedding> profile = store.get(example.user_id);
    if (!profile) {
      throw DataError("no cached profile for user " + example.user_id +
                      " — run build-profiles first");
    }
    const StyledInput xs = render_styled_input(example.input_text, cfg.style, cfg.task);
    const std::vector<int> x = detail::prompt_tokens(backbone, xs.rendered, 3, cfg.decoding);
    const PrefixBuild build = build_prefix(params, backbone, profile->e_u, x, alpha);
    const std::vector<int> out = backbone.generate(build.prefix, x, cfg.decoding);
    records.push_back({example.example_id, example.user_id, alpha, example.input_text,
                       trim(backbone.detokenize(out))});
  }
  return records;
}

struct GenerateResult {
  int count = 0;
  std::filesystem::path outputs_path;
};

inline GenerateResult cmd_generate(const RunConfig& cfg) {
  const LampData data =
      load_lamp(detail::require_path(cfg.paths.data_dir, "paths.data_dir"), cfg.task);
  const auto backbone = make_backbone(cfg.backbone);
  ProfileStore store(detail::require_path(cfg.paths.cache_dir, "paths.cache_dir"));
  const detail::LoadedCheckpoint checkpoint = detail::load_checkpoint_for(cfg, *backbone);

  const std::vector<GenerationRecord> records =
      generate_with_prefix(cfg, cfg.alpha, data, *backbone, checkpoint.params, store);

  GenerateResult result;
  result.count = int(records.size());
  result.outputs_path =
      std::filesystem::path(detail::require_path(cfg.paths.report_dir, "paths.report_dir")) /
      "generations.jsonl";
  write_generations_jsonl(result.outputs_path, records);
  return result;
}

// ---------------------------------------------------------------------------
// evaluate: psplug (trained prefix) / zero (no context) / rag (BM25 few-shot).
// ---------------------------------------------------------------------------

namespace detail {

// Splits one history item into the few-shot template's (title, body) roles:
// the first field carries the long content, the last short field the label.
inline RetrievedItem history_item_as_example(const TaskSpec& spec, const HistoryItem& item) {
  RetrievedItem out;
  out.body = render_history_item(spec, item);
  if (spec.history_format.size() > 1) {
    const FieldLine& last = spec.history_format.back();
    auto it = item.find(last.field);
    if (it != item.end()) out.title = it->second;
    const FieldLine& first = spec.history_format.front();
    it = item.find(first.field);
    if (it != item.end()) out.body = it->second;
  } else {
    out.title = std::string(spec.name);
  }
  return out;
}

inline std::string rag_prompt(const RunConfig& cfg, const Backbone& backbone,
                              const UserRecord& user, const TaskExample& example) {
  const TaskSpec& spec = task_spec(cfg.task);
  std::vector<std::string> docs;
  for (const HistoryItem& item : user.history) docs.push_back(render_history_item(spec, item));
  const StyledInput xs = render_styled_input(example.input_text, cfg.style, cfg.task);
  if (docs.empty()) return xs.rendered;

  const Bm25Index index = build_bm25_index(docs);
  // The query is the raw task input only; style text never reaches retrieval.
  const RetrievalResult hits = retrieve_topk(index, example.input_text, cfg.retrieval.k);
  if (hits.fallback) return xs.rendered;

  const std::string style_text = style_instruction(cfg.style).text;
  const std::string task_input = spec.instruction + " " + example.input_text;
  std::vector<RetrievedItem> items;
  for (int doc_id : hits.doc_ids) {
    items.push_back(history_item_as_example(spec, user.history[size_t(doc_id)]));
  }
  // Budget-aware assembly: shed examples from the tail until the fixed parts
  // plus one token per example body fit; zero shots means zero-shot.
  while (!items.empty()) {
    const int overhead = measure_fixed_overhead(backbone, items, style_text, task_input);
    const ContextBudget budget =
        make_budget(cfg.retrieval.max_tokens, overhead, int(items.size()));
    if (budget.per_slot > 0) {
      return assemble_icl_prompt(items, style_text, task_input, budget, backbone);
    }
    items.pop_back();
  }
  return xs.rendered;
}

}  // namespace detail

inline std::vector<GenerationRecord> evaluate_predictions(const RunConfig& cfg,
                                                          const std::string& method,
                                                          const LampData& data,
                                                          const Backbone& backbone) {
  std::vector<GenerationRecord> records;
  if (method == "psplug") {
    ProfileStore store(detail::require_path(cfg.paths.cache_dir, "paths.cache_dir"));
    const detail::LoadedCheckpoint checkpoint = detail::load_checkpoint_for(cfg, backbone);
    return generate_with_prefix(cfg, cfg.alpha, data, backbone, checkpoint.params, store);
  }
  if (method == "zero") {
    for (const TaskExample& example : data.examples) {
      const StyledInput xs = render_styled_input(example.input_text, cfg.style, cfg.task);
      const std::vector<int> x = detail::prompt_tokens(backbone, xs.rendered, 0, cfg.decoding);
      const std::vector<int> out = backbone.generate(empty_prefix(), x, cfg.decoding);
      records.push_back({example.example_id, example.user_id, 0.0, example.input_text,
                         trim(backbone.detokenize(out))});
    }
    return records;
  }
  if (method == "rag") {
    std::map<std::string, const UserRecord*> users;
    for (const UserRecord& u : data.users) users[u.user_id] = &u;
    for (const TaskExample& example : data.examples) {
      auto user = users.find(example.user_id);
      if (user == users.end()) {
        throw DataError("example " + example.example_id + " references unknown user " +
                        example.user_id);
      }
      const std::string prompt = detail::rag_prompt(cfg, backbone, *user->second, example);
      const std::vector<int> x = detail::prompt_tokens(backbone, prompt, 0, cfg.decoding);
      const std::vector<int> out = backbone.generate(empty_prefix(), x, cfg.decoding);
      records.push_back({example.example_id, example.user_id, 0.0, example.input_text,
                         trim(backbone.detokenize(out))});
    }
    return records;
  }
  throw UsageError("unknown evaluation method '" + method + "' (expected psplug, zero or rag)");
}

inline MetricReport score_predictions(const RunConfig& cfg, const LampData& data,
                                      std::span<const GenerationRecord> records,
                                      const std::string& method) {
  if (records.size() != data.examples.size()) {
    throw DataError("prediction count does not match example count");
  }
  std::map<std::string, const TaskExample*> by_id;
  for (const TaskExample& e : data.examples) by_id[e.example_id] = &e;

  MetricReport report;
  report.task = std::string(to_string(cfg.task));
  report.method = method;
  const MetricKind kind = task_spec(cfg.task).metric;

  std::vector<std::string> preds, golds;
  std::vector<double> pred_values, gold_values;
  for (const GenerationRecord& r : records) {
    auto it = by_id.find(r.example_id);
    if (it == by_id.end()) throw DataError("prediction for unknown example " + r.example_id);
    const TaskExample& example = *it->second;
    switch (kind) {
      case MetricKind::text:
        report.add("rouge1", rouge_1(r.output, example.gold_output));
        report.add("rougeL", rouge_l(r.output, example.gold_output));
        report.add("meteor", meteor_lite(r.output, example.gold_output));
        break;
      case MetricKind::classification:
        preds.push_back(std::string(trim(r.output)));
        golds.push_back(std::string(trim(example.gold_output)));
        break;
      case MetricKind::regression:
        pred_values.push_back(detail::parse_predicted_number(r.output));
        gold_values.push_back(detail::parse_predicted_number(example.gold_output));
        break;
    }
  }
  if (kind == MetricKind::classification) {
    const ClassificationMetrics m = classification_metrics(preds, golds);
    for (size_t i = 0; i < preds.size(); ++i) {
      report.add("accuracy", preds[i] == golds[i] ? 1.0 : 0.0);
    }
    report.add("macro_f1", m.macro_f1);
  } else if (kind == MetricKind::regression) {
    const RegressionMetrics m = regression_metrics(pred_values, gold_values);
    for (size_t i = 0; i < pred_values.size(); ++i) {
      report.add("abs_error", std::abs(pred_values[i] - gold_values[i]));
    }
    report.add("mae", m.mae);
    report.add("rmse", m.rmse);
  }
  return report;
}

struct EvaluateResult {
  MetricReport report;
  std::filesystem::path report_path;
  std::filesystem::path predictions_path;
};

inline EvaluateResult cmd_evaluate(const RunConfig& cfg, const std::string& method) {
  const LampData data =
      load_lamp(detail::require_path(cfg.paths.data_dir, "paths.data_dir"), cfg.task);
  const auto backbone = make_backbone(cfg.backbone);
  const std::vector<GenerationRecord> records =
      evaluate_predictions(cfg, method, data, *backbone);

  EvaluateResult result;
  result.report = score_predictions(cfg, data, records, method);
  const std::filesystem::path report_dir =
      detail::require_path(cfg.paths.report_dir, "paths.report_dir");
  result.predictions_path = report_dir / ("predictions_" + method + ".jsonl");
  write_generations_jsonl(result.predictions_path, records);
  result.report_path = report_dir / ("metrics_" + method + ".json");
  atomic_write_file(result.report_path, result.report.to_json().dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// sweep-alpha: evaluate the trained model across personalization strengths.
// ---------------------------------------------------------------------------

struct SweepResult {
  std::vector<double> alphas;
  std::filesystem::path table_path;
};

inline SweepResult cmd_sweep_alpha(const RunConfig& cfg, std::span<const double> alphas) {
  if (alphas.empty()) throw UsageError("sweep-alpha needs at least one alpha value");
  for (double a : alphas) {
    if (a < 0.0) throw UsageError("alpha must be non-negative");
  }
  const LampData data =
      load_lamp(detail::require_path(cfg.paths.data_dir, "paths.data_dir"), cfg.task);
  const auto backbone = make_backbone(cfg.backbone);
  ProfileStore store(detail::require_path(cfg.paths.cache_dir, "paths.cache_dir"));
  const detail::LoadedCheckpoint checkpoint = detail::load_checkpoint_for(cfg, *backbone);

  std::vector<std::string> metric_names;
  std::string table;
  for (size_t i = 0; i < alphas.size(); ++i) {
    const std::vector<GenerationRecord> records = generate_with_prefix(
        cfg, alphas[i], data, *backbone, checkpoint.params, store);
    const MetricReport report = score_predictions(cfg, data, records, "psplug");
    if (i == 0) {
      table += "alpha";
      for (const auto& [name, values] : report.per_example) {
        metric_names.push_back(name);
        table += "\t" + name;
      }
      table += "\n";
    }
    table += detail::shortest_double(alphas[i]);
    for (const std::string& name : metric_names) {
      table += "\t" + detail::shortest_double(report.mean(name));
    }
    table += "\n";
  }

  SweepResult result;
  result.alphas.assign(alphas.begin(), alphas.end());
  result.table_path =
      std::filesystem::path(detail::require_path(cfg.paths.report_dir, "paths.report_dir")) /
      "alpha_sweep.tsv";
  atomic_write_file(result.table_path, table);
  return result;
}

// ---------------------------------------------------------------------------
// synthetic-data: emit the bundled seeded persona corpus into data_dir.
// ---------------------------------------------------------------------------

struct SyntheticDataResult {
  int users = 0;
  int examples = 0;
  std::filesystem::path data_dir;
  std::filesystem::path marker_path;
};

inline SyntheticDataResult cmd_synthetic_data(const RunConfig& cfg, const SyntheticSpec& spec) {
  SyntheticSpec effective = spec;
  effective.task = cfg.task;
  const SyntheticData synth = make_synthetic(effective);

  SyntheticDataResult result;
  result.data_dir = detail::require_path(cfg.paths.data_dir, "paths.data_dir");
  std::filesystem::create_directories(result.data_dir);
  write_lamp_files(synth.data, result.data_dir);
  result.marker_path = result.data_dir / "markers.json";
  write_marker_table(synth.markers, result.marker_path);
  result.users = int(synth.data.users.size());
  result.examples = int(synth.data.examples.size());
  return result;
}

// ---------------------------------------------------------------------------
// judge: score generations against the persona or style rubric.
// ---------------------------------------------------------------------------

struct JudgeRunResult {
  JudgeReport report;
  std::filesystem::path verdicts_path;
  std::filesystem::path summary_path;
};

inline JudgeRunResult cmd_judge(const RunConfig& cfg, ChatTransport& transport) {
  const LampData data =
      load_lamp(detail::require_path(cfg.paths.data_dir, "paths.data_dir"), cfg.task);
  const std::filesystem::path report_dir =
      detail::require_path(cfg.paths.report_dir, "paths.report_dir");
  const std::vector<GenerationRecord> records =
      read_generations_jsonl(report_dir / "generations.jsonl");
  if (records.empty()) throw DataError("no generations to judge — run generate first");
  ProfileStore store(detail::require_path(cfg.paths.cache_dir, "paths.cache_dir"));

  std::map<std::string, const TaskExample*> by_id;
  for (const TaskExample& e : data.examples) by_id[e.example_id] = &e;
  const JudgeKind kind = judge_kind_for_style(cfg.style);

  std::vector<JudgeItem> items;
  for (const GenerationRecord& r : records) {
    auto it = by_id.find(r.example_id);
    if (it == by_id.end()) throw DataError("generation for unknown example " + r.example_id);
    JudgeItem item;
    item.id = r.example_id;
    item.kind = kind;
    item.instruction = render_styled_input(r.input_text, cfg.style, cfg.task).rendered;
    item.response = r.output;
    item.reference = it->second->gold_output;
    if (kind == JudgeKind::persona) {
      const auto profile_text = read_file_bytes(store.sidecar_path(r.user_id));
      if (!profile_text || profile_text->empty()) {
        throw DataError("no cached profile text for user " + r.user_id +
                        " — run build-profiles first");
      }
      item.profile = *profile_text;
    }
    items.push_back(std::move(item));
  }

  JudgeOptions options;
  options.model = cfg.judge.model;
  options.in_flight = cfg.judge.in_flight;
  options.max_retries = cfg.judge.max_retries;

  JudgeRunResult result;
  result.report = judge_batch(items, transport, options);

  std::string verdict_lines;
  for (const JudgeOutcome& o : result.report.outcomes) {
    nlohmann::json j = {{"id", o.id},
                        {"kind", to_string(o.kind)},
                        {"ok", o.ok},
                        {"retries", o.retries}};
    if (o.ok) {
      j["score"] = o.verdict.score;
      j["feedback"] = o.verdict.feedback;
    } else {
      j["error"] = o.error;
    }
    verdict_lines += j.dump() + "\n";
  }
  result.verdicts_path = report_dir / "judge_verdicts.jsonl";
  atomic_write_file(result.verdicts_path, verdict_lines);
  result.summary_path = report_dir / "judge_report.txt";
  atomic_write_file(result.summary_path, result.report.to_text());
  return result;
}

}  // namespace psplug
