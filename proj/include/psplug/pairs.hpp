#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "psplug/backbone.hpp"
#include "psplug/errors.hpp"
#include "psplug/styles.hpp"
#include "psplug/tasks.hpp"
#include "psplug/text.hpp"

namespace psplug {

enum class PairKind { style, neutral };

inline std::string_view to_string(PairKind kind) {
  return kind == PairKind::style ? "style" : "neutral";
}

struct PreferencePair {
  Task task = Task::lamp7;
  std::string user_id;
  StyleName style = StyleName::none;
  std::string input_text;  // raw x (un-styled)
  std::string y_pos;       // always the user-authored response
  std::string y_neg;       // reference rollout
  PairKind kind = PairKind::neutral;
};

// ASCII-folds and tokenizes text for the given backbone, keeping the most
// recent tokens so that `reserved` positions stay free in the context window.
inline std::vector<int> context_tokens(const Backbone& handle, std::string_view text,
                                       int reserved) {
  std::vector<int> tokens = handle.tokenize(ascii_fold(text));
  const size_t room = size_t(std::max(1, handle.max_context() - reserved));
  if (tokens.size() > room) tokens.erase(tokens.begin(), tokens.end() - long(room));
  return tokens;
}

// Greedy reference rollout conditioned on x_s only — no prefix, no user
// state — so the negative carries style but zero user-specific signal.
// style = none yields the neutral baseline y0 as the s = empty special case.
inline std::string sample_negative(std::string_view input_text, StyleName style, Task task,
                                   const Backbone& handle, const DecodingConfig& cfg) {
  StyledInput xs = render_styled_input(input_text, style, task);
  std::vector<int> tokens = context_tokens(handle, xs.rendered, cfg.max_new_tokens);
  std::vector<int> out = handle.generate(empty_prefix(), tokens, cfg);
  std::string text = trim(handle.detokenize(out));
  if (text.empty()) {
    throw DegenerateSampleError("reference rollout was empty for style '" +
                                std::string(to_string(style)) + "'");
  }
  return text;
}

inline std::string sample_style_negative(std::string_view input_text, StyleName style,
                                         Task task, const Backbone& handle,
                                         const DecodingConfig& cfg) {
  if (style == StyleName::none) {
    throw InvalidInputError("style negative requires a non-empty style");
  }
  return sample_negative(input_text, style, task, handle, cfg);
}

inline std::string sample_neutral_negative(std::string_view input_text, Task task,
                                           const Backbone& handle, const DecodingConfig& cfg) {
  return sample_negative(input_text, StyleName::none, task, handle, cfg);
}

// y_pos is always the user's own response; kind follows from the style.
inline PreferencePair make_pair(Task task, std::string_view user_id,
                                std::string_view input_text, StyleName style,
                                std::string_view user_response, std::string_view negative) {
  if (trim(user_response).empty()) {
    throw InvalidInputError("user response must be non-empty for a preference pair");
  }
  if (normalize_whitespace(user_response) == normalize_whitespace(negative)) {
    throw DegeneratePairError("positive and negative coincide for user " +
                              std::string(user_id));
  }
  PreferencePair p;
  p.task = task;
  p.user_id = std::string(user_id);
  p.style = style;
  p.input_text = std::string(input_text);
  p.y_pos = std::string(user_response);
  p.y_neg = std::string(negative);
  p.kind = style == StyleName::none ? PairKind::neutral : PairKind::style;
  return p;
}

// ---------------------------------------------------------------------------
// Pair dataset file: one JSON object per line, UTF-8, fields
// {task, user_id, style_name, input_text, y_pos, y_neg, kind}.
// ---------------------------------------------------------------------------

inline nlohmann::json pair_to_json(const PreferencePair& p) {
  return {{"task", to_string(p.task)},        {"user_id", p.user_id},
          {"style_name", to_string(p.style)}, {"input_text", p.input_text},
          {"y_pos", p.y_pos},                 {"y_neg", p.y_neg},
          {"kind", to_string(p.kind)}};
}

inline void write_pairs_jsonl(const std::filesystem::path& path,
                              std::span<const PreferencePair> pairs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const PreferencePair& p : pairs) {
    out << pair_to_json(p).dump() << '\n';
  }
  if (!out) throw DataError("short write to " + path.string());
}

inline std::vector<PreferencePair> read_pairs_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pair dataset " + path.string());
  std::vector<PreferencePair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    try {
      PreferencePair p;
      p.task = parse_task(j.at("task").get<std::string>());
      p.user_id = j.at("user_id").get<std::string>();
      p.style = parse_style(j.at("style_name").get<std::string>());
      p.input_text = j.at("input_text").get<std::string>();
      p.y_pos = j.at("y_pos").get<std::string>();
      p.y_neg = j.at("y_neg").get<std::string>();
      const std::string kind = j.at("kind").get<std::string>();
      if (kind != "style" && kind != "neutral") throw DataError("unknown kind '" + kind + "'");
      p.kind = kind == "style" ? PairKind::style : PairKind::neutral;
      if ((p.kind == PairKind::neutral) != (p.style == StyleName::none)) {
        throw DataError("kind/style mismatch");
      }
      if (p.y_pos.empty()) throw DataError("empty y_pos");
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": missing or mistyped field: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace psplug
