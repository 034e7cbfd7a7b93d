#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psplug/binio.hpp"
#include "psplug/errors.hpp"
#include "psplug/profiles.hpp"
#include "psplug/tasks.hpp"

namespace psplug {

// One (x, y^u) pair: task input plus the user-authored gold response.
struct TaskExample {
  std::string example_id;
  std::string user_id;
  std::string input_text;
  std::string gold_output;
  Task task = Task::lamp7;
};

struct LampData {
  Task task = Task::lamp7;
  std::vector<UserRecord> users;      // sorted by user_id
  std::vector<TaskExample> examples;  // sorted by example_id
};

namespace detail {

inline std::string json_field_as_string(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  return value.dump();  // numbers/bools stringified so HistoryItem stays uniform
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

// Reads the benchmark's two-file layout: questions.json (id, input, profile,
// optional user_id) and outputs.json ({task, golds: [{id, output}]}). When a
// question carries no user_id, the question id doubles as the user id (the
// benchmark keeps one profile per question).
inline LampData load_lamp(const std::filesystem::path& dir, Task task) {
  const std::filesystem::path questions_path = dir / "questions.json";
  const std::filesystem::path outputs_path = dir / "outputs.json";
  const nlohmann::json questions = detail::parse_json_file(questions_path);
  const nlohmann::json outputs = detail::parse_json_file(outputs_path);

  if (!questions.is_array()) {
    throw DataError(questions_path.string() + ": expected a top-level array");
  }
  if (!outputs.is_object() || !outputs.contains("golds") || !outputs["golds"].is_array()) {
    throw DataError(outputs_path.string() + ": expected an object with a golds array");
  }

  std::map<std::string, std::string> golds;
  size_t gold_index = 0;
  for (const nlohmann::json& gold : outputs["golds"]) {
    gold_index += 1;
    if (!gold.is_object() || !gold.contains("id") || !gold.contains("output")) {
      throw DataError(outputs_path.string() + ": gold entry #" + std::to_string(gold_index) +
                      " needs id and output fields");
    }
    golds[detail::json_field_as_string(gold["id"])] =
        detail::json_field_as_string(gold["output"]);
  }

  LampData data;
  data.task = task;
  std::map<std::string, UserRecord> users;
  size_t entry_index = 0;
  for (const nlohmann::json& q : questions) {
    entry_index += 1;
    const std::string where =
        questions_path.string() + ": entry #" + std::to_string(entry_index);
    if (!q.is_object() || !q.contains("id") || !q.contains("input")) {
      throw DataError(where + " needs id and input fields");
    }
    TaskExample example;
    example.task = task;
    example.example_id = detail::json_field_as_string(q["id"]);
    example.input_text = detail::json_field_as_string(q["input"]);
    example.user_id =
        q.contains("user_id") ? detail::json_field_as_string(q["user_id"]) : example.example_id;
    auto gold = golds.find(example.example_id);
    if (gold == golds.end()) {
      throw DataError(where + " (id " + example.example_id + "): no gold output");
    }
    if (gold->second.empty()) {
      throw DataError(where + " (id " + example.example_id + "): empty gold output");
    }
    example.gold_output = gold->second;

    if (!users.contains(example.user_id)) {
      if (!q.contains("profile") || !q["profile"].is_array()) {
        throw DataError(where + " (id " + example.example_id + "): missing profile array");
      }
      UserRecord record;
      record.user_id = example.user_id;
      record.task = task;
      for (const nlohmann::json& item : q["profile"]) {
        if (!item.is_object()) throw DataError(where + ": profile items must be objects");
        HistoryItem fields;
        for (const auto& [key, value] : item.items()) {
          fields[key] = detail::json_field_as_string(value);
        }
        record.history.push_back(std::move(fields));
      }
      users.emplace(record.user_id, std::move(record));
    }
    data.examples.push_back(std::move(example));
  }

  std::sort(data.examples.begin(), data.examples.end(),
            [](const TaskExample& a, const TaskExample& b) { return a.example_id < b.example_id; });
  for (auto& [id, record] : users) data.users.push_back(std::move(record));
  return data;
}

// ---------------------------------------------------------------------------
// Seeded synthetic persona corpus.
// ---------------------------------------------------------------------------

// Each synthetic user habitually injects one rare marker word into their
// writing; the neutral input text never contains it. A personalization method
// that works must learn to promote exactly that user's marker — the marker
// table is the recoverable ground truth.
struct SyntheticSpec {
  std::uint64_t seed = 7;
  int n_users = 2;
  int items_per_user = 50;
  int history_per_user = 12;
  int words_per_text = 8;
  double marker_rate = 0.45;  // chance of the user's own marker after each word
  double other_rate = 0.02;   // chance of some other user's marker (noise floor)
  Task task = Task::lamp7;
};

struct SyntheticData {
  LampData data;
  std::map<std::string, std::string> markers;  // user_id -> marker word
};

namespace detail {

inline const std::vector<std::string>& synthetic_base_vocab() {
  static const std::vector<std::string> vocab = {
      "the",    "a",     "river",  "stone",  "light",  "wind",  "garden", "song",
      "quiet",  "morning", "blue", "paper",  "road",   "cloud", "summer", "rain",
      "tree",   "bird",  "night",  "star",   "coffee", "letter", "window", "dream"};
  return vocab;
}

inline const std::vector<std::string>& synthetic_marker_words() {
  static const std::vector<std::string> markers = {"zonk", "quib",  "flux",  "vex",
                                                   "jolt", "murk",  "pique", "glyph",
                                                   "knack", "wisp", "fjord", "zeal"};
  return markers;
}

inline std::string zero_pad(int value, size_t width) {
  std::string s = std::to_string(value);
  return s.size() >= width ? s : std::string(width - s.size(), '0') + s;
}

inline std::string sample_words(std::mt19937_64& rng, int count) {
  const std::vector<std::string>& vocab = synthetic_base_vocab();
  std::uniform_int_distribution<size_t> pick(0, vocab.size() - 1);
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (i > 0) out += " ";
    out += vocab[pick(rng)];
  }
  return out;
}

// Rewrites the input in the user's voice: every input word kept, the user's
// marker injected behind words at marker_rate, other users' markers at the
// small noise rate.
inline std::string mark_text(std::mt19937_64& rng, const std::string& input,
                             const SyntheticSpec& spec, int user_index) {
  const std::vector<std::string>& markers = synthetic_marker_words();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> other_pick(0, spec.n_users - 1);
  std::string out;
  size_t start = 0;
  while (start < input.size()) {
    size_t end = input.find(' ', start);
    if (end == std::string::npos) end = input.size();
    if (!out.empty()) out += " ";
    out += input.substr(start, end - start);
    if (coin(rng) < spec.marker_rate) out += " " + markers[size_t(user_index)];
    if (spec.n_users > 1 && coin(rng) < spec.other_rate) {
      int other = other_pick(rng);
      if (other == user_index) other = (other + 1) % spec.n_users;
      out += " " + markers[size_t(other)];
    }
    start = end + 1;
  }
  return out;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.n_users < 1) throw InvalidInputError("synthetic corpus needs at least one user");
  if (size_t(spec.n_users) > detail::synthetic_marker_words().size()) {
    throw InvalidInputError("at most " +
                            std::to_string(detail::synthetic_marker_words().size()) +
                            " synthetic users supported");
  }
  if (spec.items_per_user < 1) throw InvalidInputError("items_per_user must be >= 1");
  if (spec.history_per_user < 1) throw InvalidInputError("history_per_user must be >= 1");
  if (spec.words_per_text < 1) throw InvalidInputError("words_per_text must be >= 1");
  if (spec.marker_rate < 0.0 || spec.marker_rate > 1.0 || spec.other_rate < 0.0 ||
      spec.other_rate > 1.0) {
    throw InvalidInputError("marker rates must lie in [0, 1]");
  }
  if (spec.other_rate > 0.0 && spec.marker_rate < 2.0 * spec.other_rate) {
    throw InvalidInputError("marker_rate must be at least twice other_rate so each user's "
                            "marker stays separable from the noise floor");
  }

  std::mt19937_64 rng(spec.seed);
  const TaskSpec& task = task_spec(spec.task);
  SyntheticData out;
  out.data.task = spec.task;

  for (int u = 0; u < spec.n_users; ++u) {
    const std::string user_id = "u" + detail::zero_pad(u, 2);
    out.markers[user_id] = detail::synthetic_marker_words()[size_t(u)];

    UserRecord record;
    record.user_id = user_id;
    record.task = spec.task;
    for (int h = 0; h < spec.history_per_user; ++h) {
      HistoryItem item;
      bool first = true;
      for (const FieldLine& line : task.history_format) {
        const int words = first ? spec.words_per_text : 3;
        item[line.field] = detail::mark_text(rng, detail::sample_words(rng, words), spec, u);
        first = false;
      }
      record.history.push_back(std::move(item));
    }
    out.data.users.push_back(std::move(record));

    for (int q = 0; q < spec.items_per_user; ++q) {
      TaskExample example;
      example.example_id = "synth-" + user_id + "-" + detail::zero_pad(q, 3);
      example.user_id = user_id;
      example.task = spec.task;
      example.input_text = detail::sample_words(rng, spec.words_per_text);
      example.gold_output = detail::mark_text(rng, example.input_text, spec, u);
      out.data.examples.push_back(std::move(example));
    }
  }
  return out;
}

// Emits the corpus in the same two-file layout load_lamp reads, so synthetic
// and benchmark data flow through identical code paths.
inline void write_lamp_files(const LampData& data, const std::filesystem::path& dir) {
  nlohmann::json questions = nlohmann::json::array();
  std::map<std::string, const UserRecord*> users;
  for (const UserRecord& u : data.users) users[u.user_id] = &u;
  for (const TaskExample& example : data.examples) {
    auto user = users.find(example.user_id);
    if (user == users.end()) {
      throw DataError("example " + example.example_id + " references unknown user " +
                      example.user_id);
    }
    nlohmann::json profile = nlohmann::json::array();
    for (const HistoryItem& item : user->second->history) {
      profile.push_back(nlohmann::json(item));
    }
    questions.push_back({{"id", example.example_id},
                         {"user_id", example.user_id},
                         {"input", example.input_text},
                         {"profile", std::move(profile)}});
  }
  nlohmann::json golds = nlohmann::json::array();
  for (const TaskExample& example : data.examples) {
    golds.push_back({{"id", example.example_id}, {"output", example.gold_output}});
  }
  nlohmann::json outputs = {{"task", std::string(to_string(data.task))},
                            {"golds", std::move(golds)}};
  atomic_write_file(dir / "questions.json", questions.dump(2) + "\n");
  atomic_write_file(dir / "outputs.json", outputs.dump(2) + "\n");
}

inline void write_marker_table(const std::map<std::string, std::string>& markers,
                               const std::filesystem::path& path) {
  atomic_write_file(path, nlohmann::json(markers).dump(2) + "\n");
}

inline std::map<std::string, std::string> read_marker_table(const std::filesystem::path& path) {
  const nlohmann::json parsed = detail::parse_json_file(path);
  if (!parsed.is_object()) throw DataError(path.string() + ": expected an object");
  std::map<std::string, std::string> markers;
  for (const auto& [user, marker] : parsed.items()) {
    markers[user] = detail::json_field_as_string(marker);
  }
  return markers;
}

}  // namespace psplug
