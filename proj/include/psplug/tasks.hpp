#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "psplug/errors.hpp"

namespace psplug {

enum class Task { lamp1, lamp2m, lamp3, lamp4, lamp5, lamp7 };

enum class MetricKind { text, classification, regression };

// One "label: {field}" line of a history-item rendering.
struct FieldLine {
  std::string label;
  std::string field;
};

struct TaskSpec {
  Task task;
  std::string name;
  std::vector<FieldLine> history_format;
  // Profile-generation instruction; "{}" marks the formatted-history slot.
  std::string pag_prompt;
  // Task instruction placed between the optional style text and the input.
  std::string instruction;
  MetricKind metric;
};

inline const std::vector<TaskSpec>& all_task_specs() {
  static const std::vector<TaskSpec> specs = {
      {Task::lamp1,
       "LaMP-1",
       {{"paper title", "title"}, {"reference", "citation"}},
       "Write a summary, in English, of the research interests and topics of a researcher "
       "who has published the following papers. Only generate the summary, no other text. "
       "User History: {} Answer:",
       "For an author who has written the paper with the given title, which reference is "
       "related? Just answer with [1] or [2] without explanation:",
       MetricKind::classification},
      {Task::lamp2m,
       "LaMP-2M",
       {{"description", "description"}, {"tag", "tag"}},
       "Look at the following past movies this user has watched and determine the most "
       "popular tag they labeled. Answer in the following form: most popular tag: <tag>. "
       "User History: {} Answer:",
       "Which tag does this movie relate to? Just answer with the tag name without "
       "explanation:",
       MetricKind::classification},
      {Task::lamp3,
       "LaMP-3",
       {{"review", "text"}, {"score", "score"}},
       "Based on this user’s past reviews, what are the most common scores they give "
       "for positive and negative reviews? Answer in the following form: most common "
       "positive score: <pos>, most common negative score: <neg>. User History: {} Answer:",
       "What is the score of the following review on a scale of 1 to 5? Just answer with "
       "1, 2, 3, 4 or 5 without explanation:",
       MetricKind::regression},
      {Task::lamp4,
       "LaMP-4",
       {{"article", "text"}, {"headline", "title"}},
       "Given this author’s previous articles, try to describe a template for their "
       "headlines. I want to be able to accurately predict the headline gives one of their "
       "articles. Be specific about their style and wording, don’t tell me anything "
       "generic. User History: {} Answer:",
       "Generate a headline for the following article without any explanation before or "
       "after it:",
       MetricKind::text},
      {Task::lamp5,
       "LaMP-5",
       {{"abstract", "abstract"}, {"title", "title"}},
       "Given this author’s previous publications, try to describe a template for "
       "their titles. I want to be able to accurately predict the title of one of the "
       "papers from the abstract. Only generate the template description, nothing else. "
       "User History: {} Answer:",
       "Generate a title for the following abstract of a paper without any explanation "
       "before or after it:",
       MetricKind::text},
      {Task::lamp7,
       "LaMP-7",
       {{"tweet", "text"}},
       "Given this person’s previous tweets, try to describe a template for their "
       "tweets. I want to take a generic sentence and rephrase it to sound like one of "
       "their tweets, with the same style/punctuation/capitalization/wording/tone/etc. as "
       "them. Only give me the template description, nothing else. User History: {} "
       "Answer:",
       "Paraphrase the following text into tweet without any explanation before or after "
       "it:",
       MetricKind::text},
  };
  return specs;
}

inline const TaskSpec& task_spec(Task task) {
  for (const TaskSpec& s : all_task_specs()) {
    if (s.task == task) return s;
  }
  throw ConfigError("unknown task");
}

inline const std::string& to_string(Task task) { return task_spec(task).name; }

inline Task parse_task(std::string_view name) {
  for (const TaskSpec& s : all_task_specs()) {
    if (s.name == name) return s.task;
  }
  throw ConfigError("unknown task name: " + std::string(name) +
                    " (expected LaMP-1, LaMP-2M, LaMP-3, LaMP-4, LaMP-5 or LaMP-7)");
}

// One user-history item: named text fields per the task schema.
using HistoryItem = std::map<std::string, std::string>;

inline std::string render_history_item(const TaskSpec& spec, const HistoryItem& item) {
  std::string out;
  for (size_t i = 0; i < spec.history_format.size(); ++i) {
    const FieldLine& line = spec.history_format[i];
    auto it = item.find(line.field);
    if (it == item.end()) {
      throw InvalidInputError(spec.name + " history item missing field '" + line.field + "'");
    }
    if (i > 0) out += '\n';
    out += line.label;
    out += ": ";
    out += it->second;
  }
  return out;
}

}  // namespace psplug
