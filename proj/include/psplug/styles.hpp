#pragma once

#include <string>
#include <string_view>

#include "psplug/errors.hpp"
#include "psplug/tasks.hpp"

namespace psplug {

// The predefined style set plus the neutral "none" sentinel (s = empty).
enum class StyleName { warm, critical, concise, elaborative, none };

struct StyleInstruction {
  StyleName name = StyleName::none;
  std::string text;  // empty iff name == none
};

inline const StyleInstruction& style_instruction(StyleName name) {
  static const StyleInstruction table[] = {
      {StyleName::warm,
       "Please write in a warm, humorous style that uses gentle jokes and soft, uplifting "
       "comedy."},
      {StyleName::critical,
       "Please write in a sharply critical way, directly pointing out flaws or problems "
       "and avoiding overly balanced phrasing."},
      {StyleName::concise,
       "Please write in a concise and formal way, using precise language and avoiding "
       "unnecessary elaboration."},
      {StyleName::elaborative,
       "Please write in a reflective and elaborative way, carefully explaining reasoning "
       "with detailed examples and considering multiple perspectives."},
      {StyleName::none, ""},
  };
  for (const StyleInstruction& s : table) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown style");
}

inline std::string_view to_string(StyleName name) {
  switch (name) {
    case StyleName::warm: return "warm";
    case StyleName::critical: return "critical";
    case StyleName::concise: return "concise";
    case StyleName::elaborative: return "elaborative";
    case StyleName::none: return "none";
  }
  throw ConfigError("unknown style");
}

inline StyleName parse_style(std::string_view name) {
  for (StyleName s : {StyleName::warm, StyleName::critical, StyleName::concise,
                      StyleName::elaborative, StyleName::none}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown style name: " + std::string(name) +
                    " (expected warm, critical, concise, elaborative or none)");
}

// x_s = (x, s): the raw task input plus the optional style instruction, with
// the fully rendered prompt the model actually consumes.
struct StyledInput {
  std::string input_text;
  StyleName style = StyleName::none;
  std::string rendered;
};

// "{style text} {task instruction} {input}"; the style prefix is omitted
// entirely for s = none.
inline StyledInput render_styled_input(std::string_view input_text, StyleName style,
                                       Task task) {
  const TaskSpec& spec = task_spec(task);
  const StyleInstruction& s = style_instruction(style);
  StyledInput out;
  out.input_text = std::string(input_text);
  out.style = style;
  if (!s.text.empty()) {
    out.rendered = s.text + " ";
  }
  out.rendered += spec.instruction;
  out.rendered += " ";
  out.rendered += input_text;
  return out;
}

}  // namespace psplug
