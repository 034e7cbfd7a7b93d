#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "psplug/errors.hpp"
#include "psplug/styles.hpp"
#include "psplug/text.hpp"

namespace psplug {

enum class JudgeKind { persona, warm, critical, concise, elaborative };

inline std::string to_string(JudgeKind kind) {
  switch (kind) {
    case JudgeKind::persona: return "persona";
    case JudgeKind::warm: return "warm";
    case JudgeKind::critical: return "critical";
    case JudgeKind::concise: return "concise";
    case JudgeKind::elaborative: return "elaborative";
  }
  throw InvalidInputError("unknown judge kind");
}

// Style-conditioned runs are judged against the matching style rubric;
// unconditioned runs fall back to the persona rubric.
inline JudgeKind judge_kind_for_style(StyleName style) {
  switch (style) {
    case StyleName::warm: return JudgeKind::warm;
    case StyleName::critical: return JudgeKind::critical;
    case StyleName::concise: return JudgeKind::concise;
    case StyleName::elaborative: return JudgeKind::elaborative;
    case StyleName::none: return JudgeKind::persona;
  }
  throw InvalidInputError("unknown style");
}

namespace detail {

struct StyleJudgeText {
  const char* quoted_style;  // target-style sentence quoted in the task description
  const char* criteria;
  const char* scores[5];
  bool blank_lines_between_slots;  // layout quirk preserved from the source prompts
  const char* reference_label;
};

inline const StyleJudgeText& style_judge_text(JudgeKind kind) {
  static const StyleJudgeText warm = {
      "Please write in a warm, humorous style that uses gentle jokes and a soft, uplifting "
      "comedy way.",
      "Evaluate how well the response matches a warm, humorous style that uses gentle jokes and "
      "soft, uplifting comedy.",
      {"Score 1 (Severe mismatch): Tone is cold, flat, or overly serious. No meaningful humor or "
       "warmth. May sound robotic, harsh, or purely informational. Does not resemble gentle, "
       "uplifting comedy.",
       "Score 2 (Minimal alignment): One or two mild attempts at warmth or humor, but overall "
       "tone remains neutral, dry, or formal. Jokes (if any) feel forced or out of place. The "
       "response does not consistently feel warm or uplifting.",
       "Score 3 (Basic alignment): Recognizably warm and somewhat humorous, but uneven. Some "
       "parts feel friendly and lightly funny, while others are neutral or generic. Humor may be "
       "sparse or occasionally awkward, yet the overall tone is not cold.",
       "Score 4 (Good alignment): Tone is consistently warm and friendly, with several gentle "
       "jokes or light comedic touches. Humor is generally appropriate and uplifting, with only "
       "minor moments that feel flat, generic, or slightly off-style.",
       "Score 5 (Excellent alignment): Strongly and consistently warm, empathetic, and genuinely "
       "funny in a gentle way. Jokes are soft, uplifting, and well-integrated into the "
       "explanation. No harshness, sarcasm, or coldness. The style closely matches an ideal "
       "warm, humorous response."},
      true,
      "Reference Answer:"};
  static const StyleJudgeText concise = {
      "Please write in a concise and formal way, using precise language and avoiding unnecessary "
      "elaboration.",
      "Evaluate how well the response matches a concise and formal style that uses precise "
      "language and avoids unnecessary elaboration.",
      {"Score 1 (Severe mismatch): Tone is casual, chatty, or overly emotional. Language is "
       "imprecise or slangy. Response is rambling, disorganized, or much longer than needed. "
       "Little to no sense of formality.",
       "Score 2 (Minimal alignment): Some formal wording appears, but overall tone is still "
       "somewhat casual or conversational. The response contains noticeable redundancy or "
       "digressions. Explanations are longer than necessary and only partially precise.",
       "Score 3 (Basic alignment): Generally formal in tone, but may include occasional casual "
       "phrases or mild redundancy. Explanations are understandable yet could be more succinct. "
       "Some sentences are precise, but others are wordy or loosely structured.",
       "Score 4 (Good alignment): Tone is clearly formal and professional. Language is mostly "
       "precise, with only minor verbosity or repetition. Structure is clear and focused, and "
       "the response is reasonably brief while still covering the key points.",
       "Score 5 (Excellent alignment): Tone is consistently formal and objective. Language is "
       "precise, technically accurate, and free of slang. The response is concise, "
       "well-structured, and free of unnecessary elaboration while still being complete and easy "
       "to follow."},
      false,
      "Reference Answer :"};
  static const StyleJudgeText critical = {
      "Please write in a sharply critical way, directly point out flaws or problems and avoid "
      "overly balanced phrasing.",
      "Evaluate how well the response matches a sharply critical style that directly points out "
      "flaws or problems and avoids overly balanced phrasing.",
      {"Score 1 (Severe mismatch): Tone is neutral, vague, or even overly positive. Little to no "
       "criticism is expressed. Problems are ignored or only hinted at. The response feels like "
       "a generic summary or polite feedback, not a critical evaluation.",
       "Score 2 (Minimal alignment): Some mild criticism is present, but it is heavily softened, "
       "hedged, or mixed with excessive praise. The response often uses balanced or diplomatic "
       "phrasing that dilutes the critical tone.",
       "Score 3 (Basic alignment): The response identifies key flaws and weaknesses, but still "
       "uses moderate or cautious language. Some sentences are direct, while others remain "
       "neutral or balanced. Overall tone is somewhat critical, but not sharply so.",
       "Score 4 (Good alignment): Tone is clearly critical and focuses on problems and "
       "shortcomings. The response directly points out issues with limited hedging or softening. "
       "There may still be a few neutral or mildly positive phrases, but the main emphasis is on "
       "critique.",
       "Score 5 (Excellent alignment): Tone is consistently and explicitly critical, directly "
       "highlighting flaws, inconsistencies, and limitations. Language is clear, firm, and "
       "unambiguous without being abusive or disrespectful. The response avoids unnecessary "
       "balance or praise and maintains a sharp, problem-focused style throughout."},
      false,
      "Reference Answer :"};
  static const StyleJudgeText elaborative = {
      "Please write in a reflective and elaborative way, carefully explaining reasoning with "
      "detailed examples and considering multiple perspectives.",
      "Evaluate how well the response matches a reflective and elaborative style that carefully "
      "explains reasoning with detailed examples and considers multiple perspectives.",
      {"Score 1 (Severe mismatch): Response is brief, surface-level, or purely declarative. "
       "Little to no explanation of reasoning. No meaningful examples or alternative "
       "perspectives. Tone is more like a short answer than a reflection.",
       "Score 2 (Minimal alignment): Some reasoning is mentioned, but it is shallow or "
       "underdeveloped. Few or no concrete examples. Alternative perspectives are barely "
       "acknowledged or only named without real discussion. Overall, the response feels more "
       "explanatory than reflective.",
       "Score 3 (Basic alignment): The response includes a clear line of reasoning and at least "
       "one example or analogy, but depth is uneven. It may mention another perspective but not "
       "explore it deeply. The style is somewhat reflective and elaborative, yet could benefit "
       "from more detail or perspective-taking.",
       "Score 4 (Good alignment): The response thoughtfully explains its reasoning, uses several "
       "concrete details or examples, and meaningfully acknowledges at least one alternative "
       "viewpoint. It engages in reflection rather than just stating conclusions, with only "
       "minor gaps in depth or coverage.",
       "Score 5 (Excellent alignment): Highly reflective and thoroughly elaborative. Carefully "
       "walks through the reasoning process, supports points with detailed and relevant "
       "examples, and considers multiple perspectives in a balanced and insightful way. The "
       "response feels like a deep, thoughtful reflection rather than a simple explanation."},
      false,
      "Reference Answer :"};
  switch (kind) {
    case JudgeKind::warm: return warm;
    case JudgeKind::concise: return concise;
    case JudgeKind::critical: return critical;
    case JudgeKind::elaborative: return elaborative;
    case JudgeKind::persona: break;
  }
  throw InvalidInputError("persona prompts use their own template");
}

inline const char* persona_rubric() {
  return
      "criteria: \"Evaluate how well the response is personalized to the specific user.\"\n"
      "\n"
      "score1 description: \"Generic or impersonal. Ignores the provided user profile and "
      "personality cues. Style does not match the user; may feel robotic, off-topic, or "
      "contradict stated preferences. No meaningful use of user details; largely boilerplate.\"\n"
      "\n"
      "score2 description: \"Minimal personalization. Mentions a profile detail superficially "
      "but remains mostly generic. Weak style match; limited relevance to the user’s "
      "interests or situation. Includes filler or distracting disclaimers. Significant deviation "
      "from the reference’s intent or emphasis.\"\n"
      "\n"
      "score3 description: \"Basic personalization. References a few relevant details and "
      "partially adapts to them. Generally on topic but misses important user nuances "
      "(interests, constraints, or personality cues). Moderate similarity to the reference; may "
      "be verbose or somewhat generic.\"\n"
      "\n"
      "score4 description: \"Good personalization. Integrates multiple user details accurately; "
      "content is relevant and helpful. Tone mostly matches the user’s personality and "
      "preferred style. Clear and engaging, with only minor misses compared to the reference.\"\n"
      "\n"
      "score5 description: \"Excellent personalization. Seamlessly weaves in key profile "
      "details; highly relevant and tailored guidance or conversation. Tone closely matches the "
      "user’s personality—empathetic, engaging, and concise. Avoids boilerplate and "
      "unnecessary disclaimers. Very closely aligned with the user’s likely preference as "
      "indicated by the reference.\"";
}

inline std::string render_style_judge_prompt(JudgeKind kind, std::string_view instruction,
                                             std::string_view response,
                                             std::string_view reference) {
  const StyleJudgeText& text = style_judge_text(kind);
  std::string out;
  out += "Task Description:\n";
  out += "An instruction and a response to evaluate, a reference answer that can get a score of "
         "5, and a score rubric representing an evaluation criteria are given.\n";
  out += "You are evaluating how well the response matches the following target style:\n";
  out += "\"" + std::string(text.quoted_style) + "\"\n\n";
  out += "1. Write a detailed feedback that assesses the quality of the response strictly based "
         "on the given score rubric, focusing only on style match, not on factual correctness or "
         "task success in general.\n";
  out += "2. When evaluating, compare the response's tone, phrasing, and structure against the "
         "target style description and the reference answer.\n";
  out += "3. After writing a feedback, write a score that is an integer between 1 and 5. You "
         "should refer to the score rubric.\n";
  out += "4. The output format should look as follows: \"(write a feedback for criteria) "
         "[RESULT] (an integer number between 1 and 5)\"\n";
  out += "5. Please do not generate any other opening, closing, and explanations.\n\n";
  const std::string gap = text.blank_lines_between_slots ? "\n\n" : "\n";
  out += "The instruction to evaluate: " + std::string(instruction) + gap;
  out += "Response to evaluate: " + std::string(response) + gap;
  out += std::string(text.reference_label) + " " + std::string(reference) + "\n\n";
  out += "Score Rubrics:\n";
  out += "- Criteria: " + std::string(text.criteria) + "\n";
  for (const char* line : text.scores) out += "- " + std::string(line) + "\n";
  out += "\nFeedback:";
  return out;
}

inline std::string render_persona_judge_prompt(std::string_view instruction,
                                               std::string_view response,
                                               std::string_view reference,
                                               std::string_view profile) {
  std::string out;
  out += "Task Description:\n";
  out += "You are given: (1) an instruction (which may include an input), (2) a response to "
         "evaluate, (3) a reference answer that should receive a score of 5, (4) a user profile "
         "containing the user’s preferences and background, and (5) a score rubric "
         "describing the evaluation criteria.\n\n";
  out += "Your task is to:\n\n";
  out += "1. Write detailed feedback that assesses how well the response is personalized to "
         "this specific user, strictly following the given score rubric. Do not comment on "
         "general quality unrelated to personalization.\n";
  out += "2. Carefully consider how the response aligns with the user’s preferences, "
         "interests, and background information in the user profile.\n";
  out += "3. After writing the feedback, output a single integer score between 1 and 5 that "
         "best matches the rubric. You must choose an integer.\n";
  out += "4. The output format must be:\n";
  out += "   \"(write a feedback for criteria) [RESULT] (an integer number between 1 and 5)\"\n";
  out += "5. Do not add any extra opening, closing, or explanations.\n\n";
  out += "The instruction to evaluate:\n" + std::string(instruction) + "\n\n";
  out += "Response to evaluate:\n" + std::string(response) + "\n\n";
  out += "Reference Answer :\n" + std::string(reference) + "\n\n";
  out += "User Profile:\n" + std::string(profile) + "\n\n";
  out += "Score Rubric:\n" + std::string(persona_rubric()) + "\n\n";
  out += "Feedback:";
  return out;
}

}  // namespace detail

// Fill the evaluation-prompt template for the given rubric. The persona
// rubric judges personalization against the user profile (required); the four
// style rubrics judge adherence to the corresponding style instruction.
inline std::string render_judge_prompt(JudgeKind kind, std::string_view instruction,
                                       std::string_view response, std::string_view reference,
                                       std::string_view profile = {}) {
  if (instruction.empty()) throw InvalidInputError("judge prompt needs an instruction");
  if (response.empty()) throw InvalidInputError("judge prompt needs a response");
  if (reference.empty()) throw InvalidInputError("judge prompt needs a reference answer");
  if (kind == JudgeKind::persona) {
    if (profile.empty()) {
      throw InvalidInputError("the persona rubric requires a user profile text");
    }
    return detail::render_persona_judge_prompt(instruction, response, reference, profile);
  }
  return detail::render_style_judge_prompt(kind, instruction, response, reference);
}

struct JudgeVerdict {
  std::string feedback;
  int score = 0;  // in [1, 5]
};

// Locate the last "[RESULT]" marker and parse the integer that follows it;
// everything before the marker is the feedback text.
inline JudgeVerdict parse_verdict(std::string_view raw) {
  static constexpr std::string_view kMarker = "[RESULT]";
  const size_t pos = raw.rfind(kMarker);
  if (pos == std::string_view::npos) {
    throw ParseError("judge reply has no [RESULT] marker");
  }
  size_t i = pos + kMarker.size();
  while (i < raw.size() && !std::isdigit(static_cast<unsigned char>(raw[i]))) {
    // Tolerate whitespace/punctuation such as "[RESULT] (4)" but never cross
    // into a digit-free tail.
    i += 1;
  }
  if (i >= raw.size()) throw ParseError("no integer after [RESULT] marker");
  int score = 0;
  while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) {
    score = score * 10 + (raw[i] - '0');
    if (score > 99) break;  // avoid overflow on garbage
    i += 1;
  }
  if (score < 1 || score > 5) {
    throw RangeError("judge score " + std::to_string(score) + " outside [1, 5]");
  }
  JudgeVerdict verdict;
  verdict.feedback = std::string(trim(raw.substr(0, pos)));
  verdict.score = score;
  return verdict;
}

// ---------------------------------------------------------------------------
// Chat-completion transport and batched judging.
// ---------------------------------------------------------------------------

struct ChatMessage {
  std::string role;
  std::string content;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  // Returns the assistant text; throws TransportError on delivery failure.
  virtual std::string complete(const std::string& model,
                               std::span<const ChatMessage> messages) = 0;
};

struct JudgeItem {
  std::string id;
  JudgeKind kind = JudgeKind::persona;
  std::string instruction;
  std::string response;
  std::string reference;
  std::string profile;  // required for the persona rubric
};

struct JudgeOutcome {
  std::string id;
  JudgeKind kind = JudgeKind::persona;
  bool ok = false;
  JudgeVerdict verdict;  // valid only when ok
  std::string error;     // set only when !ok
  int retries = 0;       // transport retries consumed
};

struct JudgeReport {
  std::vector<JudgeOutcome> outcomes;  // same order as the input items
  int ok_count = 0;
  int failed_count = 0;
  double mean_score = 0.0;  // over successful verdicts

  std::string to_text() const {
    std::string out = "judged " + std::to_string(outcomes.size()) + " items: " +
                      std::to_string(ok_count) + " scored, " + std::to_string(failed_count) +
                      " failed";
    if (ok_count > 0) out += ", mean score " + std::to_string(mean_score);
    out += "\n";
    for (const JudgeOutcome& o : outcomes) {
      out += o.id + "\t" + to_string(o.kind) + "\t";
      out += o.ok ? "score=" + std::to_string(o.verdict.score) : "FAILED " + o.error;
      if (o.retries > 0) out += "\tretries=" + std::to_string(o.retries);
      out += "\n";
    }
    return out;
  }
};

struct JudgeOptions {
  std::string model = "placeholder-judge";
  int max_retries = 3;  // additional attempts after the first, transport errors only
  int in_flight = 4;
  int backoff_base_ms = 100;  // doubles per retry
  std::function<void(int)> sleep_ms = [](int ms) {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  };
};

// One request per item with bounded retries on transport errors. A verdict is
// only ever recorded from a parsed judge reply — failed items carry the error
// instead of a score, so outcome count always equals item count.
inline JudgeReport judge_batch(std::span<const JudgeItem> items, ChatTransport& transport,
                               const JudgeOptions& options = {}) {
  if (options.max_retries < 0) throw InvalidInputError("max_retries must be >= 0");
  if (options.in_flight < 1) throw InvalidInputError("in_flight must be >= 1");
  JudgeReport report;
  report.outcomes.resize(items.size());

  auto run_one = [&](size_t index) {
    const JudgeItem& item = items[index];
    JudgeOutcome& outcome = report.outcomes[index];
    outcome.id = item.id;
    outcome.kind = item.kind;
    std::string prompt;
    try {
      prompt = render_judge_prompt(item.kind, item.instruction, item.response, item.reference,
                                   item.profile);
    } catch (const Error& e) {
      outcome.error = e.what();
      return;
    }
    const ChatMessage message{"user", prompt};
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      try {
        const std::string reply = transport.complete(options.model, {&message, 1});
        outcome.verdict = parse_verdict(reply);
        outcome.ok = true;
        return;
      } catch (const TransportError& e) {
        outcome.error = e.what();
        if (attempt >= options.max_retries) {
          outcome.retries = attempt;
          return;  // retries exhausted
        }
        outcome.retries = attempt + 1;
        options.sleep_ms(options.backoff_base_ms << attempt);
      } catch (const Error& e) {
        outcome.error = e.what();  // malformed reply: retrying cannot help
        return;
      }
    }
  };

  const size_t workers = std::min(size_t(options.in_flight), items.size());
  if (workers <= 1) {
    for (size_t i = 0; i < items.size(); ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) run_one(i);
      });
    }
    for (std::thread& t : pool) t.join();
  }

  double score_sum = 0.0;
  for (const JudgeOutcome& o : report.outcomes) {
    if (o.ok) {
      report.ok_count += 1;
      score_sum += o.verdict.score;
    } else {
      report.failed_count += 1;
    }
  }
  if (report.ok_count > 0) report.mean_score = score_sum / double(report.ok_count);
  return report;
}

}  // namespace psplug
