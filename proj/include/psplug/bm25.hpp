#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psplug/backbone.hpp"
#include "psplug/errors.hpp"
#include "psplug/text.hpp"

namespace psplug {

// Okapi BM25 with the non-negative smoothed idf
// ln(1 + (N - df + 0.5)/(df + 0.5)); k1 = 1.5, b = 0.75.
struct Bm25Index {
  static constexpr double k1 = 1.5;
  static constexpr double b = 0.75;

  std::vector<std::vector<std::string>> docs;  // tokenized
  std::map<std::string, int> df;
  double avgdl = 0.0;
  int doc_count = 0;
};

inline Bm25Index build_bm25_index(std::span<const std::string> raw_docs) {
  Bm25Index index;
  index.doc_count = int(raw_docs.size());
  size_t total_len = 0;
  for (const std::string& d : raw_docs) {
    index.docs.push_back(word_tokenize(d));
    total_len += index.docs.back().size();
    std::set<std::string> seen(index.docs.back().begin(), index.docs.back().end());
    for (const std::string& t : seen) index.df[t] += 1;
  }
  index.avgdl = index.doc_count > 0 ? double(total_len) / double(index.doc_count) : 0.0;
  return index;
}

inline double bm25_idf(const Bm25Index& index, const std::string& term) {
  auto it = index.df.find(term);
  const double df = it == index.df.end() ? 0.0 : double(it->second);
  return std::log(1.0 + (double(index.doc_count) - df + 0.5) / (df + 0.5));
}

inline double bm25_score(const Bm25Index& index, std::span<const std::string> query_tokens,
                         int doc_id) {
  if (doc_id < 0 || doc_id >= index.doc_count) {
    throw InvalidInputError("bm25 doc id " + std::to_string(doc_id) + " out of range");
  }
  const std::vector<std::string>& doc = index.docs[size_t(doc_id)];
  const double dl = double(doc.size());
  // Each distinct query term contributes once.
  std::set<std::string> terms(query_tokens.begin(), query_tokens.end());
  double score = 0.0;
  for (const std::string& t : terms) {
    const double tf = double(std::count(doc.begin(), doc.end(), t));
    if (tf == 0.0) continue;
    const double denom =
        tf + Bm25Index::k1 * (1.0 - Bm25Index::b + Bm25Index::b * dl / index.avgdl);
    score += bm25_idf(index, t) * (tf * (Bm25Index::k1 + 1.0)) / denom;
  }
  return score;
}

struct RetrievalResult {
  std::vector<int> doc_ids;  // empty when fallback
  bool fallback = false;     // max score <= 0: revert to zero-shot behavior
};

// Top-k by score; ties break toward the lower doc index. The query must be
// derived from the task input only (never the style text) — callers pass the
// raw input string.
inline RetrievalResult retrieve_topk(const Bm25Index& index, std::string_view query_text,
                                     int k = 4) {
  if (index.doc_count == 0) throw InvalidInputError("bm25 index is empty");
  if (k < 1) throw InvalidInputError("retrieval k must be >= 1");
  const std::vector<std::string> query = word_tokenize(query_text);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(size_t(index.doc_count));
  for (int d = 0; d < index.doc_count; ++d) {
    scored.emplace_back(bm25_score(index, query, d), d);
  }
  const double best = std::max_element(scored.begin(), scored.end())->first;
  if (best <= 0.0) return {{}, true};
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  RetrievalResult out;
  const int take = std::min(k, index.doc_count);
  for (int i = 0; i < take; ++i) {
    if (scored[size_t(i)].first <= 0.0) break;  // never pad with non-matches
    out.doc_ids.push_back(scored[size_t(i)].second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Budget-aware in-context prompt assembly.
// ---------------------------------------------------------------------------

struct RetrievedItem {
  std::string title;  // kept in full
  std::string body;   // truncated to the per-example slot
};

struct ContextBudget {
  int max_tokens = 0;
  int fixed_overhead = 0;
  int per_slot = 0;  // floor((max_tokens - fixed_overhead) / K), floored at 0
};

inline ContextBudget make_budget(int max_tokens, int fixed_overhead, int k) {
  if (max_tokens < 1) throw InvalidInputError("max_tokens must be positive");
  if (fixed_overhead < 0) throw InvalidInputError("fixed_overhead must be non-negative");
  if (k < 1) throw InvalidInputError("budget needs k >= 1 slots");
  ContextBudget budget;
  budget.max_tokens = max_tokens;
  budget.fixed_overhead = fixed_overhead;
  budget.per_slot = std::max(0, (max_tokens - fixed_overhead) / k);
  return budget;
}

inline std::string truncate_to_tokens(const Backbone& handle, std::string_view text,
                                      int max_tokens) {
  std::vector<int> tokens = handle.tokenize(ascii_fold(text));
  if (int(tokens.size()) <= max_tokens) return std::string(ascii_fold(text));
  tokens.resize(size_t(max_tokens));
  return handle.detokenize(tokens);
}

inline std::string render_icl_body(std::span<const RetrievedItem> items,
                                   std::string_view style_text, std::string_view input) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += " , and ";
    out += "\"" + items[i].title + "\" is the title for \"" + items[i].body + "\"";
  }
  out += ". Following the given patterns ";
  if (!style_text.empty()) {
    out += style_text;
    out += " ";
  }
  out += input;
  return out;
}

// Token count of the assembled prompt with every example body empty: the
// titles, glue text, style instruction and input — everything that does not
// scale with the retrieved content.
inline int measure_fixed_overhead(const Backbone& handle, std::span<const RetrievedItem> items,
                                  std::string_view style_text, std::string_view input) {
  std::vector<RetrievedItem> hollow;
  for (const RetrievedItem& item : items) hollow.push_back({item.title, ""});
  const std::string rendered = render_icl_body(hollow, style_text, input);
  return int(handle.tokenize(ascii_fold(rendered)).size());
}

// Few-shot prompt: '"{title}" is the title for "{body}" , and ... .
// Following the given patterns {style} {input}' with each body truncated to
// its slot and titles preserved in full.
inline std::string assemble_icl_prompt(std::span<const RetrievedItem> items,
                                       std::string_view style_text, std::string_view input,
                                       const ContextBudget& budget, const Backbone& handle) {
  if (items.empty()) throw InvalidInputError("cannot assemble a prompt from zero examples");
  if (budget.per_slot <= 0) {
    throw BudgetExhaustedError("no token budget left for retrieved examples (max " +
                               std::to_string(budget.max_tokens) + ", overhead " +
                               std::to_string(budget.fixed_overhead) + ")");
  }
  std::vector<RetrievedItem> fitted;
  for (const RetrievedItem& item : items) {
    fitted.push_back({item.title, truncate_to_tokens(handle, item.body, budget.per_slot)});
  }
  return render_icl_body(fitted, style_text, input);
}

}  // namespace psplug
