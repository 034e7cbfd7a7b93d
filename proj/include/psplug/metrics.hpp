#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "psplug/errors.hpp"
#include "psplug/text.hpp"

namespace psplug {

namespace detail {

inline double f1_from(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

inline std::vector<std::string> ngrams(const std::vector<std::string>& tokens, int n) {
  std::vector<std::string> grams;
  if (int(tokens.size()) < n) return grams;
  for (size_t i = 0; i + size_t(n) <= tokens.size(); ++i) {
    std::string gram = tokens[i];
    for (int j = 1; j < n; ++j) gram += " " + tokens[i + size_t(j)];
    grams.push_back(std::move(gram));
  }
  return grams;
}

}  // namespace detail

// ROUGE-N F1 over lowercased word tokens with clipped n-gram overlap.
inline double rouge_n(std::string_view candidate, std::string_view reference, int n) {
  if (n < 1 || n > 2) throw InvalidInputError("rouge_n supports n = 1 or 2");
  const std::vector<std::string> cand = detail::ngrams(word_tokenize(candidate), n);
  const std::vector<std::string> ref = detail::ngrams(word_tokenize(reference), n);
  if (ref.empty()) {
    std::cerr << "warning: empty reference in rouge_n, scoring 0\n";
    return 0.0;
  }
  if (cand.empty()) return 0.0;
  std::map<std::string, int> ref_counts;
  for (const std::string& g : ref) ref_counts[g] += 1;
  int overlap = 0;
  for (const std::string& g : cand) {
    auto it = ref_counts.find(g);
    if (it != ref_counts.end() && it->second > 0) {
      overlap += 1;
      it->second -= 1;
    }
  }
  const double precision = double(overlap) / double(cand.size());
  const double recall = double(overlap) / double(ref.size());
  return detail::f1_from(precision, recall);
}

inline double rouge_1(std::string_view candidate, std::string_view reference) {
  return rouge_n(candidate, reference, 1);
}

// ROUGE-L F1 from the longest common subsequence of word tokens.
inline double rouge_l(std::string_view candidate, std::string_view reference) {
  const std::vector<std::string> cand = word_tokenize(candidate);
  const std::vector<std::string> ref = word_tokenize(reference);
  if (ref.empty()) {
    std::cerr << "warning: empty reference in rouge_l, scoring 0\n";
    return 0.0;
  }
  if (cand.empty()) return 0.0;
  const size_t n = cand.size();
  const size_t m = ref.size();
  std::vector<std::vector<int>> lcs(n + 1, std::vector<int>(m + 1, 0));
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      lcs[i][j] = cand[i - 1] == ref[j - 1] ? lcs[i - 1][j - 1] + 1
                                            : std::max(lcs[i - 1][j], lcs[i][j - 1]);
    }
  }
  const double match = double(lcs[n][m]);
  return detail::f1_from(match / double(n), match / double(m));
}

// Exact-unigram METEOR: one-to-one greedy alignment that prefers continuing
// the previous chunk, Fmean = 10PR / (R + 9P), fragmentation penalty
// 0.5 * (chunks / matches)^3.
inline double meteor_lite(std::string_view candidate, std::string_view reference) {
  const std::vector<std::string> cand = word_tokenize(candidate);
  const std::vector<std::string> ref = word_tokenize(reference);
  if (ref.empty()) {
    std::cerr << "warning: empty reference in meteor_lite, scoring 0\n";
    return 0.0;
  }
  if (cand.empty()) return 0.0;
  std::vector<bool> used(ref.size(), false);
  std::vector<int> aligned_ref(cand.size(), -1);
  int prev = -1;
  for (size_t i = 0; i < cand.size(); ++i) {
    int pick = -1;
    const size_t next = size_t(prev + 1);
    if (next < ref.size() && !used[next] && ref[next] == cand[i]) {
      pick = int(next);  // adjacent match keeps the chunk going
    } else {
      for (size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == cand[i]) {
          pick = int(j);
          break;
        }
      }
    }
    if (pick >= 0) {
      used[size_t(pick)] = true;
      aligned_ref[i] = pick;
      prev = pick;
    }
  }
  int matches = 0;
  int chunks = 0;
  int last_ref = -2;
  for (size_t i = 0; i < cand.size(); ++i) {
    if (aligned_ref[i] < 0) continue;
    matches += 1;
    // A chunk continues only when both sides advance by exactly one.
    const bool contiguous = matches > 1 && aligned_ref[i] == last_ref + 1 && i > 0 &&
                            aligned_ref[i - 1] == last_ref;
    if (!contiguous) chunks += 1;
    last_ref = aligned_ref[i];
  }
  if (matches == 0) return 0.0;
  const double precision = double(matches) / double(cand.size());
  const double recall = double(matches) / double(ref.size());
  const double fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
  const double penalty = 0.5 * std::pow(double(chunks) / double(matches), 3.0);
  return fmean * (1.0 - penalty);
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

inline ClassificationMetrics classification_metrics(std::span<const std::string> predictions,
                                                    std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw InvalidInputError("classification metrics need equal-length prediction/gold lists");
  }
  if (predictions.empty()) throw InvalidInputError("classification metrics need at least one item");
  std::set<std::string> labels(golds.begin(), golds.end());
  labels.insert(predictions.begin(), predictions.end());
  int correct = 0;
  for (size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == golds[i] ? 1 : 0;
  double f1_sum = 0.0;
  for (const std::string& label : labels) {
    int tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
      const bool pred_is = predictions[i] == label;
      const bool gold_is = golds[i] == label;
      tp += pred_is && gold_is ? 1 : 0;
      fp += pred_is && !gold_is ? 1 : 0;
      fn += !pred_is && gold_is ? 1 : 0;
    }
    const double precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    f1_sum += detail::f1_from(precision, recall);
  }
  return {double(correct) / double(predictions.size()), f1_sum / double(labels.size())};
}

struct RegressionMetrics {
  double mae = 0.0;
  double rmse = 0.0;  // always >= mae
};

inline RegressionMetrics regression_metrics(std::span<const double> predictions,
                                            std::span<const double> golds) {
  if (predictions.size() != golds.size()) {
    throw InvalidInputError("regression metrics need equal-length prediction/gold lists");
  }
  if (predictions.empty()) throw InvalidInputError("regression metrics need at least one item");
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double err = predictions[i] - golds[i];
    abs_sum += std::abs(err);
    sq_sum += err * err;
  }
  const double n = double(predictions.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

// Per-example scores for one (task, method) run plus their means.
struct MetricReport {
  std::string task;
  std::string method;
  std::map<std::string, std::vector<double>> per_example;

  void add(const std::string& metric, double value) { per_example[metric].push_back(value); }

  double mean(const std::string& metric) const {
    auto it = per_example.find(metric);
    if (it == per_example.end() || it->second.empty()) {
      throw InvalidInputError("no samples recorded for metric '" + metric + "'");
    }
    double sum = 0.0;
    for (double v : it->second) sum += v;
    return sum / double(it->second.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json means = nlohmann::json::object();
    nlohmann::json samples = nlohmann::json::object();
    for (const auto& [name, values] : per_example) {
      means[name] = mean(name);
      samples[name] = values;
    }
    return {{"task", task}, {"method", method}, {"means", means}, {"per_example", samples}};
  }
};

}  // namespace psplug
