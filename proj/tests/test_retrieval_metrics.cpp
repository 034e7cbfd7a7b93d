// Retrieval (BM25 + budgeted prompt assembly) and the scoring metrics, each
// checked against brute-force or closed-form oracles computed in-test.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "psplug/bm25.hpp"
#include "psplug/metrics.hpp"
#include "psplug/toy_backbone.hpp"

using namespace psplug;

namespace {

std::shared_ptr<ToyBackbone> tiny_backbone() {
  ToyBackbone::Config cfg;
  cfg.hidden = 16;
  cfg.max_seq = 192;
  return make_toy_backbone(cfg);
}

// Brute-force BM25 written independently of the library implementation.
double oracle_bm25(const std::vector<std::string>& raw_docs, const std::string& query,
                   int doc_id) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& d : raw_docs) docs.push_back(word_tokenize(d));
  double avgdl = 0.0;
  for (const auto& d : docs) avgdl += double(d.size());
  avgdl /= double(docs.size());
  const double n = double(docs.size());

  std::set<std::string> terms;
  for (const auto& t : word_tokenize(query)) terms.insert(t);
  double score = 0.0;
  for (const std::string& t : terms) {
    double df = 0.0;
    for (const auto& d : docs) {
      if (std::find(d.begin(), d.end(), t) != d.end()) df += 1.0;
    }
    double tf = 0.0;
    for (const auto& w : docs[size_t(doc_id)]) {
      if (w == t) tf += 1.0;
    }
    if (tf == 0.0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double dl = double(docs[size_t(doc_id)].size());
    score += idf * tf * 2.5 / (tf + 1.5 * (1.0 - 0.75 + 0.75 * dl / avgdl));
  }
  return score;
}

}  // namespace

TEST_CASE("bm25 agrees with a brute-force oracle on a 20-document corpus") {
  std::vector<std::string> docs;
  std::mt19937_64 rng(404);
  const char* vocab[] = {"ocean", "tide",  "reef",  "coral", "wave", "sand",
                         "storm", "cloud", "shell", "crab",  "gull", "kelp"};
  std::uniform_int_distribution<int> pick(0, 11);
  std::uniform_int_distribution<int> len(3, 12);
  for (int d = 0; d < 20; ++d) {
    std::string doc;
    const int L = len(rng);
    for (int i = 0; i < L; ++i) {
      if (i > 0) doc += ' ';
      doc += vocab[pick(rng)];
    }
    docs.push_back(doc);
  }
  const Bm25Index index = build_bm25_index(docs);
  const std::vector<std::string> queries = {"ocean reef", "crab crab kelp", "storm",
                                            "shell gull sand wave"};
  for (const std::string& q : queries) {
    const auto q_tokens = word_tokenize(q);
    for (int d = 0; d < 20; ++d) {
      CHECK(bm25_score(index, q_tokens, d) == Catch::Approx(oracle_bm25(docs, q, d)).margin(1e-9));
    }
  }
}

TEST_CASE("bm25 hand fixture lands on ln(1.6)") {
  // Three equal-length docs, query term in two of them, tf = 1 in the target:
  // the length-normalized tf factor is exactly 1, leaving the idf alone.
  const std::vector<std::string> docs = {"cat sat here", "dog ran away", "cat naps alot"};
  const Bm25Index index = build_bm25_index(docs);
  const auto q = word_tokenize("cat");
  const double score = bm25_score(index, q, 0);
  CHECK(std::abs(score - std::log(1.6)) < 1e-12);
  char rendered[32];
  std::snprintf(rendered, sizeof(rendered), "%.6f", score);
  CHECK(std::string(rendered) == "0.470004");
  CHECK(bm25_idf(index, "cat") == Catch::Approx(std::log(1.6)).margin(1e-15));
  // Unseen terms keep a positive smoothed idf.
  CHECK(bm25_idf(index, "zebra") == Catch::Approx(std::log(8.0)).margin(1e-12));
}

TEST_CASE("repeated query terms contribute once") {
  const std::vector<std::string> docs = {"cat sat here", "dog ran away", "cat naps alot"};
  const Bm25Index index = build_bm25_index(docs);
  CHECK(bm25_score(index, word_tokenize("cat cat cat"), 0) ==
        bm25_score(index, word_tokenize("cat"), 0));
  CHECK_THROWS_AS(bm25_score(index, word_tokenize("cat"), 3), InvalidInputError);
  CHECK_THROWS_AS(bm25_score(index, word_tokenize("cat"), -1), InvalidInputError);
}

TEST_CASE("retrieval ranks by score with index ties and falls back on zero") {
  const std::vector<std::string> docs = {"apple banana", "apple banana", "cherry date",
                                         "apple apple apple banana"};
  const Bm25Index index = build_bm25_index(docs);

  // Doc 3 wins outright (three "apple" hits); the identical docs 0 and 1
  // tie and must keep their input order.
  const RetrievalResult tied = retrieve_topk(index, "apple banana", 3);
  REQUIRE(!tied.fallback);
  REQUIRE(tied.doc_ids.size() == 3);
  CHECK(tied.doc_ids[0] == 3);
  CHECK(tied.doc_ids[1] == 0);
  CHECK(tied.doc_ids[2] == 1);

  const RetrievalResult miss = retrieve_topk(index, "zebra quilt", 2);
  CHECK(miss.fallback);
  CHECK(miss.doc_ids.empty());

  // A generous k never drags in zero-score documents.
  const RetrievalResult all = retrieve_topk(index, "apple", 99);
  CHECK(all.doc_ids.size() == 3);
  CHECK_THROWS_AS(retrieve_topk(index, "apple", 0), InvalidInputError);
  const Bm25Index empty = build_bm25_index(std::vector<std::string>{});
  CHECK_THROWS_AS(retrieve_topk(empty, "apple", 2), InvalidInputError);
}

TEST_CASE("retrieval is a pure ranking: every returned id is valid and unique") {
  std::vector<std::string> docs;
  for (int i = 0; i < 12; ++i) {
    docs.push_back("common filler number" + std::to_string(i % 4));
  }
  const Bm25Index index = build_bm25_index(docs);
  const RetrievalResult r = retrieve_topk(index, "common number2", 5);
  REQUIRE(!r.fallback);
  std::set<int> seen;
  for (int id : r.doc_ids) {
    CHECK(id >= 0);
    CHECK(id < 12);
    CHECK(seen.insert(id).second);
  }
}

TEST_CASE("budget arithmetic floors the per-example slot") {
  const ContextBudget b = make_budget(100, 30, 4);
  CHECK(b.per_slot == 17);  // floor(70 / 4)
  CHECK(make_budget(100, 100, 4).per_slot == 0);
  CHECK(make_budget(10, 50, 2).per_slot == 0);  // clamped, never negative
  CHECK_THROWS_AS(make_budget(0, 0, 4), InvalidInputError);
  CHECK_THROWS_AS(make_budget(10, -1, 4), InvalidInputError);
  CHECK_THROWS_AS(make_budget(10, 0, 0), InvalidInputError);
}

TEST_CASE("the few-shot template renders titles, glue, style, and input") {
  const std::vector<RetrievedItem> items = {{"A", "aaaa"}, {"B", "bbb"}};
  CHECK(render_icl_body(items, "", "in") ==
        "\"A\" is the title for \"aaaa\" , and \"B\" is the title for \"bbb\""
        ". Following the given patterns in");
  CHECK(render_icl_body(items, "Be brief.", "in") ==
        "\"A\" is the title for \"aaaa\" , and \"B\" is the title for \"bbb\""
        ". Following the given patterns Be brief. in");
}

TEST_CASE("assembled prompts never exceed the measured budget") {
  auto bb = tiny_backbone();
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> blen(0, 60);
  std::uniform_int_distribution<int> maxtok(60, 190);
  const std::string style = "Please write in a concise and formal way.";
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RetrievedItem> items;
    const int k = 1 + trial % 4;
    for (int i = 0; i < k; ++i) {
      items.push_back({"t" + std::to_string(i), std::string(size_t(blen(rng)), 'x')});
    }
    const std::string input = "short input " + std::to_string(trial);
    const int overhead = measure_fixed_overhead(*bb, items, style, input);
    const int max_tokens = maxtok(rng);
    const ContextBudget budget = make_budget(max_tokens, overhead, k);
    if (budget.per_slot <= 0) {
      CHECK_THROWS_AS(assemble_icl_prompt(items, style, input, budget, *bb),
                      BudgetExhaustedError);
      continue;
    }
    const std::string prompt = assemble_icl_prompt(items, style, input, budget, *bb);
    CHECK(int(bb->tokenize(ascii_fold(prompt)).size()) <= max_tokens);
    CHECK(prompt.find(input) != std::string::npos);  // the input is never truncated
  }
  CHECK_THROWS_AS(assemble_icl_prompt({}, style, "x", make_budget(100, 0, 1), *bb),
                  InvalidInputError);
}

TEST_CASE("truncate_to_tokens cuts at the token boundary") {
  auto bb = tiny_backbone();
  CHECK(truncate_to_tokens(*bb, "abcdef", 3) == "abc");
  CHECK(truncate_to_tokens(*bb, "abc", 10) == "abc");
  CHECK(truncate_to_tokens(*bb, "a’b", 3) == "a'b");  // folding happens first
}

TEST_CASE("rouge-1 clips repeated n-grams") {
  // Candidate floods "the"; the reference only has one to give.
  CHECK(rouge_1("the the the the", "the cat") == Catch::Approx(1.0 / 3.0).margin(1e-12));
  CHECK(rouge_1("identical words here", "identical words here") == 1.0);
  // 5 clipped unigram matches over 6 and 6 tokens.
  CHECK(rouge_1("the cat sat on the mat", "the cat is on the mat") ==
        Catch::Approx(5.0 / 6.0).margin(1e-12));
  CHECK(rouge_1("", "anything") == 0.0);
  CHECK(rouge_1("anything", "") == 0.0);  // warns, scores zero
  CHECK(rouge_1("Case FOLD", "case fold") == 1.0);
}

TEST_CASE("rouge-2 counts bigram overlap") {
  CHECK(rouge_n("a b c", "a b d", 2) == Catch::Approx(0.5).margin(1e-12));
  CHECK(rouge_n("a", "a", 2) == 0.0);  // too short for any bigram
  CHECK_THROWS_AS(rouge_n("a b", "a b", 3), InvalidInputError);
  CHECK_THROWS_AS(rouge_n("a b", "a b", 0), InvalidInputError);
}

TEST_CASE("rouge-l scores the longest common subsequence") {
  // LCS("a b c d", "a c b d") = 3 ("a b d" or "a c d").
  CHECK(rouge_l("a b c d", "a c b d") == Catch::Approx(0.75).margin(1e-12));
  CHECK(rouge_l("x y z", "x y z") == 1.0);
  // Unigram-identical but order-scrambled: rouge-1 stays 1, rouge-l drops.
  CHECK(rouge_1("d c b a", "a b c d") == 1.0);
  CHECK(rouge_l("d c b a", "a b c d") < 1.0);
  CHECK(rouge_l("", "ref") == 0.0);
}

TEST_CASE("meteor-lite fixtures from the alignment definition") {
  // Perfect match in one chunk: penalty 0.5 * (1/4)^3.
  CHECK(meteor_lite("a b c d", "a b c d") == Catch::Approx(1.0 - 0.5 / 64.0).margin(1e-12));
  // Two swapped halves: 4 matches in 2 chunks, P = R = 1.
  CHECK(meteor_lite("a b c d", "c d a b") == Catch::Approx(1.0 - 0.5 / 8.0).margin(1e-12));
  // Single match against a 10-word reference: fmean = 1/9.1, penalty 0.5.
  CHECK(meteor_lite("a", "a b c d e f g h i j") == Catch::Approx(0.5 / 9.1).margin(1e-12));
  CHECK(meteor_lite("zzz", "a b c") == 0.0);
  CHECK(meteor_lite("", "a b c") == 0.0);
  CHECK(meteor_lite("a b", "") == 0.0);
}

TEST_CASE("meteor-lite alignment is one-to-one") {
  // Two candidate "a"s but only one reference "a": exactly one match.
  // P = 1/2, R = 1/1, fmean = 10 * .5 / (1 + 4.5), penalty 0.5.
  CHECK(meteor_lite("a a", "a") == Catch::Approx((5.0 / 5.5) * 0.5).margin(1e-12));
}

TEST_CASE("classification metrics take the union of labels") {
  const std::vector<std::string> preds = {"a", "a", "b", "c"};
  const std::vector<std::string> golds = {"a", "b", "b", "b"};
  const ClassificationMetrics m = classification_metrics(preds, golds);
  CHECK(m.accuracy == 0.5);
  // F1(a) = 2/3, F1(b) = 1/2, F1(c) = 0 (prediction-only label counts).
  CHECK(m.macro_f1 == Catch::Approx(7.0 / 18.0).margin(1e-12));

  const std::vector<std::string> perfect = {"x", "y"};
  const ClassificationMetrics p = classification_metrics(perfect, perfect);
  CHECK(p.accuracy == 1.0);
  CHECK(p.macro_f1 == 1.0);

  CHECK_THROWS_AS(classification_metrics(preds, perfect), InvalidInputError);
  CHECK_THROWS_AS(
      classification_metrics(std::vector<std::string>{}, std::vector<std::string>{}),
      InvalidInputError);
}

TEST_CASE("regression metrics: hand values and the rmse >= mae law") {
  const std::vector<double> preds = {1.0, 2.0, 5.0};
  const std::vector<double> golds = {1.0, 4.0, 1.0};
  const RegressionMetrics m = regression_metrics(preds, golds);
  CHECK(m.mae == Catch::Approx(2.0).margin(1e-12));
  CHECK(m.rmse == Catch::Approx(std::sqrt(20.0 / 3.0)).margin(1e-12));
  CHECK(m.rmse >= m.mae);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(7), b(7);
    for (int i = 0; i < 7; ++i) {
      a[size_t(i)] = u(rng);
      b[size_t(i)] = u(rng);
    }
    const RegressionMetrics r = regression_metrics(a, b);
    CHECK(r.rmse >= r.mae - 1e-12);
  }
  CHECK_THROWS_AS(regression_metrics(preds, std::vector<double>{1.0}), InvalidInputError);
}

TEST_CASE("metric reports track per-example series and their means") {
  MetricReport report;
  report.task = "LaMP-7";
  report.method = "psplug";
  report.add("rouge1", 0.5);
  report.add("rouge1", 1.0);
  report.add("mae", 2.0);
  CHECK(report.mean("rouge1") == 0.75);
  CHECK(report.mean("mae") == 2.0);
  CHECK_THROWS_AS(report.mean("bleu"), InvalidInputError);

  const nlohmann::json j = report.to_json();
  CHECK(j.at("task") == "LaMP-7");
  CHECK(j.at("method") == "psplug");
  CHECK(j.at("means").at("rouge1") == 0.75);
  CHECK(j.at("per_example").at("rouge1").size() == 2);
}
