#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psplug/errors.hpp"

namespace psplug {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DecodingConfig {
  enum class Mode { greedy };
  Mode mode = Mode::greedy;
  int max_new_tokens = 48;
  double temperature = 0.0;  // only 0.0 (deterministic) is supported
};

// Teacher-forced score of a response: natural-log probabilities per token,
// summed without length normalization.
struct ScoredSequence {
  std::vector<int> token_ids;
  std::vector<double> per_token_logprob;
  double total_logprob = 0.0;
};

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
  return m + std::log(s);
}

// Frozen language model handle. Implementations provide the primitives
// (tokenize, embed_tokens, forward-from-embeddings -> logits); scoring and
// greedy generation are shared algorithms built on top of them, so every
// backbone — the bundled toy transformer or an external adapter — scores and
// decodes identically.
//
// Scoring and generation are read-only over backbone parameters; a handle
// may be shared across threads.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual int vocab_size() const = 0;
  virtual int hidden_dim() const = 0;
  virtual int eos_id() const = 0;
  // Longest row sequence forward_logits accepts.
  virtual int max_context() const { return 1 << 20; }
  // Content hash over all frozen parameters; must be byte-identical before
  // and after any training run.
  virtual std::string parameter_digest() const = 0;

  virtual std::vector<int> tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(std::span<const int> tokens) const = 0;

  // Row i is the input embedding of tokens[i]; shape n x H.
  virtual Matrix embed_tokens(std::span<const int> tokens) const = 0;

  // Next-token logits for a full row sequence (prefix vectors followed by
  // token embeddings); shape n x V.
  virtual Matrix forward_logits(const Matrix& rows) const = 0;

  // d(objective)/d(rows) given d(objective)/d(logits). Optional: adapters
  // that only serve inference may leave this unimplemented.
  virtual Matrix backward_to_rows(const Matrix& rows, const Matrix& dlogits) const {
    (void)rows;
    (void)dlogits;
    throw InvalidInputError("backbone does not support gradient computation");
  }

  // log pi(response | [prefix; Emb(input)]), teacher forced. An empty prefix
  // (m = 0) gives exactly the reference score log pi_ref(response | input).
  // When prefix_grad is non-null and m > 0 it receives
  // d(total_logprob)/d(prefix); backbone parameters never receive gradients.
  ScoredSequence score_with_prefix(const Matrix& prefix, std::span<const int> input_tokens,
                                   std::span<const int> response_tokens,
                                   Matrix* prefix_grad = nullptr) const {
    const int m = prefix.size() == 0 ? 0 : static_cast<int>(prefix.rows());
    if (m > 0 && prefix.cols() != hidden_dim()) {
      throw InvalidInputError("prefix width " + std::to_string(prefix.cols()) +
                              " does not match hidden dim " + std::to_string(hidden_dim()));
    }
    if (response_tokens.empty()) throw InvalidInputError("response must be non-empty");
    const int nx = static_cast<int>(input_tokens.size());
    const int ny = static_cast<int>(response_tokens.size());
    if (m + nx == 0) throw InvalidInputError("empty context: need a prefix or input tokens");

    const int n = m + nx + ny;
    Matrix rows(n, hidden_dim());
    if (m > 0) rows.topRows(m) = prefix;
    if (nx > 0) rows.middleRows(m, nx) = embed_tokens(input_tokens);
    rows.bottomRows(ny) = embed_tokens(response_tokens);

    Matrix logits = forward_logits(rows);

    ScoredSequence out;
    out.token_ids.assign(response_tokens.begin(), response_tokens.end());
    out.per_token_logprob.resize(ny);
    for (int j = 0; j < ny; ++j) {
      const int r = m + nx - 1 + j;
      const double lse = log_sum_exp(logits.row(r).transpose());
      const double lp = logits(r, response_tokens[j]) - lse;
      out.per_token_logprob[j] = std::min(lp, 0.0);
      out.total_logprob += out.per_token_logprob[j];
    }

    if (prefix_grad != nullptr && m > 0) {
      Matrix dlogits = Matrix::Zero(n, vocab_size());
      for (int j = 0; j < ny; ++j) {
        const int r = m + nx - 1 + j;
        Vector p = softmax_row(logits.row(r).transpose());
        dlogits.row(r) = -p.transpose();
        dlogits(r, response_tokens[j]) += 1.0;
      }
      *prefix_grad = backward_to_rows(rows, dlogits).topRows(m);
    }
    return out;
  }

  // Greedy continuation of [prefix; Emb(input)]. Emits the EOS id and stops;
  // otherwise stops after max_new_tokens. Ties break toward the lowest id.
  std::vector<int> generate(const Matrix& prefix, std::span<const int> input_tokens,
                            const DecodingConfig& cfg) const {
    if (cfg.max_new_tokens < 1) throw InvalidInputError("max_new_tokens must be >= 1");
    if (cfg.temperature != 0.0) throw InvalidInputError("only temperature 0.0 is supported");
    const int m = prefix.size() == 0 ? 0 : static_cast<int>(prefix.rows());
    if (m > 0 && prefix.cols() != hidden_dim()) {
      throw InvalidInputError("prefix width does not match hidden dim");
    }
    const int nx = static_cast<int>(input_tokens.size());
    if (m + nx == 0) throw InvalidInputError("empty context: need a prefix or input tokens");

    Matrix rows(m + nx, hidden_dim());
    if (m > 0) rows.topRows(m) = prefix;
    if (nx > 0) rows.bottomRows(nx) = embed_tokens(input_tokens);

    std::vector<int> out;
    out.reserve(cfg.max_new_tokens);
    for (int step = 0; step < cfg.max_new_tokens; ++step) {
      Matrix logits = forward_logits(rows);
      Eigen::Index best = 0;
      logits.row(logits.rows() - 1).maxCoeff(&best);
      const int tok = static_cast<int>(best);
      out.push_back(tok);
      if (tok == eos_id()) break;
      const int one[] = {tok};
      rows.conservativeResize(rows.rows() + 1, Eigen::NoChange);
      rows.row(rows.rows() - 1) = embed_tokens(std::span<const int>(one, 1)).row(0);
    }
    return out;
  }

  static Vector softmax_row(const Eigen::Ref<const Vector>& v) {
    Vector p = (v.array() - v.maxCoeff()).exp();
    return p / p.sum();
  }
};

inline Matrix empty_prefix() { return Matrix(0, 0); }

}  // namespace psplug
