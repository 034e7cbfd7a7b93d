#pragma once

#include <algorithm>
#include <cctype>
#include <memory>
#include <string>
#include <string_view>

#include "psplug/backbone.hpp"
#include "psplug/digest.hpp"
#include "psplug/errors.hpp"
#include "psplug/text.hpp"

namespace psplug {

// Frozen sentence encoder: text -> fixed-width vector. Output is NOT
// normalized here; profile encoding applies the l2 normalization itself.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual int dim() const = 0;
  virtual int max_input_tokens() const = 0;
  virtual std::string id() const = 0;
  virtual Vector encode(std::string_view text) const = 0;
};

// Deterministic bag-of-words stand-in for a neural sentence encoder: each
// word hashes to a signed bucket. Distinct texts map to distinct directions
// with high probability, which is all the desk-scale pipeline needs from an
// encoder; swap in a real client behind the same interface for live runs.
class HashingEncoder final : public SentenceEncoder {
 public:
  explicit HashingEncoder(int dim = 768, int max_tokens = 4096)
      : dim_(dim), max_tokens_(max_tokens) {
    if (dim_ < 2) throw ConfigError("encoder dim must be >= 2");
    if (max_tokens_ < 1) throw ConfigError("encoder max tokens must be >= 1");
  }

  int dim() const override { return dim_; }
  int max_input_tokens() const override { return max_tokens_; }
  std::string id() const override {
    return "hashing-bow-d" + std::to_string(dim_) + "-m" + std::to_string(max_tokens_);
  }

  Vector encode(std::string_view text) const override {
    Vector v = Vector::Zero(dim_);
    auto words = word_tokenize(text);
    if (int(words.size()) > max_tokens_) words.resize(size_t(max_tokens_));  // hard truncation
    for (const std::string& w : words) {
      const std::uint64_t h = fnv1a64(w);
      const auto bucket = Eigen::Index(h % std::uint64_t(dim_));
      const double sign = ((h >> 63) & 1u) ? -1.0 : 1.0;
      v(bucket) += sign;
    }
    return v;
  }

 private:
  int dim_;
  int max_tokens_;
};

// Greedy text-generation client used for PAG profile summarization.
class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string id() const = 0;
  virtual std::string generate(std::string_view prompt) const = 0;
};

// Deterministic extractive stand-in for an instruction-tuned summarizer:
// echoes the first max_words words of the prompt's history block. Keeps the
// profile text a pure function of the user's history.
class ExtractiveSummarizer final : public TextGenerator {
 public:
  explicit ExtractiveSummarizer(int max_words = 64) : max_words_(max_words) {
    if (max_words_ < 1) throw ConfigError("summarizer max words must be >= 1");
  }

  std::string id() const override { return "extractive-w" + std::to_string(max_words_); }

  std::string generate(std::string_view prompt) const override {
    std::string_view body = prompt;
    const size_t hist = body.find("User History:");
    if (hist != std::string_view::npos) body = body.substr(hist + 13);
    const size_t answer = body.rfind("Answer:");
    if (answer != std::string_view::npos) body = body.substr(0, answer);
    std::string out;
    int words = 0;
    bool in_word = false;
    for (char c : body) {
      const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
      if (space && in_word) {
        if (++words == max_words_) break;
        in_word = false;
      } else if (!space) {
        in_word = true;
      }
      out.push_back(space ? ' ' : c);
    }
    return trim(normalize_whitespace(out));
  }

 private:
  int max_words_;
};

// Summarizer that actually runs the backbone greedily on the (ASCII-folded)
// prompt. Output quality is whatever the backbone gives; determinism and the
// interface contract are what matter at desk scale.
class BackboneSummarizer final : public TextGenerator {
 public:
  BackboneSummarizer(std::shared_ptr<const Backbone> backbone, DecodingConfig cfg)
      : backbone_(std::move(backbone)), cfg_(cfg) {
    if (backbone_ == nullptr) throw ConfigError("summarizer needs a backbone");
  }

  std::string id() const override {
    return "backbone-greedy:" + backbone_->parameter_digest().substr(0, 12);
  }

  std::string generate(std::string_view prompt) const override {
    std::string folded = ascii_fold(prompt);
    auto tokens = backbone_->tokenize(folded);
    // Stay inside the context window, keeping the most recent text.
    const size_t room = size_t(std::max(1, backbone_->max_context() - cfg_.max_new_tokens));
    if (tokens.size() > room) tokens.erase(tokens.begin(), tokens.end() - long(room));
    auto out = backbone_->generate(empty_prefix(), tokens, cfg_);
    return backbone_->detokenize(out);
  }

 private:
  std::shared_ptr<const Backbone> backbone_;
  DecodingConfig cfg_;
};

}  // namespace psplug
