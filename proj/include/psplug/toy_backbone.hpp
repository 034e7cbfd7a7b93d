#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psplug/backbone.hpp"
#include "psplug/digest.hpp"
#include "psplug/errors.hpp"

namespace psplug {

// Byte-level tokenizer over printable ASCII: id 0 is EOS, bytes 32..126 map
// to ids 1..95. Ids 96..vocab-1 are reserved padding so the vocab size can
// exceed the charset; detokenize drops them along with EOS.
class CharTokenizer {
 public:
  static constexpr int kEos = 0;
  static constexpr int kFirstByte = 32;
  static constexpr int kLastByte = 126;
  static constexpr int kMinVocab = 96;  // EOS + 95 printable chars

  explicit CharTokenizer(int vocab_size = 98) : vocab_(vocab_size) {
    if (vocab_ < kMinVocab) {
      throw ConfigError("vocab size must be >= " + std::to_string(kMinVocab));
    }
  }

  int vocab_size() const { return vocab_; }
  int eos_id() const { return kEos; }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
      if (c < kFirstByte || c > kLastByte) {
        throw InvalidInputError("unencodable byte " + std::to_string(int(c)) +
                                " in text (printable ASCII only)");
      }
      ids.push_back(1 + (c - kFirstByte));
    }
    return ids;
  }

  std::string detokenize(std::span<const int> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int id : tokens) {
      if (id < 0 || id >= vocab_) {
        throw InvalidInputError("token id " + std::to_string(id) + " out of range");
      }
      if (id == kEos || id > 95) continue;
      out.push_back(static_cast<char>(kFirstByte + id - 1));
    }
    return out;
  }

 private:
  int vocab_;
};

// Small frozen decoder-only transformer used as the default backbone: learned
// token + positional embeddings, pre-RMSNorm blocks with single-head causal
// attention and a SiLU MLP, logits tied to the embedding table. Weights are
// drawn once from a seeded generator and never updated; the analytic
// backward pass only reports gradients w.r.t. the input rows so a learned
// prefix can be trained through the frozen stack.
class ToyBackbone final : public Backbone {
 public:
  struct Config {
    int vocab = 98;
    int hidden = 24;
    int layers = 2;
    int max_seq = 256;
    std::uint64_t seed = 1234;
    double weight_scale = 0.1;
  };

  explicit ToyBackbone(const Config& cfg)
      : cfg_(cfg), tokenizer_(cfg.vocab), ffn_(4 * cfg.hidden) {
    if (cfg_.hidden < 1 || cfg_.layers < 1 || cfg_.max_seq < 1) {
      throw ConfigError("toy backbone dims must be positive");
    }
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> gauss(0.0, cfg_.weight_scale);
    auto fill = [&](Matrix& m, Eigen::Index r, Eigen::Index c) {
      m.resize(r, c);
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = gauss(rng);
    };
    fill(emb_, cfg_.vocab, cfg_.hidden);
    fill(pos_, cfg_.max_seq, cfg_.hidden);
    layers_.resize(cfg_.layers);
    for (Layer& l : layers_) {
      l.g_attn = Vector::Ones(cfg_.hidden);
      fill(l.wq, cfg_.hidden, cfg_.hidden);
      fill(l.wk, cfg_.hidden, cfg_.hidden);
      fill(l.wv, cfg_.hidden, cfg_.hidden);
      fill(l.wo, cfg_.hidden, cfg_.hidden);
      l.g_mlp = Vector::Ones(cfg_.hidden);
      fill(l.w1, cfg_.hidden, ffn_);
      fill(l.w2, ffn_, cfg_.hidden);
    }
    g_final_ = Vector::Ones(cfg_.hidden);
  }

  int vocab_size() const override { return cfg_.vocab; }
  int hidden_dim() const override { return cfg_.hidden; }
  int eos_id() const override { return tokenizer_.eos_id(); }
  int max_context() const override { return cfg_.max_seq; }
  const Matrix& embedding_table() const { return emb_; }

  std::string parameter_digest() const override {
    DigestAccumulator acc;
    const std::int64_t hdr[] = {cfg_.vocab, cfg_.hidden, cfg_.layers, cfg_.max_seq};
    acc.update(hdr, sizeof(hdr));
    auto add = [&](const Matrix& m) {
      acc.update_doubles({m.data(), size_t(m.size())});
    };
    auto addv = [&](const Vector& v) {
      acc.update_doubles({v.data(), size_t(v.size())});
    };
    add(emb_);
    add(pos_);
    for (const Layer& l : layers_) {
      addv(l.g_attn);
      add(l.wq);
      add(l.wk);
      add(l.wv);
      add(l.wo);
      addv(l.g_mlp);
      add(l.w1);
      add(l.w2);
    }
    addv(g_final_);
    return acc.hex();
  }

  std::vector<int> tokenize(std::string_view text) const override {
    return tokenizer_.tokenize(text);
  }
  std::string detokenize(std::span<const int> tokens) const override {
    return tokenizer_.detokenize(tokens);
  }

  Matrix embed_tokens(std::span<const int> tokens) const override {
    Matrix out(tokens.size(), cfg_.hidden);
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] < 0 || tokens[i] >= cfg_.vocab) {
        throw InvalidInputError("token id " + std::to_string(tokens[i]) + " out of range");
      }
      out.row(Eigen::Index(i)) = emb_.row(tokens[i]);
    }
    return out;
  }

  Matrix forward_logits(const Matrix& rows) const override {
    Trace t;
    return run_forward(rows, t);
  }

  Matrix backward_to_rows(const Matrix& rows, const Matrix& dlogits) const override {
    Trace t;
    t.keep = true;
    Matrix logits = run_forward(rows, t);
    if (dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols()) {
      throw InvalidInputError("dlogits shape mismatch");
    }
    const double inv_sqrt_h = 1.0 / std::sqrt(double(cfg_.hidden));

    // logits = Xf * E^T
    Matrix dxf = dlogits * emb_;
    Matrix dx = rmsnorm_bwd(t.x_final, g_final_, t.ir_final, dxf);

    for (int li = cfg_.layers - 1; li >= 0; --li) {
      const Layer& l = layers_[li];
      const LayerTrace& lt = t.layer[li];

      // MLP branch: x_out = x_mid + silu(rmsnorm(x_mid) * W1) * W2
      Matrix dz = dx * l.w2.transpose();
      Matrix du = dz.cwiseProduct(silu_grad(lt.u));
      Matrix dyn = du * l.w1.transpose();
      dx += rmsnorm_bwd(lt.x_mid, l.g_mlp, lt.ir_mlp, dyn);

      // Attention branch: x_mid = x_in + (A * V) * Wo
      Matrix dc = dx * l.wo.transpose();
      Matrix da = dc * lt.v.transpose();
      Matrix dv = lt.a.transpose() * dc;
      Matrix ds(da.rows(), da.cols());
      for (Eigen::Index i = 0; i < da.rows(); ++i) {
        const double dot = lt.a.row(i).dot(da.row(i));
        ds.row(i) = lt.a.row(i).cwiseProduct((da.row(i).array() - dot).matrix());
      }
      Matrix dq = ds * lt.k * inv_sqrt_h;
      Matrix dk = ds.transpose() * lt.q * inv_sqrt_h;
      Matrix dxn = dq * l.wq.transpose() + dk * l.wk.transpose() + dv * l.wv.transpose();
      dx += rmsnorm_bwd(lt.x_in, l.g_attn, lt.ir_attn, dxn);
    }
    // Positional embeddings are additive constants, so d(rows) = dx directly.
    return dx;
  }

 private:
  static constexpr double kEps = 1e-6;

  struct Layer {
    Vector g_attn;
    Matrix wq, wk, wv, wo;
    Vector g_mlp;
    Matrix w1, w2;
  };

  struct LayerTrace {
    Matrix x_in, q, k, v, a, x_mid, u;
    Vector ir_attn, ir_mlp;
  };

  struct Trace {
    bool keep = false;
    std::vector<LayerTrace> layer;
    Matrix x_final;
    Vector ir_final;
  };

  // y_i = x_i * g_i / rms(x); returns per-row 1/rms when ir is non-null.
  static Matrix rmsnorm_fwd(const Matrix& x, const Vector& g, Vector* ir) {
    Matrix y(x.rows(), x.cols());
    if (ir != nullptr) ir->resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double ms = x.row(i).squaredNorm() / double(x.cols());
      const double inv = 1.0 / std::sqrt(ms + kEps);
      y.row(i) = (x.row(i).array() * g.transpose().array()) * inv;
      if (ir != nullptr) (*ir)(i) = inv;
    }
    return y;
  }

  // dx_j = g_j dy_j / r - x_j (sum_k dy_k g_k x_k) / (H r^3)
  static Matrix rmsnorm_bwd(const Matrix& x, const Vector& g, const Vector& ir,
                            const Matrix& dy) {
    Matrix dx(x.rows(), x.cols());
    const double inv_h = 1.0 / double(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::RowVectorXd gdy = dy.row(i).cwiseProduct(g.transpose());
      const double dot = gdy.dot(x.row(i));
      const double r1 = ir(i);
      dx.row(i) = gdy * r1 - x.row(i) * (dot * inv_h * r1 * r1 * r1);
    }
    return dx;
  }

  static Matrix silu(const Matrix& z) {
    return z.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
  }

  static Matrix silu_grad(const Matrix& z) {
    return z.unaryExpr([](double v) {
      const double s = 1.0 / (1.0 + std::exp(-v));
      return s * (1.0 + v * (1.0 - s));
    });
  }

  Matrix run_forward(const Matrix& rows, Trace& t) const {
    const Eigen::Index n = rows.rows();
    if (n < 1) throw InvalidInputError("forward requires at least one row");
    if (rows.cols() != cfg_.hidden) throw InvalidInputError("row width must equal hidden dim");
    if (n > cfg_.max_seq) {
      throw InvalidInputError("sequence length " + std::to_string(n) +
                              " exceeds max_seq " + std::to_string(cfg_.max_seq));
    }
    const double inv_sqrt_h = 1.0 / std::sqrt(double(cfg_.hidden));
    if (t.keep) t.layer.resize(size_t(cfg_.layers));

    Matrix x = rows + pos_.topRows(n);
    for (int li = 0; li < cfg_.layers; ++li) {
      const Layer& l = layers_[li];
      LayerTrace scratch;
      LayerTrace& lt = t.keep ? t.layer[size_t(li)] : scratch;

      if (t.keep) lt.x_in = x;
      Matrix xn = rmsnorm_fwd(x, l.g_attn, t.keep ? &lt.ir_attn : nullptr);
      Matrix q = xn * l.wq;
      Matrix k = xn * l.wk;
      Matrix v = xn * l.wv;
      Matrix s = q * k.transpose() * inv_sqrt_h;
      Matrix a = Matrix::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        // Causal: row i attends to columns 0..i only.
        double m = s.row(i).head(i + 1).maxCoeff();
        double denom = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(s(i, j) - m);
          denom += a(i, j);
        }
        a.row(i).head(i + 1) /= denom;
      }
      x += (a * v) * l.wo;
      if (t.keep) {
        lt.q = std::move(q);
        lt.k = std::move(k);
        lt.v = std::move(v);
        lt.a = std::move(a);
        lt.x_mid = x;
      }

      Matrix yn = rmsnorm_fwd(x, l.g_mlp, t.keep ? &lt.ir_mlp : nullptr);
      Matrix u = yn * l.w1;
      x += silu(u) * l.w2;
      if (t.keep) lt.u = std::move(u);
    }

    if (t.keep) t.x_final = x;
    Matrix xf = rmsnorm_fwd(x, g_final_, t.keep ? &t.ir_final : nullptr);
    return xf * emb_.transpose();
  }

  Config cfg_;
  CharTokenizer tokenizer_;
  int ffn_;
  Matrix emb_, pos_;
  std::vector<Layer> layers_;
  Vector g_final_;
};

inline std::shared_ptr<ToyBackbone> make_toy_backbone(const ToyBackbone::Config& cfg = {}) {
  return std::make_shared<ToyBackbone>(cfg);
}

}  // namespace psplug
