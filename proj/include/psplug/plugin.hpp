#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psplug/backbone.hpp"
#include "psplug/binio.hpp"
#include "psplug/digest.hpp"
#include "psplug/errors.hpp"
#include "psplug/mlp.hpp"

namespace psplug {

// All trainable state: the shared system embedding, the profile projector
// (d_e -> H), the query encoder (H -> H), and the fixed embedding-scale
// factor gamma. The backbone is never part of this struct.
struct PluginParams {
  Matrix theta_sys;  // 1 x H
  Matrix g_theta;
  TwoLayerMlp pag;
  TwoLayerMlp qry;
  double gamma = 1.0;

  int hidden() const { return int(theta_sys.cols()); }
  int profile_dim() const { return pag.in_dim(); }

  // Output layers (and by default theta_sys) start at zero, so the composed
  // prefix is the zero matrix and the policy coincides with the reference at
  // step 0. theta_scale > 0 opts into a small Gaussian system embedding.
  static PluginParams init(int d_e, int hidden, double gamma, std::uint64_t seed,
                           double theta_scale = 0.0) {
    if (d_e < 1 || hidden < 1) throw ConfigError("plugin dims must be positive");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    PluginParams p;
    p.theta_sys = Matrix::Zero(1, hidden);
    if (theta_scale > 0.0) {
      std::mt19937_64 rng(seed ^ 0x5eedULL);
      std::normal_distribution<double> gauss(0.0, theta_scale);
      for (Eigen::Index j = 0; j < hidden; ++j) p.theta_sys(0, j) = gauss(rng);
    }
    p.g_theta = Matrix::Zero(1, hidden);
    p.pag = TwoLayerMlp(d_e, hidden, hidden, seed + 1);
    p.qry = TwoLayerMlp(hidden, hidden, hidden, seed + 2);
    p.gamma = gamma;
    return p;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    out.push_back({"theta_sys", &theta_sys, &g_theta, false});
    for (auto& r : pag.params("pag")) out.push_back(r);
    for (auto& r : qry.params("qry")) out.push_back(r);
    return out;
  }

  void zero_grad() {
    g_theta.setZero();
    pag.zero_grad();
    qry.zero_grad();
  }

  // Content hash over parameter values (not gradients); equal digests mean
  // bit-identical parameters.
  std::string value_digest() const {
    DigestAccumulator acc;
    auto add = [&](const Matrix& m) { acc.update_doubles({m.data(), size_t(m.size())}); };
    add(theta_sys);
    add(pag.w1);
    add(pag.b1);
    add(pag.w2);
    add(pag.b2);
    add(qry.w1);
    add(qry.b1);
    add(qry.w2);
    add(qry.b2);
    acc.update_doubles({&gamma, 1});
    return acc.hex();
  }
};

// Fixed embedding-scale factor: mean l2 norm over the embedding-table rows.
inline double compute_gamma(const Backbone& handle) {
  const int v = handle.vocab_size();
  std::vector<int> ids(static_cast<size_t>(v), 0);
  std::iota(ids.begin(), ids.end(), 0);
  Matrix table = handle.embed_tokens(ids);
  double total = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) total += table.row(i).norm();
  return total / double(v);
}

inline Vector system_vector(const PluginParams& p) {
  return p.gamma * p.theta_sys.row(0).transpose();
}

inline Vector user_vector(const PluginParams& p, const Vector& e_u) {
  if (e_u.size() != p.profile_dim()) {
    throw InvalidInputError("profile embedding dim " + std::to_string(e_u.size()) +
                            " != encoder dim " + std::to_string(p.profile_dim()));
  }
  return p.gamma * p.pag.forward(e_u);
}

// Mean-pooled input embedding h(x): order-invariant summary of the tokens,
// taken from the frozen embedding table (no gradient flows into it).
inline Vector pooled_input_embedding(const Backbone& handle, std::span<const int> input_tokens) {
  if (input_tokens.empty()) throw InvalidInputError("query pooling requires non-empty input");
  Matrix rows = handle.embed_tokens(input_tokens);
  return rows.colwise().mean().transpose();
}

inline Vector query_vector(const PluginParams& p, const Backbone& handle,
                           std::span<const int> input_tokens) {
  return p.gamma * p.qry.forward(pooled_input_embedding(handle, input_tokens));
}

// [z_sys; alpha * z_u; z_x] — exactly three rows; only the user slot scales.
inline Matrix compose_prefix(const Vector& z_sys, const Vector& z_u, const Vector& z_x,
                             double alpha) {
  if (alpha < 0.0) throw InvalidInputError("alpha must be non-negative");
  if (z_sys.size() != z_u.size() || z_u.size() != z_x.size()) {
    throw InvalidInputError("prefix slot widths differ");
  }
  Matrix prefix(3, z_sys.size());
  prefix.row(0) = z_sys.transpose();
  prefix.row(1) = alpha * z_u.transpose();
  prefix.row(2) = z_x.transpose();
  return prefix;
}

// Prefix assembly with the intermediates needed to push d(loss)/d(prefix)
// back into the plug-in parameters.
struct PrefixBuild {
  Matrix prefix;  // 3 x H
  double alpha = 1.0;
  double gamma = 1.0;
  TwoLayerMlp::Cache pag_cache;
  TwoLayerMlp::Cache qry_cache;
};

inline PrefixBuild build_prefix(const PluginParams& p, const Backbone& handle,
                                const Vector& e_u, std::span<const int> input_tokens,
                                double alpha) {
  if (alpha < 0.0) throw InvalidInputError("alpha must be non-negative");
  if (e_u.size() != p.profile_dim()) {
    throw InvalidInputError("profile embedding dim mismatch");
  }
  PrefixBuild b;
  b.alpha = alpha;
  b.gamma = p.gamma;
  Vector z_sys = system_vector(p);
  Vector z_u = p.gamma * p.pag.forward(e_u, b.pag_cache);
  Vector h = pooled_input_embedding(handle, input_tokens);
  Vector z_x = p.gamma * p.qry.forward(h, b.qry_cache);
  b.prefix = compose_prefix(z_sys, z_u, z_x, alpha);
  return b;
}

// Accumulates gradients for one sample given d(loss)/d(prefix rows).
inline void backprop_prefix(PluginParams& p, const PrefixBuild& b, const Matrix& dprefix) {
  if (dprefix.rows() != 3 || dprefix.cols() != p.hidden()) {
    throw InvalidInputError("prefix gradient must be 3 x H");
  }
  p.g_theta.row(0) += b.gamma * dprefix.row(0);
  Vector du = (b.gamma * b.alpha) * dprefix.row(1).transpose();
  p.pag.backward(b.pag_cache, du);
  Vector dx = b.gamma * dprefix.row(2).transpose();
  p.qry.backward(b.qry_cache, dx);
}

// ---------------------------------------------------------------------------
// Checkpoint container. Layout (little-endian):
//   magic "PSPC" | u16 version=1 | str backbone_id | str config_digest |
//   u32 d_e | u32 H | u32 n_entries |
//   n x { str name | u32 rows | u32 cols | f32[rows*cols] column-major } |
//   8-byte checksum (first 8 bytes of SHA-256 over everything before it)
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::string backbone_id;
  std::string config_digest;
};

namespace detail {

inline void put_tensor(std::string& out, std::string_view name, const Matrix& m) {
  put_string(out, name);
  put_u32(out, std::uint32_t(m.rows()));
  put_u32(out, std::uint32_t(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) put_f32(out, float(m(i, j)));
}

inline Matrix get_tensor(ByteReader& r) {
  std::uint32_t rows = r.get_u32();
  std::uint32_t cols = r.get_u32();
  if (std::uint64_t(rows) * cols > (std::uint64_t(1) << 26)) {
    throw CacheIntegrityError("checkpoint: unreasonable tensor size");
  }
  Matrix m(rows, cols);
  for (std::uint32_t j = 0; j < cols; ++j)
    for (std::uint32_t i = 0; i < rows; ++i) m(i, j) = double(r.get_f32());
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const PluginParams& p,
                            const CheckpointMeta& meta) {
  std::string out;
  out += "PSPC";
  put_u16(out, 1);
  put_string(out, meta.backbone_id);
  put_string(out, meta.config_digest);
  put_u32(out, std::uint32_t(p.profile_dim()));
  put_u32(out, std::uint32_t(p.hidden()));
  const std::pair<std::string_view, const Matrix*> entries[] = {
      {"theta_sys", &p.theta_sys}, {"pag.w1", &p.pag.w1}, {"pag.b1", &p.pag.b1},
      {"pag.w2", &p.pag.w2},       {"pag.b2", &p.pag.b2}, {"qry.w1", &p.qry.w1},
      {"qry.b1", &p.qry.b1},       {"qry.w2", &p.qry.w2}, {"qry.b2", &p.qry.b2},
  };
  Matrix gamma_m(1, 1);
  gamma_m(0, 0) = p.gamma;
  put_u32(out, std::uint32_t(std::size(entries)) + 1);
  for (const auto& [name, m] : entries) detail::put_tensor(out, name, *m);
  detail::put_tensor(out, "gamma", gamma_m);
  Checksum8 sum = checksum8(out);
  out.append(reinterpret_cast<const char*>(sum.data()), sum.size());
  atomic_write_file(path, out);
}

inline std::pair<PluginParams, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  if (!bytes) throw DataError("checkpoint not found: " + path.string());
  if (bytes->size() < 4 + 2 + 8) throw CacheIntegrityError("checkpoint: file too short");
  const std::string body = bytes->substr(0, bytes->size() - 8);
  Checksum8 expect = checksum8(body);
  if (!std::equal(expect.begin(), expect.end(),
                  reinterpret_cast<const unsigned char*>(bytes->data() + body.size()))) {
    throw CacheIntegrityError("checkpoint: checksum mismatch in " + path.string());
  }
  ByteReader r(body, "checkpoint");
  if (r.take(4) != "PSPC") throw CacheIntegrityError("checkpoint: bad magic");
  if (r.get_u16() != 1) throw CacheIntegrityError("checkpoint: unsupported version");
  CheckpointMeta meta;
  meta.backbone_id = r.get_string();
  meta.config_digest = r.get_string();
  const std::uint32_t d_e = r.get_u32();
  const std::uint32_t hidden = r.get_u32();
  const std::uint32_t n = r.get_u32();

  std::map<std::string, Matrix> tensors;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    tensors[name] = detail::get_tensor(r);
  }
  if (!r.at_end()) throw CacheIntegrityError("checkpoint: trailing bytes");

  auto need = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> Matrix& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CacheIntegrityError("checkpoint: missing entry " + name);
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw CacheIntegrityError("checkpoint: entry " + name + " has wrong shape");
    }
    return it->second;
  };

  PluginParams p;
  auto it = tensors.find("pag.w1");
  if (it == tensors.end()) throw CacheIntegrityError("checkpoint: missing entry pag.w1");
  const Eigen::Index width = it->second.cols();  // projector hidden width
  p.theta_sys = need("theta_sys", 1, Eigen::Index(hidden));
  p.pag.w1 = need("pag.w1", Eigen::Index(d_e), width);
  p.pag.b1 = need("pag.b1", 1, width);
  p.pag.w2 = need("pag.w2", width, Eigen::Index(hidden));
  p.pag.b2 = need("pag.b2", 1, Eigen::Index(hidden));
  const Eigen::Index qwidth = tensors.count("qry.w1") ? tensors["qry.w1"].cols() : width;
  p.qry.w1 = need("qry.w1", Eigen::Index(hidden), qwidth);
  p.qry.b1 = need("qry.b1", 1, qwidth);
  p.qry.w2 = need("qry.w2", qwidth, Eigen::Index(hidden));
  p.qry.b2 = need("qry.b2", 1, Eigen::Index(hidden));
  p.gamma = need("gamma", 1, 1)(0, 0);
  if (!(p.gamma > 0.0)) throw CacheIntegrityError("checkpoint: non-positive gamma");
  p.g_theta = Matrix::Zero(1, Eigen::Index(hidden));
  p.pag.zero_grad();
  p.qry.zero_grad();
  return {std::move(p), std::move(meta)};
}

}  // namespace psplug
