#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psplug/binio.hpp"
#include "psplug/digest.hpp"
#include "psplug/encoders.hpp"
#include "psplug/errors.hpp"
#include "psplug/tasks.hpp"
#include "psplug/text.hpp"

namespace psplug {

struct UserRecord {
  std::string user_id;
  Task task = Task::lamp7;
  std::vector<HistoryItem> history;  // oldest first
};

struct ProfileDescriptor {
  std::string user_id;
  std::string text;  // p_u
  int source_item_count = 0;
  std::string summarizer_id;
};

struct ProfileEmbedding {
  std::string user_id;
  Vector e_u;  // unit l2 norm
  std::string encoder_id;
};

// Renders the first min(k, |items|) items with the task's per-item template,
// one item per line block, joined by newlines.
inline std::string format_history(Task task, std::span<const HistoryItem> items, int k) {
  if (items.empty()) throw InvalidInputError("cannot format an empty history");
  if (k < 1) throw InvalidInputError("history sample size k must be >= 1");
  const TaskSpec& spec = task_spec(task);
  const size_t n = std::min(size_t(k), items.size());
  std::string out;
  for (size_t i = 0; i < n; ++i) {
    if (i > 0) out += '\n';
    out += render_history_item(spec, items[i]);
  }
  return out;
}

// Builds the PAG text descriptor p_u: the k most recent history items are
// rendered into the task's profile-generation prompt (its "{}" slot) and the
// summarizer is invoked once, greedily.
inline ProfileDescriptor build_profile(const UserRecord& record, const TextGenerator& summarizer,
                                       int k = 10) {
  if (record.history.empty()) {
    throw InvalidInputError("user " + record.user_id + " has no history to profile");
  }
  if (k < 1) throw InvalidInputError("history sample size k must be >= 1");
  const size_t take = std::min(size_t(k), record.history.size());
  std::span<const HistoryItem> recent(record.history.data() + (record.history.size() - take),
                                      take);
  const std::string history_text = format_history(record.task, recent, int(take));
  const TaskSpec& spec = task_spec(record.task);
  const std::string prompt = replace_all(spec.pag_prompt, "{}", history_text);

  std::string text;
  try {
    text = trim(summarizer.generate(prompt));
  } catch (const TransportError& e) {
    throw TransportError("profile summarization failed for user " + record.user_id + ": " +
                         e.what());
  }
  if (text.empty()) {
    throw InvalidProfileError("summarizer returned empty profile for user " + record.user_id);
  }
  ProfileDescriptor out;
  out.user_id = record.user_id;
  out.text = text;
  out.source_item_count = int(take);
  out.summarizer_id = summarizer.id();
  return out;
}

// e_u = normalize(E(p_u)); the encoder stays frozen, only the direction of
// its output is kept.
inline ProfileEmbedding encode_profile(const ProfileDescriptor& descriptor,
                                       const SentenceEncoder& encoder, int expected_dim) {
  if (descriptor.text.empty()) throw InvalidInputError("cannot encode an empty profile");
  if (encoder.dim() != expected_dim) {
    throw ConfigError("encoder dim " + std::to_string(encoder.dim()) +
                      " != configured profile dim " + std::to_string(expected_dim));
  }
  Vector v = encoder.encode(descriptor.text);
  if (v.size() != expected_dim) {
    throw ConfigError("encoder returned " + std::to_string(v.size()) + " dims, expected " +
                      std::to_string(expected_dim));
  }
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InvalidProfileError("profile embedding for user " + descriptor.user_id +
                              " is degenerate (zero or non-finite norm)");
  }
  ProfileEmbedding out;
  out.user_id = descriptor.user_id;
  out.e_u = v / norm;
  out.encoder_id = encoder.id();
  return out;
}

// One cache file per user:
//   magic "PSPG" | u16 version=1 | u32 d_e | f32[d_e] | 8-byte checksum
// where the checksum is the first 8 bytes of SHA-256 over the f32 payload.
// Writes are atomic; a plain-text sidecar holds the descriptor verbatim.
class ProfileStore {
 public:
  explicit ProfileStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path cache_path(std::string_view user_id) const {
    return dir_ / (file_stem(user_id) + ".pspg");
  }
  std::filesystem::path sidecar_path(std::string_view user_id) const {
    return dir_ / (file_stem(user_id) + ".profile.txt");
  }

  bool contains(std::string_view user_id) const {
    return std::filesystem::exists(cache_path(user_id));
  }

  void put(const ProfileEmbedding& embedding, std::string_view descriptor_text = {}) {
    if (std::abs(embedding.e_u.norm() - 1.0) > 1e-6) {
      throw InvalidInputError("refusing to cache non-normalized profile for user " +
                              embedding.user_id);
    }
    std::string payload;
    for (Eigen::Index i = 0; i < embedding.e_u.size(); ++i) {
      put_f32(payload, float(embedding.e_u(i)));
    }
    std::string out;
    out += "PSPG";
    put_u16(out, 1);
    put_u32(out, std::uint32_t(embedding.e_u.size()));
    out += payload;
    Checksum8 sum = checksum8(payload);
    out.append(reinterpret_cast<const char*>(sum.data()), sum.size());
    atomic_write_file(cache_path(embedding.user_id), out);
    if (!descriptor_text.empty()) {
      atomic_write_file(sidecar_path(embedding.user_id), descriptor_text);
    }
  }

  // Missing entry is not an error; a present-but-damaged one is.
  std::optional<ProfileEmbedding> get(std::string_view user_id) const {
    auto bytes = read_file_bytes(cache_path(user_id));
    if (!bytes) return std::nullopt;
    ByteReader r(*bytes, "profile cache " + std::string(user_id));
    if (r.remaining() < 4 || r.take(4) != "PSPG") {
      throw CacheIntegrityError("profile cache for " + std::string(user_id) + ": bad magic");
    }
    if (r.get_u16() != 1) {
      throw CacheIntegrityError("profile cache for " + std::string(user_id) +
                                ": unsupported version");
    }
    const std::uint32_t d_e = r.get_u32();
    if (d_e == 0 || d_e > (1u << 24)) {
      throw CacheIntegrityError("profile cache for " + std::string(user_id) +
                                ": unreasonable dimension");
    }
    std::string_view payload = r.take(size_t(d_e) * 4);
    Checksum8 expect = checksum8(payload);
    std::string_view sum = r.take(8);
    if (!r.at_end()) {
      throw CacheIntegrityError("profile cache for " + std::string(user_id) +
                                ": trailing bytes");
    }
    if (!std::equal(expect.begin(), expect.end(),
                    reinterpret_cast<const unsigned char*>(sum.data()))) {
      throw CacheIntegrityError("profile cache for " + std::string(user_id) +
                                ": checksum mismatch");
    }
    ByteReader pr(payload, "profile payload " + std::string(user_id));
    ProfileEmbedding out;
    out.user_id = std::string(user_id);
    out.e_u.resize(Eigen::Index(d_e));
    for (std::uint32_t i = 0; i < d_e; ++i) out.e_u(Eigen::Index(i)) = double(pr.get_f32());
    return out;
  }

 private:
  // Literal user id when it is already a safe file stem; otherwise a
  // sanitized form plus a short content hash to keep distinct ids distinct.
  static std::string file_stem(std::string_view user_id) {
    std::string safe;
    bool changed = user_id.empty();
    for (char c : user_id) {
      const bool ok = is_word_char(static_cast<unsigned char>(c)) || c == '-' || c == '.';
      safe.push_back(ok ? c : '_');
      changed = changed || !ok;
    }
    if (!changed) return safe;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(user_id)));
    return safe + "-" + buf;
  }

  std::filesystem::path dir_;
};

}  // namespace psplug
