#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gnem/common.hpp"

namespace gnem {

/// Numeric codes are part of the wire format and of the level-1 codebook.
enum class ModalityTag : uint8_t { Image = 0, Text = 1, ImageText = 2 };

inline const char* modality_name(ModalityTag m) {
  switch (m) {
    case ModalityTag::Image: return "image";
    case ModalityTag::Text: return "text";
    case ModalityTag::ImageText: return "image_text";
  }
  return "?";
}

/// One candidate or query item carrying frozen-encoder features. An absent
/// feature is materialized as the zero vector at fusion time.
struct EmbeddingRecord {
  std::string id;
  ModalityTag modality = ModalityTag::Image;
  std::optional<std::vector<float>> image_feat;
  std::optional<std::vector<float>> text_feat;
  std::optional<uint8_t> instruction_tag;  // queries only

  void validate(size_t dim) const {
    auto check_dim = [&](const char* which, const std::optional<std::vector<float>>& f) {
      if (f && f->size() != dim)
        throw contract_error(detail::format_msg("record '", id, "': ", which, " has dim ",
                                                f->size(), ", pool dim is ", dim));
    };
    check_dim("image_feat", image_feat);
    check_dim("text_feat", text_feat);
    bool need_img = modality == ModalityTag::Image || modality == ModalityTag::ImageText;
    bool need_txt = modality == ModalityTag::Text || modality == ModalityTag::ImageText;
    if (need_img && !image_feat)
      throw contract_error("record '" + id + "': modality requires image_feat");
    if (need_txt && !text_feat)
      throw contract_error("record '" + id + "': modality requires text_feat");
  }
};

struct CandidatePool {
  size_t dim = 0;
  std::vector<EmbeddingRecord> records;

  size_t size() const { return records.size(); }

  void add(EmbeddingRecord rec) {
    rec.validate(dim);
    auto [it, fresh] = index_.emplace(rec.id, records.size());
    if (!fresh) throw contract_error("duplicate record id '" + rec.id + "'");
    records.push_back(std::move(rec));
  }

  const EmbeddingRecord& operator[](size_t i) const { return records[i]; }

  std::optional<size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  size_t require(const std::string& id) const {
    auto ix = find(id);
    if (!ix) throw contract_error("unknown record id '" + id + "'");
    return *ix;
  }

 private:
  std::unordered_map<std::string, size_t> index_;
};

struct QueryTargetPair {
  std::string query_id;
  std::string target_id;
  std::optional<uint8_t> instruction_tag;
};

// ---------------------------------------------------------------------------
// GNEM pool format.
//   magic "GNEM", u32 version=1, u32 dim, u64 count
//   per record: u16 id_len, id bytes, u8 modality, u8 presence flags
//               (bit0 image, bit1 text), u8 has_instruction [, u8 tag],
//               then each present feature block as f32[dim], image first.
// ---------------------------------------------------------------------------

inline constexpr char kPoolMagic[4] = {'G', 'N', 'E', 'M'};
inline constexpr uint32_t kPoolVersion = 1;

inline void save_pool(const CandidatePool& pool, const std::string& path) {
  BinWriter w(path);
  w.bytes(kPoolMagic, 4);
  w.scalar<uint32_t>(kPoolVersion);
  w.scalar<uint32_t>(uint32_t(pool.dim));
  w.scalar<uint64_t>(pool.size());
  for (const auto& r : pool.records) {
    GNEM_CHECK(r.id.size() <= UINT16_MAX, "record id too long: ", r.id.size(), " bytes");
    w.scalar<uint16_t>(uint16_t(r.id.size()));
    w.str(r.id);
    w.scalar<uint8_t>(uint8_t(r.modality));
    uint8_t flags = (r.image_feat ? 1u : 0u) | (r.text_feat ? 2u : 0u);
    w.scalar<uint8_t>(flags);
    w.scalar<uint8_t>(r.instruction_tag ? 1 : 0);
    if (r.instruction_tag) w.scalar<uint8_t>(*r.instruction_tag);
    if (r.image_feat) w.f32_array(r.image_feat->data(), pool.dim);
    if (r.text_feat) w.f32_array(r.text_feat->data(), pool.dim);
  }
  if (!w.good()) throw format_error("write failed: " + path);
}

inline CandidatePool load_pool(const std::string& path) {
  BinReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kPoolMagic, 4) != 0)
    throw format_error(detail::format_msg("bad magic in ", path, " at byte offset 0"));
  uint32_t version = r.scalar<uint32_t>();
  if (version != kPoolVersion)
    throw format_error(detail::format_msg("unsupported pool version ", version, " in ", path,
                                          " at byte offset 4"));
  CandidatePool pool;
  pool.dim = r.scalar<uint32_t>();
  uint64_t count = r.scalar<uint64_t>();
  pool.records.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    uint16_t id_len = r.scalar<uint16_t>();
    rec.id = r.str(id_len);
    uint8_t mod = r.scalar<uint8_t>();
    if (mod > 2)
      throw format_error(detail::format_msg("invalid modality ", int(mod), " in ", path,
                                            " at byte offset ", r.offset() - 1));
    rec.modality = ModalityTag(mod);
    uint8_t flags = r.scalar<uint8_t>();
    uint8_t has_tag = r.scalar<uint8_t>();
    if (has_tag) rec.instruction_tag = r.scalar<uint8_t>();
    if (flags & 1u) {
      rec.image_feat.emplace(pool.dim);
      r.f32_array(rec.image_feat->data(), pool.dim);
    }
    if (flags & 2u) {
      rec.text_feat.emplace(pool.dim);
      r.f32_array(rec.text_feat->data(), pool.dim);
    }
    pool.add(std::move(rec));
  }
  return pool;
}

// Pairs file: one record per line, whitespace-delimited
// "query_id target_id [instruction_tag]".

inline void save_pairs(const std::vector<QueryTargetPair>& pairs, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw format_error("cannot open for writing: " + path);
  for (const auto& p : pairs) {
    f << p.query_id << '\t' << p.target_id;
    if (p.instruction_tag) f << '\t' << int(*p.instruction_tag);
    f << '\n';
  }
}

inline std::vector<QueryTargetPair> load_pairs(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw format_error("cannot open for reading: " + path);
  std::vector<QueryTargetPair> pairs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    QueryTargetPair p;
    int tag;
    if (!(is >> p.query_id >> p.target_id))
      throw format_error(detail::format_msg("malformed pair at ", path, ":", lineno));
    if (is >> tag) p.instruction_tag = uint8_t(tag);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// Resolve pair ids against their pools; dangling ids are rejected.
inline std::vector<std::pair<size_t, size_t>> resolve_pairs(
    const std::vector<QueryTargetPair>& pairs, const CandidatePool& queries,
    const CandidatePool& candidates) {
  std::vector<std::pair<size_t, size_t>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.emplace_back(queries.require(p.query_id), candidates.require(p.target_id));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data with known cluster/modality ground truth.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  size_t n_clusters = 64;
  size_t items_per_cluster_per_modality = 10;
  size_t dim = 64;
  double intra_cluster_noise_sigma = 0.05;
  double query_noise_sigma = 0.1;
  uint64_t seed = 0;

  void validate() const {
    GNEM_CHECK(n_clusters >= 1 && items_per_cluster_per_modality >= 1 && dim >= 1,
               "synthetic spec counts must be >= 1");
    GNEM_CHECK(intra_cluster_noise_sigma >= 0 && query_noise_sigma >= 0,
               "synthetic spec sigmas must be >= 0");
  }
};

enum class SyntheticRole { Candidates, Queries };

struct SyntheticData {
  CandidatePool pool;
  std::unordered_map<std::string, size_t> cluster_of;  // record id -> semantic cluster
  std::vector<QueryTargetPair> pairs;                  // queries role only
};

namespace detail {
inline std::vector<float> noisy_copy(const std::vector<float>& base, double sigma, Rng& rng) {
  std::vector<float> v(base.size());
  for (size_t i = 0; i < base.size(); ++i) v[i] = float(base[i] + sigma * rng.normal());
  return v;
}
}  // namespace detail

/// Deterministic in (spec, role, n_queries, query_salt). Candidates are
/// cluster centers plus Gaussian noise, one group per (cluster, modality);
/// queries are noisy copies of sampled candidates tagged with the target's
/// modality. query_salt separates training from held-out query sets drawn
/// over the same candidates.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec, SyntheticRole role,
                                        size_t n_queries = 0, uint64_t query_salt = 0) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticData out;
  out.pool.dim = spec.dim;

  // cluster centers, one draw order shared by both roles
  std::vector<std::vector<float>> centers(spec.n_clusters);
  for (auto& c : centers) {
    c.resize(spec.dim);
    for (auto& x : c) x = float(rng.normal());
  }

  for (size_t c = 0; c < spec.n_clusters; ++c) {
    for (uint8_t m = 0; m < 3; ++m) {
      auto tag = ModalityTag(m);
      for (size_t k = 0; k < spec.items_per_cluster_per_modality; ++k) {
        EmbeddingRecord rec;
        rec.id = gnem::detail::format_msg("c", c, "_", modality_name(tag), "_", k);
        rec.modality = tag;
        if (tag != ModalityTag::Text)
          rec.image_feat = detail::noisy_copy(centers[c], spec.intra_cluster_noise_sigma, rng);
        if (tag != ModalityTag::Image)
          rec.text_feat = detail::noisy_copy(centers[c], spec.intra_cluster_noise_sigma, rng);
        out.cluster_of[rec.id] = c;
        out.pool.add(std::move(rec));
      }
    }
  }

  if (role == SyntheticRole::Candidates) return out;

  // queries: noisy copies of sampled candidates, separate pool
  SyntheticData q;
  q.pool.dim = spec.dim;
  if (n_queries == 0) n_queries = out.pool.size();
  Rng qrng = rng.fork(splitmix64(0x71c4u ^ query_salt));
  for (size_t i = 0; i < n_queries; ++i) {
    size_t tix = size_t(qrng.uniform_int(out.pool.size()));
    const auto& target = out.pool[tix];
    EmbeddingRecord rec;
    rec.id = gnem::detail::format_msg("q", query_salt, "_", i);
    rec.modality = target.modality;
    rec.instruction_tag = uint8_t(target.modality);
    if (target.image_feat)
      rec.image_feat = detail::noisy_copy(*target.image_feat, spec.query_noise_sigma, qrng);
    if (target.text_feat)
      rec.text_feat = detail::noisy_copy(*target.text_feat, spec.query_noise_sigma, qrng);
    q.cluster_of[rec.id] = out.cluster_of.at(target.id);
    q.pairs.push_back({rec.id, target.id, rec.instruction_tag});
    q.pool.add(std::move(rec));
  }
  return q;
}

/// Deterministic epoch batching: a (seed, epoch)-keyed permutation split into
/// batches, the last short batch kept.
inline std::vector<std::vector<size_t>> make_batches(size_t n, size_t batch_size,
                                                     uint64_t seed, uint64_t epoch) {
  GNEM_CHECK(batch_size >= 2, "batch_size must be >= 2 (in-batch negatives), got ",
             batch_size);
  std::vector<std::vector<size_t>> batches;
  if (n == 0) return batches;
  Rng rng(splitmix64(seed) ^ splitmix64(epoch * 0x9e3779b97f4a7c15ull + 1));
  auto perm = rng.permutation(n);
  for (size_t start = 0; start < n; start += batch_size) {
    size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace gnem
