#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>

#include "gnem/data.hpp"

using namespace gnem;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

CandidatePool random_pool(Rng& rng, size_t dim, size_t count) {
  CandidatePool pool;
  pool.dim = dim;
  for (size_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.id = "item_" + std::to_string(i);
    r.modality = ModalityTag(rng.uniform_int(3));
    auto fill = [&] {
      std::vector<float> v(dim);
      for (auto& x : v) x = float(rng.normal());
      return v;
    };
    if (r.modality != ModalityTag::Text) r.image_feat = fill();
    if (r.modality != ModalityTag::Image) r.text_feat = fill();
    if (rng.uniform() < 0.5) r.instruction_tag = uint8_t(rng.uniform_int(3));
    pool.add(std::move(r));
  }
  return pool;
}

bool pools_equal(const CandidatePool& a, const CandidatePool& b) {
  if (a.dim != b.dim || a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto &ra = a[i], &rb = b[i];
    if (ra.id != rb.id || ra.modality != rb.modality) return false;
    if (ra.instruction_tag != rb.instruction_tag) return false;
    if (ra.image_feat.has_value() != rb.image_feat.has_value()) return false;
    if (ra.text_feat.has_value() != rb.text_feat.has_value()) return false;
    if (ra.image_feat && *ra.image_feat != *rb.image_feat) return false;
    if (ra.text_feat && *ra.text_feat != *rb.text_feat) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pool roundtrip: three records") {
  Rng rng(1);
  auto pool = random_pool(rng, 8, 3);
  auto path = temp_path("gnem_pool3.bin");
  save_pool(pool, path);
  auto loaded = load_pool(path);
  REQUIRE(pools_equal(pool, loaded));
  std::remove(path.c_str());
}

TEST_CASE("pool roundtrip: 1000 random pools bit-exactly") {
  Rng rng(42);
  auto path = temp_path("gnem_pool_rt.bin");
  for (int i = 0; i < 1000; ++i) {
    auto pool = random_pool(rng, 1 + rng.uniform_int(6), rng.uniform_int(5));
    save_pool(pool, path);
    REQUIRE(pools_equal(pool, load_pool(path)));
  }
  std::remove(path.c_str());
}

TEST_CASE("empty pool loads without error") {
  CandidatePool pool;
  pool.dim = 16;
  auto path = temp_path("gnem_pool_empty.bin");
  save_pool(pool, path);
  auto loaded = load_pool(path);
  REQUIRE(loaded.size() == 0);
  REQUIRE(loaded.dim == 16);
  std::remove(path.c_str());
}

TEST_CASE("image-modality record with text flag clear has no text_feat") {
  CandidatePool pool;
  pool.dim = 4;
  EmbeddingRecord r;
  r.id = "img";
  r.modality = ModalityTag::Image;
  r.image_feat = std::vector<float>{1, 2, 3, 4};
  pool.add(std::move(r));
  auto path = temp_path("gnem_pool_img.bin");
  save_pool(pool, path);
  auto loaded = load_pool(path);
  REQUIRE(loaded[0].image_feat.has_value());
  REQUIRE_FALSE(loaded[0].text_feat.has_value());
  std::remove(path.c_str());
}

TEST_CASE("loader rejects bad magic and truncation with byte offsets") {
  auto path = temp_path("gnem_pool_bad.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  REQUIRE_THROWS_WITH(load_pool(path), Catch::Matchers::ContainsSubstring("magic"));

  Rng rng(3);
  auto pool = random_pool(rng, 8, 2);
  save_pool(pool, path);
  // chop the file mid-record
  auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 5);
  REQUIRE_THROWS_WITH(load_pool(path), Catch::Matchers::ContainsSubstring("byte offset"));
  std::remove(path.c_str());
}

TEST_CASE("record invariants enforced") {
  CandidatePool pool;
  pool.dim = 4;
  EmbeddingRecord r;
  r.id = "broken";
  r.modality = ModalityTag::ImageText;
  r.image_feat = std::vector<float>{1, 2, 3, 4};
  REQUIRE_THROWS_AS(pool.add(std::move(r)), contract_error);

  EmbeddingRecord dup;
  dup.id = "x";
  dup.modality = ModalityTag::Image;
  dup.image_feat = std::vector<float>{1, 2, 3, 4};
  pool.add(dup);
  REQUIRE_THROWS_AS(pool.add(dup), contract_error);
}

TEST_CASE("pairs file roundtrip and dangling id rejection") {
  std::vector<QueryTargetPair> pairs = {{"q0", "item_0", uint8_t(1)}, {"q1", "item_1", {}}};
  auto path = temp_path("gnem_pairs.txt");
  save_pairs(pairs, path);
  auto loaded = load_pairs(path);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].query_id == "q0");
  REQUIRE(loaded[0].instruction_tag == uint8_t(1));
  REQUIRE_FALSE(loaded[1].instruction_tag.has_value());

  Rng rng(9);
  auto cands = random_pool(rng, 4, 2);
  CandidatePool queries;
  queries.dim = 4;
  EmbeddingRecord q;
  q.id = "q0";
  q.modality = ModalityTag::Image;
  q.image_feat = std::vector<float>{0, 0, 0, 0};
  queries.add(q);
  std::vector<QueryTargetPair> bad = {{"q0", "missing", {}}};
  REQUIRE_THROWS_AS(resolve_pairs(bad, queries, cands), contract_error);
  std::remove(path.c_str());
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSpec spec;
  spec.n_clusters = 4;
  spec.items_per_cluster_per_modality = 3;
  spec.dim = 8;
  spec.seed = 77;
  auto a = generate_synthetic(spec, SyntheticRole::Candidates);
  auto b = generate_synthetic(spec, SyntheticRole::Candidates);
  REQUIRE(pools_equal(a.pool, b.pool));

  auto qa = generate_synthetic(spec, SyntheticRole::Queries, 20, 1);
  auto qb = generate_synthetic(spec, SyntheticRole::Queries, 20, 1);
  REQUIRE(pools_equal(qa.pool, qb.pool));
  auto qc = generate_synthetic(spec, SyntheticRole::Queries, 20, 2);
  REQUIRE_FALSE(pools_equal(qa.pool, qc.pool));
}

TEST_CASE("synthetic pool count is clusters x modalities x items") {
  SyntheticSpec spec;
  spec.n_clusters = 64;
  spec.items_per_cluster_per_modality = 10;
  spec.dim = 8;
  spec.seed = 5;
  auto data = generate_synthetic(spec, SyntheticRole::Candidates);
  REQUIRE(data.pool.size() == 64 * 3 * 10);
}

TEST_CASE("zero-noise queries equal their targets exactly") {
  SyntheticSpec spec;
  spec.n_clusters = 3;
  spec.items_per_cluster_per_modality = 2;
  spec.dim = 6;
  spec.intra_cluster_noise_sigma = 0.0;
  spec.query_noise_sigma = 0.0;
  spec.seed = 21;
  auto cands = generate_synthetic(spec, SyntheticRole::Candidates);
  auto queries = generate_synthetic(spec, SyntheticRole::Queries, 10, 0);
  for (const auto& pr : queries.pairs) {
    const auto& q = queries.pool[queries.pool.require(pr.query_id)];
    const auto& c = cands.pool[cands.pool.require(pr.target_id)];
    REQUIRE(q.modality == c.modality);
    REQUIRE(q.instruction_tag == uint8_t(c.modality));
    if (c.image_feat) REQUIRE(*q.image_feat == *c.image_feat);
    if (c.text_feat) REQUIRE(*q.text_feat == *c.text_feat);
  }
}

TEST_CASE("batching: sizes, determinism, epoch variation") {
  auto b = make_batches(10, 4, 123, 0);
  REQUIRE(b.size() == 3);
  REQUIRE(b[0].size() == 4);
  REQUIRE(b[1].size() == 4);
  REQUIRE(b[2].size() == 2);

  REQUIRE(make_batches(10, 4, 123, 0) == b);

  // pinned seed: epoch 0 and epoch 1 permutations differ
  auto e0 = make_batches(10, 10, 99, 0);
  auto e1 = make_batches(10, 10, 99, 1);
  REQUIRE(e0[0] != e1[0]);

  REQUIRE(make_batches(0, 4, 1, 0).empty());
  REQUIRE_THROWS_AS(make_batches(10, 1, 1, 0), contract_error);
}
