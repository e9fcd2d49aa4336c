// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/embstore.hpp"
#include "core/rng.hpp"

using namespace idsan;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// smallest well-formed set: d=4, 2 identities x 3 images
EmbeddingSet tiny_set() {
  EmbeddingSet set;
  set.dim = 4;
  set.count = 6;
  set.vectors.resize(6, 4);
  Rng rng(99);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 4; ++c) set.vectors(r, c) = float(rng.normal());
  set.identity_labels = {"ada", "bob"};
  set.identity_of = {0, 0, 0, 1, 1, 1};
  set.split_of = {Split::Train, Split::Test};
  set.balanced_n = 3;
  set.rebuild_row_index();
  return set;
}

void write_meta(const std::string& emb_path, const nlohmann::json& meta) {
  std::ofstream out(emb_path + ".meta.json");
  out << meta.dump();
}

}  // namespace

TEST_CASE("EMB1 round trip preserves the payload byte for byte") {
  const std::string path = temp_path("rt.emb");
  EmbeddingSet set = tiny_set();
  save_embeddings(set, path);

  EmbeddingSet loaded = load_embeddings(path);
  CHECK(loaded.dim == 4);
  CHECK(loaded.count == 6);
  CHECK(loaded.identity_count() == 2);

  const std::string path2 = temp_path("rt2.emb");
  save_embeddings(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("loader rejects bad magic and truncated payloads") {
  const std::string path = temp_path("bad.emb");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE" << std::string(12, '\0');
  }
  try {
    load_embeddings(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Format);
  }

  // valid header, payload cut short
  EmbeddingSet set = tiny_set();
  save_embeddings(set, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << all.substr(0, all.size() - 5);
  }
  try {
    load_embeddings(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Format);
  }
}

TEST_CASE("label count mismatch raises a metadata error") {
  const std::string path = temp_path("mism.emb");
  save_embeddings(tiny_set(), path);
  nlohmann::json meta;
  meta["labels"] = {"ada", "ada", "bob"};  // 3 labels for 6 rows
  meta["splits"] = {{"train", {"ada"}}, {"test", {"bob"}}};
  write_meta(path, meta);
  try {
    load_embeddings(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Metadata);
  }
}

TEST_CASE("identity listed in two splits raises a split violation") {
  const std::string path = temp_path("split.emb");
  save_embeddings(tiny_set(), path);
  nlohmann::json meta;
  meta["labels"] = {"ada", "ada", "ada", "bob", "bob", "bob"};
  meta["splits"] = {{"train", {"ada", "bob"}}, {"test", {"bob"}}};
  write_meta(path, meta);
  try {
    load_embeddings(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::SplitViolation);
  }
}

TEST_CASE("balanced claim is validated against the actual counts") {
  const std::string path = temp_path("bal.emb");
  EmbeddingSet set = tiny_set();
  set.balanced_n = 4;  // wrong: identities have 3 images
  CHECK_THROWS_AS(save_embeddings(set, path), Error);
}

TEST_CASE("normalize scales rows to unit norm and is idempotent") {
  EmbeddingSet set = tiny_set();
  set.vectors.setZero();
  set.vectors(0, 0) = 3.0f;
  set.vectors(0, 1) = 4.0f;
  for (int r = 1; r < 6; ++r) set.vectors(r, 0) = 1.0f;

  EmbeddingSet n1 = normalize(set);
  CHECK(n1.normalized);
  CHECK(n1.vectors(0, 0) == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(n1.vectors(0, 1) == doctest::Approx(0.8).epsilon(1e-7));
  // already-unit rows stay put
  CHECK(n1.vectors(1, 0) == doctest::Approx(1.0).epsilon(1e-9));

  for (std::int64_t r = 0; r < n1.count; ++r)
    CHECK(std::abs(n1.vectors.row(r).cast<double>().norm() - 1.0) <= 1e-6);

  EmbeddingSet n2 = normalize(n1);
  for (std::int64_t r = 0; r < n1.count; ++r)
    for (int c = 0; c < n1.dim; ++c)
      CHECK(std::abs(double(n2.vectors(r, c)) - double(n1.vectors(r, c))) <=
            1e-7);
}

TEST_CASE("normalize reports the offending zero row") {
  EmbeddingSet set = tiny_set();
  set.vectors.row(2).setZero();
  try {
    normalize(set);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::DegenerateVector);
    CHECK(e.info() == 2);
  }
}

TEST_CASE("random matrix normalizes to unit rows") {
  EmbeddingSet set;
  set.dim = 64;
  set.count = 100;
  set.vectors.resize(100, 64);
  Rng rng(5);
  for (int r = 0; r < 100; ++r)
    for (int c = 0; c < 64; ++c) set.vectors(r, c) = float(rng.normal());
  set.identity_labels = {"only"};
  set.identity_of.assign(100, 0);
  set.split_of = {Split::Train};
  set.rebuild_row_index();

  EmbeddingSet n = normalize(set);
  for (std::int64_t r = 0; r < n.count; ++r)
    CHECK(std::abs(n.vectors.row(r).cast<double>().norm() - 1.0) <= 1e-6);
}

namespace {

EmbeddingSet balanced_set(int identities, int n, int dim = 8) {
  EmbeddingSet set;
  set.dim = dim;
  set.count = std::int64_t(identities) * n;
  set.vectors.resize(set.count, dim);
  Rng rng(17);
  for (std::int64_t r = 0; r < set.count; ++r)
    for (int c = 0; c < dim; ++c) set.vectors(r, c) = float(rng.normal());
  char buf[16];
  for (int i = 0; i < identities; ++i) {
    std::snprintf(buf, sizeof buf, "p%03d", i);
    set.identity_labels.emplace_back(buf);
    set.split_of.push_back(Split::Train);
  }
  for (int i = 0; i < identities; ++i)
    for (int j = 0; j < n; ++j) set.identity_of.push_back(i);
  set.balanced_n = n;
  set.rebuild_row_index();
  return set;
}

}  // namespace

TEST_CASE("support/query split partitions each identity exactly") {
  EmbeddingSet set = balanced_set(7, 20);
  SupportQuerySplit sq = make_support_query_split(set, 16, 42);
  for (int i = 0; i < 7; ++i) {
    CHECK(sq.support_of[i].size() == 16);
    CHECK(sq.query_of[i].size() == 4);
    std::set<int> all(sq.support_of[i].begin(), sq.support_of[i].end());
    all.insert(sq.query_of[i].begin(), sq.query_of[i].end());
    std::set<int> rows(set.rows_of[i].begin(), set.rows_of[i].end());
    CHECK(all == rows);  // S and Q disjoint and exhaustive
  }

  SupportQuerySplit one = make_support_query_split(set, 1, 42);
  for (int i = 0; i < 7; ++i) {
    CHECK(one.support_of[i].size() == 1);
    CHECK(one.query_of[i].size() == 19);
  }
}

TEST_CASE("equal seeds reproduce the split, distinct seeds differ") {
  EmbeddingSet set = balanced_set(9, 12);
  SupportQuerySplit a = make_support_query_split(set, 4, 7);
  SupportQuerySplit b = make_support_query_split(set, 4, 7);
  for (int i = 0; i < 9; ++i) {
    CHECK(a.support_of[i] == b.support_of[i]);
    CHECK(a.query_of[i] == b.query_of[i]);
  }
  SupportQuerySplit c = make_support_query_split(set, 4, 8);
  bool any_diff = false;
  for (int i = 0; i < 9; ++i)
    if (a.support_of[i] != c.support_of[i]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("k >= images per identity is rejected") {
  EmbeddingSet set = balanced_set(3, 5);
  try {
    make_support_query_split(set, 5, 1);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::InsufficientImages);
  }
}

TEST_CASE("resampling a subset leaves other identities untouched") {
  EmbeddingSet set = balanced_set(6, 10);
  SupportQuerySplit base = make_support_query_split(set, 3, 100);
  SupportQuerySplit re = resample_identities(set, base, {4, 5}, 200);
  for (int i = 0; i < 4; ++i) {
    CHECK(re.support_of[i] == base.support_of[i]);
    CHECK(re.query_of[i] == base.query_of[i]);
  }
  bool changed = re.support_of[4] != base.support_of[4] ||
                 re.support_of[5] != base.support_of[5];
  CHECK(changed);
  CHECK(re.support_of[4].size() == 3);
}

TEST_CASE("subset_identities re-densifies and keeps rows aligned") {
  EmbeddingSet set = balanced_set(5, 4);
  EmbeddingSet sub = subset_identities(set, {1, 3});
  CHECK(sub.identity_count() == 2);
  CHECK(sub.count == 8);
  CHECK(sub.identity_labels[0] == "p001");
  CHECK(sub.identity_labels[1] == "p003");
  // row payloads preserved
  CHECK(sub.vectors.row(0).isApprox(set.vectors.row(4)));
}
