// SPDX-License-Identifier: Apache-2.0
#include "core/embstore.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "core/rng.hpp"

namespace idsan {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  fail(Err::Metadata, "unknown split name: " + name);
}

std::vector<int> EmbeddingSet::identities_in(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < identity_count(); ++i)
    if (split_of[static_cast<std::size_t>(i)] == s) out.push_back(i);
  return out;
}

void EmbeddingSet::rebuild_row_index() {
  rows_of.assign(identity_labels.size(), {});
  for (std::int64_t r = 0; r < count; ++r) {
    std::int32_t id = identity_of[static_cast<std::size_t>(r)];
    if (id < 0 || id >= identity_count())
      fail(Err::Metadata, "identity index out of range at row " +
                              std::to_string(r));
    rows_of[static_cast<std::size_t>(id)].push_back(static_cast<int>(r));
  }
}

void EmbeddingSet::validate() const {
  if (dim <= 0 || count <= 0) fail(Err::Format, "empty embedding set");
  if (static_cast<std::int64_t>(identity_of.size()) != count)
    fail(Err::Metadata, "label count mismatch: " +
                            std::to_string(identity_of.size()) + " labels for " +
                            std::to_string(count) + " rows");
  if (split_of.size() != identity_labels.size())
    fail(Err::Metadata, "split assignment missing for some identity");
  if (balanced_n) {
    for (int i = 0; i < identity_count(); ++i) {
      if (static_cast<int>(rows_of[static_cast<std::size_t>(i)].size()) !=
          *balanced_n)
        fail(Err::Metadata,
             "identity '" + identity_labels[static_cast<std::size_t>(i)] +
                 "' has " +
                 std::to_string(rows_of[static_cast<std::size_t>(i)].size()) +
                 " images, balanced_n claims " + std::to_string(*balanced_n));
    }
  }
  if (!task_labels.empty() &&
      static_cast<std::int64_t>(task_labels.size()) != count)
    fail(Err::Metadata, "task label count mismatch");
  if (normalized) {
    for (std::int64_t r = 0; r < count; ++r) {
      double n = vectors.row(r).cast<double>().norm();
      if (std::abs(n - 1.0) > 1e-6)
        fail(Err::Metadata, "normalized flag set but row " + std::to_string(r) +
                                " has norm " + std::to_string(n));
    }
  }
}

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

std::string sidecar_path(const std::string& path) { return path + ".meta.json"; }

nlohmann::json load_json_file(const std::string& path, Err missing_err) {
  std::ifstream in(path);
  if (!in) fail(missing_err, "cannot open: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Err::Metadata, "bad JSON in " + path + ": " + e.what());
  }
}

}  // namespace

EmbeddingSet load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open: " + path);

  char magic[4];
  std::uint32_t dim_le = 0;
  std::uint64_t count_le = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&dim_le), 4);
  in.read(reinterpret_cast<char*>(&count_le), 8);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail(Err::Format, "bad magic, not an EMB1 file: " + path);
  if (dim_le == 0 || count_le == 0)
    fail(Err::Format, "EMB1 header declares empty matrix: " + path);

  EmbeddingSet set;
  set.dim = static_cast<int>(dim_le);
  set.count = static_cast<std::int64_t>(count_le);
  set.vectors.resize(set.count, set.dim);
  const std::size_t bytes =
      static_cast<std::size_t>(set.count) * static_cast<std::size_t>(set.dim) *
      sizeof(float);
  in.read(reinterpret_cast<char*>(set.vectors.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    fail(Err::Format, "truncated EMB1 payload: " + path);

  const nlohmann::json meta = load_json_file(sidecar_path(path), Err::Metadata);
  const int version = meta.value("version", 1);
  if (version != 1)
    fail(Err::UnsupportedVersion,
         "sidecar version " + std::to_string(version) + " not supported");

  if (!meta.contains("labels") || !meta["labels"].is_array())
    fail(Err::Metadata, "sidecar missing per-row labels array");
  const auto& labels = meta["labels"];
  if (static_cast<std::int64_t>(labels.size()) != set.count)
    fail(Err::Metadata, "label count mismatch: sidecar lists " +
                            std::to_string(labels.size()) + " labels for " +
                            std::to_string(set.count) + " rows");

  // densify identities in sorted label order
  std::set<std::string> uniq;
  for (const auto& l : labels) uniq.insert(l.get<std::string>());
  set.identity_labels.assign(uniq.begin(), uniq.end());
  std::map<std::string, std::int32_t> dense;
  for (std::size_t i = 0; i < set.identity_labels.size(); ++i)
    dense[set.identity_labels[i]] = static_cast<std::int32_t>(i);
  set.identity_of.reserve(static_cast<std::size_t>(set.count));
  for (const auto& l : labels) set.identity_of.push_back(dense[l.get<std::string>()]);

  // split assignment: every identity in exactly one of train/val/test
  if (!meta.contains("splits") || !meta["splits"].is_object())
    fail(Err::Metadata, "sidecar missing splits object");
  set.split_of.assign(set.identity_labels.size(), Split::Train);
  std::vector<int> seen(set.identity_labels.size(), 0);
  for (const auto& name : {"train", "val", "test"}) {
    if (!meta["splits"].contains(name)) continue;
    for (const auto& l : meta["splits"][name]) {
      const std::string label = l.get<std::string>();
      auto it = dense.find(label);
      if (it == dense.end())
        fail(Err::Metadata, "split lists unknown identity: " + label);
      const auto idx = static_cast<std::size_t>(it->second);
      if (seen[idx]++)
        fail(Err::SplitViolation,
             "identity '" + label + "' appears in more than one split");
      set.split_of[idx] = split_from_name(name);
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      fail(Err::Metadata,
           "identity '" + set.identity_labels[i] + "' missing from splits");

  if (meta.contains("balanced_n") && !meta["balanced_n"].is_null())
    set.balanced_n = meta["balanced_n"].get<int>();
  set.normalized = meta.value("normalized", false);
  set.provenance = meta.value("provenance", std::string{});

  if (meta.contains("task_labels") && !meta["task_labels"].is_null()) {
    const auto& tl = meta["task_labels"];
    if (static_cast<std::int64_t>(tl.size()) != set.count)
      fail(Err::Metadata, "task label count mismatch");
    std::set<std::string> tuniq;
    for (const auto& t : tl) tuniq.insert(t.is_string() ? t.get<std::string>()
                                                        : t.dump());
    set.task_names.assign(tuniq.begin(), tuniq.end());
    std::map<std::string, std::int32_t> tdense;
    for (std::size_t i = 0; i < set.task_names.size(); ++i)
      tdense[set.task_names[i]] = static_cast<std::int32_t>(i);
    for (const auto& t : tl)
      set.task_labels.push_back(
          tdense[t.is_string() ? t.get<std::string>() : t.dump()]);
  }
  if (meta.contains("attribution")) set.extra["attribution"] = meta["attribution"];

  set.rebuild_row_index();
  set.validate();
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  set.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::Io, "cannot open for writing: " + path);
  out.write(kMagic, 4);
  const std::uint32_t dim_le = static_cast<std::uint32_t>(set.dim);
  const std::uint64_t count_le = static_cast<std::uint64_t>(set.count);
  out.write(reinterpret_cast<const char*>(&dim_le), 4);
  out.write(reinterpret_cast<const char*>(&count_le), 8);
  out.write(reinterpret_cast<const char*>(set.vectors.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(set.count) *
                                         static_cast<std::size_t>(set.dim) *
                                         sizeof(float)));
  if (!out) fail(Err::Io, "write failed: " + path);

  nlohmann::json meta;
  meta["version"] = 1;
  nlohmann::json labels = nlohmann::json::array();
  for (std::int64_t r = 0; r < set.count; ++r)
    labels.push_back(
        set.identity_labels[static_cast<std::size_t>(set.identity_of[r])]);
  meta["labels"] = std::move(labels);
  nlohmann::json splits;
  for (const auto s : {Split::Train, Split::Val, Split::Test}) {
    nlohmann::json arr = nlohmann::json::array();
    for (int i : set.identities_in(s))
      arr.push_back(set.identity_labels[static_cast<std::size_t>(i)]);
    splits[split_name(s)] = std::move(arr);
  }
  meta["splits"] = std::move(splits);
  if (set.balanced_n) meta["balanced_n"] = *set.balanced_n;
  meta["normalized"] = set.normalized;
  if (!set.provenance.empty()) meta["provenance"] = set.provenance;
  if (!set.task_labels.empty()) {
    nlohmann::json tl = nlohmann::json::array();
    for (auto t : set.task_labels)
      tl.push_back(set.task_names[static_cast<std::size_t>(t)]);
    meta["task_labels"] = std::move(tl);
  }
  if (set.extra.contains("attribution"))
    meta["attribution"] = set.extra["attribution"];

  std::ofstream mout(sidecar_path(path), std::ios::trunc);
  if (!mout) fail(Err::Io, "cannot open for writing: " + sidecar_path(path));
  mout << meta.dump(2) << "\n";
  if (!mout) fail(Err::Io, "write failed: " + sidecar_path(path));
}

EmbeddingSet normalize(const EmbeddingSet& set) {
  EmbeddingSet out = set;
  for (std::int64_t r = 0; r < set.count; ++r) {
    const double n = set.vectors.row(r).cast<double>().norm();
    if (n < 1e-20)
      fail(Err::DegenerateVector, "zero-norm row " + std::to_string(r), r);
    out.vectors.row(r) =
        (set.vectors.row(r).cast<double>() / n).cast<float>();
  }
  out.normalized = true;
  return out;
}

EmbeddingSet subset_identities(const EmbeddingSet& set,
                               const std::vector<int>& identities) {
  if (identities.empty()) fail(Err::EmptyInput, "identity subset is empty");
  std::vector<int> keep = identities;
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (int i : keep)
    if (i < 0 || i >= set.identity_count())
      fail(Err::InvalidArgument, "identity index out of range: " +
                                     std::to_string(i));

  EmbeddingSet out;
  out.dim = set.dim;
  out.normalized = set.normalized;
  out.balanced_n = set.balanced_n;
  out.provenance = set.provenance;
  std::vector<int> rows;
  for (int i : keep)
    for (int r : set.rows_of[static_cast<std::size_t>(i)]) rows.push_back(r);
  std::sort(rows.begin(), rows.end());
  out.count = static_cast<std::int64_t>(rows.size());
  out.vectors.resize(out.count, out.dim);
  std::vector<std::int32_t> remap(static_cast<std::size_t>(set.identity_count()),
                                  -1);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    remap[static_cast<std::size_t>(keep[i])] = static_cast<std::int32_t>(i);
    out.identity_labels.push_back(
        set.identity_labels[static_cast<std::size_t>(keep[i])]);
    out.split_of.push_back(set.split_of[static_cast<std::size_t>(keep[i])]);
  }
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.vectors.row(static_cast<std::int64_t>(j)) = set.vectors.row(rows[j]);
    out.identity_of.push_back(
        remap[static_cast<std::size_t>(set.identity_of[rows[j]])]);
    if (!set.task_labels.empty())
      out.task_labels.push_back(set.task_labels[static_cast<std::size_t>(rows[j])]);
  }
  out.task_names = set.task_names;
  out.rebuild_row_index();
  return out;
}

SupportQuerySplit make_support_query_split(const EmbeddingSet& set, int k,
                                           std::uint64_t seed) {
  if (k < 1) fail(Err::InvalidArgument, "support size k must be >= 1");
  SupportQuerySplit sq;
  sq.seed = seed;
  sq.k = k;
  sq.support_of.resize(set.rows_of.size());
  sq.query_of.resize(set.rows_of.size());
  std::vector<int> ids(set.rows_of.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return resample_identities(set, sq, ids, seed);
}

SupportQuerySplit resample_identities(const EmbeddingSet& set,
                                      const SupportQuerySplit& sq,
                                      const std::vector<int>& identities,
                                      std::uint64_t seed) {
  SupportQuerySplit out = sq;
  for (int i : identities) {
    const auto& rows = set.rows_of[static_cast<std::size_t>(i)];
    if (static_cast<int>(rows.size()) <= sq.k)
      fail(Err::InsufficientImages,
           "identity '" + set.identity_labels[static_cast<std::size_t>(i)] +
               "' has " + std::to_string(rows.size()) +
               " images, need more than k=" + std::to_string(sq.k),
           i);
    std::vector<int> shuffled = rows;  // ascending on entry
    Rng rng({seed, rngtag::kSupportQuery, static_cast<std::uint64_t>(i)});
    rng.shuffle(shuffled);
    auto& sup = out.support_of[static_cast<std::size_t>(i)];
    auto& qry = out.query_of[static_cast<std::size_t>(i)];
    sup.assign(shuffled.begin(), shuffled.begin() + sq.k);
    qry.assign(shuffled.begin() + sq.k, shuffled.end());
    std::sort(sup.begin(), sup.end());
    std::sort(qry.begin(), qry.end());
  }
  return out;
}

}  // namespace idsan
