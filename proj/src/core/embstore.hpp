// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "core/common.hpp"

namespace idsan {

enum class Split : int { Train = 0, Val = 1, Test = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

using RowMatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A labeled embedding matrix with identity-disjoint split assignments.
// Immutable after load; every operation returns a new set.
//
// On disk this is the EMB1 format:
//   "EMB1" | u32 dim (LE) | u64 count (LE) | count*dim little-endian f32,
//   row-major
// plus a JSON sidecar at <path>.meta.json carrying per-row string labels,
// the identity split assignment, an optional balanced-images-per-identity
// claim, an optional generic task-label channel, and free-form extras.
struct EmbeddingSet {
  int dim = 0;
  std::int64_t count = 0;
  RowMatrixF vectors;                        // count x dim
  std::vector<std::int32_t> identity_of;     // row -> dense identity index
  std::vector<std::string> identity_labels;  // dense index -> label
  std::vector<Split> split_of;               // dense identity index -> split
  bool normalized = false;
  std::optional<int> balanced_n;
  std::vector<std::int32_t> task_labels;  // optional, per row
  std::vector<std::string> task_names;    // dense task index -> name
  nlohmann::json extra;                   // sidecar passthrough (attribution)
  std::string provenance;

  // row indices per identity, ascending; built on construction
  std::vector<std::vector<int>> rows_of;

  int identity_count() const { return static_cast<int>(identity_labels.size()); }
  std::vector<int> identities_in(Split s) const;
  void rebuild_row_index();
  void validate() const;
};

EmbeddingSet load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingSet& set, const std::string& path);

// Returns a copy with every row scaled to unit Euclidean norm.
EmbeddingSet normalize(const EmbeddingSet& set);

// Restriction to a subset of identities (dense indices are re-densified,
// label order preserved). Used by identity-count sweeps.
EmbeddingSet subset_identities(const EmbeddingSet& set,
                               const std::vector<int>& identities);

// Per-identity support/query partition. Deterministic in (set, k, seed):
// each identity draws from its own stream keyed by (seed, identity), so the
// split is independent of identity iteration order.
struct SupportQuerySplit {
  std::uint64_t seed = 0;
  int k = 0;
  std::vector<std::vector<int>> support_of;  // identity -> row indices
  std::vector<std::vector<int>> query_of;
};

SupportQuerySplit make_support_query_split(const EmbeddingSet& set, int k,
                                           std::uint64_t seed);

// Redraws the support/query partition for the listed identities only,
// leaving all others untouched. Evaluation-time resampling uses this so the
// probe-fitting split stays frozen.
SupportQuerySplit resample_identities(const EmbeddingSet& set,
                                      const SupportQuerySplit& sq,
                                      const std::vector<int>& identities,
                                      std::uint64_t seed);

}  // namespace idsan
