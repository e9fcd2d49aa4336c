// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <vector>

#include "core/embstore.hpp"

namespace idsan {

// Non-biometric utility probes on frozen embeddings. Labels are task labels
// (the generic sidecar channel), not identities.

// Cosine k-NN majority vote; ties broken by the nearer neighbor.
double knn_top1(const EmbeddingSet& train,
                const std::vector<std::int32_t>& train_labels,
                const EmbeddingSet& test,
                const std::vector<std::int32_t>& test_labels, int k);

// One-vs-all ridge classifier to one-hot targets, argmax at test time.
double linear_probe_top1(const EmbeddingSet& train,
                         const std::vector<std::int32_t>& train_labels,
                         const EmbeddingSet& test,
                         const std::vector<std::int32_t>& test_labels,
                         double alpha);

// Fraction of queries whose ground-truth gallery item lands in the cosine
// top-k. truth maps query row -> gallery rows (any hit counts).
double recall_at_k(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                   const std::map<int, std::vector<int>>& truth, int k);

// projected / raw * 100
double retention(double raw, double projected);

}  // namespace idsan
