// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core/embstore.hpp"

namespace idsan {

// Evaluation pairs for one split. Mated pairs are exhaustive within each
// identity's query set; impostor pairs are subsampled with an identity-
// balanced quota: at most `quota` pairs per ordered identity pair (i, j),
// drawn from Q_i x Q_j. Support rows never appear.
struct PairSet {
  std::vector<std::pair<int, int>> mated;
  std::vector<std::pair<int, int>> impostor;
  int quota_per_identity_pair = 0;
  std::uint64_t seed = 0;
  int identities_without_mated = 0;

  double min_measurable_far() const {
    return impostor.empty() ? 0.0 : 1.0 / double(impostor.size());
  }
};

PairSet build_pairs(const EmbeddingSet& set, Split split,
                    const SupportQuerySplit& sq, int quota,
                    std::uint64_t seed);

// Construction audit: returns the number of pair slots that reference a
// support row of any identity (must be zero).
int count_support_leaks(const PairSet& pairs, const SupportQuerySplit& sq);

void save_pairs(const PairSet& pairs, const std::string& path);
PairSet load_pairs(const std::string& path);

// Common probe interface: rows in, projected rows out.
class Probe {
 public:
  virtual ~Probe() = default;
  virtual Eigen::MatrixXd project(const Eigen::MatrixXd& rows) const = 0;
  virtual int input_dim() const = 0;
  // identities whose embeddings influenced the weights
  virtual const std::vector<int>& fit_identities() const = 0;
};

// Linear verification probe: ridge regression from train-split support
// embeddings to one-hot train-identity targets; the coefficient matrix is
// used as a projection at score time, so the output dimension equals the
// number of train identities.
struct RidgeProbe final : Probe {
  Eigen::MatrixXd weights;  // d x m_train
  double alpha = 0.0;
  std::vector<int> fit_ids;

  Eigen::MatrixXd project(const Eigen::MatrixXd& rows) const override {
    return rows * weights;
  }
  int input_dim() const override { return static_cast<int>(weights.rows()); }
  const std::vector<int>& fit_identities() const override { return fit_ids; }
};

RidgeProbe fit_ridge_probe(const EmbeddingSet& set,
                           const SupportQuerySplit& sq, double alpha);

// Projection MLP (two hidden rectified layers, linear output) trained with
// binary cross-entropy on sigmoid(scale * cos(g(a), g(b))) over mated and
// impostor pairs built from train-identity support embeddings.
struct MlpConfig {
  int hidden = 512;
  int out_dim = 128;
  int epochs = 50;
  int batch = 256;
  double learning_rate = 1e-3;  // cosine-decayed over training
  double scale_init = 10.0;
  std::uint64_t seed = 0;
  int impostor_quota = 0;  // 0: balance to ~4x the mated count
};

struct MlpTrainLog {
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
  bool aborted_non_monotone = false;
  int epochs_run = 0;
  std::int64_t mated_pairs = 0;
  std::int64_t impostor_pairs = 0;
};

struct MlpProbe final : Probe {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;
  double scale = 10.0;
  MlpConfig config;
  std::vector<int> fit_ids;
  MlpTrainLog log;

  Eigen::MatrixXd project(const Eigen::MatrixXd& rows) const override;
  int input_dim() const override { return static_cast<int>(w1.cols()); }
  const std::vector<int>& fit_identities() const override { return fit_ids; }
};

MlpProbe fit_mlp_probe(const EmbeddingSet& set, const SupportQuerySplit& sq,
                       const MlpConfig& config);

// Raw score vectors aligned with the pair lists. The score is the cosine of
// the probe projections; pairs whose projection collapses below 1e-12 score
// 0 and are counted.
struct PairScores {
  std::vector<double> mated;
  std::vector<double> impostor;
  std::int64_t zero_projections = 0;
};

PairScores score_pairs(const Probe& probe, const EmbeddingSet& set,
                       const PairSet& pairs);

void save_probe(const Probe& probe, const std::string& path);
std::unique_ptr<Probe> load_probe(const std::string& path);

}  // namespace idsan
