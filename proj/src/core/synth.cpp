// SPDX-License-Identifier: Apache-2.0
#include "core/synth.hpp"

#include <cmath>
#include <cstdio>

#include "core/rng.hpp"

namespace idsan {

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                                Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

}  // namespace

std::pair<EmbeddingSet, GroundTruth> generate(const SynthConfig& cfg) {
  if (cfg.dim < 1 || cfg.identities < 1 || cfg.images_per_identity < 1)
    fail(Err::InvalidArgument, "dimensions and counts must be positive");
  if (cfg.identity_rank < 0 || cfg.task_rank < 0)
    fail(Err::InvalidArgument, "ranks must be non-negative");
  if (cfg.identity_rank + cfg.task_rank > cfg.dim)
    fail(Err::InvalidArgument,
         "identity rank plus task rank exceeds the ambient dimension");
  if (cfg.identity_scale < 0.0 || cfg.noise_scale < 0.0 || cfg.task_scale < 0.0)
    fail(Err::InvalidArgument, "scales must be non-negative");
  if (cfg.train_identities + cfg.val_identities + cfg.test_identities !=
      cfg.identities)
    fail(Err::InvalidArgument,
         "train + val + test identity counts must equal the identity count");

  const int d = cfg.dim;
  const int m = cfg.identities;
  const int n = cfg.images_per_identity;
  const bool tasks_on =
      cfg.task_classes > 0 && cfg.task_rank > 0 && cfg.task_scale > 0.0;

  GroundTruth truth;
  {
    // joint QR keeps the task basis exactly orthogonal to the identity basis
    Rng rng({cfg.subspace_seed, rngtag::kSynthBasis});
    const int total = cfg.identity_rank + cfg.task_rank;
    if (total > 0) {
      Eigen::MatrixXd g = gaussian_matrix(d, total, rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
      Eigen::MatrixXd q =
          qr.householderQ() * Eigen::MatrixXd::Identity(d, total);
      truth.identity_basis = q.leftCols(cfg.identity_rank);
      truth.task_basis = q.rightCols(cfg.task_rank);
    } else {
      truth.identity_basis.resize(d, 0);
      truth.task_basis.resize(d, 0);
    }
  }

  truth.task_centers.resize(d, tasks_on ? cfg.task_classes : 0);
  for (Eigen::Index t = 0; t < truth.task_centers.cols(); ++t) {
    Rng rng({cfg.subspace_seed, rngtag::kSynthTask,
             static_cast<std::uint64_t>(t)});
    Eigen::VectorXd a = gaussian_matrix(cfg.task_rank, 1, rng);
    a.normalize();
    truth.task_centers.col(t) = cfg.task_scale * (truth.task_basis * a);
  }

  truth.class_means = Eigen::MatrixXd::Zero(d, m);
  for (int i = 0; i < m; ++i) {
    if (cfg.identity_rank == 0 || cfg.identity_scale == 0.0) continue;
    Rng rng({cfg.seed, rngtag::kSynthMean, static_cast<std::uint64_t>(i)});
    Eigen::VectorXd c = gaussian_matrix(cfg.identity_rank, 1, rng);
    truth.class_means.col(i) = cfg.identity_scale / std::sqrt(double(cfg.identity_rank)) *
                               (truth.identity_basis * c);
  }

  EmbeddingSet set;
  set.dim = d;
  set.count = static_cast<std::int64_t>(m) * n;
  set.vectors.resize(set.count, d);
  set.normalized = true;
  set.balanced_n = n;
  set.provenance = cfg.provenance;
  char label[32];
  for (int i = 0; i < m; ++i) {
    std::snprintf(label, sizeof label, "id%05d", i);
    set.identity_labels.emplace_back(label);
    if (i < cfg.train_identities)
      set.split_of.push_back(Split::Train);
    else if (i < cfg.train_identities + cfg.val_identities)
      set.split_of.push_back(Split::Val);
    else
      set.split_of.push_back(Split::Test);
  }
  if (tasks_on)
    for (int t = 0; t < cfg.task_classes; ++t) {
      std::snprintf(label, sizeof label, "task%02d", t);
      set.task_names.emplace_back(label);
    }

  const double noise_unit =
      cfg.noise_scale > 0.0 ? cfg.noise_scale / std::sqrt(double(d)) : 0.0;
  std::int64_t row = 0;
  for (int i = 0; i < m; ++i) {
    // identical task-class composition for every identity (round-robin,
    // shuffled per identity) so the task attribute cancels out of centered
    // identity means instead of leaking into the fitted subspace
    std::vector<int> labels_i;
    if (tasks_on) {
      labels_i.resize(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) labels_i[static_cast<std::size_t>(j)] =
          j % cfg.task_classes;
      Rng lr({cfg.seed, rngtag::kSynthTask, static_cast<std::uint64_t>(i)});
      lr.shuffle(labels_i);
    }
    for (int j = 0; j < n; ++j, ++row) {
      set.identity_of.push_back(i);
      Eigen::VectorXd x = truth.class_means.col(i);
      if (tasks_on) {
        const int t = labels_i[static_cast<std::size_t>(j)];
        set.task_labels.push_back(t);
        x += truth.task_centers.col(t);
      }
      if (noise_unit > 0.0) {
        Rng nr({cfg.seed, rngtag::kSynthNoise, static_cast<std::uint64_t>(i),
                static_cast<std::uint64_t>(j)});
        for (int a = 0; a < d; ++a) x(a) += noise_unit * nr.normal();
      }
      const double norm = x.norm();
      if (norm < 1e-12)
        fail(Err::DegenerateVector,
             "generated row has zero norm; increase a scale", row);
      set.vectors.row(row) = (x / norm).transpose().cast<float>();
    }
  }
  set.rebuild_row_index();
  set.validate();
  return {std::move(set), std::move(truth)};
}

double oracle_best_linear_tar(const GroundTruth& truth,
                              const EmbeddingSet& set, const PairSet& pairs,
                              double far_target, OperatingPoint* out_op) {
  std::vector<double> mated, impostor;
  Eigen::MatrixXd projected;
  Eigen::VectorXd norms;
  if (truth.identity_basis.cols() > 0) {
    projected = set.vectors.cast<double>() * truth.identity_basis;
    norms = projected.rowwise().norm();
  }
  auto score = [&](int a, int b) {
    if (truth.identity_basis.cols() == 0) return 0.0;
    if (norms(a) < 1e-12 || norms(b) < 1e-12) return 0.0;
    return projected.row(a).dot(projected.row(b)) / (norms(a) * norms(b));
  };
  mated.reserve(pairs.mated.size());
  impostor.reserve(pairs.impostor.size());
  for (const auto& [a, b] : pairs.mated) mated.push_back(score(a, b));
  for (const auto& [a, b] : pairs.impostor) impostor.push_back(score(a, b));

  OperatingPoint op = calibrate_threshold(mated, impostor, far_target, "val");
  if (out_op) *out_op = op;
  return tar_at_far(mated, impostor, op).tar;
}

}  // namespace idsan
