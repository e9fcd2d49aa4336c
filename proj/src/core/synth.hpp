// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "core/calib.hpp"
#include "core/embstore.hpp"
#include "core/verifier.hpp"

namespace idsan {

// Homoscedastic identity model with a planted low-rank identity subspace and
// an optional task attribute planted strictly in its orthogonal complement:
//   mu_i   = identity_scale * U* c_i / sqrt(r*),          c_i ~ N(0, I_r*)
//   x_i^j  = mu_i + task_center(label_ij) + noise_scale * eps / sqrt(d)
//   z_i^j  = x_i^j / ||x_i^j||
// The signal-to-noise ratio is identity_scale / noise_scale. The planted
// bases derive from subspace_seed only, so disjoint draws (different `seed`)
// share one underlying model.
struct SynthConfig {
  int dim = 128;
  int identities = 400;
  int images_per_identity = 20;
  int identity_rank = 64;
  double identity_scale = 1.0;
  double noise_scale = 0.25;
  int task_classes = 4;
  int task_rank = 4;
  double task_scale = 0.8;
  int train_identities = 320;
  int val_identities = 40;
  int test_identities = 40;
  std::uint64_t seed = 1;
  std::uint64_t subspace_seed = 9001;
  std::string provenance = "synth";
};

struct GroundTruth {
  Eigen::MatrixXd identity_basis;  // d x r*, orthonormal
  Eigen::MatrixXd task_basis;      // d x task_rank, orthonormal, in complement
  Eigen::MatrixXd class_means;     // d x m (pre-normalization mu_i)
  Eigen::MatrixXd task_centers;    // d x task_classes
};

std::pair<EmbeddingSet, GroundTruth> generate(const SynthConfig& config);

// Scores the given pairs with the planted basis as the projection (the
// model-optimal linear verifier), calibrates a threshold on the impostor
// scores at the FAR target, and returns the TAR. Fitted probes should not
// beat this envelope by more than CI width.
double oracle_best_linear_tar(const GroundTruth& truth,
                              const EmbeddingSet& set, const PairSet& pairs,
                              double far_target,
                              OperatingPoint* out_op = nullptr);

}  // namespace idsan
