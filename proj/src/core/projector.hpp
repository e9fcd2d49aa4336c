// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "core/embstore.hpp"

namespace idsan {

// Orthogonal identity-subspace removal. The model stores the factored form
// (U_r, global mean); the dense projector P = I - U_r U_r^T is materialized
// on demand. Fitting stacks centered per-identity means
//   M = [mu_1 - mu_C, ..., mu_m - mu_C]   (d x m, mu_C = mean of means)
// and keeps the top-r left singular vectors of a thin SVD of M. Sanitized
// rows are P z / ||P z||.
//
// The optional whitened variant ridge-regularizes the pooled within-class
// covariance, takes the SVD of Sw^{-1/2} M, and removes the span of the
// resulting discriminant directions Sw^{-1/2} U_r after re-orthonormalizing
// them, so the stored basis stays orthonormal and P stays a symmetric
// idempotent projector.
struct IspModel {
  int dim = 0;
  int rank = 0;
  Eigen::MatrixXd basis;        // d x r, orthonormal columns
  Eigen::VectorXd global_mean;  // mu_C
  Eigen::VectorXd singular_values;
  int fit_identity_count = 0;
  bool whitened = false;
  std::string provenance;

  Eigen::MatrixXd projector_dense() const;
  // Basis and mean rounded through 32-bit storage precision; pipelines apply
  // this form so in-process results match a saved-then-loaded projector
  // bit-for-bit.
  IspModel quantized() const;
};

struct IspOptions {
  bool whiten = false;
  double whiten_ridge_coeff = 1e-4;  // lambda_w = coeff * trace(Sw) / d
  std::string provenance;
};

IspModel fit_isp(const EmbeddingSet& set, int rank,
                 const IspOptions& opts = {});
EmbeddingSet apply_isp(const IspModel& model, const EmbeddingSet& set);

// Rank of the centered-mean matrix of the train split (the largest usable
// ISP rank for this set).
int isp_mean_rank(const EmbeddingSet& set);

// Closed-form least-squares concept erasure with the identity label as the
// erased concept: whiten with W = (Sxx + lambda I)^{-1/2}, project out the
// column space of W Sxz, unwhiten. Application re-centers around the fit
// mean; the erased data has exactly zero cross-covariance with the one-hot
// identity labels of the fit set.
struct LeaceModel {
  int dim = 0;
  Eigen::MatrixXd erasure;  // d x d
  Eigen::VectorXd mean;
  double ridge_lambda = 0.0;
  int class_count = 0;
  std::string provenance;

  LeaceModel quantized() const;
};

LeaceModel fit_leace(const EmbeddingSet& set, double lambda,
                     const std::string& provenance = {});
// renormalize=false returns the raw erased rows (the form under which the
// zero cross-covariance guarantee is exact); renormalize=true rescales rows
// to unit norm for score-space parity with ISP.
EmbeddingSet apply_leace(const LeaceModel& model, const EmbeddingSet& set,
                         bool renormalize = true);

// Cosines of principal angles between the column spaces of two orthonormal
// bases: singular values of A^T B, clamped to [0, 1], descending.
struct SubspaceAlignment {
  Eigen::VectorXd cosines;
};

SubspaceAlignment principal_angles(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b);

using Projector = std::variant<IspModel, LeaceModel>;

void save_projector(const Projector& p, const std::string& path);
Projector load_projector(const std::string& path);
EmbeddingSet apply_projector(const Projector& p, const EmbeddingSet& set);
int projector_dim(const Projector& p);
int projector_rank(const Projector& p);
const char* projector_kind(const Projector& p);

}  // namespace idsan
