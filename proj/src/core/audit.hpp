// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/calib.hpp"
#include "core/embstore.hpp"
#include "core/projector.hpp"

namespace idsan {

// End-to-end verification protocol runs. Reports are canonical JSON: keys
// sorted, floats rounded to 6 significant digits, identical inputs produce
// identical documents except for the timestamp field.
//
// Pipeline per k:
//   1. draw the calibration support/query split (all identities),
//   2. fit the probe on train-identity support embeddings (ridge sweeps its
//      regularization strength on validation and keeps the best),
//   3. calibrate the threshold on validation pairs, freeze it,
//   4. resample test identities' support/query assignment per seed and
//      evaluate at the frozen threshold.
struct ProbeParams {
  std::string probe = "ridge";    // "ridge" | "mlp"
  std::string project = "none";   // "none" | "isp" | "leace"
  int rank = 192;
  double lambda = 1e-4;
  bool whiten = false;
  std::vector<int> k_grid = {1, 4, 16};
  int seeds = 5;
  double far_target = 1e-4;
  int quota = 0;  // impostor quota per ordered identity pair; 0 = auto
  std::uint64_t seed = 1;
  int threads = 0;
  std::string dataset_tag;
  std::string model_tag;
  CiMethod ci_method = CiMethod::StudentT;
  std::vector<double> alpha_grid = {1e-3, 1e-2, 1e-1, 1.0, 10.0};
  // MLP knobs
  int mlp_hidden = 512;
  int mlp_epochs = 50;
  int mlp_batch = 256;
  int mlp_out_dim = 128;
  double mlp_lr = 1e-3;
};

// auto quota: ceil(target_total / (ids * (ids - 1))) with target_total sized
// so 80-identity sets get quota 1 (~6.3k impostors)
int auto_quota(int identity_count, int requested);

nlohmann::json run_probe(const EmbeddingSet& set, const ProbeParams& params);
nlohmann::json run_sweep_rank(const EmbeddingSet& set,
                              const ProbeParams& params,
                              const std::vector<int>& ranks);
nlohmann::json run_sweep_identities(const EmbeddingSet& set,
                                    const ProbeParams& params,
                                    const std::vector<int>& counts);
nlohmann::json run_transfer(const EmbeddingSet& a, const EmbeddingSet& b,
                            const ProbeParams& params);

struct AttribParams {
  std::uint64_t bootstrap_seed = 0;
  int bootstrap_resamples = 2000;
};

// Consumes the attribution records of the set's sidecar; see README for the
// record schema.
nlohmann::json run_attrib(const EmbeddingSet& variants,
                          const AttribParams& params);

struct UtilityParams {
  int knn_k = 20;
  double alpha = 1e-3;
  std::vector<int> recall_ks = {1, 5, 10};
  std::string truth_path;  // optional retrieval ground truth
};

nlohmann::json run_utility(const EmbeddingSet& train, const EmbeddingSet& test,
                           const std::optional<Projector>& projector,
                           const UtilityParams& params);

// report helpers
double round_sig(double v, int digits = 6);
std::string iso_timestamp();
std::string dump_report(const nlohmann::json& report);

}  // namespace idsan
