// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace idsan {

// A calibrated verification threshold together with the evidence behind it.
// achieved_far is always the exact ratio false_accepts / impostor_count.
struct OperatingPoint {
  double tau = 0.0;
  double target_far = 0.0;
  double achieved_far = 0.0;
  std::int64_t false_accepts = 0;
  std::int64_t impostor_count = 0;
  enum class Mode { FarTarget, PartialAucFallback, MinEer } mode = Mode::FarTarget;
  // Which split produced the calibration scores. tar_at_far refuses
  // operating points tagged "test".
  std::string calibrated_on = "val";
};

const char* op_mode_name(OperatingPoint::Mode m);

// Threshold selection:
//  - with >= 10,000 impostor scores, pick the smallest impostor score whose
//    false-accept fraction is at or below target (one score-gap lower would
//    overshoot the budget);
//  - with fewer impostors, fall back to the smallest achievable operating
//    point: the smallest score with at most one false accept.
// If even the largest impostor score overshoots, tau lands just above it
// (zero accepts).
OperatingPoint calibrate_threshold(const std::vector<double>& val_mated,
                                   const std::vector<double>& val_impostor,
                                   double target_far,
                                   const std::string& calibrated_on = "val");

struct TarResult {
  double tar = 0.0;
  std::int64_t true_accepts = 0;
  std::int64_t mated_count = 0;
  double far = 0.0;
  std::int64_t false_accepts = 0;
  std::int64_t impostor_count = 0;
  double min_measurable_far = 0.0;
};

TarResult tar_at_far(const std::vector<double>& mated,
                     const std::vector<double>& impostor,
                     const OperatingPoint& op);

struct PartialAucResult {
  double value = 0.0;  // normalized by the FAR cap, in [0, 1]
  bool precision_warning = false;
  double min_measurable_far = 0.0;
};

// Area under the achievable TAR(FAR) step curve over FAR in [0, cap],
// normalized by cap. At each achievable FAR level the curve takes the
// largest TAR reachable by any threshold.
PartialAucResult partial_auc(const std::vector<double>& mated,
                             const std::vector<double>& impostor,
                             double far_cap);

// Threshold minimizing |FAR - FRR|; flat minimizing regions resolve to the
// midpoint of the region.
OperatingPoint eer_threshold(const std::vector<double>& mated,
                             const std::vector<double>& impostor);

struct RateCi {
  double rate = 0.0;  // fraction accepted
  double lo = 0.0;
  double hi = 0.0;
  std::int64_t accepted = 0;
  std::int64_t total = 0;
};

// Acceptance rate at tau with a 95% Wilson score interval.
RateCi verification_rate(const std::vector<double>& scores, double tau);
RateCi wilson_interval(std::int64_t k, std::int64_t n);

enum class CiMethod { StudentT, Bootstrap };

struct MetricResult {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int seeds = 0;
  std::vector<double> per_seed;
  bool ci_defined = false;
  CiMethod method = CiMethod::StudentT;
};

// Mean and 95% interval across per-seed values. The interval is computed
// across seeds, never across pairs. Bootstrap is percentile with the given
// resample count.
MetricResult seed_aggregate(const std::vector<double>& per_seed,
                            CiMethod method = CiMethod::StudentT,
                            std::uint64_t bootstrap_seed = 0,
                            int resamples = 2000);

// 97.5% Student-t quantile (two-sided 95%), via the regularized incomplete
// beta function and bisection.
double student_t_975(int df);

}  // namespace idsan
