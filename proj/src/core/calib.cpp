// SPDX-License-Identifier: Apache-2.0
#include "core/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace idsan {

namespace {

constexpr double kZ95 = 1.959963984540054;  // Phi^{-1}(0.975)

std::vector<double> sorted_asc(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  return s;
}

// number of entries >= tau in an ascending-sorted vector
std::int64_t count_ge(const std::vector<double>& asc, double tau) {
  return static_cast<std::int64_t>(
      asc.end() - std::lower_bound(asc.begin(), asc.end(), tau));
}

// smallest candidate score s (ascending candidates) with accepts(s) <= cap,
// or just above the maximum when none qualifies
struct TauPick {
  double tau;
  std::int64_t accepts;
};

TauPick pick_tau(const std::vector<double>& imp_asc, std::int64_t accept_cap) {
  const auto n = static_cast<std::int64_t>(imp_asc.size());
  // accepts(imp_asc[i]) = n - first index of imp_asc[i]
  for (std::int64_t i = 0; i < n; ++i) {
    if (i > 0 && imp_asc[i] == imp_asc[i - 1]) continue;
    const std::int64_t accepts = n - i;
    if (accepts <= accept_cap) return {imp_asc[i], accepts};
  }
  return {std::nextafter(imp_asc.back(), std::numeric_limits<double>::max()),
          0};
}

}  // namespace

const char* op_mode_name(OperatingPoint::Mode m) {
  switch (m) {
    case OperatingPoint::Mode::FarTarget: return "far-target";
    case OperatingPoint::Mode::PartialAucFallback: return "partial-auc-fallback";
    case OperatingPoint::Mode::MinEer: return "min-eer";
  }
  return "?";
}

OperatingPoint calibrate_threshold(const std::vector<double>& /*val_mated*/,
                                   const std::vector<double>& val_impostor,
                                   double target_far,
                                   const std::string& calibrated_on) {
  if (val_impostor.empty()) fail(Err::EmptyImpostors, "no impostor scores");
  if (!(target_far >= 0.0 && target_far <= 1.0))
    fail(Err::InvalidArgument, "FAR target must be in [0, 1]");

  const std::vector<double> imp = sorted_asc(val_impostor);
  const auto n = static_cast<std::int64_t>(imp.size());

  OperatingPoint op;
  op.target_far = target_far;
  op.impostor_count = n;
  op.calibrated_on = calibrated_on;
  if (n >= 10000) {
    op.mode = OperatingPoint::Mode::FarTarget;
    const auto cap =
        static_cast<std::int64_t>(std::floor(target_far * double(n) + 1e-12));
    TauPick pick = pick_tau(imp, cap);
    op.tau = pick.tau;
    op.false_accepts = pick.accepts;
  } else {
    // too few impostors for a stable low-FAR estimate: take the smallest
    // measurable operating point (at most one false accept)
    op.mode = OperatingPoint::Mode::PartialAucFallback;
    TauPick pick = pick_tau(imp, 1);
    op.tau = pick.tau;
    op.false_accepts = pick.accepts;
  }
  op.achieved_far = double(op.false_accepts) / double(n);
  return op;
}

TarResult tar_at_far(const std::vector<double>& mated,
                     const std::vector<double>& impostor,
                     const OperatingPoint& op) {
  if (op.calibrated_on == "test")
    fail(Err::InvalidArgument,
         "operating point was calibrated on test scores");
  TarResult r;
  r.mated_count = static_cast<std::int64_t>(mated.size());
  r.impostor_count = static_cast<std::int64_t>(impostor.size());
  for (double s : mated)
    if (s >= op.tau) ++r.true_accepts;
  for (double s : impostor)
    if (s >= op.tau) ++r.false_accepts;
  r.tar = r.mated_count ? double(r.true_accepts) / double(r.mated_count) : 0.0;
  r.far =
      r.impostor_count ? double(r.false_accepts) / double(r.impostor_count) : 0.0;
  r.min_measurable_far =
      r.impostor_count ? 1.0 / double(r.impostor_count) : 0.0;
  return r;
}

PartialAucResult partial_auc(const std::vector<double>& mated,
                             const std::vector<double>& impostor,
                             double far_cap) {
  if (!(far_cap > 0.0 && far_cap <= 1.0))
    fail(Err::InvalidArgument, "FAR cap must be in (0, 1]");
  if (impostor.empty()) fail(Err::EmptyImpostors, "no impostor scores");
  if (mated.empty()) fail(Err::EmptyInput, "no mated scores");

  const std::vector<double> imp = sorted_asc(impostor);
  const std::vector<double> mat = sorted_asc(mated);
  const auto ni = static_cast<std::int64_t>(imp.size());
  const auto nm = static_cast<std::int64_t>(mat.size());

  // Achievable (FAR, best TAR) points: sweep thresholds downward through the
  // merged score values; at a fixed FAR level the best TAR is reached by the
  // lowest threshold before FAR jumps.
  std::vector<double> all;
  all.reserve(imp.size() + mat.size());
  all.insert(all.end(), imp.begin(), imp.end());
  all.insert(all.end(), mat.begin(), mat.end());
  std::sort(all.begin(), all.end(), std::greater<>());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  double area = 0.0;
  double prev_far = 0.0;
  double best_tar_at_prev = 0.0;  // tau = +inf point: FAR 0, TAR 0
  for (double tau : all) {
    const double far = double(count_ge(imp, tau)) / double(ni);
    const double tar = double(count_ge(mat, tau)) / double(nm);
    if (far > prev_far) {
      area += best_tar_at_prev * (std::min(far, far_cap) -
                                  std::min(prev_far, far_cap));
      prev_far = far;
      best_tar_at_prev = tar;
      if (prev_far >= far_cap) break;
    } else {
      best_tar_at_prev = std::max(best_tar_at_prev, tar);
    }
  }
  if (prev_far < far_cap)
    area += best_tar_at_prev * (far_cap - std::min(prev_far, far_cap));

  PartialAucResult out;
  out.value = area / far_cap;
  out.min_measurable_far = 1.0 / double(ni);
  out.precision_warning = double(ni) < 1.0 / far_cap;
  return out;
}

OperatingPoint eer_threshold(const std::vector<double>& mated,
                             const std::vector<double>& impostor) {
  if (mated.empty() || impostor.empty())
    fail(Err::EmptyInput, "EER needs both mated and impostor scores");
  const std::vector<double> imp = sorted_asc(impostor);
  const std::vector<double> mat = sorted_asc(mated);

  std::vector<double> cand;
  cand.reserve(imp.size() + mat.size());
  cand.insert(cand.end(), imp.begin(), imp.end());
  cand.insert(cand.end(), mat.begin(), mat.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  // objective is constant on (cand[i-1], cand[i]] and equals its value at
  // cand[i]
  double best = std::numeric_limits<double>::max();
  std::vector<std::size_t> argmins;
  std::vector<double> objective(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const double far = double(count_ge(imp, cand[i])) / double(imp.size());
    const double frr =
        double(mat.size() - count_ge(mat, cand[i])) / double(mat.size());
    objective[i] = std::abs(far - frr);
    if (objective[i] < best - 1e-15) {
      best = objective[i];
      argmins.assign(1, i);
    } else if (std::abs(objective[i] - best) <= 1e-15) {
      argmins.push_back(i);
    }
  }
  // midpoint of the first contiguous minimizing run, measured from the value
  // just below the run to its last member
  std::size_t first = argmins.front();
  std::size_t last = first;
  for (std::size_t j = 1; j < argmins.size() && argmins[j] == last + 1; ++j)
    last = argmins[j];
  const double right = cand[last];
  const double left = first > 0 ? cand[first - 1] : cand[first];
  OperatingPoint op;
  op.tau = 0.5 * (left + right);
  op.mode = OperatingPoint::Mode::MinEer;
  op.impostor_count = static_cast<std::int64_t>(imp.size());
  op.false_accepts = count_ge(imp, op.tau);
  op.achieved_far = double(op.false_accepts) / double(imp.size());
  op.target_far = op.achieved_far;
  return op;
}

RateCi wilson_interval(std::int64_t k, std::int64_t n) {
  if (n <= 0) fail(Err::EmptyInput, "Wilson interval needs n > 0");
  RateCi r;
  r.accepted = k;
  r.total = n;
  const double p = double(k) / double(n);
  r.rate = p;
  const double z = kZ95;
  const double z2n = z * z / double(n);
  const double denom = 1.0 + z2n;
  const double center = (p + z2n / 2.0) / denom;
  const double half =
      z * std::sqrt(p * (1.0 - p) / double(n) + z2n / (4.0 * double(n))) /
      denom;
  r.lo = center - half;
  r.hi = center + half;
  return r;
}

RateCi verification_rate(const std::vector<double>& scores, double tau) {
  if (scores.empty()) fail(Err::EmptyInput, "no scores");
  std::int64_t k = 0;
  for (double s : scores)
    if (s >= tau) ++k;
  return wilson_interval(k, static_cast<std::int64_t>(scores.size()));
}

namespace {

// regularized incomplete beta via Lentz continued fraction
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  const double x = df / (df + t * t);
  const double tail = 0.5 * inc_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

}  // namespace

double student_t_975(int df) {
  if (df < 1) fail(Err::InvalidArgument, "t quantile needs df >= 1");
  double lo = 0.0;
  double hi = 1e4;  // covers df = 1 (12.71)
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, double(df)) < 0.975)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

MetricResult seed_aggregate(const std::vector<double>& per_seed,
                            CiMethod method, std::uint64_t bootstrap_seed,
                            int resamples) {
  if (per_seed.empty()) fail(Err::EmptyInput, "no per-seed values");
  MetricResult r;
  r.per_seed = per_seed;
  r.seeds = static_cast<int>(per_seed.size());
  r.method = method;
  double sum = 0.0;
  for (double v : per_seed) sum += v;
  r.mean = sum / double(per_seed.size());
  if (per_seed.size() < 2) {
    r.ci_low = r.ci_high = r.mean;
    r.ci_defined = false;
    return r;
  }
  r.ci_defined = true;
  if (method == CiMethod::StudentT) {
    double ss = 0.0;
    for (double v : per_seed) ss += (v - r.mean) * (v - r.mean);
    const double sd = std::sqrt(ss / double(per_seed.size() - 1));
    const double half = student_t_975(static_cast<int>(per_seed.size()) - 1) *
                        sd / std::sqrt(double(per_seed.size()));
    r.ci_low = r.mean - half;
    r.ci_high = r.mean + half;
  } else {
    Rng rng({bootstrap_seed, rngtag::kBootstrap});
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& m : means) {
      double s = 0.0;
      for (std::size_t i = 0; i < per_seed.size(); ++i)
        s += per_seed[rng.below(per_seed.size())];
      m = s / double(per_seed.size());
    }
    std::sort(means.begin(), means.end());
    const auto lo_idx = static_cast<std::size_t>(
        std::floor(0.025 * double(resamples)));
    const auto hi_idx = static_cast<std::size_t>(
        std::min<double>(double(resamples) - 1,
                         std::ceil(0.975 * double(resamples)) - 1));
    r.ci_low = means[lo_idx];
    r.ci_high = means[hi_idx];
  }
  return r;
}

}  // namespace idsan
