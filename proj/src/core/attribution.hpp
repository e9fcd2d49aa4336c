// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core/common.hpp"

namespace idsan {

// Six embeddings of one query/reference pair: clean, face-occluded and
// background-occluded variants of both images.
struct OcclusionPair {
  Eigen::VectorXd query, reference;
  Eigen::VectorXd query_face_occ, reference_face_occ;
  Eigen::VectorXd query_bg_occ, reference_bg_occ;
};

struct FiiResult {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> per_pair;
  int resamples = 0;
};

// Face importance: per pair, (clean cosine - face-occluded cosine) minus
// (clean cosine - background-occluded cosine); averaged, with a percentile
// bootstrap interval over pairs.
FiiResult fii(const std::vector<OcclusionPair>& pairs,
              std::uint64_t bootstrap_seed = 0, int resamples = 2000);

// One query with an identity-matched and a context-matched reference,
// embedded at each perturbation level. For the blur sweep all three roles
// vary per level; for the revelation sweep the references stay fixed.
struct BlurTriplet {
  std::vector<Eigen::VectorXd> query;    // per level
  std::vector<Eigen::VectorXd> id_ref;   // per level
  std::vector<Eigen::VectorXd> ctx_ref;  // per level
};

struct CpiCurve {
  std::vector<double> levels;
  std::vector<double> cpi;  // fraction preferring context, per level
  double delta = 0.0;       // cpi(last) - cpi(first)
  std::optional<double> sigma_star;  // interpolated 0.5 crossing
};

CpiCurve cpi_curve(const std::vector<BlurTriplet>& triplets,
                   const std::vector<double>& levels);

struct RevealTriplet {
  std::vector<Eigen::VectorXd> query;  // per revealed-background level
  Eigen::VectorXd id_ref, ctx_ref;     // fixed references
};

struct BStarResult {
  std::vector<double> per_triplet;  // grid values or censoring boundaries
  double median = 0.0;
  int censored_low = 0;   // context preferred already at the first level
  int censored_high = 0;  // identity preferred at every level
  double monotone_fraction = 0.0;  // ctx-similarity series non-decreasing
};

BStarResult b_star(const std::vector<RevealTriplet>& triplets,
                   const std::vector<double>& levels);

// Crop plan normalizing the face coverage ratio: square window of side
// s = sqrt(face_area / target) centered on the face, padding tracked per
// side; plans needing more than 15% padding are rejected.
struct CropPlan {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // window, may extend past image
  double scale = 0.0;                     // window side s
  double pad_ratio = 0.0;
  double achieved_fcr = 0.0;
  bool rejected = false;
};

CropPlan fcr_crop(double bx0, double by0, double bx1, double by1, int img_w,
                  int img_h, double target_fcr);

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major, nonzero = foreground

  std::int64_t area() const;
  bool at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x] != 0;
  }
};

Mask read_pgm(const std::string& path);
void write_pgm(const Mask& mask, const std::string& path);

struct AnnulusResult {
  Mask annulus;
  double width = 0.0;      // Euclidean distance of the outermost ring pixel
  double area_ratio = 0.0; // annulus area / face area
};

// Equal-area ring around the face mask: grows the mask outward by Euclidean
// distance until the ring area matches the face area within tolerance.
// Returns Unreachable (with the best achievable ratio) when the image has
// too few background pixels.
AnnulusResult equal_area_annulus(const Mask& face, double tolerance = 0.02);

}  // namespace idsan
