// SPDX-License-Identifier: Apache-2.0
#include "core/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "core/rng.hpp"

namespace idsan {

namespace {

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    fail(Err::Dim, "embedding dimensions differ: " + std::to_string(a.size()) +
                       " vs " + std::to_string(b.size()));
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return a.dot(b) / (na * nb);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_levels(const std::vector<double>& levels) {
  if (levels.size() < 2)
    fail(Err::InvalidGrid, "need at least 2 perturbation levels");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i] > levels[i - 1]))
      fail(Err::InvalidGrid, "perturbation levels must be strictly increasing");
}

}  // namespace

FiiResult fii(const std::vector<OcclusionPair>& pairs,
              std::uint64_t bootstrap_seed, int resamples) {
  if (pairs.empty()) fail(Err::EmptyInput, "no occlusion pairs");
  FiiResult out;
  out.resamples = resamples;
  out.per_pair.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double clean = cosine(p.query, p.reference);
    const double d_face =
        clean - cosine(p.query_face_occ, p.reference_face_occ);
    const double d_bg = clean - cosine(p.query_bg_occ, p.reference_bg_occ);
    out.per_pair.push_back(d_face - d_bg);
  }
  double sum = 0.0;
  for (double v : out.per_pair) sum += v;
  out.mean = sum / double(out.per_pair.size());

  Rng rng({bootstrap_seed, rngtag::kBootstrap});
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.per_pair.size(); ++i)
      s += out.per_pair[rng.below(out.per_pair.size())];
    m = s / double(out.per_pair.size());
  }
  std::sort(means.begin(), means.end());
  const auto lo = static_cast<std::size_t>(std::floor(0.025 * resamples));
  const auto hi = static_cast<std::size_t>(
      std::min<double>(resamples - 1, std::ceil(0.975 * resamples) - 1));
  out.ci_low = means[lo];
  out.ci_high = means[hi];
  return out;
}

CpiCurve cpi_curve(const std::vector<BlurTriplet>& triplets,
                   const std::vector<double>& levels) {
  if (triplets.empty()) fail(Err::EmptyInput, "no triplets");
  check_levels(levels);
  for (const auto& t : triplets)
    if (t.query.size() != levels.size() || t.id_ref.size() != levels.size() ||
        t.ctx_ref.size() != levels.size())
      fail(Err::InvalidGrid, "triplet level count does not match the grid");

  CpiCurve out;
  out.levels = levels;
  out.cpi.resize(levels.size(), 0.0);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    int prefers_ctx = 0;
    for (const auto& t : triplets) {
      // ties count as context-preferring
      if (cosine(t.query[l], t.ctx_ref[l]) >= cosine(t.query[l], t.id_ref[l]))
        ++prefers_ctx;
    }
    out.cpi[l] = double(prefers_ctx) / double(triplets.size());
  }
  out.delta = out.cpi.back() - out.cpi.front();

  if (out.cpi.front() >= 0.5) {
    out.sigma_star = levels.front();
  } else {
    for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
      if (out.cpi[l] < 0.5 && out.cpi[l + 1] >= 0.5) {
        const double f = (0.5 - out.cpi[l]) / (out.cpi[l + 1] - out.cpi[l]);
        out.sigma_star = levels[l] + f * (levels[l + 1] - levels[l]);
        break;
      }
    }
  }
  return out;
}

BStarResult b_star(const std::vector<RevealTriplet>& triplets,
                   const std::vector<double>& levels) {
  if (triplets.empty()) fail(Err::EmptyInput, "no triplets");
  check_levels(levels);
  if (levels.front() < 0.0 || levels.back() > 1.0)
    fail(Err::InvalidGrid, "revealed-background levels must lie in [0, 1]");

  BStarResult out;
  int monotone = 0;
  for (const auto& t : triplets) {
    if (t.query.size() != levels.size())
      fail(Err::InvalidGrid, "triplet level count does not match the grid");
    std::optional<std::size_t> crossing;
    std::vector<double> ctx_series(levels.size());
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const double ctx = cosine(t.query[l], t.ctx_ref);
      ctx_series[l] = ctx;
      if (!crossing && ctx >= cosine(t.query[l], t.id_ref)) crossing = l;
    }
    if (!crossing) {
      out.per_triplet.push_back(1.0);
      ++out.censored_high;
    } else if (*crossing == 0) {
      out.per_triplet.push_back(levels.front());
      ++out.censored_low;
    } else {
      out.per_triplet.push_back(levels[*crossing]);
    }
    bool mono = true;
    for (std::size_t l = 1; l < ctx_series.size(); ++l)
      if (ctx_series[l] < ctx_series[l - 1] - 1e-12) mono = false;
    if (mono) ++monotone;
  }
  out.median = median_of(out.per_triplet);
  out.monotone_fraction = double(monotone) / double(triplets.size());
  return out;
}

CropPlan fcr_crop(double bx0, double by0, double bx1, double by1, int img_w,
                  int img_h, double target_fcr) {
  if (!(target_fcr > 0.0 && target_fcr < 1.0))
    fail(Err::InvalidArgument, "target coverage must be in (0, 1)");
  if (img_w <= 0 || img_h <= 0)
    fail(Err::InvalidArgument, "image dimensions must be positive");
  const double area = (bx1 - bx0) * (by1 - by0);
  if (!(area > 0.0)) fail(Err::DegenerateBox, "face box has no area");
  if (bx1 <= 0.0 || by1 <= 0.0 || bx0 >= double(img_w) || by0 >= double(img_h))
    fail(Err::DegenerateBox, "face box lies outside the image");

  CropPlan plan;
  plan.scale = std::sqrt(area / target_fcr);
  const double cx = 0.5 * (bx0 + bx1);
  const double cy = 0.5 * (by0 + by1);
  plan.x0 = cx - plan.scale / 2.0;
  plan.x1 = cx + plan.scale / 2.0;
  plan.y0 = cy - plan.scale / 2.0;
  plan.y1 = cy + plan.scale / 2.0;

  const double pad_left = std::max(0.0, -plan.x0);
  const double pad_right = std::max(0.0, plan.x1 - double(img_w));
  const double pad_top = std::max(0.0, -plan.y0);
  const double pad_bottom = std::max(0.0, plan.y1 - double(img_h));
  plan.pad_ratio =
      (pad_left + pad_right + pad_top + pad_bottom) / (4.0 * plan.scale);
  plan.rejected = plan.pad_ratio > 0.15;

  // visible face inside both the image and the window
  const double vx0 = std::max({bx0, 0.0, plan.x0});
  const double vx1 = std::min({bx1, double(img_w), plan.x1});
  const double vy0 = std::max({by0, 0.0, plan.y0});
  const double vy1 = std::min({by1, double(img_h), plan.y1});
  const double visible =
      std::max(0.0, vx1 - vx0) * std::max(0.0, vy1 - vy0);
  plan.achieved_fcr = visible / (plan.scale * plan.scale);
  return plan;
}

std::int64_t Mask::area() const {
  std::int64_t a = 0;
  for (auto v : data)
    if (v) ++a;
  return a;
}

Mask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") fail(Err::Format, "not a binary PGM (P5): " + path);
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) fail(Err::Format, "bad PGM header: " + path);
    return v;
  };
  Mask m;
  m.width = static_cast<int>(next_int());
  m.height = static_cast<int>(next_int());
  const long maxval = next_int();
  if (maxval <= 0 || maxval > 255)
    fail(Err::Format, "PGM maxval must be 8-bit: " + path);
  in.get();  // single whitespace after maxval
  m.data.resize(static_cast<std::size_t>(m.width) * m.height);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size()));
  if (static_cast<std::size_t>(in.gcount()) != m.data.size())
    fail(Err::Format, "truncated PGM payload: " + path);
  // binarize at half scale
  for (auto& v : m.data) v = v >= (maxval + 1) / 2 ? 255 : 0;
  return m;
}

void write_pgm(const Mask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::Io, "cannot open for writing: " + path);
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.data.data()),
            static_cast<std::streamsize>(mask.data.size()));
  if (!out) fail(Err::Io, "write failed: " + path);
}

namespace {

// exact squared Euclidean distance transform (two-pass parabola method);
// a large finite sentinel keeps the parabola intersections well-defined
std::vector<double> squared_edt(const Mask& mask) {
  const int w = mask.width;
  const int h = mask.height;
  const double inf = 1e20;
  std::vector<double> dist(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < dist.size(); ++i)
    dist[i] = mask.data[i] ? 0.0 : inf;

  auto transform_1d = [inf](std::vector<double>& f) {
    const int n = static_cast<int>(f.size());
    std::vector<double> d(n);
    std::vector<int> v(n, 0);
    std::vector<double> z(n + 1);
    int k = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
      double s;
      for (;;) {
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        if (s <= z[k]) {
          --k;
        } else {
          break;
        }
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
      while (z[k + 1] < q) ++k;
      const double dq = q - v[k];
      d[q] = dq * dq + f[v[k]];
    }
    f = std::move(d);
  };

  std::vector<double> column(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y)
      column[static_cast<std::size_t>(y)] =
          dist[static_cast<std::size_t>(y) * w + x];
    transform_1d(column);
    for (int y = 0; y < h; ++y)
      dist[static_cast<std::size_t>(y) * w + x] =
          column[static_cast<std::size_t>(y)];
  }
  std::vector<double> rowbuf(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      rowbuf[static_cast<std::size_t>(x)] =
          dist[static_cast<std::size_t>(y) * w + x];
    transform_1d(rowbuf);
    for (int x = 0; x < w; ++x)
      dist[static_cast<std::size_t>(y) * w + x] =
          rowbuf[static_cast<std::size_t>(x)];
  }
  return dist;
}

}  // namespace

AnnulusResult equal_area_annulus(const Mask& face, double tolerance) {
  if (face.width <= 0 || face.height <= 0 || face.data.empty())
    fail(Err::EmptyInput, "empty mask");
  const std::int64_t target = face.area();
  if (target == 0) fail(Err::EmptyInput, "mask has no foreground pixels");
  const std::int64_t total =
      static_cast<std::int64_t>(face.width) * face.height;
  const std::int64_t outside = total - target;

  if (double(outside) < double(target) * (1.0 - tolerance)) {
    const double best = target > 0 ? double(outside) / double(target) : 0.0;
    fail(Err::Unreachable,
         "image too small for area parity; best achievable ratio " +
             std::to_string(best),
         static_cast<std::int64_t>(best * 1e6));
  }

  const std::vector<double> dist = squared_edt(face);
  struct Px {
    double d2;
    int y, x;
  };
  std::vector<Px> ring;
  ring.reserve(static_cast<std::size_t>(outside));
  for (int y = 0; y < face.height; ++y)
    for (int x = 0; x < face.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * face.width + x;
      if (!face.data[i]) ring.push_back({dist[i], y, x});
    }
  const auto take = static_cast<std::size_t>(
      std::min<std::int64_t>(target, outside));
  std::nth_element(ring.begin(), ring.begin() + (take - 1), ring.end(),
                   [](const Px& a, const Px& b) {
                     return a.d2 != b.d2 ? a.d2 < b.d2
                                         : (a.y != b.y ? a.y < b.y : a.x < b.x);
                   });
  std::sort(ring.begin(), ring.begin() + take, [](const Px& a, const Px& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : (a.y != b.y ? a.y < b.y : a.x < b.x);
  });

  AnnulusResult out;
  out.annulus.width = face.width;
  out.annulus.height = face.height;
  out.annulus.data.assign(face.data.size(), 0);
  for (std::size_t i = 0; i < take; ++i)
    out.annulus.data[static_cast<std::size_t>(ring[i].y) * face.width +
                     ring[i].x] = 255;
  out.width = std::sqrt(ring[take - 1].d2);
  out.area_ratio = double(take) / double(target);
  if (std::abs(out.area_ratio - 1.0) > tolerance)
    fail(Err::Unreachable,
         "area parity outside tolerance: ratio " +
             std::to_string(out.area_ratio),
         static_cast<std::int64_t>(out.area_ratio * 1e6));
  return out;
}

}  // namespace idsan
