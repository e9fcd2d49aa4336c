// SPDX-License-Identifier: Apache-2.0
#include "core/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "core/container.hpp"
#include "core/rng.hpp"

namespace idsan {

PairSet build_pairs(const EmbeddingSet& set, Split split,
                    const SupportQuerySplit& sq, int quota,
                    std::uint64_t seed) {
  if (quota < 1) fail(Err::InvalidArgument, "impostor quota must be >= 1");
  const std::vector<int> ids = set.identities_in(split);
  if (ids.empty()) fail(Err::EmptyInput, "split has no identities");

  PairSet out;
  out.quota_per_identity_pair = quota;
  out.seed = seed;

  for (int i : ids) {
    const auto& q = sq.query_of[static_cast<std::size_t>(i)];
    if (q.size() < 2) {
      ++out.identities_without_mated;
      continue;
    }
    for (std::size_t a = 0; a < q.size(); ++a)
      for (std::size_t b = a + 1; b < q.size(); ++b)
        out.mated.emplace_back(q[a], q[b]);
  }

  for (int i : ids) {
    const auto& qi = sq.query_of[static_cast<std::size_t>(i)];
    if (qi.empty()) continue;
    for (int j : ids) {
      if (j == i) continue;
      const auto& qj = sq.query_of[static_cast<std::size_t>(j)];
      if (qj.empty()) continue;
      const std::size_t cross = qi.size() * qj.size();
      const auto take = std::min<std::size_t>(static_cast<std::size_t>(quota),
                                              cross);
      std::vector<std::uint32_t> cells;
      if (take == cross) {
        cells.resize(cross);
        for (std::size_t c = 0; c < cross; ++c)
          cells[c] = static_cast<std::uint32_t>(c);
      } else {
        cells.resize(cross);
        for (std::size_t c = 0; c < cross; ++c)
          cells[c] = static_cast<std::uint32_t>(c);
        Rng rng({seed, rngtag::kPairSampling, static_cast<std::uint64_t>(i),
                 static_cast<std::uint64_t>(j)});
        // partial Fisher-Yates: only the first `take` slots are needed
        for (std::size_t c = 0; c < take; ++c) {
          std::size_t pick = c + static_cast<std::size_t>(rng.below(cross - c));
          std::swap(cells[c], cells[pick]);
        }
        cells.resize(take);
        std::sort(cells.begin(), cells.end());
      }
      for (std::size_t c = 0; c < take; ++c) {
        const std::size_t cell = cells[c];
        out.impostor.emplace_back(qi[cell / qj.size()], qj[cell % qj.size()]);
      }
    }
  }
  if (out.impostor.empty())
    fail(Err::EmptyImpostors, "no impostor pairs could be formed");
  return out;
}

int count_support_leaks(const PairSet& pairs, const SupportQuerySplit& sq) {
  std::set<int> support_rows;
  for (const auto& s : sq.support_of)
    support_rows.insert(s.begin(), s.end());
  int leaks = 0;
  auto check = [&](const std::vector<std::pair<int, int>>& list) {
    for (const auto& [a, b] : list) {
      if (support_rows.count(a)) ++leaks;
      if (support_rows.count(b)) ++leaks;
    }
  };
  check(pairs.mated);
  check(pairs.impostor);
  return leaks;
}

void save_pairs(const PairSet& pairs, const std::string& path) {
  nlohmann::json header;
  header["version"] = 1;
  header["kind"] = "pairs";
  header["mated"] = pairs.mated.size();
  header["impostor"] = pairs.impostor.size();
  header["quota"] = pairs.quota_per_identity_pair;
  header["seed"] = pairs.seed;
  header["min_far"] = pairs.min_measurable_far();

  std::vector<std::uint32_t> idx;
  idx.reserve(2 * (pairs.mated.size() + pairs.impostor.size()));
  for (const auto& [a, b] : pairs.mated) {
    idx.push_back(static_cast<std::uint32_t>(a));
    idx.push_back(static_cast<std::uint32_t>(b));
  }
  for (const auto& [a, b] : pairs.impostor) {
    idx.push_back(static_cast<std::uint32_t>(a));
    idx.push_back(static_cast<std::uint32_t>(b));
  }
  std::vector<std::uint8_t> payload;
  append_u32(payload, idx.data(), idx.size());
  write_container(path, header, payload);
}

PairSet load_pairs(const std::string& path) {
  Container c = read_container(path);
  if (c.header.value("version", -1) != 1)
    fail(Err::UnsupportedVersion, "pair-set version not supported");
  if (c.header.value("kind", "") != "pairs")
    fail(Err::Format, "not a pair-set file");
  PairSet out;
  const auto nm = c.header.at("mated").get<std::size_t>();
  const auto ni = c.header.at("impostor").get<std::size_t>();
  out.quota_per_identity_pair = c.header.value("quota", 0);
  out.seed = c.header.value("seed", 0ull);
  const std::vector<std::uint32_t> idx = payload_as_u32(c, 2 * (nm + ni));
  out.mated.reserve(nm);
  out.impostor.reserve(ni);
  for (std::size_t p = 0; p < nm; ++p)
    out.mated.emplace_back(static_cast<int>(idx[2 * p]),
                           static_cast<int>(idx[2 * p + 1]));
  for (std::size_t p = 0; p < ni; ++p)
    out.impostor.emplace_back(static_cast<int>(idx[2 * (nm + p)]),
                              static_cast<int>(idx[2 * (nm + p) + 1]));
  return out;
}

RidgeProbe fit_ridge_probe(const EmbeddingSet& set,
                           const SupportQuerySplit& sq, double alpha) {
  if (alpha < 0.0) fail(Err::InvalidArgument, "alpha must be >= 0");
  const std::vector<int> ids = set.identities_in(Split::Train);
  if (ids.size() < 2)
    fail(Err::DegenerateFit, "need at least 2 train identities");

  std::int64_t n_rows = 0;
  for (int i : ids) {
    if (sq.support_of[static_cast<std::size_t>(i)].empty())
      fail(Err::InsufficientImages,
           "train identity without support embeddings", i);
    n_rows += static_cast<std::int64_t>(
        sq.support_of[static_cast<std::size_t>(i)].size());
  }

  const int d = set.dim;
  Eigen::MatrixXd x(n_rows, d);
  Eigen::MatrixXd y =
      Eigen::MatrixXd::Zero(n_rows, static_cast<Eigen::Index>(ids.size()));
  Eigen::Index at = 0;
  for (std::size_t c = 0; c < ids.size(); ++c) {
    for (int r : sq.support_of[static_cast<std::size_t>(ids[c])]) {
      x.row(at) = set.vectors.row(r).cast<double>();
      y(at, static_cast<Eigen::Index>(c)) = 1.0;
      ++at;
    }
  }

  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += alpha;
  RidgeProbe probe;
  probe.alpha = alpha;
  probe.fit_ids = ids;
  if (alpha == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (!lu.isInvertible())
      fail(Err::SingularSystem,
           "alpha = 0 with rank-deficient Gram matrix (rank " +
               std::to_string(lu.rank()) + " of " + std::to_string(d) + ")");
    probe.weights = lu.solve(x.transpose() * y);
  } else {
    probe.weights = gram.ldlt().solve(x.transpose() * y);
  }
  return probe;
}

Eigen::MatrixXd MlpProbe::project(const Eigen::MatrixXd& rows) const {
  Eigen::MatrixXd h1 =
      ((rows * w1.transpose()).rowwise() + b1.transpose()).cwiseMax(0.0);
  Eigen::MatrixXd h2 =
      ((h1 * w2.transpose()).rowwise() + b2.transpose()).cwiseMax(0.0);
  return (h2 * w3.transpose()).rowwise() + b3.transpose();
}

namespace {

struct TrainPair {
  int a, b;
  double label;
};

std::vector<TrainPair> mlp_training_pairs(const SupportQuerySplit& sq,
                                          const std::vector<int>& ids,
                                          const MlpConfig& cfg,
                                          MlpTrainLog& log) {
  std::vector<TrainPair> pairs;
  for (int i : ids) {
    const auto& s = sq.support_of[static_cast<std::size_t>(i)];
    for (std::size_t a = 0; a < s.size(); ++a)
      for (std::size_t b = a + 1; b < s.size(); ++b)
        pairs.push_back({s[a], s[b], 1.0});
  }
  log.mated_pairs = static_cast<std::int64_t>(pairs.size());

  int quota = cfg.impostor_quota;
  if (quota <= 0) {
    const double want = std::max<double>(4.0 * double(pairs.size()),
                                         double(ids.size()));
    quota = std::max<int>(
        1, static_cast<int>(std::ceil(
               want / (double(ids.size()) * double(ids.size() - 1)))));
  }
  for (int i : ids) {
    const auto& si = sq.support_of[static_cast<std::size_t>(i)];
    for (int j : ids) {
      if (j == i) continue;
      const auto& sj = sq.support_of[static_cast<std::size_t>(j)];
      const std::size_t cross = si.size() * sj.size();
      const auto take =
          std::min<std::size_t>(static_cast<std::size_t>(quota), cross);
      Rng rng({cfg.seed, rngtag::kPairSampling, static_cast<std::uint64_t>(i),
               static_cast<std::uint64_t>(j)});
      std::vector<std::uint32_t> cells(cross);
      for (std::size_t c = 0; c < cross; ++c)
        cells[c] = static_cast<std::uint32_t>(c);
      for (std::size_t c = 0; c < take; ++c) {
        std::size_t pick = c + static_cast<std::size_t>(rng.below(cross - c));
        std::swap(cells[c], cells[pick]);
      }
      for (std::size_t c = 0; c < take; ++c) {
        const std::size_t cell = cells[c];
        pairs.push_back({si[cell / sj.size()], sj[cell % sj.size()], 0.0});
      }
    }
  }
  log.impostor_pairs =
      static_cast<std::int64_t>(pairs.size()) - log.mated_pairs;
  return pairs;
}

Eigen::MatrixXd he_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double sd = std::sqrt(2.0 / double(cols));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

template <class Mat>
struct Adam {
  Mat m, v;
  explicit Adam(const Mat& shape)
      : m(Mat::Zero(shape.rows(), shape.cols())),
        v(Mat::Zero(shape.rows(), shape.cols())) {}
  void step(Mat& w, const Mat& g, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);
    w -= (lr / bc1) *
         m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
  }
};

}  // namespace

MlpProbe fit_mlp_probe(const EmbeddingSet& set, const SupportQuerySplit& sq,
                       const MlpConfig& config) {
  const std::vector<int> ids = set.identities_in(Split::Train);
  if (ids.size() < 2)
    fail(Err::DegenerateFit, "need at least 2 train identities");

  MlpProbe probe;
  probe.config = config;
  probe.fit_ids = ids;
  const int d = set.dim;
  Rng init_rng({config.seed, rngtag::kMlpInit});
  probe.w1 = he_init(config.hidden, d, init_rng);
  probe.w2 = he_init(config.hidden, config.hidden, init_rng);
  probe.w3 = he_init(config.out_dim, config.hidden, init_rng);
  probe.b1 = Eigen::VectorXd::Zero(config.hidden);
  probe.b2 = Eigen::VectorXd::Zero(config.hidden);
  probe.b3 = Eigen::VectorXd::Zero(config.out_dim);
  probe.scale = config.scale_init;

  std::vector<TrainPair> pairs =
      mlp_training_pairs(sq, ids, config, probe.log);
  if (config.epochs <= 0 || pairs.empty()) return probe;

  Adam<Eigen::MatrixXd> opt_w1(probe.w1), opt_w2(probe.w2), opt_w3(probe.w3);
  Adam<Eigen::VectorXd> opt_b1(probe.b1), opt_b2(probe.b2), opt_b3(probe.b3);
  Eigen::MatrixXd scale_mat(1, 1);
  scale_mat(0, 0) = probe.scale;
  Adam<Eigen::MatrixXd> opt_scale(scale_mat);

  const int total_steps =
      config.epochs *
      std::max<int>(1, static_cast<int>((pairs.size() + config.batch - 1) /
                                        config.batch));
  int step = 0;
  Rng shuffle_rng({config.seed, rngtag::kMlpBatch});
  int rising_checks = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(pairs);
    double epoch_loss = 0.0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < pairs.size();
         start += static_cast<std::size_t>(config.batch)) {
      const std::size_t stop =
          std::min(pairs.size(), start + static_cast<std::size_t>(config.batch));
      const auto bsz = static_cast<Eigen::Index>(stop - start);

      Eigen::MatrixXd xa(bsz, d), xb(bsz, d);
      for (Eigen::Index r = 0; r < bsz; ++r) {
        xa.row(r) = set.vectors.row(pairs[start + r].a).cast<double>();
        xb.row(r) = set.vectors.row(pairs[start + r].b).cast<double>();
      }
      // forward
      auto forward = [&](const Eigen::MatrixXd& x, Eigen::MatrixXd& h1,
                         Eigen::MatrixXd& h2) {
        h1 = ((x * probe.w1.transpose()).rowwise() + probe.b1.transpose())
                 .cwiseMax(0.0);
        h2 = ((h1 * probe.w2.transpose()).rowwise() + probe.b2.transpose())
                 .cwiseMax(0.0);
        return Eigen::MatrixXd(
            (h2 * probe.w3.transpose()).rowwise() + probe.b3.transpose());
      };
      Eigen::MatrixXd h1a, h2a, h1b, h2b;
      Eigen::MatrixXd ua = forward(xa, h1a, h2a);
      Eigen::MatrixXd ub = forward(xb, h1b, h2b);

      Eigen::MatrixXd gua = Eigen::MatrixXd::Zero(bsz, config.out_dim);
      Eigen::MatrixXd gub = Eigen::MatrixXd::Zero(bsz, config.out_dim);
      double gscale = 0.0;
      double batch_loss = 0.0;
      for (Eigen::Index r = 0; r < bsz; ++r) {
        const double na = ua.row(r).norm();
        const double nb = ub.row(r).norm();
        double c = 0.0;
        bool live = na > 1e-12 && nb > 1e-12;
        if (live) c = ua.row(r).dot(ub.row(r)) / (na * nb);
        const double logit = probe.scale * c;
        const double p = 1.0 / (1.0 + std::exp(-logit));
        const double y = pairs[start + r].label;
        batch_loss += -(y * std::log(std::max(p, 1e-12)) +
                        (1.0 - y) * std::log(std::max(1.0 - p, 1e-12)));
        const double dlogit = p - y;
        if (!live) continue;
        gscale += dlogit * c;
        const double dc = dlogit * probe.scale;
        gua.row(r) = dc * (ub.row(r) / (na * nb) - c * ua.row(r) / (na * na));
        gub.row(r) = dc * (ua.row(r) / (na * nb) - c * ub.row(r) / (nb * nb));
      }
      batch_loss /= double(bsz);
      epoch_loss += batch_loss * double(bsz);
      seen += bsz;
      if (!std::isfinite(batch_loss))
        fail(Err::TrainingDiverged, "loss is not finite at epoch " +
                                        std::to_string(epoch));
      gua /= double(bsz);
      gub /= double(bsz);
      gscale /= double(bsz);

      // backward through both towers, gradients summed
      Eigen::MatrixXd gw1 = Eigen::MatrixXd::Zero(probe.w1.rows(), probe.w1.cols());
      Eigen::MatrixXd gw2 = Eigen::MatrixXd::Zero(probe.w2.rows(), probe.w2.cols());
      Eigen::MatrixXd gw3 = Eigen::MatrixXd::Zero(probe.w3.rows(), probe.w3.cols());
      Eigen::VectorXd gb1 = Eigen::VectorXd::Zero(probe.b1.size());
      Eigen::VectorXd gb2 = Eigen::VectorXd::Zero(probe.b2.size());
      Eigen::VectorXd gb3 = Eigen::VectorXd::Zero(probe.b3.size());
      auto backward = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& h1,
                          const Eigen::MatrixXd& h2,
                          const Eigen::MatrixXd& gout) {
        gw3.noalias() += gout.transpose() * h2;
        gb3 += gout.colwise().sum();
        Eigen::MatrixXd gh2 = gout * probe.w3;
        gh2 = gh2.cwiseProduct((h2.array() > 0.0).cast<double>().matrix());
        gw2.noalias() += gh2.transpose() * h1;
        gb2 += gh2.colwise().sum();
        Eigen::MatrixXd gh1 = gh2 * probe.w2;
        gh1 = gh1.cwiseProduct((h1.array() > 0.0).cast<double>().matrix());
        gw1.noalias() += gh1.transpose() * x;
        gb1 += gh1.colwise().sum();
      };
      backward(xa, h1a, h2a, gua);
      backward(xb, h1b, h2b, gub);

      ++step;
      const double lr =
          config.learning_rate * 0.5 *
          (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
      opt_w1.step(probe.w1, gw1, lr, step);
      opt_w2.step(probe.w2, gw2, lr, step);
      opt_w3.step(probe.w3, gw3, lr, step);
      opt_b1.step(probe.b1, gb1, lr, step);
      opt_b2.step(probe.b2, gb2, lr, step);
      opt_b3.step(probe.b3, gb3, lr, step);
      Eigen::MatrixXd gs(1, 1);
      gs(0, 0) = gscale;
      opt_scale.step(scale_mat, gs, lr, step);
      probe.scale = scale_mat(0, 0);
    }
    epoch_loss /= double(seen);
    probe.log.epoch_loss.push_back(epoch_loss);
    probe.log.epochs_run = epoch + 1;
    probe.log.final_loss = epoch_loss;

    // abort when the smoothed loss keeps rising instead of decreasing
    constexpr int kWindow = 5;
    if (static_cast<int>(probe.log.epoch_loss.size()) >= 2 * kWindow) {
      const auto& el = probe.log.epoch_loss;
      double recent = 0.0, earlier = 0.0;
      for (int i = 0; i < kWindow; ++i) {
        recent += el[el.size() - 1 - i];
        earlier += el[el.size() - 1 - kWindow - i];
      }
      if (recent > earlier * (1.0 + 1e-3)) {
        if (++rising_checks >= 3) {
          probe.log.aborted_non_monotone = true;
          break;
        }
      } else {
        rising_checks = 0;
      }
    }
  }
  return probe;
}

PairScores score_pairs(const Probe& probe, const EmbeddingSet& set,
                       const PairSet& pairs) {
  if (probe.input_dim() != set.dim)
    fail(Err::Dim, "probe dim " + std::to_string(probe.input_dim()) +
                       " does not match embedding dim " +
                       std::to_string(set.dim));
  Eigen::MatrixXd projected = probe.project(set.vectors.cast<double>());
  Eigen::VectorXd norms = projected.rowwise().norm();

  PairScores out;
  auto score_list = [&](const std::vector<std::pair<int, int>>& list,
                        std::vector<double>& dst) {
    dst.reserve(list.size());
    for (const auto& [a, b] : list) {
      if (norms(a) < 1e-12 || norms(b) < 1e-12) {
        dst.push_back(0.0);
        ++out.zero_projections;
        continue;
      }
      dst.push_back(projected.row(a).dot(projected.row(b)) /
                    (norms(a) * norms(b)));
    }
  };
  score_list(pairs.mated, out.mated);
  score_list(pairs.impostor, out.impostor);
  return out;
}

void save_probe(const Probe& probe, const std::string& path) {
  nlohmann::json header;
  header["version"] = 1;
  std::vector<std::uint8_t> payload;
  if (const auto* r = dynamic_cast<const RidgeProbe*>(&probe)) {
    header["kind"] = "ridge";
    header["dim"] = r->weights.rows();
    header["out_dim"] = r->weights.cols();
    header["alpha"] = r->alpha;
    Eigen::MatrixXf w = r->weights.cast<float>();  // column-major
    append_f32(payload, w.data(), static_cast<std::size_t>(w.size()));
  } else if (const auto* m = dynamic_cast<const MlpProbe*>(&probe)) {
    header["kind"] = "mlp";
    header["dim"] = m->w1.cols();
    header["hidden"] = m->w1.rows();
    header["out_dim"] = m->w3.rows();
    header["scale"] = m->scale;
    for (const Eigen::MatrixXd* w : {&m->w1, &m->w2, &m->w3}) {
      Eigen::MatrixXf wf = w->cast<float>();
      append_f32(payload, wf.data(), static_cast<std::size_t>(wf.size()));
    }
    for (const Eigen::VectorXd* b : {&m->b1, &m->b2, &m->b3}) {
      Eigen::VectorXf bf = b->cast<float>();
      append_f32(payload, bf.data(), static_cast<std::size_t>(bf.size()));
    }
  } else {
    fail(Err::InvalidArgument, "unknown probe type");
  }
  write_container(path, header, payload);
}

std::unique_ptr<Probe> load_probe(const std::string& path) {
  Container c = read_container(path);
  if (c.header.value("version", -1) != 1)
    fail(Err::UnsupportedVersion, "probe version not supported");
  const std::string kind = c.header.value("kind", "");
  if (kind == "ridge") {
    auto probe = std::make_unique<RidgeProbe>();
    const auto d = c.header.at("dim").get<Eigen::Index>();
    const auto o = c.header.at("out_dim").get<Eigen::Index>();
    probe->alpha = c.header.value("alpha", 0.0);
    std::vector<float> data =
        payload_as_f32(c, static_cast<std::size_t>(d * o));
    probe->weights =
        Eigen::Map<Eigen::MatrixXf>(data.data(), d, o).cast<double>();
    return probe;
  }
  if (kind == "mlp") {
    auto probe = std::make_unique<MlpProbe>();
    const auto d = c.header.at("dim").get<Eigen::Index>();
    const auto h = c.header.at("hidden").get<Eigen::Index>();
    const auto o = c.header.at("out_dim").get<Eigen::Index>();
    probe->scale = c.header.value("scale", 10.0);
    const std::size_t total =
        static_cast<std::size_t>(h * d + h * h + o * h + h + h + o);
    std::vector<float> data = payload_as_f32(c, total);
    const float* p = data.data();
    auto take_mat = [&](Eigen::Index rows, Eigen::Index cols) {
      Eigen::MatrixXd m =
          Eigen::Map<const Eigen::MatrixXf>(p, rows, cols).cast<double>();
      p += rows * cols;
      return m;
    };
    probe->w1 = take_mat(h, d);
    probe->w2 = take_mat(h, h);
    probe->w3 = take_mat(o, h);
    auto take_vec = [&](Eigen::Index n) {
      Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(p, n).cast<double>();
      p += n;
      return v;
    };
    probe->b1 = take_vec(h);
    probe->b2 = take_vec(h);
    probe->b3 = take_vec(o);
    return probe;
  }
  fail(Err::Format, "not a probe file (kind '" + kind + "')");
}

}  // namespace idsan
