// SPDX-License-Identifier: Apache-2.0
#include "core/projector.hpp"

#include <algorithm>

#include "core/container.hpp"

namespace idsan {

namespace {

// Per-identity means over all images of each train identity, plus the grand
// mean of those means (not of the images; they differ on unbalanced sets).
struct TrainMeans {
  std::vector<int> identities;
  Eigen::MatrixXd means;       // d x m
  Eigen::VectorXd grand_mean;  // d
};

TrainMeans train_means(const EmbeddingSet& set) {
  TrainMeans tm;
  tm.identities = set.identities_in(Split::Train);
  if (tm.identities.size() < 2)
    fail(Err::DegenerateFit, "need at least 2 train identities, have " +
                                 std::to_string(tm.identities.size()));
  tm.means.resize(set.dim, static_cast<Eigen::Index>(tm.identities.size()));
  for (std::size_t c = 0; c < tm.identities.size(); ++c) {
    const auto& rows = set.rows_of[static_cast<std::size_t>(tm.identities[c])];
    if (rows.empty())
      fail(Err::DegenerateFit, "train identity without images");
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(set.dim);
    for (int r : rows) mu += set.vectors.row(r).cast<double>().transpose();
    tm.means.col(static_cast<Eigen::Index>(c)) = mu / double(rows.size());
  }
  tm.grand_mean = tm.means.rowwise().mean();
  return tm;
}

int numeric_rank(const Eigen::VectorXd& sv, Eigen::Index rows,
                 Eigen::Index cols) {
  if (sv.size() == 0) return 0;
  const double tol = static_cast<double>(std::max(rows, cols)) *
                     std::numeric_limits<double>::epsilon() * sv(0);
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++r;
  return r;
}

Eigen::MatrixXd f32_round(const Eigen::MatrixXd& m) {
  return m.cast<float>().cast<double>();
}

Eigen::VectorXd f32_round(const Eigen::VectorXd& v) {
  return v.cast<float>().cast<double>();
}

// Symmetric inverse square root with ridge: (S + lambda I)^{-1/2} and its
// inverse (S + lambda I)^{1/2}.
struct SymSqrt {
  Eigen::MatrixXd inv_sqrt;
  Eigen::MatrixXd sqrt;
};

SymSqrt ridge_sqrt(const Eigen::MatrixXd& s, double lambda) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success)
    fail(Err::SingularSystem, "covariance eigendecomposition failed");
  Eigen::VectorXd vals = eig.eigenvalues().array() + lambda;
  if (vals.minCoeff() <= 0.0)
    fail(Err::SingularSystem, "ridge too small, whitening not positive");
  SymSqrt out;
  const Eigen::MatrixXd& q = eig.eigenvectors();
  out.inv_sqrt = q * vals.array().rsqrt().matrix().asDiagonal() * q.transpose();
  out.sqrt = q * vals.array().sqrt().matrix().asDiagonal() * q.transpose();
  return out;
}

}  // namespace

Eigen::MatrixXd IspModel::projector_dense() const {
  return Eigen::MatrixXd::Identity(dim, dim) - basis * basis.transpose();
}

IspModel IspModel::quantized() const {
  IspModel q = *this;
  q.basis = f32_round(basis);
  q.global_mean = f32_round(global_mean);
  return q;
}

LeaceModel LeaceModel::quantized() const {
  LeaceModel q = *this;
  q.erasure = f32_round(erasure);
  q.mean = f32_round(mean);
  return q;
}

int isp_mean_rank(const EmbeddingSet& set) {
  TrainMeans tm = train_means(set);
  Eigen::MatrixXd m = tm.means.colwise() - tm.grand_mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  return numeric_rank(svd.singularValues(), m.rows(), m.cols());
}

IspModel fit_isp(const EmbeddingSet& set, int rank, const IspOptions& opts) {
  if (!set.normalized)
    fail(Err::InvalidArgument, "fit requires normalized embeddings");
  if (rank < 1) fail(Err::InvalidArgument, "rank must be >= 1");

  TrainMeans tm = train_means(set);
  Eigen::MatrixXd m = tm.means.colwise() - tm.grand_mean;

  Eigen::MatrixXd whiten_inv_sqrt;
  if (opts.whiten) {
    // pooled within-class covariance over train images
    Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(set.dim, set.dim);
    std::int64_t n_rows = 0;
    for (std::size_t c = 0; c < tm.identities.size(); ++c) {
      const auto& rows =
          set.rows_of[static_cast<std::size_t>(tm.identities[c])];
      for (int r : rows) {
        Eigen::VectorXd d =
            set.vectors.row(r).cast<double>().transpose() -
            tm.means.col(static_cast<Eigen::Index>(c));
        sw.noalias() += d * d.transpose();
        ++n_rows;
      }
    }
    sw /= double(n_rows);
    const double lambda_w = opts.whiten_ridge_coeff * sw.trace() / set.dim;
    whiten_inv_sqrt = ridge_sqrt(sw, lambda_w).inv_sqrt;
    m = whiten_inv_sqrt * m;
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  const int mrank = numeric_rank(svd.singularValues(), m.rows(), m.cols());
  if (rank > mrank)
    fail(Err::RankDeficient,
         "requested rank " + std::to_string(rank) +
             " exceeds mean-matrix rank " + std::to_string(mrank),
         mrank);

  IspModel model;
  model.dim = set.dim;
  model.rank = rank;
  model.fit_identity_count = static_cast<int>(tm.identities.size());
  model.global_mean = tm.grand_mean;
  model.singular_values = svd.singularValues().head(rank);
  model.whitened = opts.whiten;
  model.provenance = opts.provenance;

  if (!opts.whiten) {
    model.basis = svd.matrixU().leftCols(rank);
  } else {
    // discriminant directions in the original coordinates, re-orthonormalized
    Eigen::MatrixXd dirs = whiten_inv_sqrt * svd.matrixU().leftCols(rank);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(dirs);
    model.basis = qr.householderQ() * Eigen::MatrixXd::Identity(set.dim, rank);
  }
  return model;
}

EmbeddingSet apply_isp(const IspModel& model, const EmbeddingSet& set) {
  if (model.dim != set.dim)
    fail(Err::Dim, "projector dim " + std::to_string(model.dim) +
                       " does not match embedding dim " +
                       std::to_string(set.dim));
  if (!set.normalized)
    fail(Err::InvalidArgument, "apply requires normalized embeddings");

  EmbeddingSet out = set;
  Eigen::MatrixXd z = set.vectors.cast<double>();
  Eigen::MatrixXd residual = z - (z * model.basis) * model.basis.transpose();
  for (std::int64_t r = 0; r < set.count; ++r) {
    const double n = residual.row(r).norm();
    if (n < 1e-9)
      fail(Err::DegenerateVector,
           "row " + std::to_string(r) + " lies in the removed subspace", r);
    out.vectors.row(r) = (residual.row(r) / n).cast<float>();
  }
  out.normalized = true;
  return out;
}

LeaceModel fit_leace(const EmbeddingSet& set, double lambda,
                     const std::string& provenance) {
  if (!set.normalized)
    fail(Err::InvalidArgument, "fit requires normalized embeddings");
  if (!(lambda > 0.0))
    fail(Err::InvalidArgument, "ridge lambda must be positive");

  const std::vector<int> ids = set.identities_in(Split::Train);
  if (ids.size() < 2)
    fail(Err::DegenerateFit, "need at least 2 identity classes, have " +
                                 std::to_string(ids.size()));
  std::vector<int> rows;
  std::vector<int> cls;
  {
    std::vector<int> id_to_class(static_cast<std::size_t>(set.identity_count()),
                                 -1);
    for (std::size_t c = 0; c < ids.size(); ++c)
      id_to_class[static_cast<std::size_t>(ids[c])] = static_cast<int>(c);
    for (std::int64_t r = 0; r < set.count; ++r) {
      int c = id_to_class[static_cast<std::size_t>(set.identity_of[r])];
      if (c >= 0) {
        rows.push_back(static_cast<int>(r));
        cls.push_back(c);
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto n_classes = static_cast<Eigen::Index>(ids.size());

  Eigen::MatrixXd x(n, set.dim);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = set.vectors.row(rows[static_cast<std::size_t>(i)]).cast<double>();
  Eigen::RowVectorXd x_mean = x.colwise().mean();
  Eigen::MatrixXd xc = x.rowwise() - x_mean;

  Eigen::MatrixXd zc(n, n_classes);  // centered one-hot labels
  {
    Eigen::RowVectorXd z_mean = Eigen::RowVectorXd::Zero(n_classes);
    for (Eigen::Index i = 0; i < n; ++i)
      z_mean(cls[static_cast<std::size_t>(i)]) += 1.0;
    z_mean /= double(n);
    zc = (-z_mean).replicate(n, 1);
    for (Eigen::Index i = 0; i < n; ++i)
      zc(i, cls[static_cast<std::size_t>(i)]) += 1.0;
  }

  Eigen::MatrixXd sxx = (xc.transpose() * xc) / double(n);
  Eigen::MatrixXd sxz = (xc.transpose() * zc) / double(n);

  SymSqrt w = ridge_sqrt(sxx, lambda);
  Eigen::MatrixXd a = w.inv_sqrt * sxz;  // whitened cross-covariance
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU);
  const int arank = numeric_rank(svd.singularValues(), a.rows(), a.cols());

  LeaceModel model;
  model.dim = set.dim;
  model.ridge_lambda = lambda;
  model.class_count = static_cast<int>(n_classes);
  model.mean = x_mean.transpose();
  model.provenance = provenance;
  if (arank == 0) {
    model.erasure = Eigen::MatrixXd::Identity(set.dim, set.dim);
  } else {
    Eigen::MatrixXd q = svd.matrixU().leftCols(arank);
    model.erasure = Eigen::MatrixXd::Identity(set.dim, set.dim) -
                    w.sqrt * (q * (q.transpose() * w.inv_sqrt));
  }
  return model;
}

EmbeddingSet apply_leace(const LeaceModel& model, const EmbeddingSet& set,
                         bool renormalize) {
  if (model.dim != set.dim)
    fail(Err::Dim, "eraser dim " + std::to_string(model.dim) +
                       " does not match embedding dim " +
                       std::to_string(set.dim));
  EmbeddingSet out = set;
  Eigen::MatrixXd z = set.vectors.cast<double>();
  Eigen::MatrixXd centered = z.rowwise() - model.mean.transpose();
  Eigen::MatrixXd erased =
      (centered * model.erasure.transpose()).rowwise() +
      model.mean.transpose();
  for (std::int64_t r = 0; r < set.count; ++r) {
    if (renormalize) {
      const double n = erased.row(r).norm();
      if (n < 1e-9)
        fail(Err::DegenerateVector,
             "row " + std::to_string(r) + " erased to zero", r);
      out.vectors.row(r) = (erased.row(r) / n).cast<float>();
    } else {
      out.vectors.row(r) = erased.row(r).cast<float>();
    }
  }
  out.normalized = renormalize;
  return out;
}

SubspaceAlignment principal_angles(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows())
    fail(Err::Dim, "bases live in different ambient dimensions");
  auto check_orthonormal = [](const Eigen::MatrixXd& u, const char* which) {
    Eigen::MatrixXd g = u.transpose() * u;
    g -= Eigen::MatrixXd::Identity(g.rows(), g.cols());
    if (g.cwiseAbs().maxCoeff() > 1e-4)
      fail(Err::InvalidBasis,
           std::string(which) + " basis columns are not orthonormal");
  };
  check_orthonormal(a, "first");
  check_orthonormal(b, "second");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(a.transpose() * b);
  SubspaceAlignment out;
  out.cosines = svd.singularValues().cwiseMin(1.0).cwiseMax(0.0);
  return out;
}

namespace {
constexpr int kProjectorVersion = 1;
}

void save_projector(const Projector& p, const std::string& path) {
  nlohmann::json header;
  header["version"] = kProjectorVersion;
  std::vector<std::uint8_t> payload;
  if (const auto* isp = std::get_if<IspModel>(&p)) {
    header["kind"] = "isp";
    header["dim"] = isp->dim;
    header["rank"] = isp->rank;
    header["whitened"] = isp->whitened;
    header["fit_identity_count"] = isp->fit_identity_count;
    header["provenance"] = isp->provenance;
    nlohmann::json sv = nlohmann::json::array();
    for (Eigen::Index i = 0; i < isp->singular_values.size(); ++i)
      sv.push_back(isp->singular_values(i));
    header["singular_values"] = std::move(sv);
    // payload: U_r column-major, then the grand mean
    Eigen::MatrixXf basis = isp->basis.cast<float>();
    Eigen::VectorXf mean = isp->global_mean.cast<float>();
    append_f32(payload, basis.data(), static_cast<std::size_t>(basis.size()));
    append_f32(payload, mean.data(), static_cast<std::size_t>(mean.size()));
  } else {
    const auto& le = std::get<LeaceModel>(p);
    header["kind"] = "leace";
    header["dim"] = le.dim;
    header["lambda"] = le.ridge_lambda;
    header["class_count"] = le.class_count;
    header["provenance"] = le.provenance;
    // payload: erasure row-major, then the fit mean
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> e =
        le.erasure.cast<float>();
    Eigen::VectorXf mean = le.mean.cast<float>();
    append_f32(payload, e.data(), static_cast<std::size_t>(e.size()));
    append_f32(payload, mean.data(), static_cast<std::size_t>(mean.size()));
  }
  write_container(path, header, payload);
}

Projector load_projector(const std::string& path) {
  Container c = read_container(path);
  const int version = c.header.value("version", -1);
  if (version != kProjectorVersion)
    fail(Err::UnsupportedVersion,
         "projector version " + std::to_string(version) + " not supported");
  const std::string kind = c.header.value("kind", "");
  if (kind == "isp") {
    IspModel m;
    m.dim = c.header.at("dim").get<int>();
    m.rank = c.header.at("rank").get<int>();
    m.whitened = c.header.value("whitened", false);
    m.fit_identity_count = c.header.value("fit_identity_count", 0);
    m.provenance = c.header.value("provenance", std::string{});
    if (m.dim <= 0 || m.rank <= 0 || m.rank > m.dim)
      fail(Err::Format, "bad ISP header dimensions");
    if (c.header.contains("singular_values")) {
      const auto& sv = c.header["singular_values"];
      m.singular_values.resize(static_cast<Eigen::Index>(sv.size()));
      for (std::size_t i = 0; i < sv.size(); ++i)
        m.singular_values(static_cast<Eigen::Index>(i)) = sv[i].get<double>();
    }
    const std::size_t nb = static_cast<std::size_t>(m.dim) * m.rank;
    std::vector<float> data = payload_as_f32(c, nb + m.dim);
    m.basis = Eigen::Map<Eigen::MatrixXf>(data.data(), m.dim, m.rank)
                  .cast<double>();
    m.global_mean =
        Eigen::Map<Eigen::VectorXf>(data.data() + nb, m.dim).cast<double>();
    return m;
  }
  if (kind == "leace") {
    LeaceModel m;
    m.dim = c.header.at("dim").get<int>();
    m.ridge_lambda = c.header.value("lambda", 0.0);
    m.class_count = c.header.value("class_count", 0);
    m.provenance = c.header.value("provenance", std::string{});
    if (m.dim <= 0) fail(Err::Format, "bad erasure header dimensions");
    const std::size_t ne = static_cast<std::size_t>(m.dim) * m.dim;
    std::vector<float> data = payload_as_f32(c, ne + m.dim);
    m.erasure =
        Eigen::Map<
            Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data(), m.dim, m.dim)
            .cast<double>();
    m.mean =
        Eigen::Map<Eigen::VectorXf>(data.data() + ne, m.dim).cast<double>();
    return m;
  }
  fail(Err::Format, "not a projector file (kind '" + kind + "')");
}

EmbeddingSet apply_projector(const Projector& p, const EmbeddingSet& set) {
  if (const auto* isp = std::get_if<IspModel>(&p)) return apply_isp(*isp, set);
  return apply_leace(std::get<LeaceModel>(p), set, true);
}

int projector_dim(const Projector& p) {
  return std::visit([](const auto& m) { return m.dim; }, p);
}

int projector_rank(const Projector& p) {
  if (const auto* isp = std::get_if<IspModel>(&p)) return isp->rank;
  return std::get<LeaceModel>(p).dim;
}

const char* projector_kind(const Projector& p) {
  return std::holds_alternative<IspModel>(p) ? "isp" : "leace";
}

}  // namespace idsan
