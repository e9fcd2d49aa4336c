// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "core/container.hpp"
#include "core/projector.hpp"
#include "core/rng.hpp"
#include "core/synth.hpp"

using namespace idsan;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// two identities with noise-free images at normalize(+-e1 + delta*e2);
// the centered-mean matrix has rank 1 spanned exactly by e1
EmbeddingSet two_class_set(double delta) {
  EmbeddingSet set;
  set.dim = 3;
  set.count = 6;
  set.vectors.resize(6, 3);
  const double nrm = std::sqrt(1.0 + delta * delta);
  for (int r = 0; r < 3; ++r) {
    set.vectors(r, 0) = float(1.0 / nrm);
    set.vectors(r, 1) = float(delta / nrm);
    set.vectors(r, 2) = 0.0f;
    set.vectors(3 + r, 0) = float(-1.0 / nrm);
    set.vectors(3 + r, 1) = float(delta / nrm);
    set.vectors(3 + r, 2) = 0.0f;
  }
  set.identity_labels = {"a", "b"};
  set.identity_of = {0, 0, 0, 1, 1, 1};
  set.split_of = {Split::Train, Split::Train};
  set.normalized = true;
  set.rebuild_row_index();
  return set;
}

SynthConfig small_cfg(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.dim = 32;
  cfg.identities = 40;
  cfg.images_per_identity = 8;
  cfg.identity_rank = 8;
  cfg.task_classes = 0;
  cfg.task_rank = 0;
  cfg.task_scale = 0.0;
  cfg.train_identities = 30;
  cfg.val_identities = 5;
  cfg.test_identities = 5;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("two-class fit recovers the separating direction exactly") {
  EmbeddingSet set = two_class_set(0.05);
  IspModel model = fit_isp(set, 1);
  CHECK(model.rank == 1);
  // basis spans e1
  CHECK(std::abs(std::abs(model.basis(0, 0)) - 1.0) <= 1e-9);
  CHECK(std::abs(model.basis(1, 0)) <= 1e-9);
  CHECK(std::abs(model.basis(2, 0)) <= 1e-9);

  // applying the projector zeroes the e1 component of any vector
  EmbeddingSet probe;
  probe.dim = 3;
  probe.count = 1;
  probe.vectors.resize(1, 3);
  probe.vectors << 0.6f, 0.64f, 0.48f;
  probe.identity_labels = {"q"};
  probe.identity_of = {0};
  probe.split_of = {Split::Test};
  probe.normalized = true;
  probe.rebuild_row_index();
  EmbeddingSet out = apply_isp(model, probe);
  CHECK(std::abs(out.vectors(0, 0)) <= 1e-6);
  CHECK(out.vectors(0, 1) == doctest::Approx(0.8).epsilon(1e-5));
  CHECK(out.vectors(0, 2) == doctest::Approx(0.6).epsilon(1e-5));
}

TEST_CASE("full-rank fit annihilates every centered mean") {
  auto [set, truth] = generate(small_cfg(3));
  const int full = isp_mean_rank(set);
  CHECK(full >= 2);
  IspModel model = fit_isp(set, full);

  // recompute train means and check P * (mu_i - mu_C) vanishes
  Eigen::MatrixXd p = model.projector_dense();
  const auto train = set.identities_in(Split::Train);
  Eigen::MatrixXd means(set.dim, train.size());
  for (std::size_t c = 0; c < train.size(); ++c) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(set.dim);
    for (int r : set.rows_of[train[c]])
      mu += set.vectors.row(r).cast<double>().transpose();
    means.col(c) = mu / double(set.rows_of[train[c]].size());
  }
  Eigen::VectorXd grand = means.rowwise().mean();
  for (Eigen::Index c = 0; c < means.cols(); ++c)
    CHECK((p * (means.col(c) - grand)).norm() <= 1e-6);

  // and pairwise mean differences collapse
  for (Eigen::Index i = 0; i < means.cols(); ++i)
    for (Eigen::Index j = i + 1; j < means.cols(); ++j)
      CHECK((p * (means.col(i) - means.col(j))).norm() <= 1e-5);
}

TEST_CASE("projector algebra: symmetric, idempotent, correct trace") {
  auto [set, truth] = generate(small_cfg(4));
  IspModel model = fit_isp(set, 6);
  Eigen::MatrixXd p = model.projector_dense();
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(p.trace() - double(set.dim - 6)) <= 1e-4);
  Eigen::MatrixXd gram = model.basis.transpose() * model.basis;
  gram -= Eigen::MatrixXd::Identity(6, 6);
  CHECK(gram.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("truncated fit is bounded by the first discarded singular value") {
  auto [set, truth] = generate(small_cfg(5));
  const int full = isp_mean_rank(set);
  const int r = full / 2;
  IspModel model = fit_isp(set, r);
  IspModel full_model = fit_isp(set, full);
  const double sigma_next = full_model.singular_values(r);

  Eigen::MatrixXd p = model.projector_dense();
  const auto train = set.identities_in(Split::Train);
  Eigen::MatrixXd means(set.dim, train.size());
  for (std::size_t c = 0; c < train.size(); ++c) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(set.dim);
    for (int rr : set.rows_of[train[c]])
      mu += set.vectors.row(rr).cast<double>().transpose();
    means.col(c) = mu / double(set.rows_of[train[c]].size());
  }
  Eigen::VectorXd grand = means.rowwise().mean();
  for (Eigen::Index c = 0; c < means.cols(); ++c)
    CHECK((p * (means.col(c) - grand)).norm() <= sigma_next + 1e-9);
}

TEST_CASE("requesting more than the mean rank fails with the usable rank") {
  auto [set, truth] = generate(small_cfg(6));
  const int full = isp_mean_rank(set);
  try {
    fit_isp(set, full + 1);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::RankDeficient);
    CHECK(e.info() == full);
  }
}

TEST_CASE("fewer than two train identities is a degenerate fit") {
  EmbeddingSet set = two_class_set(0.01);
  set.split_of = {Split::Train, Split::Test};
  try {
    fit_isp(set, 1);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::DegenerateFit);
  }
}

TEST_CASE("paper-scale rank configurations are accepted") {
  SynthConfig cfg;
  cfg.identities = 300;
  cfg.images_per_identity = 2;
  cfg.train_identities = 280;
  cfg.val_identities = 10;
  cfg.test_identities = 10;
  cfg.task_classes = 0;
  cfg.task_rank = 0;
  cfg.task_scale = 0.0;
  cfg.seed = 11;

  cfg.dim = 512;
  cfg.identity_rank = 512;
  {
    auto [set, truth] = generate(cfg);
    IspModel model = fit_isp(set, 192);
    CHECK(model.rank == 192);
    CHECK(model.dim == 512);
  }
  cfg.dim = 768;
  cfg.identity_rank = 768;
  {
    auto [set, truth] = generate(cfg);
    IspModel model = fit_isp(set, 256);
    CHECK(model.rank == 256);
  }
}

TEST_CASE("apply keeps the complement fixed and rejects in-subspace rows") {
  auto [set, truth] = generate(small_cfg(7));
  IspModel model = fit_isp(set, 8);

  // vector orthogonal to the basis passes through unchanged
  Eigen::VectorXd v = Eigen::VectorXd::Zero(set.dim);
  v(set.dim - 1) = 1.0;
  v -= model.basis * (model.basis.transpose() * v);
  v.normalize();
  EmbeddingSet probe;
  probe.dim = set.dim;
  probe.count = 2;
  probe.vectors.resize(2, set.dim);
  probe.vectors.row(0) = v.transpose().cast<float>();
  probe.vectors.row(1) = v.transpose().cast<float>();
  probe.identity_labels = {"q"};
  probe.identity_of = {0, 0};
  probe.split_of = {Split::Test};
  probe.normalized = true;
  probe.rebuild_row_index();
  EmbeddingSet out = apply_isp(model, probe);
  const double cos = out.vectors.row(0).cast<double>().dot(v) /
                     out.vectors.row(0).cast<double>().norm();
  CHECK(cos >= 1.0 - 1e-6);

  // a row inside the removed span erases to nothing; the two-class fixture
  // fits an axis-aligned basis so the span is exactly representable
  EmbeddingSet axis = two_class_set(0.05);
  IspModel axis_model = fit_isp(axis, 1);
  EmbeddingSet inside;
  inside.dim = 3;
  inside.count = 1;
  inside.vectors.resize(1, 3);
  inside.vectors << 1.0f, 0.0f, 0.0f;
  inside.identity_labels = {"q"};
  inside.identity_of = {0};
  inside.split_of = {Split::Test};
  inside.normalized = true;
  inside.rebuild_row_index();
  try {
    apply_isp(axis_model, inside);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::DegenerateVector);
    CHECK(e.info() == 0);
  }
}

TEST_CASE("sanitized rows are orthogonal to the removed subspace") {
  auto [set, truth] = generate(small_cfg(8));
  IspModel model = fit_isp(set, 8);
  EmbeddingSet out = apply_isp(model, set);
  Eigen::MatrixXd residual =
      out.vectors.cast<double>() * model.basis;  // count x r
  CHECK(residual.cwiseAbs().maxCoeff() <= 1e-5);
  CHECK(out.normalized);
}

TEST_CASE("whitened variant keeps the model invariants") {
  auto [set, truth] = generate(small_cfg(9));
  IspOptions opts;
  opts.whiten = true;
  IspModel model = fit_isp(set, 8, opts);
  CHECK(model.whitened);
  Eigen::MatrixXd p = model.projector_dense();
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(p.trace() - double(set.dim - 8)) <= 1e-4);
}

TEST_CASE("erasure leaves nothing to erase on identical class means") {
  // both classes hold the same vectors, so the empirical cross-covariance is
  // exactly zero and the eraser reduces to the identity
  EmbeddingSet set;
  set.dim = 4;
  set.count = 40;
  set.vectors.resize(40, 4);
  Rng rng(31);
  for (int r = 0; r < 20; ++r) {
    Eigen::VectorXd v(4);
    for (int c = 0; c < 4; ++c) v(c) = rng.normal();
    v.normalize();
    set.vectors.row(2 * r) = v.transpose().cast<float>();
    set.vectors.row(2 * r + 1) = v.transpose().cast<float>();
  }
  set.identity_labels = {"a", "b"};
  for (int r = 0; r < 40; ++r) set.identity_of.push_back(r % 2);
  set.split_of = {Split::Train, Split::Train};
  set.normalized = true;
  set.rebuild_row_index();

  LeaceModel model = fit_leace(set, 1e-4);
  CHECK((model.erasure - Eigen::MatrixXd::Identity(4, 4))
            .cwiseAbs()
            .maxCoeff() <= 1e-9);

  // exact guarantee regardless: zero cross-covariance on the fit set
  EmbeddingSet erased = apply_leace(model, set, false);
  Eigen::MatrixXd x = erased.vectors.cast<double>();
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd xc = x.rowwise() - mean;
  Eigen::MatrixXd zc(40, 2);
  for (int r = 0; r < 40; ++r) {
    zc(r, 0) = (set.identity_of[r] == 0 ? 1.0 : 0.0) - 0.5;
    zc(r, 1) = (set.identity_of[r] == 1 ? 1.0 : 0.0) - 0.5;
  }
  Eigen::MatrixXd cross = xc.transpose() * zc / 40.0;
  CHECK(cross.cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("two separable classes end with equal means after erasure") {
  EmbeddingSet set;
  set.dim = 2;
  set.count = 20;
  set.vectors.resize(20, 2);
  Rng rng(77);
  for (int r = 0; r < 20; ++r) {
    const double side = r < 10 ? 1.0 : -1.0;
    Eigen::Vector2d v(side * 0.9 + 0.05 * rng.normal(),
                      0.4 + 0.05 * rng.normal());
    v.normalize();
    set.vectors.row(r) = v.transpose().cast<float>();
  }
  set.identity_labels = {"a", "b"};
  for (int r = 0; r < 20; ++r) set.identity_of.push_back(r < 10 ? 0 : 1);
  set.split_of = {Split::Train, Split::Train};
  set.normalized = true;
  set.rebuild_row_index();

  LeaceModel model = fit_leace(set, 1e-5);
  EmbeddingSet erased = apply_leace(model, set, false);
  Eigen::VectorXd mean_a = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd mean_b = Eigen::VectorXd::Zero(2);
  for (int r = 0; r < 10; ++r)
    mean_a += erased.vectors.row(r).cast<double>().transpose();
  for (int r = 10; r < 20; ++r)
    mean_b += erased.vectors.row(r).cast<double>().transpose();
  CHECK(((mean_a - mean_b) / 10.0).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("erasure requires a positive ridge and two classes") {
  EmbeddingSet set = two_class_set(0.05);
  try {
    fit_leace(set, 0.0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::InvalidArgument);
  }
  set.split_of = {Split::Train, Split::Test};
  try {
    fit_leace(set, 1e-4);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::DegenerateFit);
  }
}

TEST_CASE("principal angles: identical, orthogonal, symmetric") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 1.0;
  SubspaceAlignment same = principal_angles(a, a);
  CHECK(same.cosines.size() == 2);
  CHECK(same.cosines(0) == doctest::Approx(1.0));
  CHECK(same.cosines(1) == doctest::Approx(1.0));

  Eigen::MatrixXd e1 = Eigen::MatrixXd::Zero(2, 1);
  e1(0, 0) = 1.0;
  Eigen::MatrixXd e2 = Eigen::MatrixXd::Zero(2, 1);
  e2(1, 0) = 1.0;
  CHECK(principal_angles(e1, e2).cosines(0) == doctest::Approx(0.0));

  // same multiset of cosines in both orders
  Rng rng(12);
  Eigen::MatrixXd g1(6, 3), g2(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) {
      g1(i, j) = rng.normal();
      g2(i, j) = rng.normal();
    }
  Eigen::HouseholderQR<Eigen::MatrixXd> q1(g1), q2(g2);
  Eigen::MatrixXd b1 = q1.householderQ() * Eigen::MatrixXd::Identity(6, 3);
  Eigen::MatrixXd b2 = q2.householderQ() * Eigen::MatrixXd::Identity(6, 3);
  SubspaceAlignment ab = principal_angles(b1, b2);
  SubspaceAlignment ba = principal_angles(b2, b1);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(ab.cosines(i) - ba.cosines(i)) <= 1e-9);
  for (int i = 0; i < 3; ++i) {
    CHECK(ab.cosines(i) >= 0.0);
    CHECK(ab.cosines(i) <= 1.0 + 1e-9);
    if (i) CHECK(ab.cosines(i) <= ab.cosines(i - 1) + 1e-12);
  }
}

TEST_CASE("non-orthonormal input is rejected") {
  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(3, 2);
  try {
    principal_angles(bad, bad);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::InvalidBasis);
  }
}

TEST_CASE("independent fits of one planted model align") {
  SynthConfig cfg = small_cfg(100);
  cfg.identities = 64;
  cfg.train_identities = 48;
  cfg.val_identities = 8;
  cfg.test_identities = 8;
  cfg.images_per_identity = 12;
  cfg.subspace_seed = 4242;
  auto [set_a, truth_a] = generate(cfg);
  cfg.seed = 101;
  auto [set_b, truth_b] = generate(cfg);

  IspModel fit_a = fit_isp(set_a, cfg.identity_rank);
  IspModel fit_b = fit_isp(set_b, cfg.identity_rank);
  SubspaceAlignment al = principal_angles(fit_a.basis, fit_b.basis);
  CHECK(al.cosines(0) >= 0.99);
}

TEST_CASE("projector files round-trip and validate") {
  auto [set, truth] = generate(small_cfg(13));
  IspModel model = fit_isp(set, 5);
  model.provenance = "unit";
  const std::string path = temp_path("proj.bin");
  save_projector(model, path);

  Projector loaded = load_projector(path);
  const auto& lm = std::get<IspModel>(loaded);
  CHECK(lm.rank == 5);
  CHECK(lm.dim == set.dim);
  CHECK(lm.provenance == "unit");

  // payload round trip is exact: saving the loaded model reproduces the file
  const std::string path2 = temp_path("proj2.bin");
  save_projector(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  // applying the loaded model matches applying the exported form in memory
  EmbeddingSet via_mem = apply_isp(model.quantized(), set);
  EmbeddingSet via_file = apply_isp(lm, set);
  CHECK((via_mem.vectors - via_file.vectors).cwiseAbs().maxCoeff() == 0.0f);

  // erasure model round trip
  LeaceModel le = fit_leace(set, 1e-3, "unit");
  const std::string lpath = temp_path("leace.bin");
  save_projector(le, lpath);
  Projector lload = load_projector(lpath);
  CHECK(std::get<LeaceModel>(lload).class_count == le.class_count);
  EmbeddingSet le_mem = apply_leace(le.quantized(), set, true);
  EmbeddingSet le_file = apply_leace(std::get<LeaceModel>(lload), set, true);
  CHECK((le_mem.vectors - le_file.vectors).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("corrupt projector files are rejected") {
  auto [set, truth] = generate(small_cfg(14));
  IspModel model = fit_isp(set, 3);
  const std::string path = temp_path("trunc.bin");
  save_projector(model, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << all.substr(0, all.size() - 7);
  }
  try {
    load_projector(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Format);
  }

  // version field must be 1
  save_projector(model, path);
  {
    Container c = read_container(path);
    c.header["version"] = 2;
    write_container(path, c.header, c.payload);
  }
  try {
    load_projector(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::UnsupportedVersion);
  }
}

TEST_CASE("dimension mismatch on apply is a dim error") {
  auto [set, truth] = generate(small_cfg(15));
  IspModel model = fit_isp(set, 3);
  EmbeddingSet other = two_class_set(0.1);
  try {
    apply_isp(model, other);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Dim);
  }
}
