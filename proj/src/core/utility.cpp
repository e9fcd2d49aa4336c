// SPDX-License-Identifier: Apache-2.0
#include "core/utility.hpp"

#include <algorithm>
#include <set>

#include <Eigen/Dense>

namespace idsan {

namespace {

Eigen::MatrixXd unit_rows(const EmbeddingSet& set) {
  Eigen::MatrixXd m = set.vectors.cast<double>();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 1e-12) m.row(r) /= n;
  }
  return m;
}

void check_labeled(const EmbeddingSet& set,
                   const std::vector<std::int32_t>& labels) {
  if (static_cast<std::int64_t>(labels.size()) != set.count)
    fail(Err::Metadata, "label count does not match row count");
}

}  // namespace

double knn_top1(const EmbeddingSet& train,
                const std::vector<std::int32_t>& train_labels,
                const EmbeddingSet& test,
                const std::vector<std::int32_t>& test_labels, int k) {
  if (train.dim != test.dim) fail(Err::Dim, "train/test dims differ");
  check_labeled(train, train_labels);
  check_labeled(test, test_labels);
  if (k < 1 || k > train.count)
    fail(Err::InvalidK, "k must be in [1, train size], got " +
                            std::to_string(k));

  const Eigen::MatrixXd g = unit_rows(train);
  const Eigen::MatrixXd q = unit_rows(test);
  std::int32_t n_classes = 0;
  for (auto l : train_labels) n_classes = std::max(n_classes, l + 1);

  std::int64_t correct = 0;
  std::vector<int> order(static_cast<std::size_t>(train.count));
  std::vector<double> votes(static_cast<std::size_t>(n_classes));
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    Eigen::VectorXd sims = g * q.row(r).transpose();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                     [&](int a, int b) {
                       return sims(a) != sims(b) ? sims(a) > sims(b) : a < b;
                     });
    std::sort(order.begin(), order.begin() + k, [&](int a, int b) {
      return sims(a) != sims(b) ? sims(a) > sims(b) : a < b;
    });
    std::fill(votes.begin(), votes.end(), 0.0);
    for (int i = 0; i < k; ++i)
      votes[static_cast<std::size_t>(train_labels[order[i]])] += 1.0;
    double best = -1.0;
    std::set<std::int32_t> tied;
    for (std::int32_t c = 0; c < n_classes; ++c) {
      if (votes[static_cast<std::size_t>(c)] > best) {
        best = votes[static_cast<std::size_t>(c)];
        tied = {c};
      } else if (votes[static_cast<std::size_t>(c)] == best) {
        tied.insert(c);
      }
    }
    std::int32_t winner = *tied.begin();
    if (tied.size() > 1) {
      for (int i = 0; i < k; ++i)  // nearest neighbor among tied classes
        if (tied.count(train_labels[order[i]])) {
          winner = train_labels[order[i]];
          break;
        }
    }
    if (winner == test_labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return double(correct) / double(test.count);
}

double linear_probe_top1(const EmbeddingSet& train,
                         const std::vector<std::int32_t>& train_labels,
                         const EmbeddingSet& test,
                         const std::vector<std::int32_t>& test_labels,
                         double alpha) {
  if (train.dim != test.dim) fail(Err::Dim, "train/test dims differ");
  check_labeled(train, train_labels);
  check_labeled(test, test_labels);
  if (alpha < 0.0) fail(Err::InvalidArgument, "alpha must be >= 0");
  std::int32_t n_classes = 0;
  for (auto l : train_labels) n_classes = std::max(n_classes, l + 1);
  if (n_classes < 2) fail(Err::DegenerateTask, "need at least 2 task classes");

  Eigen::MatrixXd x = train.vectors.cast<double>();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(train.count, n_classes);
  for (std::int64_t r = 0; r < train.count; ++r)
    y(r, train_labels[static_cast<std::size_t>(r)]) = 1.0;
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += alpha;
  Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);

  Eigen::MatrixXd scores = test.vectors.cast<double>() * w;
  std::int64_t correct = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index arg = 0;
    scores.row(r).maxCoeff(&arg);
    if (static_cast<std::int32_t>(arg) ==
        test_labels[static_cast<std::size_t>(r)])
      ++correct;
  }
  return double(correct) / double(test.count);
}

double recall_at_k(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                   const std::map<int, std::vector<int>>& truth, int k) {
  if (queries.dim != gallery.dim) fail(Err::Dim, "query/gallery dims differ");
  if (k < 1) fail(Err::InvalidK, "k must be >= 1");
  const Eigen::MatrixXd g = unit_rows(gallery);
  const Eigen::MatrixXd q = unit_rows(queries);

  std::int64_t hits = 0;
  std::vector<int> order(static_cast<std::size_t>(gallery.count));
  const int top = std::min<int>(k, static_cast<int>(gallery.count));
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    auto it = truth.find(static_cast<int>(r));
    if (it == truth.end() || it->second.empty())
      fail(Err::MissingTruth,
           "query " + std::to_string(r) + " has no ground-truth item", r);
    Eigen::VectorXd sims = g * q.row(r).transpose();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::nth_element(order.begin(), order.begin() + (top - 1), order.end(),
                     [&](int a, int b) {
                       return sims(a) != sims(b) ? sims(a) > sims(b) : a < b;
                     });
    std::set<int> want(it->second.begin(), it->second.end());
    for (int i = 0; i < top; ++i)
      if (want.count(order[i])) {
        ++hits;
        break;
      }
  }
  return double(hits) / double(queries.count);
}

double retention(double raw, double projected) {
  if (!(raw > 0.0))
    fail(Err::UndefinedRetention, "raw baseline must be positive");
  return projected / raw * 100.0;
}

}  // namespace idsan
