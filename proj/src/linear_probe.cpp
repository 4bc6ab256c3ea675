#include <Eigen/Dense>

#include "uicl/analysis.hpp"
#include "uicl/errors.hpp"

namespace uicl {

std::vector<double> linear_probe_baseline(const ReferenceEmbeddings& embeddings,
                                          std::span<const double> y,
                                          std::span<const std::size_t> train_idx,
                                          std::span<const std::size_t> test_idx, double ridge) {
  const Matrix& e = embeddings.matrix;
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
  if (y.size() != e.rows) throw DataError("probe target length differs from the embedding rows");
  if (train_idx.empty()) throw DataError("probe needs at least one training region");
  std::vector<bool> in_train(e.rows, false);
  for (std::size_t i : train_idx) {
    if (i >= e.rows) throw DataError("probe train index out of range");
    in_train[i] = true;
  }
  for (std::size_t i : test_idx) {
    if (i >= e.rows) throw DataError("probe test index out of range");
    if (in_train[i]) throw DataError("probe train and test indices overlap");
  }

  const auto m = static_cast<Eigen::Index>(train_idx.size());
  const auto d = static_cast<Eigen::Index>(e.cols);
  Eigen::MatrixXd x(m, d);
  Eigen::VectorXd target(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) x(r, c) = e(train_idx[r], static_cast<std::size_t>(c));
    target(r) = y[train_idx[r]];
  }
  // The intercept is left unpenalized by centering on the training rows.
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = target.mean();
  x.rowwise() -= x_mean;
  target.array() -= y_mean;

  Eigen::VectorXd w;
  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < d) {
      throw NumericalError("probe design is rank deficient with ridge = 0; use ridge > 0");
    }
    w = qr.solve(target);
  } else {
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericalError("probe normal equations are singular");
    w = llt.solve(x.transpose() * target);
  }

  std::vector<double> pred;
  pred.reserve(test_idx.size());
  for (std::size_t i : test_idx) {
    double v = y_mean;
    for (Eigen::Index c = 0; c < d; ++c) v += (e(i, static_cast<std::size_t>(c)) - x_mean(c)) * w(c);
    pred.push_back(v);
  }
  return pred;
}

}  // namespace uicl
