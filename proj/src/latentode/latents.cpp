#include "pkode/latentode/latents.hpp"

#include <cmath>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "pkode/numcore/errors.hpp"

namespace pkode::latentode {

std::vector<LatentRow> export_latents(const LatentOdeModel& model, std::span<const pksim::PatientRecord> records) {
  std::vector<LatentRow> rows(records.size());
  std::exception_ptr failure;
  const auto count = static_cast<std::int64_t>(records.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const auto& r = records[static_cast<std::size_t>(i)];
      rows[static_cast<std::size_t>(i)] = LatentRow{r.id, encode(model, r.sparse, r.covariates).mean, r.covariates};
    } catch (...) {
#pragma omp critical(pkode_export_latents)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

Matrix latent_matrix(std::span<const LatentRow> rows) {
  require(!rows.empty(), "latent_matrix: no rows");
  Matrix x(static_cast<Eigen::Index>(rows.size()), rows.front().mean.size());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = rows[i].mean.transpose();
  return x;
}

Matrix PcaResult::project(const Matrix& x) const {
  require(x.cols() == mean.size(), "PcaResult::project: dimension mismatch");
  return (x.rowwise() - mean.transpose()) * components;
}

PcaResult pca(const Matrix& x, Eigen::Index n_components) {
  require(n_components >= 1, "pca: n_components must be >= 1");
  require(x.cols() >= n_components, "pca: more components than input dimensions");
  require(x.rows() >= 2 && x.rows() >= n_components, "pca: need at least 2 rows and one per component");
  PcaResult r;
  r.mean = x.colwise().mean().transpose();
  const Matrix centred = x.rowwise() - r.mean.transpose();
  const Matrix cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  require(eig.info() == Eigen::Success, "pca: eigendecomposition failed");
  const Eigen::Index d = x.cols();
  const double total = std::max(eig.eigenvalues().sum(), 0.0);
  r.components.resize(d, n_components);
  r.explained_variance.resize(n_components);
  r.explained_ratio.resize(n_components);
  for (Eigen::Index k = 0; k < n_components; ++k) {
    const Eigen::Index src = d - 1 - k;  // eigenvalues come in increasing order
    Vector v = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    r.components.col(k) = v;
    r.explained_variance[k] = std::max(eig.eigenvalues()[src], 0.0);
    r.explained_ratio[k] = total > 0.0 ? r.explained_variance[k] / total : 0.0;
  }
  return r;
}

std::vector<int> LinearClassifier::predict(const Matrix& x) const {
  require(x.cols() == weights.size(), "LinearClassifier::predict: dimension mismatch");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(x.row(i).dot(weights) + bias > 0.0 ? 1 : 0);
  return out;
}

LinearClassifier fit_logistic(const Matrix& x, std::span<const int> labels, double ridge, int max_iterations) {
  require(x.rows() == static_cast<Eigen::Index>(labels.size()), "fit_logistic: label count mismatch");
  require(x.rows() >= 1, "fit_logistic: no samples");
  require(ridge > 0.0, "fit_logistic: ridge must be > 0");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols() + 1;
  Matrix design(n, p);
  design.leftCols(x.cols()) = x;
  design.col(x.cols()).setOnes();
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(labels[static_cast<std::size_t>(i)] == 0 || labels[static_cast<std::size_t>(i)] == 1,
            "fit_logistic: labels must be 0 or 1");
    y[i] = labels[static_cast<std::size_t>(i)];
  }
  Vector beta = Vector::Zero(p);
  for (int it = 0; it < max_iterations; ++it) {
    const Vector eta = design * beta;
    const Vector prob = eta.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    const Vector w = prob.array() * (1.0 - prob.array());
    const Vector grad = design.transpose() * (y - prob) - ridge * beta;
    Matrix hess = design.transpose() * w.asDiagonal() * design;
    hess.diagonal().array() += ridge;
    const Vector delta = hess.ldlt().solve(grad);
    beta += delta;
    if (delta.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  LinearClassifier c;
  c.weights = beta.head(x.cols());
  c.bias = beta[x.cols()];
  return c;
}

ClassificationScore score(std::span<const int> predicted, std::span<const int> labels) {
  require(predicted.size() == labels.size() && !labels.empty(), "score: size mismatch or empty input");
  std::size_t correct = 0;
  std::size_t pos = 0;
  std::size_t neg = 0;
  std::size_t true_pos = 0;
  std::size_t true_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += predicted[i] == labels[i];
    if (labels[i] == 1) {
      ++pos;
      true_pos += predicted[i] == 1;
    } else {
      ++neg;
      true_neg += predicted[i] == 0;
    }
  }
  ClassificationScore s;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  double recall_sum = 0.0;
  int classes = 0;
  if (pos > 0) {
    recall_sum += static_cast<double>(true_pos) / static_cast<double>(pos);
    ++classes;
  }
  if (neg > 0) {
    recall_sum += static_cast<double>(true_neg) / static_cast<double>(neg);
    ++classes;
  }
  s.balanced_accuracy = recall_sum / classes;
  return s;
}

void write_latents_csv(std::ostream& out, std::span<const LatentRow> rows, const PcaResult* pca) {
  require(!rows.empty(), "write_latents_csv: no rows");
  const Eigen::Index dim = rows.front().mean.size();
  out << "id,cyp,st,dose,hct";
  for (Eigen::Index d = 0; d < dim; ++d) out << ",z" << d;
  Matrix scores;
  if (pca != nullptr) {
    for (Eigen::Index k = 0; k < pca->components.cols(); ++k) out << ",pc" << (k + 1);
    scores = pca->project(latent_matrix(rows));
  }
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << r.id << ',' << r.covariates.cyp << ',' << r.covariates.st << ',' << r.covariates.dose << ','
        << r.covariates.hct;
    for (Eigen::Index d = 0; d < dim; ++d) out << ',' << r.mean[d];
    if (pca != nullptr) {
      for (Eigen::Index k = 0; k < scores.cols(); ++k) out << ',' << scores(static_cast<Eigen::Index>(i), k);
    }
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace pkode::latentode
