#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "pkode/latentode/model.hpp"

namespace pkode::latentode {

struct LatentRow {
  std::uint64_t id = 0;
  Vector mean;  // posterior mean of z0
  pksim::PatientCovariates covariates;
};

/// Posterior means for every record, encoded from its sparse observations.
std::vector<LatentRow> export_latents(const LatentOdeModel& model, std::span<const pksim::PatientRecord> records);

Matrix latent_matrix(std::span<const LatentRow> rows);

struct PcaResult {
  Vector mean;                    // column means of the input
  Matrix components;              // D x k, columns ordered by decreasing eigenvalue
  Vector explained_variance;      // k eigenvalues of the sample covariance
  Vector explained_ratio;         // k, share of total variance

  Matrix project(const Matrix& x) const;
};

/// PCA by eigendecomposition of the sample covariance of the centred rows.
/// Signs are fixed so the largest-magnitude loading of each component is
/// positive.
PcaResult pca(const Matrix& x, Eigen::Index n_components = 2);

/// Two-class logistic regression fitted by Newton iterations with a small
/// ridge term; labels are 0/1.
struct LinearClassifier {
  Vector weights;
  double bias = 0.0;

  std::vector<int> predict(const Matrix& x) const;
};

LinearClassifier fit_logistic(const Matrix& x, std::span<const int> labels, double ridge = 1e-6,
                              int max_iterations = 100);

struct ClassificationScore {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean of per-class recall
};

ClassificationScore score(std::span<const int> predicted, std::span<const int> labels);

/// CSV: id, cyp, st, dose, hct, z0..z{D-1}, then pc1..pck when `pca` is set.
void write_latents_csv(std::ostream& out, std::span<const LatentRow> rows, const PcaResult* pca = nullptr);

}  // namespace pkode::latentode
