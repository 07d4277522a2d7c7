#pragma once

#include <cstdint>
#include <vector>

#include "mffl/common.hpp"

namespace mffl {

enum class TaskFamily { Quadratic, Logistic };

// Labeled sample set drawn from a task's data distribution.
struct Dataset {
  Eigen::MatrixXd features;  // one row per sample
  std::vector<int> labels;   // 0-based class indices
  int class_count = 0;
  int source_task = -1;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

// Gaussian feature distribution for one class of a logistic task.
struct GaussianClass {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetric PSD
};

// A client's data-generating objective. The quadratic family is the analytic
// workhorse (risk, gradient and minimizer in closed form); the logistic
// family is the dataset-backed one, with risk defined on the client's fixed
// empirical sample.
struct TaskSpec {
  TaskFamily family = TaskFamily::Quadratic;

  // Quadratic: risk(w) = 0.5 * (w - center)' * curvature * (w - center)
  Eigen::VectorXd center;
  Eigen::MatrixXd curvature;

  // Logistic: linear softmax scores per class over Gaussian features.
  std::vector<GaussianClass> classes;
  int sample_count = 0;  // m_k
  Dataset data;          // fixed per client

  int dim() const;           // dimension of the weight vector
  int feature_dim() const;   // logistic only
  int class_dim() const;     // logistic only

  static TaskSpec quadratic(Eigen::VectorXd center, Eigen::MatrixXd curvature);
  // Samples the client's dataset eagerly so risk/grad are well defined.
  static TaskSpec logistic(std::vector<GaussianClass> classes, int samples,
                           std::uint64_t seed);
};

// Point on the simplex weighting the clients' distributions in the target.
struct MixtureWeights {
  std::vector<double> alphas;

  std::size_t size() const { return alphas.size(); }
  double operator[](std::size_t k) const { return alphas[k]; }

  static MixtureWeights from(std::vector<double> alphas);
  static MixtureWeights uniform(std::size_t count);
  static MixtureWeights sample_proportional(const std::vector<int>& counts);
};

double risk(const WeightVector& w, const TaskSpec& task);
WeightVector grad(const WeightVector& w, const TaskSpec& task);

double mixture_risk(const WeightVector& w, const std::vector<TaskSpec>& tasks,
                    const MixtureWeights& alpha);
WeightVector mixture_grad(const WeightVector& w, const std::vector<TaskSpec>& tasks,
                          const MixtureWeights& alpha);

// Minimizer of the mixture risk over all-quadratic tasks:
// (sum alpha_k A_k)^{-1} (sum alpha_k A_k theta_k).
WeightVector mixture_optimum(const std::vector<TaskSpec>& tasks,
                             const MixtureWeights& alpha);

// m i.i.d. samples from a logistic task's feature distribution; classes are
// drawn uniformly. Identical seeds give bit-identical datasets.
Dataset sample_dataset(const TaskSpec& task, int samples, std::uint64_t seed);

}  // namespace mffl
