#include "mffl/task_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mffl/rng.hpp"

namespace mffl {

namespace {

void check_psd(const Eigen::MatrixXd& m, const std::string& name) {
  require(m.rows() == m.cols(), name + " must be square");
  require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + m.cwiseAbs().maxCoeff()),
          name + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  require(es.eigenvalues().minCoeff() >= -1e-10, name + " must be positive semi-definite");
}

// Square root of a PSD covariance for sampling; robust to singular inputs.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// Class scores for the linear softmax model: w holds one block per class.
Eigen::VectorXd class_scores(const WeightVector& w, const Eigen::VectorXd& x, int c) {
  const int dx = static_cast<int>(x.size());
  Eigen::VectorXd s(c);
  for (int j = 0; j < c; ++j) s[j] = w.segment(j * dx, dx).dot(x);
  return s;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& s) {
  Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

void Dataset::validate() const {
  require(!labels.empty(), "dataset must be non-empty");
  require(features.rows() == static_cast<Eigen::Index>(labels.size()),
          "dataset feature/label counts differ");
  require(class_count >= 2, "dataset needs at least two classes");
  for (int y : labels)
    require(y >= 0 && y < class_count, "dataset label out of range");
}

int TaskSpec::dim() const {
  if (family == TaskFamily::Quadratic) return static_cast<int>(center.size());
  return class_dim() * feature_dim();
}

int TaskSpec::feature_dim() const {
  return classes.empty() ? 0 : static_cast<int>(classes.front().mean.size());
}

int TaskSpec::class_dim() const { return static_cast<int>(classes.size()); }

TaskSpec TaskSpec::quadratic(Eigen::VectorXd center, Eigen::MatrixXd curvature) {
  require(center.size() >= 1, "quadratic task needs a center");
  require(curvature.rows() == center.size() && curvature.cols() == center.size(),
          "curvature dimensions must match center");
  check_psd(curvature, "curvature");
  TaskSpec t;
  t.family = TaskFamily::Quadratic;
  t.center = std::move(center);
  t.curvature = std::move(curvature);
  return t;
}

TaskSpec TaskSpec::logistic(std::vector<GaussianClass> classes, int samples,
                            std::uint64_t seed) {
  require(classes.size() >= 2, "logistic task needs at least two classes");
  require(samples >= 1, "logistic task needs at least one sample");
  const Eigen::Index dx = classes.front().mean.size();
  for (const auto& cls : classes) {
    require(cls.mean.size() == dx, "class means must share the feature dimension");
    require(cls.cov.rows() == dx && cls.cov.cols() == dx,
            "class covariance dimensions must match the mean");
    check_psd(cls.cov, "class covariance");
  }
  TaskSpec t;
  t.family = TaskFamily::Logistic;
  t.classes = std::move(classes);
  t.sample_count = samples;
  t.data = sample_dataset(t, samples, seed);
  return t;
}

MixtureWeights MixtureWeights::from(std::vector<double> alphas) {
  require(!alphas.empty(), "mixture weights must be non-empty");
  double sum = 0.0;
  for (double a : alphas) {
    require(a >= 0.0, "mixture weights must be non-negative");
    sum += a;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "mixture weights must sum to 1");
  MixtureWeights m;
  m.alphas = std::move(alphas);
  return m;
}

MixtureWeights MixtureWeights::uniform(std::size_t count) {
  require(count >= 1, "mixture needs at least one component");
  std::vector<double> a(count, 1.0 / static_cast<double>(count));
  // Renormalize the last entry so the sum is exactly 1 in floating point.
  a.back() = 1.0 - std::accumulate(a.begin(), a.end() - 1, 0.0);
  return from(std::move(a));
}

MixtureWeights MixtureWeights::sample_proportional(const std::vector<int>& counts) {
  require(!counts.empty(), "mixture needs at least one component");
  long long total = 0;
  for (int c : counts) {
    require(c >= 1, "sample counts must be positive");
    total += c;
  }
  std::vector<double> a(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k)
    a[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
  a.back() = 1.0 - std::accumulate(a.begin(), a.end() - 1, 0.0);
  return from(std::move(a));
}

double risk(const WeightVector& w, const TaskSpec& task) {
  require(w.size() == task.dim(), "weight dimension does not match task");
  if (task.family == TaskFamily::Quadratic) {
    const Eigen::VectorXd delta = w - task.center;
    return 0.5 * delta.dot(task.curvature * delta);
  }
  task.data.validate();
  const int c = task.class_dim();
  double total = 0.0;
  for (std::size_t i = 0; i < task.data.size(); ++i) {
    const Eigen::VectorXd s = class_scores(w, task.data.features.row(i), c);
    const Eigen::VectorXd ls = (s.array() - s.maxCoeff());
    const double logz = std::log(ls.array().exp().sum());
    total += logz - ls[task.data.labels[i]];
  }
  return total / static_cast<double>(task.data.size());
}

WeightVector grad(const WeightVector& w, const TaskSpec& task) {
  require(w.size() == task.dim(), "weight dimension does not match task");
  if (task.family == TaskFamily::Quadratic) {
    return task.curvature * (w - task.center);
  }
  task.data.validate();
  const int c = task.class_dim();
  const int dx = task.feature_dim();
  WeightVector g = WeightVector::Zero(w.size());
  for (std::size_t i = 0; i < task.data.size(); ++i) {
    const Eigen::VectorXd x = task.data.features.row(i);
    Eigen::VectorXd p = softmax(class_scores(w, x, c));
    p[task.data.labels[i]] -= 1.0;
    for (int j = 0; j < c; ++j) g.segment(j * dx, dx) += p[j] * x;
  }
  g /= static_cast<double>(task.data.size());
  if (!all_finite(g)) throw DivergenceError("non-finite gradient");
  return g;
}

double mixture_risk(const WeightVector& w, const std::vector<TaskSpec>& tasks,
                    const MixtureWeights& alpha) {
  require(tasks.size() == alpha.size(), "mixture weight/task count mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < tasks.size(); ++k)
    total += alpha[k] * risk(w, tasks[k]);
  return total;
}

WeightVector mixture_grad(const WeightVector& w, const std::vector<TaskSpec>& tasks,
                          const MixtureWeights& alpha) {
  require(tasks.size() == alpha.size(), "mixture weight/task count mismatch");
  WeightVector g = WeightVector::Zero(w.size());
  for (std::size_t k = 0; k < tasks.size(); ++k) g += alpha[k] * grad(w, tasks[k]);
  return g;
}

WeightVector mixture_optimum(const std::vector<TaskSpec>& tasks,
                             const MixtureWeights& alpha) {
  require(tasks.size() == alpha.size(), "mixture weight/task count mismatch");
  require(!tasks.empty(), "mixture needs at least one task");
  const int d = tasks.front().dim();
  Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    require(tasks[k].family == TaskFamily::Quadratic,
            "mixture_optimum requires all-quadratic tasks");
    require(tasks[k].dim() == d, "tasks must share the weight dimension");
    agg += alpha[k] * tasks[k].curvature;
    rhs += alpha[k] * tasks[k].curvature * tasks[k].center;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(agg);
  if (!lu.isInvertible())
    throw std::invalid_argument("aggregate curvature is singular");
  return lu.solve(rhs);
}

Dataset sample_dataset(const TaskSpec& task, int samples, std::uint64_t seed) {
  require(task.family == TaskFamily::Logistic,
          "datasets exist only for the logistic family");
  require(samples >= 1, "sample count must be positive");
  const int c = task.class_dim();
  const int dx = task.feature_dim();

  std::vector<Eigen::MatrixXd> roots;
  roots.reserve(task.classes.size());
  for (const auto& cls : task.classes) roots.push_back(psd_sqrt(cls.cov));

  Dataset ds;
  ds.class_count = c;
  ds.features.resize(samples, dx);
  ds.labels.resize(samples);
  Rng rng(seed, 0x64617461ULL);  // dataset stream
  for (int i = 0; i < samples; ++i) {
    const int y = static_cast<int>(rng.index(static_cast<std::size_t>(c)));
    ds.labels[i] = y;
    ds.features.row(i) =
        task.classes[y].mean + roots[y] * rng.gauss_vector(dx);
  }
  ds.validate();
  return ds;
}

}  // namespace mffl
