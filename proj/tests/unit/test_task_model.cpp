#include <doctest.h>

#include <cmath>

#include "mffl/rng.hpp"
#include "mffl/task_model.hpp"

using namespace mffl;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

TaskSpec two_class_task(std::uint64_t seed, int samples = 50) {
  std::vector<GaussianClass> classes;
  GaussianClass a, b;
  a.mean = vec2(1.5, 0.0);
  a.cov = Eigen::MatrixXd::Identity(2, 2);
  b.mean = vec2(-1.5, 0.0);
  b.cov = Eigen::MatrixXd::Identity(2, 2);
  classes = {a, b};
  return TaskSpec::logistic(classes, samples, seed);
}

// Independent direct-summation oracle for the logistic risk.
double logistic_risk_oracle(const WeightVector& w, const TaskSpec& task) {
  const int c = task.class_dim();
  const int dx = task.feature_dim();
  double total = 0.0;
  for (std::size_t i = 0; i < task.data.size(); ++i) {
    const Eigen::VectorXd x = task.data.features.row(i);
    double z = 0.0;
    double score_y = 0.0;
    std::vector<double> scores(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) scores[static_cast<std::size_t>(j)] = w.segment(j * dx, dx).dot(x);
    for (int j = 0; j < c; ++j) z += std::exp(scores[static_cast<std::size_t>(j)]);
    score_y = scores[static_cast<std::size_t>(task.data.labels[i])];
    total += std::log(z) - score_y;
  }
  return total / static_cast<double>(task.data.size());
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

TaskSpec random_quadratic(Rng& rng, int d) {
  Eigen::VectorXd center = rng.gauss_vector(d);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.gauss();
  Eigen::MatrixXd a = m * m.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
  return TaskSpec::quadratic(center, a);
}

}  // namespace

TEST_CASE("quadratic risk closed form") {
  const TaskSpec t = TaskSpec::quadratic(vec2(0, 0), Eigen::MatrixXd::Identity(2, 2));
  CHECK(risk(vec2(1, 1), t) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(risk(t.center, t) == 0.0);
  CHECK_THROWS_AS(risk(Eigen::VectorXd::Zero(3), t), std::invalid_argument);
}

TEST_CASE("quadratic gradient closed form") {
  const TaskSpec t = TaskSpec::quadratic(vec2(0, 0), Eigen::MatrixXd::Identity(2, 2));
  CHECK((grad(vec2(1, 1), t) - vec2(1, 1)).norm() == 0.0);
  CHECK(grad(t.center, t).norm() == 0.0);
  CHECK_THROWS_AS(grad(Eigen::VectorXd::Zero(5), t), std::invalid_argument);
}

TEST_CASE("every quadratic risk is minimized at its center") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const TaskSpec t = random_quadratic(rng, 3);
    CHECK(grad(t.center, t).norm() == 0.0);
  }
}

TEST_CASE("logistic risk matches the direct summation oracle") {
  const TaskSpec t = two_class_task(123, 50);
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const WeightVector w = rng.gauss_vector(t.dim());
    CHECK(risk(w, t) == doctest::Approx(logistic_risk_oracle(w, t)).epsilon(1e-12));
  }
}

TEST_CASE("gradients agree with central finite differences") {
  Rng rng(42);
  const double h = 1e-5;
  const auto fd_check = [&](const TaskSpec& task) {
    WeightVector w = 10.0 * Eigen::VectorXd::Random(task.dim());
    const WeightVector g = grad(w, task);
    for (int i = 0; i < task.dim(); ++i) {
      WeightVector up = w, dn = w;
      up[i] += h;
      dn[i] -= h;
      const double fd = (risk(up, task) - risk(dn, task)) / (2 * h);
      CHECK(rel_err(g[i], fd) <= 1e-5);
    }
  };
  fd_check(random_quadratic(rng, 4));
  fd_check(two_class_task(77, 40));
}

TEST_CASE("mixture risk is the weighted sum of client risks") {
  Rng rng(7);
  const TaskSpec t = random_quadratic(rng, 2);
  const WeightVector w = rng.gauss_vector(2);
  CHECK(mixture_risk(w, {t}, MixtureWeights::from({1.0})) ==
        doctest::Approx(risk(w, t)).epsilon(1e-15));

  const MixtureWeights half = MixtureWeights::from({0.5, 0.5});
  CHECK(mixture_risk(w, {t, t}, half) == doctest::Approx(risk(w, t)).epsilon(1e-14));

  std::vector<TaskSpec> tasks;
  for (int k = 0; k < 3; ++k) tasks.push_back(random_quadratic(rng, 2));
  const MixtureWeights alpha = MixtureWeights::from({0.2, 0.3, 0.5});
  double direct = 0.0;
  for (int k = 0; k < 3; ++k) direct += alpha[static_cast<std::size_t>(k)] * risk(w, tasks[static_cast<std::size_t>(k)]);
  CHECK(mixture_risk(w, tasks, alpha) == doctest::Approx(direct).epsilon(1e-12));
  CHECK_THROWS_AS(mixture_risk(w, tasks, half), std::invalid_argument);
}

TEST_CASE("mixture gradient is linear in the client gradients") {
  Rng rng(19);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<TaskSpec> tasks;
    for (int k = 0; k < 3; ++k) tasks.push_back(random_quadratic(rng, 3));
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    const double s = a + b + c;
    a /= s;
    b /= s;
    c = 1.0 - a - b;
    const MixtureWeights alpha = MixtureWeights::from({a, b, c});
    const WeightVector w = rng.gauss_vector(3);
    WeightVector direct = a * grad(w, tasks[0]) + b * grad(w, tasks[1]) + c * grad(w, tasks[2]);
    CHECK((mixture_grad(w, tasks, alpha) - direct).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("mixture optimum") {
  SUBCASE("scalar midpoint by symmetry") {
    const TaskSpec a = TaskSpec::quadratic(Eigen::VectorXd::Zero(1),
                                           Eigen::MatrixXd::Identity(1, 1));
    const TaskSpec b = TaskSpec::quadratic(Eigen::VectorXd::Constant(1, 2.0),
                                           Eigen::MatrixXd::Identity(1, 1));
    const WeightVector w = mixture_optimum({a, b}, MixtureWeights::from({0.5, 0.5}));
    CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("common center is the common minimizer") {
    Rng rng(3);
    const Eigen::VectorXd theta = rng.gauss_vector(3);
    std::vector<TaskSpec> tasks;
    for (int k = 0; k < 3; ++k) {
      TaskSpec t = random_quadratic(rng, 3);
      t.center = theta;
      tasks.push_back(t);
    }
    const WeightVector w = mixture_optimum(tasks, MixtureWeights::uniform(3));
    CHECK((w - theta).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("first-order condition at a random instance") {
    Rng rng(99);
    std::vector<TaskSpec> tasks;
    for (int k = 0; k < 3; ++k) tasks.push_back(random_quadratic(rng, 4));
    const MixtureWeights alpha = MixtureWeights::from({0.25, 0.35, 0.4});
    const WeightVector w = mixture_optimum(tasks, alpha);
    CHECK(mixture_grad(w, tasks, alpha).norm() <= 1e-10);
  }
  SUBCASE("singular aggregate curvature is rejected") {
    const TaskSpec flat = TaskSpec::quadratic(Eigen::VectorXd::Zero(2),
                                              Eigen::MatrixXd::Zero(2, 2));
    CHECK_THROWS_AS(mixture_optimum({flat}, MixtureWeights::from({1.0})),
                    std::invalid_argument);
  }
}

TEST_CASE("dataset sampling") {
  TaskSpec t = two_class_task(1, 10);
  SUBCASE("identical seeds give bit-identical datasets") {
    const Dataset a = sample_dataset(t, 10, 7);
    const Dataset b = sample_dataset(t, 10, 7);
    CHECK(a.labels == b.labels);
    CHECK((a.features - b.features).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("different seeds differ") {
    const Dataset a = sample_dataset(t, 10, 7);
    const Dataset b = sample_dataset(t, 10, 8);
    const bool same_labels = a.labels == b.labels;
    const bool same_features = (a.features - b.features).cwiseAbs().maxCoeff() == 0.0;
    CHECK_FALSE((same_labels && same_features));
  }
  SUBCASE("class frequencies stay within the binomial interval") {
    const Dataset d = sample_dataset(t, 1000, 21);
    int ones = 0;
    for (int y : d.labels) ones += y;
    const double freq = ones / 1000.0;
    const double sigma = std::sqrt(0.5 * 0.5 / 1000.0);
    CHECK(std::abs(freq - 0.5) <= 4.0 * sigma);
  }
  SUBCASE("invalid requests are rejected") {
    CHECK_THROWS_AS(sample_dataset(t, 0, 1), std::invalid_argument);
    const TaskSpec q = TaskSpec::quadratic(Eigen::VectorXd::Zero(1),
                                           Eigen::MatrixXd::Identity(1, 1));
    CHECK_THROWS_AS(sample_dataset(q, 5, 1), std::invalid_argument);
  }
}

TEST_CASE("mixture weights validate the simplex") {
  CHECK_THROWS_AS(MixtureWeights::from({0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(MixtureWeights::from({-0.5, 1.5}), std::invalid_argument);
  const MixtureWeights bycount = MixtureWeights::sample_proportional({1, 3});
  CHECK(bycount[0] == doctest::Approx(0.25));
  CHECK(bycount[1] == doctest::Approx(0.75));
}
