#include "mffl/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mffl {

namespace {
constexpr std::uint64_t kProjectionStream = 0x70726f6aULL;
constexpr std::uint64_t kGcStream = 0x67637374ULL;
}  // namespace

Eigen::VectorXd EmpiricalMeasure::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
  for (std::size_t i = 0; i < particles.size(); ++i) m += weights[i] * particles[i];
  return m;
}

Eigen::VectorXd EmpiricalMeasure::variance() const {
  const Eigen::VectorXd m = mean();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim());
  for (std::size_t i = 0; i < particles.size(); ++i)
    v += weights[i] * (particles[i] - m).cwiseAbs2();
  return v;
}

void EmpiricalMeasure::validate() const {
  require(!particles.empty(), "measure needs at least one particle");
  require(particles.size() == weights.size(), "particle/weight count mismatch");
  double sum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "measure weights must be non-negative");
    sum += w;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "measure weights must sum to 1");
  const int d = dim();
  for (const auto& x : particles)
    require(static_cast<int>(x.size()) == d, "particles must share one dimension");
}

EmpiricalMeasure empirical_measure(const std::vector<Eigen::VectorXd>& states) {
  require(!states.empty(), "empirical measure of an empty sample");
  EmpiricalMeasure m;
  m.particles = states;
  m.weights.assign(states.size(), 1.0 / static_cast<double>(states.size()));
  m.weights.back() =
      1.0 - std::accumulate(m.weights.begin(), m.weights.end() - 1, 0.0);
  m.validate();
  return m;
}

EmpiricalMeasure empirical_measure_1d(const std::vector<double>& states) {
  std::vector<Eigen::VectorXd> particles;
  particles.reserve(states.size());
  for (double s : states) particles.push_back(Eigen::VectorXd::Constant(1, s));
  return empirical_measure(particles);
}

double wasserstein1_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  a.validate();
  b.validate();
  require(a.dim() == 1 && b.dim() == 1,
          "wasserstein1_1d needs scalar particles; use flow_distance for d > 1");

  auto sorted = [](const EmpiricalMeasure& m) {
    std::vector<std::pair<double, double>> vw(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) vw[i] = {m.particles[i][0], m.weights[i]};
    std::sort(vw.begin(), vw.end());
    return vw;
  };
  const auto va = sorted(a);
  const auto vb = sorted(b);

  // Quantile coupling: walk both CDFs and integrate |F_a^{-1} - F_b^{-1}|.
  double total = 0.0;
  std::size_t i = 0, j = 0;
  double qa = va[0].second;  // cumulative weight through particle i
  double qb = vb[0].second;
  double q = 0.0;
  while (i < va.size() && j < vb.size()) {
    const double next = std::min(qa, qb);
    total += (next - q) * std::abs(va[i].first - vb[j].first);
    q = next;
    if (next == qa) {
      ++i;
      if (i < va.size()) qa += va[i].second;
    }
    if (next == qb) {
      ++j;
      if (j < vb.size()) qb += vb[j].second;
    }
  }
  return total;
}

void MeasureFlow::validate() const {
  require(static_cast<int>(measures.size()) == grid.nodes(),
          "measure flow must have one measure per grid node");
  for (const auto& m : measures) m.validate();
  const std::size_t count = measures.front().size();
  for (const auto& m : measures)
    require(m.size() == count, "measure flow must keep a constant particle count");
}

GradientMeasureFlow gradient_flow(const MeasureFlow& states, const TaskSpec& task) {
  GradientMeasureFlow out;
  out.grid = states.grid;
  out.measures.reserve(states.measures.size());
  for (const auto& m : states.measures) {
    EmpiricalMeasure g;
    g.weights = m.weights;
    g.particles.reserve(m.size());
    for (const auto& x : m.particles) g.particles.push_back(grad(x, task));
    out.measures.push_back(std::move(g));
  }
  return out;
}

double flow_distance(const MeasureFlow& a, const MeasureFlow& b, int projections,
                     std::uint64_t seed) {
  a.validate();
  b.validate();
  require(a.grid.nodes() == b.grid.nodes() &&
              std::abs(a.grid.t0 - b.grid.t0) <= 1e-12 &&
              std::abs(a.grid.horizon - b.grid.horizon) <= 1e-12,
          "flow distance needs matching grids");
  const int d = a.measures.front().dim();
  require(d == b.measures.front().dim(), "flow distance needs matching dimensions");
  require(projections >= 1, "flow distance needs at least one projection");

  // Fixed random unit directions, shared across all grid nodes. In 1-D the
  // only unit directions are +-1 and both give the same W1, so one suffices.
  std::vector<Eigen::VectorXd> dirs;
  Rng rng(seed, kProjectionStream);
  const int dir_count = (d == 1) ? 1 : projections;
  for (int k = 0; k < dir_count; ++k) {
    Eigen::VectorXd u = (d == 1) ? Eigen::VectorXd::Ones(1) : rng.gauss_vector(d);
    const double n = u.norm();
    dirs.push_back(n > 0 ? Eigen::VectorXd(u / n) : Eigen::VectorXd::Unit(d, 0));
  }

  auto project = [](const EmpiricalMeasure& m, const Eigen::VectorXd& dir) {
    EmpiricalMeasure p;
    p.weights = m.weights;
    p.particles.reserve(m.size());
    for (const auto& x : m.particles)
      p.particles.push_back(Eigen::VectorXd::Constant(1, dir.dot(x)));
    return p;
  };

  double worst = 0.0;
  for (int n = 0; n < a.grid.nodes(); ++n) {
    double avg = 0.0;
    for (const auto& dir : dirs)
      avg += wasserstein1_1d(project(a.at_node(n), dir), project(b.at_node(n), dir));
    worst = std::max(worst, avg / static_cast<double>(dirs.size()));
  }
  return worst;
}

std::vector<GcRow> gc_diagnostic(const std::vector<std::size_t>& p_values,
                                 const EmpiricalMeasure& reference,
                                 const ScalarSampler& sampler, int replicates,
                                 std::uint64_t seed) {
  reference.validate();
  require(reference.dim() == 1, "gc_diagnostic works on scalar measures");
  require(replicates >= 5, "gc_diagnostic needs at least 5 replicates");
  for (std::size_t i = 1; i < p_values.size(); ++i)
    require(p_values[i] > p_values[i - 1], "p_values must be increasing");

  std::vector<GcRow> rows;
  rows.reserve(p_values.size());
  for (const std::size_t p : p_values) {
    std::vector<double> dists(static_cast<std::size_t>(replicates));
    for (int r = 0; r < replicates; ++r) {
      Rng rng(seed, kGcStream, mix64(p, static_cast<std::uint64_t>(r)));
      const std::vector<double> draw = sampler(p, rng);
      require(draw.size() == p, "sampler returned the wrong sample count");
      dists[static_cast<std::size_t>(r)] =
          wasserstein1_1d(empirical_measure_1d(draw), reference);
    }
    std::sort(dists.begin(), dists.end());
    const std::size_t mid = dists.size() / 2;
    const double median = (dists.size() % 2 == 1)
                              ? dists[mid]
                              : 0.5 * (dists[mid - 1] + dists[mid]);
    rows.push_back({p, median});
  }
  return rows;
}

}  // namespace mffl
