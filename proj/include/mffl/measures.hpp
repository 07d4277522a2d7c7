#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mffl/common.hpp"
#include "mffl/rng.hpp"
#include "mffl/sde.hpp"

namespace mffl {

// Weighted particle cloud on R^d; weights sum to 1.
struct EmpiricalMeasure {
  std::vector<Eigen::VectorXd> particles;
  std::vector<double> weights;

  std::size_t size() const { return particles.size(); }
  int dim() const { return particles.empty() ? 0 : static_cast<int>(particles.front().size()); }
  Eigen::VectorXd mean() const;
  // Weighted variance per coordinate (population form).
  Eigen::VectorXd variance() const;
  void validate() const;
};

EmpiricalMeasure empirical_measure(const std::vector<Eigen::VectorXd>& states);
EmpiricalMeasure empirical_measure_1d(const std::vector<double>& states);

// Exact W1 between scalar measures via quantile coupling. Uniform
// equal-count inputs reduce to the mean absolute difference of sorted values.
double wasserstein1_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

// Time-indexed particle clouds: one measure per grid node.
struct MeasureFlow {
  TimeGrid grid;
  std::vector<EmpiricalMeasure> measures;  // grid.nodes() entries

  const EmpiricalMeasure& at_node(int i) const { return measures[static_cast<std::size_t>(i)]; }
  void validate() const;
};

// Identical shape; particles are gradients rather than states.
using GradientMeasureFlow = MeasureFlow;

// Pushforward of a state flow through the task gradient.
GradientMeasureFlow gradient_flow(const MeasureFlow& states, const TaskSpec& task);

// Max over grid nodes of the sliced W1 (average over `projections` fixed
// random unit directions). In one dimension this is exactly the max-over-time
// W1 for any seed.
double flow_distance(const MeasureFlow& a, const MeasureFlow& b, int projections,
                     std::uint64_t seed);

// Glivenko-Cantelli diagnostic row: median W1 against a reference measure.
struct GcRow {
  std::size_t sample_count;
  double median_w1;
};

using ScalarSampler = std::function<std::vector<double>(std::size_t count, Rng& rng)>;

std::vector<GcRow> gc_diagnostic(const std::vector<std::size_t>& p_values,
                                 const EmpiricalMeasure& reference,
                                 const ScalarSampler& sampler, int replicates,
                                 std::uint64_t seed);

}  // namespace mffl
