#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mffl {

// A point in weight space: client model weights, server weights, or the
// state of the continuous-time game.
using WeightVector = Eigen::VectorXd;

// Thrown when an integration or training step produces non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an explicit scheme is configured outside its stability bound.
class StabilityError : public std::runtime_error {
 public:
  explicit StabilityError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Eigen::VectorXd& v) {
  return v.allFinite();
}

inline bool all_finite(const Eigen::MatrixXd& m) {
  return m.allFinite();
}

}  // namespace mffl
