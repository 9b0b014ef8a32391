#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace tribench {

template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
using Vec3 = Vec3T<double>;

// Error taxonomy. The CLI maps ConfigError/IoError to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SimulationDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Keeps large tensor buffers on the heap instead of fresh mmap regions, which
// otherwise page-fault on every training step. No-op outside glibc.
void tune_allocator();

}  // namespace tribench
