#ifndef U2C_COMMON_HPP
#define U2C_COMMON_HPP

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace u2c {

// Error hierarchy; the CLI maps these onto exit codes.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : DataError {
  using DataError::DataError;
};
struct CompatError : DataError {
  using DataError::DataError;
};
struct InputError : DataError {
  using DataError::DataError;
};
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VerifyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Pairwise summation; reduction order is fixed regardless of any outer
/// parallelism, so repeated runs reduce bit-identically.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_mean(std::span<const double> xs) {
  if (xs.empty()) throw InputError("pairwise_mean: empty input");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace u2c

#endif
