#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace isolab {

/// Worker count used when a caller passes 0. Starts at 1.
std::size_t default_threads();
void set_default_threads(std::size_t n);

/// Runs fn(i) for i in [0, count) on up to `threads` workers (0 = default).
/// Tasks must write only to their own slot; the first exception thrown by
/// any task is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`.
double pairwise_sum(const double* values, std::size_t count);
inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;  // sample stddev / sqrt(count)
  double stddev = 0.0;
};

MeanStderr mean_stderr(const std::vector<double>& values);

}  // namespace isolab
