#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace langcond {

struct LaaBenchConfig {
  std::size_t batch = 64;
  std::size_t length = 32;
  std::size_t languages = 8;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t repeats = 3;
  bool backward = true;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Naive vs batched LAA on one self-attention call over a batch whose samples
/// cycle through every language. Times are medians over repeats.
struct LaaBenchRow {
  LaaBenchConfig config;
  double naive_forward_ms = 0.0;
  double batched_forward_ms = 0.0;
  double naive_backward_ms = 0.0;
  double batched_backward_ms = 0.0;
  /// Over the output and, with backward, every input and weight gradient.
  double max_abs_diff = 0.0;

  double speedup() const;
};

LaaBenchRow bench_laa(const LaaBenchConfig& config);

std::string laa_bench_csv_header();
std::string to_csv_row(const LaaBenchRow& row);

/// "b,n,l,d,h" entries separated by ';'.
std::vector<LaaBenchConfig> parse_laa_grid(const std::string& grid, const LaaBenchConfig& base);

}  // namespace langcond
