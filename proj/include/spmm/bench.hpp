#pragma once
// Timing harness for the efficiency claims: scan cost versus sequence length
// and the superpixel compression ratio.  Wall times are machine-local
// (median of trials after warmups); FLOP counts come from the instrumented
// scan counters and are platform-independent.

#include <string>
#include <vector>

#include "spmm/ssm.hpp"

namespace spmm {

struct BenchRow {
  std::string label;
  int64_t length = 0;
  double time_ns_median = 0;
  int64_t flops = 0;
  double ratio = 1.0;  // dense-path FLOPs / measured-path FLOPs
};

struct BenchReport {
  std::vector<BenchRow> rows;
  // Header: label,length,time_ns_median,flops,ratio
  std::string csv() const;
};

// Times scan_recurrent and scan_parallel over [L, C, d] states for every
// requested length (median of `trials` timed runs after 3 warmups, trials
// forced to at least 9 and made odd).  `threads` > 1 adds rows for the
// multi-threaded tree scan.
BenchReport bench_scan(const std::vector<int64_t>& lengths, int d_state, int64_t channels,
                       int trials, int threads = 1);

// Scan FLOPs for the superpixel path (M tokens) against the hypothetical
// dense path over every pooled pixel (H*W/s^2 tokens); the ratio column is
// the exact compression factor.
BenchReport bench_spssm(int64_t h, int64_t w, int scale, int64_t m_tokens, int trials);

// Least-squares slope and R^2 of log(time) vs log(length) for rows whose
// label matches `label` - the scaling check used by the acceptance suite.
struct LogLogFit {
  double slope = 0;
  double r2 = 0;
};
LogLogFit loglog_fit(const BenchReport& report, const std::string& label);

}  // namespace spmm
