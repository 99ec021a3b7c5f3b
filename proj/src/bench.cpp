#include "spmm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "spmm/rng.hpp"

namespace spmm {

namespace {

using Clock = std::chrono::steady_clock;

Tensor<real> random_state(Shape shape, uint64_t seed, double lo, double hi) {
  Tensor<real> t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

// Median wall time of `trials` runs (after 3 warmups) plus the FLOP count of
// one run.  The checksum keeps the optimizer from discarding the work.
template <typename F>
std::pair<double, int64_t> time_median(int trials, F&& run) {
  trials = std::max(trials, 9);
  if (trials % 2 == 0) ++trials;
  double checksum = 0;
  for (int i = 0; i < 3; ++i) checksum += run(nullptr);
  std::vector<double> times;
  times.reserve(static_cast<size_t>(trials));
  ScanStats stats;
  for (int i = 0; i < trials; ++i) {
    ScanStats local;
    const auto t0 = Clock::now();
    checksum += run(&local);
    const auto t1 = Clock::now();
    times.push_back(static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    stats = local;
  }
  std::sort(times.begin(), times.end());
  volatile double sink = checksum;
  (void)sink;
  return {times[times.size() / 2], stats.flops};
}

}  // namespace

std::string BenchReport::csv() const {
  std::ostringstream os;
  os << "label,length,time_ns_median,flops,ratio\n";
  for (const BenchRow& r : rows)
    os << r.label << ',' << r.length << ',' << r.time_ns_median << ',' << r.flops << ','
       << r.ratio << '\n';
  return os.str();
}

BenchReport bench_scan(const std::vector<int64_t>& lengths, int d_state, int64_t channels,
                       int trials, int threads) {
  if (lengths.empty()) throw Error("bench: need at least one length");
  if (d_state < 1 || channels < 1) throw Error("bench: state and channel sizes must be positive");
  BenchReport report;
  for (int64_t L : lengths) {
    if (L < 1) throw Error("bench: lengths must be positive");
    const Tensor<real> abar =
        random_state({L, channels, d_state}, 0xabba0000u + static_cast<uint64_t>(L), 0.1, 0.9);
    const Tensor<real> bx =
        random_state({L, channels, d_state}, 0xbeef0000u + static_cast<uint64_t>(L), -1.0, 1.0);

    auto add_row = [&](const std::string& label, auto&& run) {
      auto [ns, flops] = time_median(trials, run);
      report.rows.push_back({label, L, ns, flops, 1.0});
    };
    add_row("recurrent", [&](ScanStats* s) {
      return static_cast<double>(scan_recurrent(abar, bx, s)[0]);
    });
    add_row("parallel", [&](ScanStats* s) {
      return static_cast<double>(scan_parallel(abar, bx, s, 1)[0]);
    });
    if (threads > 1)
      add_row("parallel_t" + std::to_string(threads), [&](ScanStats* s) {
        return static_cast<double>(scan_parallel(abar, bx, s, threads)[0]);
      });
  }
  return report;
}

BenchReport bench_spssm(int64_t h, int64_t w, int scale, int64_t m_tokens, int trials) {
  if (h < 1 || w < 1 || scale < 1) throw Error("bench: bad map extents");
  if (h % scale != 0 || w % scale != 0)
    throw Error("bench: map extents must be divisible by the pooling scale");
  const int64_t dense_len = (h / scale) * (w / scale);
  if (m_tokens < 1 || m_tokens > dense_len)
    throw Error("bench: token count " + std::to_string(m_tokens) + " outside [1, " +
                std::to_string(dense_len) + "]");
  const int64_t channels = 36;
  const int d_state = 16;

  BenchReport report;
  int64_t flops_by_len[2] = {0, 0};
  const int64_t lens[2] = {m_tokens, dense_len};
  const char* labels[2] = {"superpixel", "dense"};
  for (int i = 0; i < 2; ++i) {
    const int64_t L = lens[i];
    const Tensor<real> abar =
        random_state({L, channels, d_state}, 0x5ca10000u + static_cast<uint64_t>(L), 0.1, 0.9);
    const Tensor<real> bx =
        random_state({L, channels, d_state}, 0x5ca1e000u + static_cast<uint64_t>(L), -1.0, 1.0);
    auto [ns, flops] = time_median(trials, [&](ScanStats* s) {
      return static_cast<double>(scan_recurrent(abar, bx, s)[0]);
    });
    flops_by_len[i] = flops;
    report.rows.push_back({labels[i], L, ns, flops, 1.0});
  }
  // Exact compression factor: identical per-token work, so the counter ratio
  // reduces to dense_len / m_tokens.
  report.rows[0].ratio =
      static_cast<double>(flops_by_len[1]) / static_cast<double>(flops_by_len[0]);
  return report;
}

LogLogFit loglog_fit(const BenchReport& report, const std::string& label) {
  std::vector<double> xs, ys;
  for (const BenchRow& r : report.rows)
    if (r.label == label && r.time_ns_median > 0) {
      xs.push_back(std::log(static_cast<double>(r.length)));
      ys.push_back(std::log(r.time_ns_median));
    }
  if (xs.size() < 2) throw Error("bench: need at least two rows labelled '" + label + "' to fit");
  const auto n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0) throw Error("bench: degenerate fit (all lengths equal)");
  LogLogFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  const double intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double pred = fit.slope * xs[i] + intercept;
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
  }
  fit.r2 = ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

}  // namespace spmm
