#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rlk/conv.hpp"

namespace rlk {

struct BenchRow {
    int resolution = 0;
    int kernel = 0;
    std::string backend;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double median_ms = 0.0;  // console output only; the CSV schema is fixed
    int reps = 0;
    int threads = 1;
    bool skipped = false;  // allocation failed; row kept so the grid stays complete
};

struct BenchReport {
    std::vector<BenchRow> rows;
    /// Header `resolution,kernel,backend,mean_ms,std_ms,reps,threads`.
    void write_csv(std::ostream& os) const;
};

struct BenchConfig {
    std::vector<int> kernel_sizes{3, 5, 7, 9, 13, 17, 21, 27, 29, 31};
    std::vector<int> resolutions{16, 32, 64};
    int channels = 64;
    int layers = 24;
    int batch = 4;
    int reps = 5;      // >= 5 timed repetitions
    int warmup = 3;    // untimed runs before the clock starts
    int threads = 1;
    uint64_t seed = 0;
};

/// Times forward passes of a stack of `layers` stride-1 same-padding
/// depth-wise convolutions over the (resolution x kernel) cross product.
BenchReport bench_stack(const BenchConfig& cfg, Backend backend);

/// One cell of the grid: mean/std/median latency of the stack forward.
BenchRow bench_one(const BenchConfig& cfg, Backend backend, int resolution, int kernel);

}  // namespace rlk
