#include "rlk/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <ostream>

namespace rlk {

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

}  // namespace

BenchRow bench_one(const BenchConfig& cfg, Backend backend, int resolution, int kernel) {
    if (cfg.reps < 5) throw param_error("reps must be >= 5");
    if (cfg.warmup < 3) throw param_error("warmup must be >= 3");

    BenchRow row;
    row.resolution = resolution;
    row.kernel = kernel;
    row.backend = backend_name(backend);
    row.reps = cfg.reps;
    row.threads = cfg.threads;

    const int prev_threads = threads();
    set_threads(cfg.threads);
    try {
        ConvSpec spec;
        spec.kernel = kernel;
        spec.stride = 1;
        spec.dilation = 1;
        spec.groups = cfg.channels;
        spec.in_channels = cfg.channels;
        spec.out_channels = cfg.channels;
        spec.padding = spec.same_padding();

        Rng rng(cfg.seed);
        std::vector<ConvWeights> stack;
        stack.reserve(cfg.layers);
        for (int l = 0; l < cfg.layers; ++l)
            stack.push_back(
                {new_random({cfg.channels, 1, kernel, kernel}, rng, NormalDist{0.0f, 0.02f}), {}});
        Tensor input = new_random({cfg.batch, cfg.channels, resolution, resolution}, rng,
                                  UniformDist{0.0f, 1.0f});

        auto run = [&] {
            Tensor t = conv2d(input, stack[0], spec, backend);
            for (int l = 1; l < cfg.layers; ++l) t = conv2d(t, stack[l], spec, backend);
            return t.at(0, 0, 0, 0);  // keep the chain observable
        };

        volatile float sink = 0.0f;
        for (int i = 0; i < cfg.warmup; ++i) sink = run();
        std::vector<double> samples(cfg.reps);
        for (int i = 0; i < cfg.reps; ++i) {
            const double t0 = now_ms();
            sink = run();
            samples[i] = now_ms() - t0;
        }
        (void)sink;

        double mean = 0.0;
        for (double s : samples) mean += s;
        mean /= cfg.reps;
        double var = 0.0;
        for (double s : samples) var += (s - mean) * (s - mean);
        var /= cfg.reps;
        std::sort(samples.begin(), samples.end());
        row.mean_ms = mean;
        row.std_ms = std::sqrt(var);
        row.median_ms = cfg.reps % 2 ? samples[cfg.reps / 2]
                                     : 0.5 * (samples[cfg.reps / 2 - 1] + samples[cfg.reps / 2]);
    } catch (const std::bad_alloc&) {
        row.skipped = true;
        row.mean_ms = row.std_ms = row.median_ms = 0.0;
    }
    set_threads(prev_threads);
    return row;
}

BenchReport bench_stack(const BenchConfig& cfg, Backend backend) {
    BenchReport report;
    for (int r : cfg.resolutions)
        for (int k : cfg.kernel_sizes) report.rows.push_back(bench_one(cfg, backend, r, k));
    return report;
}

void BenchReport::write_csv(std::ostream& os) const {
    os << "resolution,kernel,backend,mean_ms,std_ms,reps,threads\n";
    for (const auto& r : rows) {
        if (r.skipped) {
            os << r.resolution << ',' << r.kernel << ',' << r.backend << ",skipped,skipped,"
               << r.reps << ',' << r.threads << '\n';
        } else {
            os << r.resolution << ',' << r.kernel << ',' << r.backend << ',' << r.mean_ms << ','
               << r.std_ms << ',' << r.reps << ',' << r.threads << '\n';
        }
    }
}

}  // namespace rlk
