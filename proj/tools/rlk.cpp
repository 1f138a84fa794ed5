#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rlk/bench.hpp"
#include "rlk/erf.hpp"
#include "rlk/replknet.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

int env_threads_default() {
    if (const char* v = std::getenv("RLK_THREADS")) {
        const int n = std::atoi(v);
        if (n > 0) return n;
    }
    return 1;
}

rlk::ArchSpec load_arch(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw rlk::io_error("cannot open arch file '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return rlk::ArchSpec::from_json(ss.str());
}

std::vector<double> parse_percent_thresholds(const std::vector<int>& pct) {
    std::vector<double> t;
    for (int p : pct) {
        if (p < 1 || p > 100) throw CLI::ValidationError("thresholds must be 1..100 percent");
        t.push_back(p / 100.0);
    }
    return t;
}

void echo_kv(const char* key, const std::string& value) {
    std::cout << "  " << key << " = " << value << "\n";
}

struct BenchArgs {
    std::vector<int> kernels{3, 5, 7, 9, 13, 17, 21, 27, 29, 31};
    std::vector<int> resolutions{16, 32, 64};
    int channels = 64;
    int layers = 24;
    int batch = 4;
    std::string backend = "blocked";
    int reps = 5;
    int threads = env_threads_default();
    int tile = 8;
    uint64_t seed = 0;
    std::string csv;
};

int cmd_bench(const BenchArgs& a) {
    std::cout << "bench configuration:\n";
    {
        std::ostringstream ks, rs;
        for (size_t i = 0; i < a.kernels.size(); ++i) ks << (i ? "," : "") << a.kernels[i];
        for (size_t i = 0; i < a.resolutions.size(); ++i) rs << (i ? "," : "") << a.resolutions[i];
        echo_kv("kernels", ks.str());
        echo_kv("resolutions", rs.str());
    }
    echo_kv("channels", std::to_string(a.channels));
    echo_kv("layers", std::to_string(a.layers));
    echo_kv("batch", std::to_string(a.batch));
    echo_kv("backend", a.backend);
    echo_kv("reps", std::to_string(a.reps));
    echo_kv("threads", std::to_string(a.threads));
    echo_kv("tile", std::to_string(a.tile));
    echo_kv("seed", std::to_string(a.seed));

    rlk::set_tile_size(a.tile);
    rlk::BenchConfig cfg;
    cfg.kernel_sizes = a.kernels;
    cfg.resolutions = a.resolutions;
    cfg.channels = a.channels;
    cfg.layers = a.layers;
    cfg.batch = a.batch;
    cfg.reps = a.reps;
    cfg.threads = a.threads;
    cfg.seed = a.seed;

    std::vector<rlk::Backend> backends;
    if (a.backend == "all")
        backends = {rlk::Backend::direct, rlk::Backend::blocked, rlk::Backend::fft};
    else
        backends = {rlk::backend_from_string(a.backend)};

    rlk::BenchReport report;
    for (rlk::Backend b : backends) {
        // Print one latency grid per backend as results come in.
        std::cout << "\nbackend " << rlk::backend_name(b) << ", mean ms (median ms):\n";
        std::cout << std::setw(8) << "R\\K";
        for (int k : cfg.kernel_sizes) std::cout << std::setw(16) << k;
        std::cout << "\n";
        for (int r : cfg.resolutions) {
            std::cout << std::setw(8) << r << std::flush;
            for (int k : cfg.kernel_sizes) {
                rlk::BenchRow row = rlk::bench_one(cfg, b, r, k);
                std::ostringstream cell;
                if (row.skipped) {
                    cell << "skipped";
                } else {
                    cell << std::fixed << std::setprecision(2) << row.mean_ms << " ("
                         << row.median_ms << ")";
                }
                std::cout << std::setw(16) << cell.str() << std::flush;
                report.rows.push_back(std::move(row));
            }
            std::cout << "\n";
        }
    }
    if (!a.csv.empty()) {
        std::ofstream os(a.csv, std::ios::trunc);
        if (!os) throw rlk::io_error("cannot open '" + a.csv + "' for writing");
        report.write_csv(os);
        std::cout << "wrote " << report.rows.size() << " rows to " << a.csv << "\n";
    }
    return kExitOk;
}

struct ReparamArgs {
    std::string arch, weights, out;
    int verify = 0;
    bool check_only = false;
    int size = 64;
    uint64_t seed = 0;
    int threads = env_threads_default();
};

int cmd_reparam(const ReparamArgs& a) {
    std::cout << "reparam configuration:\n";
    echo_kv("arch", a.arch);
    echo_kv("weights", a.weights);
    echo_kv("out", a.out);
    echo_kv("verify", std::to_string(a.verify));
    echo_kv("check_only", a.check_only ? "true" : "false");
    echo_kv("size", std::to_string(a.size));
    echo_kv("seed", std::to_string(a.seed));
    echo_kv("threads", std::to_string(a.threads));
    rlk::set_threads(a.threads);

    const rlk::ArchSpec arch = load_arch(a.arch);
    const rlk::LayerGraph graph = rlk::build(arch);
    auto [stored_graph, weights] = rlk::load(a.weights);
    (void)stored_graph;

    rlk::LayerGraph fused_graph;
    rlk::ModelWeights fused_weights;
    if (a.check_only) {
        std::tie(fused_graph, fused_weights) = rlk::load(a.out);
    } else {
        std::tie(fused_graph, fused_weights) = rlk::reparam_model(graph, weights);
        rlk::save(fused_graph, fused_weights, a.out);
        std::cout << "wrote deploy-form model (" << fused_graph.nodes.size() << " nodes, "
                  << fused_graph.bn_count() << " BN) to " << a.out << "\n";
        // Re-read what was written so verification covers the file on disk.
        std::tie(fused_graph, fused_weights) = rlk::load(a.out);
    }

    if (a.verify > 0) {
        rlk::Rng rng(a.seed);
        double worst = 0.0;
        for (int i = 0; i < a.verify; ++i) {
            const rlk::Tensor x = rlk::new_random({1, arch.in_channels, a.size, a.size}, rng,
                                                  rlk::UniformDist{0.0f, 1.0f});
            const rlk::Tensor y0 = rlk::forward(graph, weights, x, rlk::Backend::blocked);
            const rlk::Tensor y1 =
                rlk::forward(fused_graph, fused_weights, x, rlk::Backend::blocked);
            for (int64_t j = 0; j < y0.size(); ++j) {
                const double d = std::abs(static_cast<double>(y0.data()[j]) - y1.data()[j]) /
                                 (1.0 + std::abs(static_cast<double>(y0.data()[j])));
                worst = std::max(worst, d);
            }
        }
        std::cout << "verify: max relative error " << worst << " over " << a.verify
                  << " inputs\n";
        if (worst > 1e-4) {
            std::cerr << "verification FAILED (tolerance 1e-4)\n";
            return kExitVerify;
        }
        std::cout << "verification passed (tolerance 1e-4)\n";
    }
    return kExitOk;
}

struct ErfArgs {
    std::string arch, weights;
    int input_size = 256;
    int samples = 16;
    uint64_t seed = 0;
    std::vector<int> thresholds{20, 30, 50, 99};
    std::string heatmap, csv;
    std::string backend = "blocked";
    bool on_log = false;
    int threads = env_threads_default();
    std::vector<std::string> images;
};

int cmd_erf(const ErfArgs& a) {
    std::cout << "erf configuration:\n";
    echo_kv("arch", a.arch.empty() ? "(from weights container)" : a.arch);
    echo_kv("weights", a.weights.empty() ? "(random init)" : a.weights);
    echo_kv("input_size", std::to_string(a.input_size));
    echo_kv("samples", std::to_string(a.samples));
    echo_kv("seed", std::to_string(a.seed));
    {
        std::ostringstream ts;
        for (size_t i = 0; i < a.thresholds.size(); ++i) ts << (i ? "," : "") << a.thresholds[i];
        echo_kv("thresholds_percent", ts.str());
    }
    echo_kv("backend", a.backend);
    echo_kv("mass_scale", a.on_log ? "log" : "raw");
    echo_kv("threads", std::to_string(a.threads));
    rlk::set_threads(a.threads);

    rlk::LayerGraph graph;
    rlk::ModelWeights weights;
    if (!a.weights.empty()) {
        std::tie(graph, weights) = rlk::load(a.weights);
    } else {
        if (a.arch.empty())
            throw rlk::param_error("erf needs --arch when no --weights file is given");
        graph = rlk::build(load_arch(a.arch));
        weights = rlk::init_random(graph, a.seed);
    }
    if (graph.with_head)
        throw rlk::param_error(
            "model has a classifier head; ERF needs headless evaluation (with_head=false)");

    std::vector<rlk::Tensor> inputs;
    if (!a.images.empty()) {
        for (const auto& p : a.images) {
            rlk::Tensor img = rlk::read_image(p);
            if (img.shape().c != graph.in_channels)
                throw rlk::shape_error("image '" + p + "' has " +
                                       std::to_string(img.shape().c) + " channels, model wants " +
                                       std::to_string(graph.in_channels));
            inputs.push_back(std::move(img));
        }
    } else {
        rlk::Rng rng(a.seed);
        for (int i = 0; i < a.samples; ++i)
            inputs.push_back(rlk::new_random({1, graph.in_channels, a.input_size, a.input_size},
                                             rng, rlk::UniformDist{0.0f, 1.0f}));
    }

    const rlk::ERFMap map =
        rlk::compute_erf(graph, weights, inputs, rlk::backend_from_string(a.backend));
    const rlk::AreaRatioReport report =
        rlk::area_ratio(map, parse_percent_thresholds(a.thresholds), a.on_log);

    std::cout << "high-contribution area ratio r:\n ";
    for (const auto& r : report.rows)
        std::cout << "  t=" << static_cast<int>(r.threshold * 100 + 0.5)
                  << "%: " << std::fixed << std::setprecision(2) << r.ratio * 100.0 << "%";
    std::cout << "\n";

    if (!a.heatmap.empty()) {
        rlk::render_heatmap(map, a.heatmap);
        std::cout << "wrote heatmap to " << a.heatmap << "\n";
    }
    if (!a.csv.empty()) {
        std::ofstream os(a.csv, std::ios::trunc);
        if (!os) throw rlk::io_error("cannot open '" + a.csv + "' for writing");
        report.write_csv(os);
        std::cout << "wrote area ratios to " << a.csv << "\n";
    }
    return kExitOk;
}

int cmd_flops(const std::string& arch_path, int resolution) {
    std::cout << "flops configuration:\n";
    echo_kv("arch", arch_path);
    echo_kv("resolution", std::to_string(resolution));
    const rlk::ArchSpec arch = load_arch(arch_path);
    const rlk::LayerGraph graph = rlk::build(arch);
    const rlk::CountResult r = rlk::count(graph, resolution);
    std::cout << "params: " << r.params << " (" << std::fixed << std::setprecision(1)
              << r.params / 1e6 << "M)\n";
    std::cout << "macs:   " << r.macs << " (" << std::setprecision(1) << r.macs / 1e9 << "G)\n";
    return kExitOk;
}

int cmd_run(const std::string& arch_path, const std::string& weights_path,
            const std::string& image_path, int threads) {
    std::cout << "run configuration:\n";
    echo_kv("arch", arch_path.empty() ? "(from weights container)" : arch_path);
    echo_kv("weights", weights_path);
    echo_kv("input", image_path);
    echo_kv("threads", std::to_string(threads));
    rlk::set_threads(threads);
    auto [graph, weights] = rlk::load(weights_path);
    const rlk::Tensor img = rlk::read_image(image_path);
    const rlk::Tensor out = rlk::forward(graph, weights, img, rlk::Backend::blocked);

    // top-5 logits
    std::vector<std::pair<float, int64_t>> scored;
    for (int64_t c = 0; c < out.shape().c; ++c) scored.emplace_back(out.at(0, c, 0, 0), c);
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    const size_t top = std::min<size_t>(5, scored.size());
    std::cout << "top-" << top << " classes:\n";
    for (size_t i = 0; i < top; ++i)
        std::cout << "  class " << scored[i].second << "  score " << scored[i].first << "\n";
    return kExitOk;
}

struct DensifyArgs {
    int kernel = 3;
    int dilation = 1;
    std::string weights, out;
};

int cmd_densify(const DensifyArgs& a) {
    std::cout << "densify configuration:\n";
    echo_kv("kernel", std::to_string(a.kernel));
    echo_kv("dilation", std::to_string(a.dilation));
    echo_kv("weights", a.weights);
    echo_kv("out", a.out);
    auto [graph, weights] = rlk::load(a.weights);
    if (weights.all().size() != 1)
        throw rlk::param_error("densify expects a container holding exactly one kernel tensor");
    const rlk::NamedTensor& t = weights.all()[0];
    if (t.shape.size() != 4 || t.shape[2] != a.kernel || t.shape[3] != a.kernel)
        throw rlk::param_error("kernel tensor is not " + std::to_string(a.kernel) + "x" +
                               std::to_string(a.kernel));
    rlk::Tensor w({t.shape[0], t.shape[1], t.shape[2], t.shape[3]});
    std::copy(t.data.begin(), t.data.end(), w.data());
    const rlk::Tensor dense = rlk::dilate_kernel(w, a.dilation);
    rlk::ModelWeights out;
    const rlk::Shape ds = dense.shape();
    out.put(t.name, {ds.n, ds.c, ds.h, ds.w},
            std::vector<float>(dense.data(), dense.data() + dense.size()));
    rlk::save(graph, out, a.out);
    std::cout << "wrote " << ds.h << "x" << ds.w << " kernel to " << a.out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"large-kernel depth-wise convolution toolkit"};
    app.require_subcommand(1);
    std::function<int()> action;

    // bench
    auto bench_args = std::make_shared<BenchArgs>();
    {
        CLI::App* c = app.add_subcommand("bench", "latency grid for a depth-wise conv stack");
        c->add_option("--kernels", bench_args->kernels, "kernel sizes")->delimiter(',');
        c->add_option("--resolutions", bench_args->resolutions, "input resolutions")
            ->delimiter(',');
        c->add_option("--channels", bench_args->channels);
        c->add_option("--layers", bench_args->layers);
        c->add_option("--batch", bench_args->batch);
        c->add_option("--backend", bench_args->backend, "direct|blocked|fft|all");
        c->add_option("--reps", bench_args->reps, "timed repetitions (>= 5)");
        c->add_option("--threads", bench_args->threads);
        c->add_option("--tile", bench_args->tile, "blocked-backend tile edge");
        c->add_option("--seed", bench_args->seed);
        c->add_option("--csv", bench_args->csv, "output CSV path");
        c->callback([bench_args, &action] {
            if (bench_args->reps < 5) throw CLI::ValidationError("--reps must be >= 5");
            if (bench_args->backend != "all") {
                try {
                    rlk::backend_from_string(bench_args->backend);
                } catch (const rlk::param_error& e) {
                    throw CLI::ValidationError(e.what());
                }
            }
            for (int k : bench_args->kernels)
                if (k < 1 || k % 2 == 0) throw CLI::ValidationError("kernels must be odd");
            action = [bench_args] { return cmd_bench(*bench_args); };
        });
    }

    // reparam
    auto rp_args = std::make_shared<ReparamArgs>();
    {
        CLI::App* c = app.add_subcommand("reparam", "fold BN and small branches into large kernels");
        c->add_option("--arch", rp_args->arch)->required();
        c->add_option("--weights", rp_args->weights)->required();
        c->add_option("--out", rp_args->out)->required();
        c->add_option("--verify", rp_args->verify, "compare N random inputs through both forms");
        c->add_flag("--check-only", rp_args->check_only,
                    "do not write; verify an existing --out file");
        c->add_option("--size", rp_args->size, "verification input spatial size");
        c->add_option("--seed", rp_args->seed);
        c->add_option("--threads", rp_args->threads);
        c->callback([rp_args, &action] {
            if (rp_args->verify < 0) throw CLI::ValidationError("--verify must be >= 0");
            action = [rp_args] { return cmd_reparam(*rp_args); };
        });
    }

    // erf
    auto erf_args = std::make_shared<ErfArgs>();
    {
        CLI::App* c = app.add_subcommand("erf", "effective-receptive-field measurement");
        c->add_option("--arch", erf_args->arch);
        c->add_option("--weights", erf_args->weights);
        c->add_option("--input-size", erf_args->input_size);
        c->add_option("--samples", erf_args->samples);
        c->add_option("--seed", erf_args->seed);
        c->add_option("--thresholds", erf_args->thresholds, "percent thresholds")->delimiter(',');
        c->add_option("--heatmap", erf_args->heatmap, "PGM output path");
        c->add_option("--csv", erf_args->csv, "area-ratio CSV path");
        c->add_option("--backend", erf_args->backend);
        c->add_flag("--on-log", erf_args->on_log, "measure mass on the log-scaled map");
        c->add_option("--threads", erf_args->threads);
        c->add_option("--image", erf_args->images, "input image(s) instead of random samples");
        c->callback([erf_args, &action] {
            if (erf_args->samples < 1) throw CLI::ValidationError("--samples must be >= 1");
            if (erf_args->input_size < 1) throw CLI::ValidationError("--input-size must be >= 1");
            try {
                rlk::backend_from_string(erf_args->backend);
            } catch (const rlk::param_error& e) {
                throw CLI::ValidationError(e.what());
            }
            action = [erf_args] { return cmd_erf(*erf_args); };
        });
    }

    // flops
    auto flops_arch = std::make_shared<std::string>();
    auto flops_res = std::make_shared<int>(224);
    {
        CLI::App* c = app.add_subcommand("flops", "parameter and MAC totals");
        c->add_option("--arch", *flops_arch)->required();
        c->add_option("--resolution", *flops_res);
        c->callback([flops_arch, flops_res, &action] {
            if (*flops_res < 1) throw CLI::ValidationError("--resolution must be >= 1");
            action = [flops_arch, flops_res] { return cmd_flops(*flops_arch, *flops_res); };
        });
    }

    // run
    auto run_arch = std::make_shared<std::string>();
    auto run_weights = std::make_shared<std::string>();
    auto run_input = std::make_shared<std::string>();
    auto run_threads = std::make_shared<int>(env_threads_default());
    {
        CLI::App* c = app.add_subcommand("run", "single-image inference");
        c->add_option("--arch", *run_arch);
        c->add_option("--weights", *run_weights)->required();
        c->add_option("--input", *run_input)->required();
        c->add_option("--threads", *run_threads);
        c->callback([run_arch, run_weights, run_input, run_threads, &action] {
            action = [run_arch, run_weights, run_input, run_threads] {
                return cmd_run(*run_arch, *run_weights, *run_input, *run_threads);
            };
        });
    }

    // densify
    auto dn_args = std::make_shared<DensifyArgs>();
    {
        CLI::App* c = app.add_subcommand("densify", "expand a dilated kernel to its dense form");
        c->add_option("--kernel", dn_args->kernel)->required();
        c->add_option("--dilation", dn_args->dilation)->required();
        c->add_option("--weights", dn_args->weights)->required();
        c->add_option("--out", dn_args->out)->required();
        c->callback([dn_args, &action] {
            if (dn_args->kernel < 1 || dn_args->kernel % 2 == 0)
                throw CLI::ValidationError("--kernel must be odd");
            if (dn_args->dilation < 1) throw CLI::ValidationError("--dilation must be >= 1");
            action = [dn_args] { return cmd_densify(*dn_args); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        return action();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
