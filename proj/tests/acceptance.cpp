// Acceptance suite: each criterion prints one [PASS]/[FAIL] line; the process
// exits nonzero if any checked criterion fails. `--only N` runs a single one.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rlk/bench.hpp"
#include "rlk/erf.hpp"
#include "rlk/replknet.hpp"

using namespace rlk;

namespace {

double max_combined_err(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]) /
                         (1.0 + std::fabs(static_cast<double>(a.data()[i])));
        worst = std::max(worst, d);
    }
    return worst;
}

ConvSpec dw(int channels, int kernel, int stride = 1, int dilation = 1) {
    ConvSpec s;
    s.kernel = kernel;
    s.stride = stride;
    s.dilation = dilation;
    s.groups = channels;
    s.in_channels = channels;
    s.out_channels = channels;
    s.padding = s.same_padding();
    return s;
}

ConvWeights random_dw_weights(int channels, int kernel, Rng& rng) {
    // init-scale magnitudes, the regime the fusion tolerances are stated for
    return {new_random({channels, 1, kernel, kernel}, rng, NormalDist{0.0f, 0.1f}), {}};
}

BNParams random_bn(int channels, Rng& rng) {
    BNParams bn;
    bn.gamma.resize(channels);
    bn.beta.resize(channels);
    bn.mean.resize(channels);
    bn.var.resize(channels);
    for (int c = 0; c < channels; ++c) {
        bn.gamma[c] = rng.uniform(0.8f, 1.2f);
        bn.beta[c] = rng.normal(0.0f, 0.2f);
        bn.mean[c] = rng.normal(0.0f, 0.2f);
        bn.var[c] = rng.uniform(0.5f, 1.5f);
    }
    return bn;
}

// ------------------------------------------------------------ criterion 1

bool criterion_params_flops(std::ostream& log) {
    ArchSpec base;
    base.blocks = {2, 2, 18, 2};
    base.channels = {128, 256, 512, 1024};
    base.small_kernel = 0;  // single-branch counting, the form the figures describe
    base.num_classes = 1000;

    base.kernels = {3, 3, 3, 3};
    const CountResult small = count(build(base), 224);
    base.kernels = {31, 29, 27, 13};
    const CountResult large = count(build(base), 224);

    const double p_small = small.params / 1e6, m_small = small.macs / 1e9;
    const double p_large = large.params / 1e6, m_large = large.macs / 1e9;
    const double dp = 100.0 * (large.params - small.params) / small.params;
    const double dm = 100.0 * (large.macs - small.macs) / small.macs;

    log << "3-3-3-3: " << p_small << "M/" << m_small << "G (want 71.8M/12.9G +-5%), "
        << "31-29-27-13: " << p_large << "M/" << m_large << "G (want 79.3M/15.3G +-5%), "
        << "delta params " << dp << "% (want 10.4 +-1.0pp), delta macs " << dm
        << "% (want 18.6 +-1.5pp)";

    return std::fabs(p_small - 71.8) / 71.8 <= 0.05 && std::fabs(m_small - 12.9) / 12.9 <= 0.05 &&
           std::fabs(p_large - 79.3) / 79.3 <= 0.05 && std::fabs(m_large - 15.3) / 15.3 <= 0.05 &&
           std::fabs(dp - 10.4) <= 1.0 && std::fabs(dm - 18.6) <= 1.5;
}

// ------------------------------------------------------------ criterion 2

bool criterion_reparam(std::ostream& log) {
    Rng rng(202);
    double worst_branch = 0.0, worst_bn_only = 0.0;
    int cases = 0;
    for (int K : {7, 13, 31}) {
        for (int k : {3, 5}) {
            for (int rep = 0; rep < 9; ++rep) {
                const int channels = 1 + static_cast<int>(rng.next_u64() % 4);
                BranchedConv b;
                b.large = {random_dw_weights(channels, K, rng), random_bn(channels, rng)};
                b.small = ConvBN{random_dw_weights(channels, k, rng), random_bn(channels, rng)};
                const FusedKernel fused = merge_branches(b);
                const int H = K + 3 + static_cast<int>(rng.next_u64() % 6);
                Tensor x = new_random({1, channels, H, H}, rng, NormalDist{0.0f, 1.0f});
                Tensor two =
                    add(batchnorm(conv2d_blocked(x, b.large.conv, dw(channels, K)), b.large.bn),
                        batchnorm(conv2d_blocked(x, b.small->conv, dw(channels, k)), b.small->bn));
                Tensor one = conv2d_blocked(x, fused, dw(channels, K));
                worst_branch = std::max(worst_branch, max_combined_err(two, one));

                const FusedKernel bn_only = fuse_bn(b.large.conv, b.large.bn);
                Tensor ref = batchnorm(conv2d_blocked(x, b.large.conv, dw(channels, K)), b.large.bn);
                Tensor got = conv2d_blocked(x, bn_only, dw(channels, K));
                worst_bn_only = std::max(worst_bn_only, max_combined_err(ref, got));
                ++cases;
            }
        }
    }

    // full-model check on a small-channel instance of the family
    ArchSpec tiny;
    tiny.blocks = {1, 1, 1, 1};
    tiny.channels = {16, 32, 64, 128};
    tiny.kernels = {13, 13, 13, 13};
    tiny.small_kernel = 5;
    tiny.with_head = false;
    LayerGraph g = build(tiny);
    ModelWeights w = init_random(g, 7);
    for (const Node& n : g.nodes) {
        if (n.kind != NodeKind::bn) continue;
        for (auto& v : w.get_mut(n.param + ".gamma").data) v = rng.uniform(0.5f, 1.5f);
        for (auto& v : w.get_mut(n.param + ".beta").data) v = rng.normal(0.0f, 0.2f);
        for (auto& v : w.get_mut(n.param + ".mean").data) v = rng.normal(0.0f, 0.2f);
        for (auto& v : w.get_mut(n.param + ".var").data) v = rng.uniform(0.5f, 1.5f);
    }
    auto [dg, dwts] = reparam_model(g, w);
    double worst_model = 0.0;
    for (int i = 0; i < 10; ++i) {
        Tensor x = new_random({1, 3, 64, 64}, rng, UniformDist{0.0f, 1.0f});
        worst_model = std::max(worst_model, max_combined_err(forward(g, w, x, Backend::blocked),
                                                             forward(dg, dwts, x, Backend::blocked)));
    }

    log << cases << " branched configs, worst " << worst_branch << " (tol 1e-4); bn-only worst "
        << worst_bn_only << " (tol 1e-6); model worst " << worst_model
        << " over 10 inputs (tol 1e-4); deploy BN nodes " << dg.bn_count();
    return cases >= 50 && worst_branch <= 1e-4 && worst_bn_only <= 1e-6 && worst_model <= 1e-4 &&
           dg.bn_count() == 0;
}

// ------------------------------------------------------------ criterion 3

bool criterion_backends(std::ostream& log) {
    Rng rng(303);
    double worst_blocked = 0.0, worst_fft = 0.0;
    const int cases = 200;
    for (int iter = 0; iter < cases; ++iter) {
        const int K = 1 + 2 * static_cast<int>(rng.next_u64() % 16);  // odd 1..31
        const int stride = 1 + static_cast<int>(rng.next_u64() % 2);
        const int dilation_pool[3] = {1, 2, 4};
        const int dilation = dilation_pool[rng.next_u64() % 3];
        const int channels = 1 + static_cast<int>(rng.next_u64() % 4);
        const bool depthwise = rng.next_u64() % 3 != 0;
        const int extent = dilation * (K - 1) + 1;

        ConvSpec spec;
        spec.kernel = K;
        spec.stride = stride;
        spec.dilation = dilation;
        if (depthwise) {
            spec.groups = spec.in_channels = spec.out_channels = channels;
        } else {
            spec.groups = 1;
            spec.in_channels = channels;
            spec.out_channels = 1 + static_cast<int>(rng.next_u64() % 4);
        }
        spec.padding = spec.same_padding();
        const int h = std::max(4, extent / 4 + static_cast<int>(rng.next_u64() % 14));
        const int wd = std::max(4, extent / 4 + static_cast<int>(rng.next_u64() % 14));

        Tensor x = new_random({1 + static_cast<int>(rng.next_u64() % 2), channels, h, wd}, rng,
                              NormalDist{0.0f, 1.0f});
        ConvWeights w{new_random({spec.out_channels, spec.in_channels / spec.groups, K, K}, rng,
                                 NormalDist{0.0f, 0.5f}),
                      {}};
        if (rng.next_u64() % 2) {
            w.bias.resize(spec.out_channels);
            for (auto& b : w.bias) b = rng.normal(0.0f, 0.5f);
        }
        Tensor yd = conv2d_direct(x, w, spec);
        worst_blocked = std::max(worst_blocked, max_combined_err(yd, conv2d_blocked(x, w, spec)));
        worst_fft = std::max(worst_fft, max_combined_err(yd, conv2d_fft(x, w, spec)));
    }
    log << cases << " random cases, blocked worst " << worst_blocked
        << " (tol 1e-5), fft worst " << worst_fft << " (tol 1e-4)";
    return worst_blocked <= 1e-5 && worst_fft <= 1e-4;
}

// ------------------------------------------------------------ criterion 4

bool criterion_dilated(std::ostream& log) {
    Rng rng(404);
    double worst = 0.0;
    for (int k : {3, 5}) {
        for (int d : {1, 2, 4, 6}) {
            for (int rep = 0; rep < 3; ++rep) {
                const int channels = 1 + static_cast<int>(rng.next_u64() % 3);
                ConvWeights w = random_dw_weights(channels, k, rng);
                const ConvWeights dense_w = densify_dilated(w, d);
                const ConvSpec dilated = dw(channels, k, 1, d);
                const ConvSpec dense = dw(channels, (k - 1) * d + 1);
                const int H = (k - 1) * d + 5 + static_cast<int>(rng.next_u64() % 8);
                Tensor x = new_random({1, channels, H, H}, rng, NormalDist{0.0f, 1.0f});
                for (Backend b : {Backend::direct, Backend::blocked, Backend::fft}) {
                    Tensor a = conv2d(x, w, dilated, b);
                    Tensor bb = conv2d(x, dense_w, dense, b);
                    worst = std::max(worst, max_combined_err(a, bb));
                }
            }
        }
    }
    log << "d in {1,2,4,6}, k in {3,5}, all backends, worst " << worst << " (tol 1e-6)";
    return worst <= 1e-6;
}

// ------------------------------------------------------------ criterion 5

bool criterion_latency(std::ostream& log) {
    BenchConfig cfg;  // desk defaults: channels 64, layers 24, batch 4
    cfg.kernel_sizes = {3, 31};
    cfg.resolutions = {32};
    cfg.reps = 5;

    const BenchRow r3 = bench_one(cfg, Backend::blocked, 32, 3);
    const BenchRow r31 = bench_one(cfg, Backend::blocked, 32, 31);
    const double ratio = r31.median_ms / r3.median_ms;
    const double bound = 0.9 * (31.0 / 3.0) * (31.0 / 3.0);

    // grid completeness at a reduced size: the full kernel/resolution cross
    // product must serialize, one row per cell
    BenchConfig grid;
    grid.channels = 4;
    grid.layers = 2;
    grid.batch = 1;
    grid.reps = 5;
    BenchReport report = bench_stack(grid, Backend::blocked);
    std::ostringstream csv;
    report.write_csv(csv);
    size_t lines = 0;
    for (char c : csv.str())
        if (c == '\n') ++lines;
    const size_t want_rows = grid.kernel_sizes.size() * grid.resolutions.size();
    bool grid_ok = lines == want_rows + 1 && report.rows.size() == want_rows;
    for (const auto& row : report.rows) grid_ok = grid_ok && !row.skipped && row.reps == 5;

    log << "median L(K=31)=" << r31.median_ms << "ms, L(K=3)=" << r3.median_ms
        << "ms, ratio " << ratio << " (bound " << bound << "); grid rows " << report.rows.size()
        << "/" << want_rows;
    return ratio <= bound && grid_ok;
}

// ------------------------------------------------------------ criterion 6

bool criterion_erf_correctness(std::ostream& log) {
    // (a) gradient chain vs finite differences on a 2-layer net
    LayerGraph g2;
    g2.in_channels = 2;
    g2.nodes.push_back(Node{});
    Node c1;
    c1.kind = NodeKind::conv;
    c1.input = 0;
    c1.param = "l0";
    c1.spec = dw(2, 3);
    g2.nodes.push_back(c1);
    Node act;
    act.kind = NodeKind::gelu;
    act.input = 1;
    g2.nodes.push_back(act);
    Node c2 = c1;
    c2.input = 2;
    c2.param = "l1";
    g2.nodes.push_back(c2);
    ModelWeights w2 = init_random(g2, 61);
    Rng wr(62);
    for (const char* p : {"l0.weight", "l1.weight"})
        for (auto& v : w2.get_mut(p).data) v = wr.normal(0.0f, 0.6f);

    Rng rng(606);
    const int H = 10;
    Tensor x = new_random({1, 2, H, H}, rng, NormalDist{0.0f, 1.0f});
    Tensor grad = input_gradient(g2, w2, x, Backend::direct);
    auto f = [&](const Tensor& in) {
        Tensor out = forward(g2, w2, in, Backend::direct);
        double s = 0.0;
        for (int64_t c = 0; c < out.shape().c; ++c)
            s += out.at(0, c, out.shape().h / 2, out.shape().w / 2);
        return s;
    };
    double worst_fd = 0.0;
    Tensor probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const float orig = probe.data()[i];
        probe.data()[i] = orig + 1e-3f;
        const double hi = f(probe);
        probe.data()[i] = orig - 1e-3f;
        const double lo = f(probe);
        probe.data()[i] = orig;
        const double fd = (hi - lo) / 2e-3;
        worst_fd = std::max(worst_fd,
                            std::fabs(grad.data()[i] - fd) / (1.0 + std::fabs(fd)));
    }

    // (b) support law for linear stacks, (c) max(A)=1 and monotone r
    bool support_ok = true, scale_ok = true, monotone_ok = true;
    for (int K : {3, 7, 13}) {
        for (int L : {1, 2, 4}) {
            const int side = L * (K - 1) + 1;
            const int HH = side + 12;
            LayerGraph g = build_conv_stack(1, K, L, false);
            ModelWeights w = init_random(g, 42);
            Rng pw(43);
            for (const Node& n : g.nodes)
                if (n.kind == NodeKind::conv)
                    for (auto& v : w.get_mut(n.param + ".weight").data)
                        v = pw.uniform(0.1f, 1.0f);
            std::vector<Tensor> inputs;
            Rng ir(44);
            inputs.push_back(new_random({1, 1, HH, HH}, ir, UniformDist{0.0f, 1.0f}));
            ERFMap map = compute_erf(g, w, inputs, Backend::blocked);

            int support = 0;
            const int cy = HH / 2, r = side / 2;
            bool contained = true;
            for (int y = 0; y < HH; ++y)
                for (int xx = 0; xx < HH; ++xx)
                    if (map.raw_at(y, xx) > 0.0) {
                        ++support;
                        if (std::abs(y - cy) > r || std::abs(xx - cy) > r) contained = false;
                    }
            support_ok = support_ok && contained && support == side * side;

            float mx = 0.0f;
            for (float v : map.a) mx = std::max(mx, v);
            scale_ok = scale_ok && mx == 1.0f;

            AreaRatioReport rep = area_ratio(map, {0.2, 0.3, 0.5, 0.99});
            for (size_t i = 1; i < rep.rows.size(); ++i)
                monotone_ok = monotone_ok && rep.rows[i].ratio >= rep.rows[i - 1].ratio;
        }
    }
    log << "fd worst " << worst_fd << " (tol 1e-3); support law "
        << (support_ok ? "exact" : "VIOLATED") << "; max(A)=1 " << (scale_ok ? "ok" : "VIOLATED")
        << "; r monotone " << (monotone_ok ? "ok" : "VIOLATED");
    return worst_fd <= 1e-3 && support_ok && scale_ok && monotone_ok;
}

// ------------------------------------------------------------ criterion 7

bool criterion_erf_ordering(std::ostream& log) {
    auto median_r50 = [&](int kernel) {
        std::vector<double> rs;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            LayerGraph g = build_conv_stack(3, kernel, 8, true);
            ModelWeights w = init_random(g, seed);
            std::vector<Tensor> inputs;
            Rng ir(seed * 100 + 9);
            for (int i = 0; i < 2; ++i)
                inputs.push_back(new_random({1, 3, 256, 256}, ir, UniformDist{0.0f, 1.0f}));
            ERFMap map = compute_erf(g, w, inputs, Backend::blocked);
            rs.push_back(area_ratio(map, {0.5}).rows[0].ratio);
        }
        std::sort(rs.begin(), rs.end());
        return rs[rs.size() / 2];
    };
    const double r13 = median_r50(13);
    const double r3 = median_r50(3);
    log << "median r(t=50%) over 5 seeds: K=13 stack " << r13 * 100.0 << "%, K=3 stack "
        << r3 * 100.0 << "% (strict order required)";
    return r13 > r3;
}

// ------------------------------------------------------------ criterion 8

bool criterion_model_io(std::ostream& log) {
    ArchSpec a;
    a.blocks = {1, 1, 1, 1};
    a.channels = {4, 4, 8, 8};
    a.kernels = {7, 7, 7, 7};
    a.small_kernel = 3;
    a.num_classes = 5;
    LayerGraph g = build(a);
    ModelWeights w = init_random(g, 88);
    const std::string path = "acceptance_io.rlkw";
    save(g, w, path);

    bool bitwise = true;
    {
        auto [g2, w2] = load(path);
        bitwise = w2.all().size() == w.all().size();
        for (size_t i = 0; bitwise && i < w.all().size(); ++i) {
            bitwise = w.all()[i].name == w2.all()[i].name &&
                      w.all()[i].data.size() == w2.all()[i].data.size();
            for (size_t j = 0; bitwise && j < w.all()[i].data.size(); ++j)
                bitwise = std::memcmp(&w.all()[i].data[j], &w2.all()[i].data[j], 4) == 0;
        }
    }

    bool corrupt_detected = false;
    {
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        bytes[bytes.size() - 64] ^= 0x10;
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        os.close();
        try {
            load(path);
        } catch (const checksum_error&) {
            corrupt_detected = true;
        }
    }
    std::remove(path.c_str());
    log << "round trip " << (bitwise ? "bitwise" : "LOSSY") << ", corruption "
        << (corrupt_detected ? "detected" : "MISSED");
    return bitwise && corrupt_detected;
}

// ------------------------------------------------------------ criterion 9

bool criterion_block_identity(std::ostream& log) {
    ArchSpec a;
    a.blocks = {1, 1, 1, 1};
    a.channels = {8, 8, 16, 16};
    a.kernels = {7, 7, 7, 7};
    a.small_kernel = 3;
    a.with_head = false;
    LayerGraph g = build(a);
    ModelWeights w = init_random(g, 99);
    for (const Node& n : g.nodes)
        if (n.kind == NodeKind::conv && n.param.find(".pw2") != std::string::npos)
            for (auto& v : w.get_mut(n.param + ".weight").data) v = 0.0f;

    Rng rng(909);
    Tensor x = new_random({1, 3, 64, 64}, rng, UniformDist{0.0f, 1.0f});
    auto acts = forward_all(g, w, x, Backend::blocked);

    int blocks_checked = 0;
    bool exact = true;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        if (g.nodes[i].kind != NodeKind::add) continue;
        if (g.nodes[g.nodes[i].input].kind == NodeKind::bn &&
            g.nodes[g.nodes[i].input2].kind == NodeKind::bn)
            continue;  // branched DW join, not a block shortcut
        ++blocks_checked;
        const Tensor& got = acts[i];
        const Tensor& want = acts[g.nodes[i].input2];
        for (int64_t j = 0; j < got.size(); ++j)
            if (got.data()[j] != want.data()[j]) exact = false;
    }
    log << blocks_checked << " shortcut blocks, identity " << (exact ? "exact" : "VIOLATED");
    return blocks_checked == 8 && exact;  // 4 stages x (RepLK + ConvFFN)
}

struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::ostream&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);
    }

    const std::vector<Criterion> criteria = {
        {1, "parameter/FLOP reproduction", criterion_params_flops},
        {2, "re-parameterization equivalence", criterion_reparam},
        {3, "backend equivalence", criterion_backends},
        {4, "dilated vs densified kernels", criterion_dilated},
        {5, "latency trend", criterion_latency},
        {6, "ERF correctness", criterion_erf_correctness},
        {7, "comparative ERF ordering", criterion_erf_ordering},
        {8, "model I/O integrity", criterion_model_io},
        {9, "structural identity", criterion_block_identity},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (only != 0 && c.id != only) continue;
        std::ostringstream detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << "criterion " << c.id << ": " << c.name
                  << " -- " << detail.str() << "\n";
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
