#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "helpers.hpp"
#include "rlk/erf.hpp"

using namespace rlk;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("rlk_test_" + name) {}
    ~TempFile() {
        std::remove(path.c_str());
        std::remove((path + ".txt").c_str());
    }
};

// stack with strictly positive kernels so the gradient support is exact
std::pair<LayerGraph, ModelWeights> positive_stack(int channels, int kernel, int layers) {
    LayerGraph g = build_conv_stack(channels, kernel, layers, false);
    ModelWeights w = init_random(g, 1);
    Rng rng(2);
    for (const Node& n : g.nodes) {
        if (n.kind != NodeKind::conv) continue;
        for (auto& v : w.get_mut(n.param + ".weight").data) v = rng.uniform(0.1f, 1.0f);
    }
    return {g, w};
}

std::vector<Tensor> one_sample(int channels, int size, uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> v;
    v.push_back(new_random({1, channels, size, size}, rng, UniformDist{0.0f, 1.0f}));
    return v;
}

}  // namespace

TEST_CASE("one positive depth-wise layer lights up exactly the centered KxK window") {
    const int K = 7, H = 24;
    auto [g, w] = positive_stack(3, K, 1);
    ERFMap map = compute_erf(g, w, one_sample(3, H, 3), Backend::direct);
    CHECK_FALSE(map.degenerate);
    const int c = H / 2, r = K / 2;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < H; ++x) {
            const bool inside = std::abs(y - c) <= r && std::abs(x - c) <= r;
            if (inside)
                CHECK(map.raw_at(y, x) > 0.0);
            else
                CHECK(map.raw_at(y, x) == 0.0);
        }
}

TEST_CASE("L-layer stacks have support side L*(K-1)+1") {
    for (int K : {3, 7, 13}) {
        for (int L : {1, 2, 4}) {
            const int side = L * (K - 1) + 1;
            const int H = side + 12;
            auto [g, w] = positive_stack(1, K, L);
            ERFMap map = compute_erf(g, w, one_sample(1, H, 5), Backend::blocked);
            const int c = H / 2, r = side / 2;
            int support = 0;
            bool contained = true;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < H; ++x) {
                    if (map.raw_at(y, x) > 0.0) {
                        ++support;
                        if (std::abs(y - c) > r || std::abs(x - c) > r) contained = false;
                    }
                }
            CAPTURE(K);
            CAPTURE(L);
            CHECK(contained);
            CHECK(support == side * side);
        }
    }
}

TEST_CASE("all-zero weights give a degenerate map and area_ratio refuses it") {
    LayerGraph g = build_conv_stack(2, 3, 2, false);
    ModelWeights w = init_random(g, 0);
    for (const Node& n : g.nodes)
        if (n.kind == NodeKind::conv)
            for (auto& v : w.get_mut(n.param + ".weight").data) v = 0.0f;
    ERFMap map = compute_erf(g, w, one_sample(2, 16, 7), Backend::direct);
    CHECK(map.degenerate);
    for (double v : map.raw) CHECK(v == 0.0);
    for (float v : map.a) CHECK(v == 0.0f);
    CHECK_THROWS_AS(area_ratio(map, {0.5}), param_error);
}

TEST_CASE("max of the rescaled map is exactly 1 when non-degenerate") {
    auto [g, w] = positive_stack(2, 5, 2);
    ERFMap map = compute_erf(g, w, one_sample(2, 20, 9), Backend::direct);
    float mx = 0.0f;
    for (float v : map.a) mx = std::max(mx, v);
    CHECK(mx == 1.0f);
}

TEST_CASE("uniform mass: t=25% needs a half-side square") {
    ERFMap map;
    map.h = map.w = 100;
    map.raw.assign(10000, 1.0);
    map.a.assign(10000, 1.0f);
    AreaRatioReport r = area_ratio(map, {0.25});
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].side == 50);
    CHECK(r.rows[0].ratio == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("point mass: any threshold is covered by a single pixel") {
    ERFMap map;
    map.h = 9;
    map.w = 11;
    map.raw.assign(99, 0.0);
    map.a.assign(99, 0.0f);
    map.raw[static_cast<size_t>(4) * 11 + 5] = 3.0;  // (h/2, w/2)
    map.a[static_cast<size_t>(4) * 11 + 5] = 1.0f;
    for (double t : {0.2, 0.99, 1.0}) {
        AreaRatioReport r = area_ratio(map, {t});
        CHECK(r.rows[0].side == 1);
        CHECK(r.rows[0].ratio == doctest::Approx(1.0 / 99).epsilon(1e-12));
    }
}

TEST_CASE("area ratios are nondecreasing in the threshold") {
    auto [g, w] = positive_stack(1, 5, 3);
    ERFMap map = compute_erf(g, w, one_sample(1, 32, 11), Backend::direct);
    for (bool on_log : {false, true}) {
        AreaRatioReport r = area_ratio(map, {0.2, 0.3, 0.5, 0.99}, on_log);
        for (size_t i = 1; i < r.rows.size(); ++i) {
            CHECK(r.rows[i].side >= r.rows[i - 1].side);
            CHECK(r.rows[i].ratio >= r.rows[i - 1].ratio);
        }
        CHECK(r.rows.back().ratio <= 1.0);
    }
}

TEST_CASE("theoretical receptive-field index") {
    CHECK(theoretical_erf(3, 4) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(theoretical_erf(1, 100) == doctest::Approx(10.0).epsilon(1e-12));
    // one wide layer roughly matches a hundred narrow ones
    CHECK(theoretical_erf(31, 1) == doctest::Approx(31.0).epsilon(1e-12));
    CHECK(theoretical_erf(3, 107) == doctest::Approx(31.0334).epsilon(1e-4));
    CHECK(theoretical_erf(3, 107) > theoretical_erf(31, 1));
    CHECK_THROWS_AS(theoretical_erf(0, 4), param_error);
}

TEST_CASE("heatmap pgm round trip reproduces round(a*255)") {
    auto [g, w] = positive_stack(1, 3, 2);
    ERFMap map = compute_erf(g, w, one_sample(1, 18, 13), Backend::direct);
    TempFile f("heatmap.pgm");
    render_heatmap(map, f.path);
    int h = 0, wi = 0;
    std::vector<uint8_t> px = read_pgm(f.path, h, wi);
    REQUIRE(h == map.h);
    REQUIRE(wi == map.w);
    for (size_t i = 0; i < px.size(); ++i)
        CHECK(px[i] == static_cast<uint8_t>(std::floor(map.a[i] * 255.0f + 0.5f)));
}

TEST_CASE("degenerate heatmaps come with a sidecar note") {
    ERFMap map;
    map.h = map.w = 4;
    map.raw.assign(16, 0.0);
    map.a.assign(16, 0.0f);
    map.degenerate = true;
    TempFile f("degenerate.pgm");
    render_heatmap(map, f.path);
    std::ifstream sidecar(f.path + ".txt");
    REQUIRE(sidecar.good());
    std::string line;
    std::getline(sidecar, line);
    CHECK(line.find("degenerate") != std::string::npos);
}

TEST_CASE("input gradient matches finite differences on a two-layer network") {
    // conv -> gelu -> conv, smooth end to end
    LayerGraph g;
    g.in_channels = 2;
    g.nodes.push_back(Node{});
    Node c1;
    c1.kind = NodeKind::conv;
    c1.input = 0;
    c1.param = "l0";
    c1.spec = dw(2, 3);
    g.nodes.push_back(c1);
    Node act;
    act.kind = NodeKind::gelu;
    act.input = 1;
    g.nodes.push_back(act);
    Node c2 = c1;
    c2.input = 2;
    c2.param = "l1";
    g.nodes.push_back(c2);

    ModelWeights w = init_random(g, 21);
    Rng wrng(22);
    for (const char* p : {"l0.weight", "l1.weight"})
        for (auto& v : w.get_mut(p).data) v = wrng.normal(0.0f, 0.6f);

    const int H = 10;
    Rng rng(23);
    Tensor x = new_random({1, 2, H, H}, rng, NormalDist{0.0f, 1.0f});
    Tensor grad = input_gradient(g, w, x, Backend::direct);

    auto f = [&](const Tensor& in) {
        Tensor out = forward(g, w, in, Backend::direct);
        double s = 0.0;
        for (int64_t n = 0; n < out.shape().n; ++n)
            for (int64_t c = 0; c < out.shape().c; ++c)
                s += out.at(n, c, out.shape().h / 2, out.shape().w / 2);
        return s;
    };
    const float step = 1e-3f;
    Tensor probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const float orig = probe.data()[i];
        probe.data()[i] = orig + step;
        const double hi = f(probe);
        probe.data()[i] = orig - step;
        const double lo = f(probe);
        probe.data()[i] = orig;
        const double fd = (hi - lo) / (2.0 * step);
        CHECK(std::fabs(grad.data()[i] - fd) <= 1e-3 * (1.0 + std::fabs(fd)));
    }
}

TEST_CASE("erf refuses graphs with a classifier head") {
    ArchSpec a;
    a.blocks = {1, 1, 1, 1};
    a.channels = {4, 4, 4, 4};
    a.kernels = {3, 3, 3, 3};
    a.small_kernel = 0;
    a.num_classes = 10;
    a.with_head = true;
    LayerGraph g = build(a);
    ModelWeights w = init_random(g, 31);
    CHECK_THROWS_AS(compute_erf(g, w, one_sample(3, 32, 1), Backend::direct), param_error);
}

TEST_CASE("pgm reader understands comments and rejects bad magic") {
    TempFile f("comment.pgm");
    {
        std::ofstream os(f.path, std::ios::binary);
        os << "P5\n# a comment line\n2 2\n255\n";
        const unsigned char px[4] = {0, 64, 128, 255};
        os.write(reinterpret_cast<const char*>(px), 4);
    }
    int h = 0, w = 0;
    auto px = read_pgm(f.path, h, w);
    CHECK(h == 2);
    CHECK(w == 2);
    CHECK(px[3] == 255);

    TempFile bad("bad.pgm");
    {
        std::ofstream os(bad.path, std::ios::binary);
        os << "P4\n2 2\n255\n....";
    }
    CHECK_THROWS_AS(read_pgm(bad.path, h, w), io_error);
}
