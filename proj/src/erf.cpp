#include "rlk/erf.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace rlk {

namespace {

Tensor scale_channels(const Tensor& g, const std::vector<float>& s) {
    Tensor out(g.shape());
    for (int64_t n = 0; n < g.shape().n; ++n)
        for (int64_t c = 0; c < g.shape().c; ++c) {
            auto src = g.plane(n, c);
            auto dst = out.plane(n, c);
            for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * s[c];
        }
    return out;
}

Tensor mask_by_positive(const Tensor& g, const Tensor& pre) {
    Tensor out(g.shape());
    const float* pg = g.data();
    const float* pp = pre.data();
    float* po = out.data();
    for (int64_t i = 0; i < g.size(); ++i) po[i] = pp[i] > 0.0f ? pg[i] : 0.0f;
    return out;
}

Tensor gelu_backward(const Tensor& g, const Tensor& pre) {
    Tensor out(g.shape());
    const float* pg = g.data();
    const float* pp = pre.data();
    float* po = out.data();
    for (int64_t i = 0; i < g.size(); ++i) po[i] = pg[i] * gelu_grad_scalar(pp[i]);
    return out;
}

void accumulate(std::vector<Tensor>& grads, int idx, Tensor&& g) {
    if (grads[idx].size() == 0) {
        grads[idx] = std::move(g);
        return;
    }
    float* dst = grads[idx].data();
    const float* src = g.data();
    for (int64_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

// Reverse walk from a unit gradient at the central spatial position of every
// channel and sample of the last node.
Tensor backward_from_center(const LayerGraph& g, const ModelWeights& w,
                            const std::vector<Tensor>& acts) {
    const int last = g.output();
    std::vector<Tensor> grads(g.nodes.size());

    const Shape os = acts[last].shape();
    Tensor seed(os);
    const int64_t cy = os.h / 2;
    const int64_t cx = os.w / 2;
    for (int64_t n = 0; n < os.n; ++n)
        for (int64_t c = 0; c < os.c; ++c) seed.at(n, c, cy, cx) = 1.0f;
    grads[last] = std::move(seed);

    for (int i = last; i >= 1; --i) {
        if (grads[i].size() == 0) continue;
        const Node& n = g.nodes[i];
        Tensor gi = std::move(grads[i]);
        switch (n.kind) {
            case NodeKind::conv: {
                ConvWeights cw;
                {
                    const NamedTensor& t = w.get(n.param + ".weight");
                    cw.w = Tensor({t.shape[0], t.shape[1], t.shape[2], t.shape[3]});
                    std::copy(t.data.begin(), t.data.end(), cw.w.data());
                    // bias has zero input gradient, so it is left out
                }
                accumulate(grads, n.input,
                           conv2d_vjp_input(gi, cw, n.spec, acts[n.input].shape()));
                break;
            }
            case NodeKind::bn: {
                BNParams bn;
                bn.gamma = w.get(n.param + ".gamma").data;
                bn.beta = w.get(n.param + ".beta").data;
                bn.mean = w.get(n.param + ".mean").data;
                bn.var = w.get(n.param + ".var").data;
                bn.eps = n.bn_eps;
                accumulate(grads, n.input, scale_channels(gi, bn_scale(bn)));
                break;
            }
            case NodeKind::relu:
                accumulate(grads, n.input, mask_by_positive(gi, acts[n.input]));
                break;
            case NodeKind::gelu:
                accumulate(grads, n.input, gelu_backward(gi, acts[n.input]));
                break;
            case NodeKind::add: {
                Tensor copy = gi;
                accumulate(grads, n.input, std::move(copy));
                accumulate(grads, n.input2, std::move(gi));
                break;
            }
            default:
                throw param_error(std::string("no input-gradient rule for node kind ") +
                                  node_kind_name(n.kind));
        }
    }
    if (grads[0].size() == 0) return Tensor(acts[0].shape());  // disconnected, zero gradient
    return std::move(grads[0]);
}

}  // namespace

Tensor input_gradient(const LayerGraph& g, const ModelWeights& w, const Tensor& x,
                      Backend backend) {
    if (g.with_head)
        throw param_error("input_gradient needs a headless graph; rebuild with with_head=false");
    const std::vector<Tensor> acts = forward_all(g, w, x, backend);
    return backward_from_center(g, w, acts);
}

ERFMap compute_erf(const LayerGraph& g, const ModelWeights& w, const std::vector<Tensor>& inputs,
                   Backend backend) {
    if (g.with_head)
        throw param_error(
            "ERF is measured on the final feature map; rebuild with with_head=false");
    if (inputs.empty()) throw param_error("compute_erf needs at least one input sample");

    ERFMap map;
    map.h = static_cast<int>(inputs[0].shape().h);
    map.w = static_cast<int>(inputs[0].shape().w);
    map.raw.assign(static_cast<size_t>(map.h) * map.w, 0.0);

    for (const Tensor& x : inputs) {
        if (x.shape().h != map.h || x.shape().w != map.w)
            throw shape_error("all ERF input samples must share one spatial size");
        const Tensor grad = input_gradient(g, w, x, backend);
        for (int64_t n = 0; n < grad.shape().n; ++n)
            for (int64_t c = 0; c < grad.shape().c; ++c) {
                auto p = grad.plane(n, c);
                for (size_t i = 0; i < p.size(); ++i)
                    if (p[i] > 0.0f) map.raw[i] += p[i];
            }
        map.n_samples += static_cast<int>(x.shape().n);
    }

    map.a.resize(map.raw.size());
    std::vector<double> logs(map.raw.size());
    double mx = 0.0;
    for (size_t i = 0; i < map.raw.size(); ++i) {
        logs[i] = std::log10(map.raw[i] + 1.0);
        mx = std::max(mx, logs[i]);
    }
    if (mx > 0.0) {
        for (size_t i = 0; i < logs.size(); ++i)
            map.a[i] = static_cast<float>(logs[i] / mx);  // max entry lands on exactly 1
    } else {
        map.degenerate = true;
        std::fill(map.a.begin(), map.a.end(), 0.0f);
    }
    return map;
}

AreaRatioReport area_ratio(const ERFMap& map, const std::vector<double>& thresholds,
                           bool on_log_scale) {
    if (map.degenerate) throw param_error("area_ratio: contribution map is identically zero");
    const int h = map.h, w = map.w;

    // Inclusive 2D prefix sums over the selected mass.
    std::vector<double> pre(static_cast<size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = on_log_scale ? static_cast<double>(map.a_at(y, x)) : map.raw_at(y, x);
            pre[static_cast<size_t>(y + 1) * (w + 1) + x + 1] =
                v + pre[static_cast<size_t>(y) * (w + 1) + x + 1] +
                pre[static_cast<size_t>(y + 1) * (w + 1) + x] -
                pre[static_cast<size_t>(y) * (w + 1) + x];
        }
    const double total = pre.back();
    if (!(total > 0.0)) throw param_error("area_ratio: zero total mass");

    const int cy = h / 2, cx = w / 2;
    auto square_mass = [&](int side) {
        const int y0 = std::max(0, cy - side / 2);
        const int x0 = std::max(0, cx - side / 2);
        const int y1 = std::min(h, y0 + side);
        const int x1 = std::min(w, x0 + side);
        return pre[static_cast<size_t>(y1) * (w + 1) + x1] -
               pre[static_cast<size_t>(y0) * (w + 1) + x1] -
               pre[static_cast<size_t>(y1) * (w + 1) + x0] +
               pre[static_cast<size_t>(y0) * (w + 1) + x0];
    };

    AreaRatioReport report;
    const int max_side = std::min(h, w);
    for (double t : thresholds) {
        if (!(t > 0.0 && t <= 1.0)) throw param_error("thresholds must lie in (0, 1]");
        int side = max_side;
        for (int s = 1; s <= max_side; ++s) {
            if (square_mass(s) >= t * total) {
                side = s;
                break;
            }
        }
        report.rows.push_back(
            {t, side, static_cast<double>(side) * side / (static_cast<double>(h) * w)});
    }
    return report;
}

void AreaRatioReport::write_csv(std::ostream& os) const {
    os << "threshold,side,ratio\n";
    for (const auto& r : rows) os << r.threshold << ',' << r.side << ',' << r.ratio << '\n';
}

double theoretical_erf(int kernel, int layers) {
    if (kernel < 1 || layers < 1) throw param_error("theoretical_erf needs kernel, layers >= 1");
    return kernel * std::sqrt(static_cast<double>(layers));
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w) {
    if (static_cast<size_t>(h) * w != pixels.size()) throw param_error("pgm: pixel count mismatch");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os << "P5\n" << w << ' ' << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!os) throw io_error("write to '" + path + "' failed");
}

namespace {

int next_pnm_int(std::istream& is) {
    // skips whitespace and '#' comment lines
    while (true) {
        const int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            is.get();
        } else {
            break;
        }
    }
    int v = -1;
    is >> v;
    if (!is) throw io_error("malformed PNM header");
    return v;
}

std::vector<uint8_t> read_pnm(const std::string& path, const char* want_tag, int channels, int& h,
                              int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path + "'");
    char tag[2];
    is.read(tag, 2);
    if (!is || tag[0] != want_tag[0] || tag[1] != want_tag[1])
        throw io_error("'" + path + "' is not a " + want_tag + " file");
    w = next_pnm_int(is);
    h = next_pnm_int(is);
    const int maxval = next_pnm_int(is);
    if (maxval != 255) throw io_error("only maxval 255 PNM files are supported");
    is.get();  // single whitespace before the raster
    std::vector<uint8_t> px(static_cast<size_t>(h) * w * channels);
    is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!is) throw truncated_error("PNM raster shorter than header promises");
    return px;
}

}  // namespace

std::vector<uint8_t> read_pgm(const std::string& path, int& h, int& w) {
    return read_pnm(path, "P5", 1, h, w);
}

Tensor read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw io_error("cannot open '" + path + "'");
    char tag[2] = {0, 0};
    probe.read(tag, 2);
    probe.close();
    int h = 0, w = 0;
    if (tag[0] == 'P' && tag[1] == '5') {
        const auto px = read_pnm(path, "P5", 1, h, w);
        Tensor t({1, 1, h, w});
        for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = px[i] / 255.0f;
        return t;
    }
    if (tag[0] == 'P' && tag[1] == '6') {
        const auto px = read_pnm(path, "P6", 3, h, w);
        Tensor t({1, 3, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    t.at(0, c, y, x) = px[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0f;
        return t;
    }
    throw io_error("'" + path + "' is neither PGM (P5) nor PPM (P6)");
}

void render_heatmap(const ERFMap& map, const std::string& path) {
    std::vector<uint8_t> px(map.a.size());
    for (size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<uint8_t>(std::floor(map.a[i] * 255.0f + 0.5f));
    write_pgm(path, px, map.h, map.w);
    if (map.degenerate) {
        std::ofstream os(path + ".txt", std::ios::trunc);
        os << "degenerate: contribution map is identically zero\n";
    }
}

}  // namespace rlk
