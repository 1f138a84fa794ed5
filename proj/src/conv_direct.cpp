#include <atomic>
#include <string>

#include "rlk/conv.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rlk {

int ConvSpec::same_padding() const {
    if (kernel % 2 == 0)
        throw param_error("same padding requires an odd kernel, got " + std::to_string(kernel));
    return dilation * (kernel - 1) / 2;
}

int ConvSpec::out_dim(int64_t in_dim) const {
    return static_cast<int>((in_dim + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1);
}

void ConvSpec::validate(const Shape& input) const {
    if (kernel < 1 || kernel % 2 == 0)
        throw param_error("kernel size must be odd and positive, got " + std::to_string(kernel));
    if (stride != 1 && stride != 2)
        throw param_error("stride must be 1 or 2, got " + std::to_string(stride));
    if (padding < 0) throw param_error("padding must be nonnegative");
    if (dilation < 1) throw param_error("dilation must be positive");
    if (in_channels < 1 || out_channels < 1) throw param_error("channel counts must be positive");
    if (groups != 1 && !(groups == in_channels && groups == out_channels))
        throw param_error("groups must be 1 or equal to both channel counts (depth-wise)");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw param_error("channel counts must be divisible by groups");
    if (input.c != in_channels)
        throw shape_error("input has " + std::to_string(input.c) + " channels, spec expects " +
                          std::to_string(in_channels));
    const int64_t extent = static_cast<int64_t>(dilation) * (kernel - 1) + 1;
    if (extent > input.h + 2 * padding || extent > input.w + 2 * padding)
        throw shape_error("effective kernel extent " + std::to_string(extent) +
                          " exceeds padded input " + input.str());
}

static void validate_weights(const ConvWeights& w, const ConvSpec& spec) {
    const Shape ws = w.w.shape();
    const Shape want{spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel};
    if (!(ws == want))
        throw shape_error("weight shape " + ws.str() + " does not match spec " + want.str());
    if (!w.bias.empty() && static_cast<int>(w.bias.size()) != spec.out_channels)
        throw shape_error("bias length " + std::to_string(w.bias.size()) + " vs out_channels " +
                          std::to_string(spec.out_channels));
}

ConvWeights make_dw_weights(int channels, int kernel, float fill) {
    return {Tensor({channels, 1, kernel, kernel}, fill), {}};
}

static std::atomic<int> g_threads{0};
static std::atomic<int> g_tile{8};

void set_threads(int n) { g_threads.store(n < 0 ? 0 : n); }
int threads() { return g_threads.load(); }

int effective_threads() {
    int n = g_threads.load();
    if (n > 0) return n;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_tile_size(int t) {
    if (t < 1) throw param_error("tile size must be >= 1");
    g_tile.store(t);
}
int tile_size() { return g_tile.load(); }

// Serial reference implementation: direct summation over the kernel window,
// out-of-range taps skipped (zero padding). f32 data, f64 accumulators.
Tensor conv2d_direct(const Tensor& x, const ConvWeights& w, const ConvSpec& spec) {
    spec.validate(x.shape());
    validate_weights(w, spec);
    const Shape in = x.shape();
    const int out_h = spec.out_dim(in.h);
    const int out_w = spec.out_dim(in.w);
    const int cpg = spec.in_channels / spec.groups;   // input channels per group
    const int opg = spec.out_channels / spec.groups;  // output channels per group
    Tensor out({in.n, spec.out_channels, out_h, out_w});

    for (int64_t n = 0; n < in.n; ++n) {
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            const int g = oc / opg;
            const float b = w.bias.empty() ? 0.0f : w.bias[oc];
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    double acc = 0.0;
                    for (int ic = 0; ic < cpg; ++ic) {
                        const float* xp = x.plane(n, g * cpg + ic).data();
                        for (int ky = 0; ky < spec.kernel; ++ky) {
                            const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int kx = 0; kx < spec.kernel; ++kx) {
                                const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
                                if (ix < 0 || ix >= in.w) continue;
                                acc += static_cast<double>(xp[iy * in.w + ix]) *
                                       w.w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    out.at(n, oc, oy, ox) = static_cast<float>(acc + b);
                }
            }
        }
    }
    debug_check_finite(out, "conv2d_direct");
    return out;
}

Backend backend_from_string(const std::string& name) {
    if (name == "direct") return Backend::direct;
    if (name == "blocked") return Backend::blocked;
    if (name == "fft") return Backend::fft;
    throw param_error("unknown backend '" + name + "' (expected direct|blocked|fft)");
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::direct: return "direct";
        case Backend::blocked: return "blocked";
        case Backend::fft: return "fft";
    }
    return "?";
}

Tensor conv2d(const Tensor& x, const ConvWeights& w, const ConvSpec& spec, Backend b) {
    switch (b) {
        case Backend::direct: return conv2d_direct(x, w, spec);
        case Backend::blocked: return conv2d_blocked(x, w, spec);
        case Backend::fft: return conv2d_fft(x, w, spec);
    }
    throw param_error("bad backend");
}

int64_t params_of(const ConvSpec& spec, bool bias) {
    int64_t p = static_cast<int64_t>(spec.out_channels) * (spec.in_channels / spec.groups) *
                spec.kernel * spec.kernel;
    if (bias) p += spec.out_channels;
    return p;
}

int64_t macs_of(const ConvSpec& spec, int64_t out_h, int64_t out_w, int64_t batch) {
    return params_of(spec, false) * out_h * out_w * batch;
}

}  // namespace rlk
