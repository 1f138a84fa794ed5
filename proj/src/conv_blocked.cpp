#include <algorithm>
#include <vector>

#include "rlk/conv.hpp"

namespace rlk {

namespace {

// Geometry of one output tile and the input patch feeding it.
struct TilePlan {
    int oy0, ox0;      // first output row/col
    int th, tw;        // outputs covered
    int py0, px0;      // first input row/col the patch needs (may be negative)
    int ph, pw;        // patch extent
};

TilePlan plan_tile(const ConvSpec& s, int oy0, int ox0, int th, int tw) {
    TilePlan t;
    t.oy0 = oy0;
    t.ox0 = ox0;
    t.th = th;
    t.tw = tw;
    t.py0 = oy0 * s.stride - s.padding;
    t.px0 = ox0 * s.stride - s.padding;
    t.ph = (th - 1) * s.stride + s.dilation * (s.kernel - 1) + 1;
    t.pw = (tw - 1) * s.stride + s.dilation * (s.kernel - 1) + 1;
    return t;
}

// Zero-fill stage of the patch for one input plane; used when the patch
// crosses the input border.
void stage_patch(const float* src, int in_h, int in_w, const TilePlan& t, float* buf) {
    std::fill(buf, buf + static_cast<size_t>(t.ph) * t.pw, 0.0f);
    const int y_lo = std::max(0, -t.py0);
    const int y_hi = std::min(t.ph, in_h - t.py0);
    const int x_lo = std::max(0, -t.px0);
    const int x_hi = std::min(t.pw, in_w - t.px0);
    for (int y = y_lo; y < y_hi; ++y) {
        const float* s = src + static_cast<int64_t>(t.py0 + y) * in_w + t.px0 + x_lo;
        std::copy(s, s + (x_hi - x_lo), buf + static_cast<int64_t>(y) * t.pw + x_lo);
    }
}

// K x K reduction for one (oc, input-plane) pair over the whole tile. `src`
// points at the patch origin; interior tiles pass the input plane directly,
// border tiles pass the staged buffer. f64 accumulators in the same tap order
// as the direct backend, so results agree to the last bit.
void accumulate_tile(const TilePlan& t, const ConvSpec& s, const float* src, int64_t row_stride,
                     const float* kw, double* acc) {
    for (int ty = 0; ty < t.th; ++ty) {
        double* arow = acc + static_cast<int64_t>(ty) * t.tw;
        const float* prow = src + static_cast<int64_t>(ty) * s.stride * row_stride;
        for (int ky = 0; ky < s.kernel; ++ky) {
            const float* irow = prow + static_cast<int64_t>(ky) * s.dilation * row_stride;
            const float* krow = kw + static_cast<int64_t>(ky) * s.kernel;
            for (int kx = 0; kx < s.kernel; ++kx) {
                const double wv = krow[kx];
                const float* ip = irow + static_cast<int64_t>(kx) * s.dilation;
                if (s.stride == 1) {
                    for (int tx = 0; tx < t.tw; ++tx) arow[tx] += wv * ip[tx];
                } else {
                    for (int tx = 0; tx < t.tw; ++tx) arow[tx] += wv * ip[2 * tx];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_blocked(const Tensor& x, const ConvWeights& w, const ConvSpec& spec) {
    spec.validate(x.shape());
    {
        const Shape ws = w.w.shape();
        const Shape want{spec.out_channels, spec.in_channels / spec.groups, spec.kernel,
                         spec.kernel};
        if (!(ws == want))
            throw shape_error("weight shape " + ws.str() + " does not match spec " + want.str());
        if (!w.bias.empty() && static_cast<int>(w.bias.size()) != spec.out_channels)
            throw shape_error("bias length mismatch");
    }

    const Shape in = x.shape();
    const int out_h = spec.out_dim(in.h);
    const int out_w = spec.out_dim(in.w);
    const int cpg = spec.in_channels / spec.groups;
    const int opg = spec.out_channels / spec.groups;
    Tensor out({in.n, spec.out_channels, out_h, out_w});

    const int T = tile_size();
    const int tiles_y = (out_h + T - 1) / T;
    const int tiles_x = (out_w + T - 1) / T;

    // Output channels within a group are processed in blocks so wide dense
    // convolutions still spread across threads.
    constexpr int kOcBlock = 16;
    const int oc_blocks = (opg + kOcBlock - 1) / kOcBlock;
    const int64_t jobs = in.n * static_cast<int64_t>(spec.groups) * oc_blocks * tiles_y;

    [[maybe_unused]] const int nthreads = effective_threads();
#pragma omp parallel num_threads(nthreads)
    {
        std::vector<float> patch;  // staged border patches, cpg planes
        std::vector<double> acc(static_cast<size_t>(T) * T);
#pragma omp for schedule(static)
        for (int64_t job = 0; job < jobs; ++job) {
            const int ty = static_cast<int>(job % tiles_y);
            const int ocb = static_cast<int>(job / tiles_y % oc_blocks);
            const int g = static_cast<int>(job / tiles_y / oc_blocks % spec.groups);
            const int64_t n = job / tiles_y / oc_blocks / spec.groups;
            const int oc_lo = g * opg + ocb * kOcBlock;
            const int oc_hi = std::min(oc_lo + kOcBlock, (g + 1) * opg);

            for (int tx = 0; tx < tiles_x; ++tx) {
                const TilePlan t = plan_tile(spec, ty * T, tx * T, std::min(T, out_h - ty * T),
                                             std::min(T, out_w - tx * T));
                const bool interior = t.py0 >= 0 && t.px0 >= 0 && t.py0 + t.ph <= in.h &&
                                      t.px0 + t.pw <= in.w;
                if (!interior) {
                    patch.resize(static_cast<size_t>(cpg) * t.ph * t.pw);
                    for (int ic = 0; ic < cpg; ++ic)
                        stage_patch(x.plane(n, g * cpg + ic).data(), static_cast<int>(in.h),
                                    static_cast<int>(in.w), t,
                                    patch.data() + static_cast<size_t>(ic) * t.ph * t.pw);
                }
                for (int oc = oc_lo; oc < oc_hi; ++oc) {
                    std::fill(acc.begin(), acc.begin() + static_cast<size_t>(t.th) * t.tw, 0.0);
                    for (int ic = 0; ic < cpg; ++ic) {
                        const float* src;
                        int64_t row_stride;
                        if (interior) {
                            src = x.plane(n, g * cpg + ic).data() +
                                  static_cast<int64_t>(t.py0) * in.w + t.px0;
                            row_stride = in.w;
                        } else {
                            src = patch.data() + static_cast<size_t>(ic) * t.ph * t.pw;
                            row_stride = t.pw;
                        }
                        const float* kw =
                            w.w.data() +
                            (static_cast<int64_t>(oc) * cpg + ic) * spec.kernel * spec.kernel;
                        accumulate_tile(t, spec, src, row_stride, kw, acc.data());
                    }
                    const float b = w.bias.empty() ? 0.0f : w.bias[oc];
                    for (int ry = 0; ry < t.th; ++ry) {
                        float* orow = &out.at(n, oc, t.oy0 + ry, t.ox0);
                        for (int rx = 0; rx < t.tw; ++rx)
                            orow[rx] = static_cast<float>(
                                acc[static_cast<size_t>(ry) * t.tw + rx] + b);
                    }
                }
            }
        }
    }
    debug_check_finite(out, "conv2d_blocked");
    return out;
}

}  // namespace rlk
