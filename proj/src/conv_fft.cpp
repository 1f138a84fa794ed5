#include <complex>
#include <vector>

#include "rlk/conv.hpp"

namespace rlk {

namespace {

using cd = std::complex<double>;

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
void fft_1d(cd* a, int n, bool inverse) {
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * 3.14159265358979323846 / len;
        const cd wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (int j = 0; j < len / 2; ++j) {
                cd u = a[i + j];
                cd v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (int i = 0; i < n; ++i) a[i] /= n;
}

// 2D transform of an s x s grid: rows, then columns through a scratch column.
void fft_2d(std::vector<cd>& g, int s, bool inverse) {
    for (int y = 0; y < s; ++y) fft_1d(g.data() + static_cast<int64_t>(y) * s, s, inverse);
    std::vector<cd> col(s);
    for (int x = 0; x < s; ++x) {
        for (int y = 0; y < s; ++y) col[y] = g[static_cast<int64_t>(y) * s + x];
        fft_1d(col.data(), s, inverse);
        for (int y = 0; y < s; ++y) g[static_cast<int64_t>(y) * s + x] = col[y];
    }
}

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

Tensor subsample_stride2(const Tensor& t) {
    const Shape s = t.shape();
    Tensor out({s.n, s.c, (s.h - 1) / 2 + 1, (s.w - 1) / 2 + 1});
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < out.shape().h; ++y)
                for (int64_t x = 0; x < out.shape().w; ++x)
                    out.at(n, c, y, x) = t.at(n, c, 2 * y, 2 * x);
    return out;
}

}  // namespace

Tensor dilate_kernel(const Tensor& w, int dilation) {
    if (dilation < 1) throw param_error("dilation must be >= 1");
    if (dilation == 1) return w;
    const Shape s = w.shape();
    const int64_t k = s.h;
    const int64_t kd = (k - 1) * dilation + 1;
    Tensor out({s.n, s.c, kd, kd});
    for (int64_t oc = 0; oc < s.n; ++oc)
        for (int64_t ic = 0; ic < s.c; ++ic)
            for (int64_t ky = 0; ky < k; ++ky)
                for (int64_t kx = 0; kx < k; ++kx)
                    out.at(oc, ic, ky * dilation, kx * dilation) = w.at(oc, ic, ky, kx);
    return out;
}

Tensor conv2d_fft(const Tensor& x, const ConvWeights& w, const ConvSpec& spec) {
    spec.validate(x.shape());

    if (spec.dilation > 1) {
        ConvSpec dense = spec;
        dense.dilation = 1;
        dense.kernel = (spec.kernel - 1) * spec.dilation + 1;
        return conv2d_fft(x, {dilate_kernel(w.w, spec.dilation), w.bias}, dense);
    }
    if (spec.stride == 2) {
        ConvSpec s1 = spec;
        s1.stride = 1;
        return subsample_stride2(conv2d_fft(x, w, s1));
    }

    const Shape ws = w.w.shape();
    const Shape want{spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel};
    if (!(ws == want))
        throw shape_error("weight shape " + ws.str() + " does not match spec " + want.str());

    const Shape in = x.shape();
    const int K = spec.kernel;
    const int p = spec.padding;
    const int ph = static_cast<int>(in.h) + 2 * p;  // padded input extent
    const int pw = static_cast<int>(in.w) + 2 * p;
    const int out_h = spec.out_dim(in.h);
    const int out_w = spec.out_dim(in.w);
    const int S = next_pow2(std::max(ph, pw) + K - 1);
    const int cpg = spec.in_channels / spec.groups;
    const int opg = spec.out_channels / spec.groups;

    Tensor out({in.n, spec.out_channels, out_h, out_w});

    for (int64_t n = 0; n < in.n; ++n) {
        // Transform every input plane of this sample once.
        std::vector<std::vector<cd>> xf(static_cast<size_t>(in.c));
        [[maybe_unused]] const int nthreads = effective_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
        for (int64_t ic = 0; ic < in.c; ++ic) {
            auto& g = xf[ic];
            g.assign(static_cast<size_t>(S) * S, cd{});
            const float* src = x.plane(n, ic).data();
            for (int64_t y = 0; y < in.h; ++y)
                for (int64_t xq = 0; xq < in.w; ++xq)
                    g[static_cast<int64_t>(y + p) * S + (xq + p)] = src[y * in.w + xq];
            fft_2d(g, S, false);
        }

#pragma omp parallel for schedule(static) num_threads(nthreads)
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            const int g = oc / opg;
            std::vector<cd> acc(static_cast<size_t>(S) * S, cd{});
            std::vector<cd> kf(static_cast<size_t>(S) * S);
            for (int ic = 0; ic < cpg; ++ic) {
                std::fill(kf.begin(), kf.end(), cd{});
                // Flipped kernel, so the full linear convolution realizes the
                // cross-correlation the direct backend computes.
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx)
                        kf[static_cast<int64_t>(ky) * S + kx] =
                            w.w.at(oc, ic, K - 1 - ky, K - 1 - kx);
                fft_2d(kf, S, false);
                const auto& xg = xf[g * cpg + ic];
                for (int64_t i = 0; i < static_cast<int64_t>(S) * S; ++i) acc[i] += xg[i] * kf[i];
            }
            fft_2d(acc, S, true);
            const float b = w.bias.empty() ? 0.0f : w.bias[oc];
            // Crop to the padded-output window: full-convolution row K-1 is
            // output row 0.
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox)
                    out.at(n, oc, oy, ox) =
                        static_cast<float>(acc[static_cast<int64_t>(oy + K - 1) * S + ox + K - 1]
                                               .real()) +
                        b;
        }
    }
    debug_check_finite(out, "conv2d_fft");
    return out;
}

}  // namespace rlk
