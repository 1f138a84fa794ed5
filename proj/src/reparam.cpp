#include "rlk/reparam.hpp"

#include <cmath>

namespace rlk {

void BNParams::validate() const {
    const size_t c = gamma.size();
    if (beta.size() != c || mean.size() != c || var.size() != c)
        throw param_error("batch-norm vectors must share one channel count");
    if (!(eps > 0.0f)) throw param_error("batch-norm eps must be positive");
    for (float v : var)
        if (v < 0.0f) throw param_error("batch-norm variance must be nonnegative");
}

BNParams identity_bn(int channels) {
    BNParams bn;
    bn.gamma.assign(channels, 1.0f);
    bn.beta.assign(channels, 0.0f);
    bn.mean.assign(channels, 0.0f);
    bn.var.assign(channels, 1.0f);
    return bn;
}

std::vector<float> bn_scale(const BNParams& bn) {
    bn.validate();
    std::vector<float> s(bn.gamma.size());
    for (size_t c = 0; c < s.size(); ++c)
        s[c] = static_cast<float>(static_cast<double>(bn.gamma[c]) /
                                  std::sqrt(static_cast<double>(bn.var[c]) + bn.eps));
    return s;
}

Tensor batchnorm(const Tensor& x, const BNParams& bn) {
    if (x.shape().c != bn.channels())
        throw shape_error("batchnorm channel mismatch: input " + x.shape().str() + " vs " +
                          std::to_string(bn.channels()));
    const std::vector<float> scale = bn_scale(bn);
    Tensor out(x.shape());
    for (int64_t n = 0; n < x.shape().n; ++n) {
        for (int64_t c = 0; c < x.shape().c; ++c) {
            const float s = scale[c];
            const float shift = bn.beta[c] - bn.mean[c] * s;
            auto src = x.plane(n, c);
            auto dst = out.plane(n, c);
            for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * s + shift;
        }
    }
    debug_check_finite(out, "batchnorm");
    return out;
}

FusedKernel fuse_bn(const ConvWeights& w, const BNParams& bn) {
    const Shape ws = w.w.shape();
    if (ws.n != bn.channels())
        throw param_error("fuse_bn: " + std::to_string(bn.channels()) + " BN channels vs " +
                          std::to_string(ws.n) + " output channels");
    const std::vector<float> scale = bn_scale(bn);

    FusedKernel fused;
    fused.w = Tensor(ws);
    fused.bias.resize(static_cast<size_t>(ws.n));
    const int64_t per_oc = ws.c * ws.h * ws.w;
    const float* src = w.w.data();
    float* dst = fused.w.data();
    for (int64_t oc = 0; oc < ws.n; ++oc) {
        const float s = scale[oc];
        for (int64_t i = 0; i < per_oc; ++i) dst[oc * per_oc + i] = src[oc * per_oc + i] * s;
        const float old_bias = w.bias.empty() ? 0.0f : w.bias[oc];
        fused.bias[oc] = bn.beta[oc] - bn.mean[oc] * s + s * old_bias;
    }
    return fused;
}

FusedKernel merge_branches(const BranchedConv& b) {
    FusedKernel fused = fuse_bn(b.large.conv, b.large.bn);
    if (!b.small) return fused;

    const Shape ls = fused.w.shape();
    const Shape ss = b.small->conv.w.shape();
    if (ls.n != ss.n || ls.c != ss.c)
        throw param_error("branch channel counts differ: " + ls.str() + " vs " + ss.str());
    if (ls.h % 2 == 0 || ss.h % 2 == 0 || ss.h > ls.h)
        throw param_error("branch kernels must both be odd with small <= large, got " +
                          std::to_string(ls.h) + " and " + std::to_string(ss.h));

    FusedKernel small = fuse_bn(b.small->conv, b.small->bn);
    const int64_t off = (ls.h - ss.h) / 2;  // center alignment
    for (int64_t oc = 0; oc < ss.n; ++oc) {
        for (int64_t ic = 0; ic < ss.c; ++ic)
            for (int64_t ky = 0; ky < ss.h; ++ky)
                for (int64_t kx = 0; kx < ss.w; ++kx)
                    fused.w.at(oc, ic, ky + off, kx + off) += small.w.at(oc, ic, ky, kx);
        fused.bias[oc] += small.bias[oc];
    }
    return fused;
}

ConvWeights densify_dilated(const ConvWeights& w, int dilation) {
    return {dilate_kernel(w.w, dilation), w.bias};
}

std::vector<float> aggregate_kernel(const ConvWeights& w) {
    const Shape s = w.w.shape();
    if (s.c != 1) throw param_error("aggregate_kernel expects depth-wise weights, got " + s.str());
    const int64_t k2 = s.h * s.w;
    std::vector<float> agg(static_cast<size_t>(k2), 0.0f);
    for (int64_t c = 0; c < s.n; ++c)
        for (int64_t i = 0; i < k2; ++i) agg[i] += std::fabs(w.w.data()[c * k2 + i]);
    float mx = 0.0f;
    for (float v : agg) mx = std::max(mx, v);
    if (mx > 0.0f)
        for (float& v : agg) v /= mx;
    return agg;
}

}  // namespace rlk
