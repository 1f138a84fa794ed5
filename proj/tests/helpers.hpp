#pragma once

#include <cmath>

#include "rlk/conv.hpp"

// max over elements of |a-b| / (1 + |a|); "err <= tol" is the combined
// absolute-plus-relative check the contracts use.
inline double max_combined_err(const rlk::Tensor& a, const rlk::Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]) /
                         (1.0 + std::fabs(static_cast<double>(a.data()[i])));
        worst = std::max(worst, d);
    }
    return worst;
}

inline rlk::ConvWeights random_weights(const rlk::ConvSpec& spec, rlk::Rng& rng,
                                       bool with_bias = false) {
    rlk::ConvWeights w;
    w.w = rlk::new_random(
        {spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel}, rng,
        rlk::NormalDist{0.0f, 0.5f});
    if (with_bias) {
        w.bias.resize(spec.out_channels);
        for (auto& b : w.bias) b = rng.normal(0.0f, 0.5f);
    }
    return w;
}

inline rlk::ConvSpec dw(int channels, int kernel, int stride = 1, int dilation = 1) {
    rlk::ConvSpec s;
    s.kernel = kernel;
    s.stride = stride;
    s.dilation = dilation;
    s.groups = channels;
    s.in_channels = channels;
    s.out_channels = channels;
    s.padding = s.same_padding();
    return s;
}
