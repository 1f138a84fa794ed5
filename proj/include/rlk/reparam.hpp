#pragma once

#include <optional>
#include <vector>

#include "rlk/conv.hpp"

namespace rlk {

/// Inference-mode batch-norm parameters for one channel axis.
struct BNParams {
    std::vector<float> gamma, beta, mean, var;
    float eps = 1e-5f;

    int channels() const { return static_cast<int>(gamma.size()); }
    void validate() const;
};

/// gamma=1, beta=0, mean=0, var=1.
BNParams identity_bn(int channels);

/// y_c = gamma_c * (x_c - mean_c) / sqrt(var_c + eps) + beta_c
Tensor batchnorm(const Tensor& x, const BNParams& bn);

/// Per-channel multiplier the BN applies, gamma_c / sqrt(var_c + eps).
/// This is also the BN's input-gradient factor.
std::vector<float> bn_scale(const BNParams& bn);

/// A deploy-time kernel: weights plus an always-present bias.
using FusedKernel = ConvWeights;

struct ConvBN {
    ConvWeights conv;
    BNParams bn;
};

/// Training-form branched convolution: a large K x K kernel and an optional
/// parallel small k x k kernel (k <= K, both odd), each with its own BN,
/// outputs added after the BNs.
struct BranchedConv {
    ConvBN large;
    std::optional<ConvBN> small;
};

/// Folds the BN into the convolution: conv(x, fused) == bn(conv(x, w)) for
/// every input. scale_c = gamma_c / sqrt(var_c + eps), weights scaled per
/// output channel, bias = beta_c - mean_c * scale_c (+ scale_c * old bias).
FusedKernel fuse_bn(const ConvWeights& w, const BNParams& bn);

/// Folds both branches and sums them into one K x K kernel: the small kernel
/// is zero-padded to K x K about its center before the add.
FusedKernel merge_branches(const BranchedConv& b);

/// Dense equivalent of a dilated kernel: d-1 zeros inserted between adjacent
/// taps on both axes. Running the result with dilation 1 and padding
/// ((k-1)*d)/2 reproduces the dilated conv exactly.
ConvWeights densify_dilated(const ConvWeights& w, int dilation);

/// Channel-aggregated view of a depth-wise kernel: sum of |w| across
/// channels, rescaled to [0,1] by the max entry (all zeros stay all zeros).
/// Row-major K x K.
std::vector<float> aggregate_kernel(const ConvWeights& w);

}  // namespace rlk
