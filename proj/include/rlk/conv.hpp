#pragma once

#include <vector>

#include "rlk/tensor.hpp"

namespace rlk {

/// Geometry of one 2D convolution. Square kernels, equal row/col padding,
/// cross-correlation convention (no kernel flip in the forward pass).
struct ConvSpec {
    int kernel = 3;
    int stride = 1;    // 1 or 2
    int padding = 0;   // zero-fill
    int dilation = 1;
    int groups = 1;    // 1 (dense) or = channels (depth-wise)
    int in_channels = 1;
    int out_channels = 1;

    /// Padding that keeps stride-1 output size equal to the input size.
    /// Requires odd kernel.
    int same_padding() const;
    int out_dim(int64_t in_dim) const;
    bool depthwise() const { return groups == in_channels && groups == out_channels; }

    /// Throws shape_error/param_error unless the spec is self-consistent and
    /// applicable to an (n, in_channels, h, w) input.
    void validate(const Shape& input) const;
};

/// Weight block (out_channels, in_channels/groups, K, K) plus optional
/// per-output-channel bias (empty means zero bias).
struct ConvWeights {
    Tensor w;
    std::vector<float> bias;
};

ConvWeights make_dw_weights(int channels, int kernel, float fill);

/// 0 = leave thread count to the OpenMP runtime; otherwise pin the number of
/// threads the parallel kernels use.
void set_threads(int n);
int threads();
int effective_threads();

// Forward backends. All three satisfy the same contract; conv2d_direct is the
// plain serial reference the others are validated against.
Tensor conv2d_direct(const Tensor& x, const ConvWeights& w, const ConvSpec& spec);
/// Cache-tiled kernel: output is walked in fixed-size tiles, border tiles
/// stage their input patch into a contiguous zero-filled buffer, and the
/// K x K reduction runs on registers. OpenMP-parallel over (batch, channel/
/// group, tile row).
Tensor conv2d_blocked(const Tensor& x, const ConvWeights& w, const ConvSpec& spec);
/// Per-channel linear convolution through zero-padded 2D FFTs. The kernel is
/// flipped first so the result matches the cross-correlation convention of
/// the direct backend. Stride 2 subsamples the stride-1 result; dilation
/// expands the kernel to its dense equivalent first.
Tensor conv2d_fft(const Tensor& x, const ConvWeights& w, const ConvSpec& spec);

enum class Backend { direct, blocked, fft };
Backend backend_from_string(const std::string& name);
const char* backend_name(Backend b);
Tensor conv2d(const Tensor& x, const ConvWeights& w, const ConvSpec& spec, Backend b);

/// Gradient of <grad_out, conv2d(x, w)> with respect to x: the transposed
/// convolution of grad_out with the un-flipped kernel, honoring stride,
/// padding, dilation and groups.
Tensor conv2d_vjp_input(const Tensor& grad_out, const ConvWeights& w, const ConvSpec& spec,
                        const Shape& input_shape);

/// Spread a (oc, ic, k, k) weight block onto the ((k-1)*d+1)-sized grid a
/// dilated convolution touches, zeros between taps.
Tensor dilate_kernel(const Tensor& w, int dilation);

/// Blocked-backend tile edge (outputs per tile side). Default 8.
void set_tile_size(int t);
int tile_size();

int64_t params_of(const ConvSpec& spec, bool bias = false);
/// Multiply-accumulate count for one forward pass at the given output size.
int64_t macs_of(const ConvSpec& spec, int64_t out_h, int64_t out_w, int64_t batch);

}  // namespace rlk
