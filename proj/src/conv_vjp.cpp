#include "rlk/conv.hpp"

namespace rlk {

// Gather form: every input position collects the output gradients whose
// forward window covered it. Writes are disjoint per (n, ic) plane, so the
// parallel loop needs no reduction.
Tensor conv2d_vjp_input(const Tensor& grad_out, const ConvWeights& w, const ConvSpec& spec,
                        const Shape& input_shape) {
    spec.validate(input_shape);
    const int out_h = spec.out_dim(input_shape.h);
    const int out_w = spec.out_dim(input_shape.w);
    const Shape want{input_shape.n, spec.out_channels, out_h, out_w};
    if (!(grad_out.shape() == want))
        throw shape_error("grad_out shape " + grad_out.shape().str() +
                          " does not match forward output " + want.str());
    const Shape ws = w.w.shape();
    const Shape wwant{spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel};
    if (!(ws == wwant))
        throw shape_error("weight shape " + ws.str() + " does not match spec " + wwant.str());

    const int cpg = spec.in_channels / spec.groups;
    const int opg = spec.out_channels / spec.groups;
    Tensor grad_in(input_shape);

    const int64_t planes = input_shape.n * input_shape.c;
    [[maybe_unused]] const int nthreads = effective_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int64_t plane = 0; plane < planes; ++plane) {
        const int64_t n = plane / input_shape.c;
        const int ic = static_cast<int>(plane % input_shape.c);
        const int g = ic / cpg;
        const int icg = ic % cpg;
        float* gi = grad_in.plane(n, ic).data();
        for (int iy = 0; iy < input_shape.h; ++iy) {
            for (int ix = 0; ix < input_shape.w; ++ix) {
                double acc = 0.0;
                for (int oc = g * opg; oc < (g + 1) * opg; ++oc) {
                    const float* go = grad_out.plane(n, oc).data();
                    for (int ky = 0; ky < spec.kernel; ++ky) {
                        const int ty = iy + spec.padding - ky * spec.dilation;
                        if (ty < 0 || ty % spec.stride != 0) continue;
                        const int oy = ty / spec.stride;
                        if (oy >= out_h) continue;
                        for (int kx = 0; kx < spec.kernel; ++kx) {
                            const int tx = ix + spec.padding - kx * spec.dilation;
                            if (tx < 0 || tx % spec.stride != 0) continue;
                            const int ox = tx / spec.stride;
                            if (ox >= out_w) continue;
                            acc += static_cast<double>(go[static_cast<int64_t>(oy) * out_w + ox]) *
                                   w.w.at(oc, icg, ky, kx);
                        }
                    }
                }
                gi[static_cast<int64_t>(iy) * input_shape.w + ix] = static_cast<float>(acc);
            }
        }
    }
    debug_check_finite(grad_in, "conv2d_vjp_input");
    return grad_in;
}

}  // namespace rlk
