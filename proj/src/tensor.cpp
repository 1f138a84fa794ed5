#include "rlk/tensor.hpp"

#include <cmath>

namespace rlk {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

static void validate_shape(Shape s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
        throw shape_error("tensor dimensions must all be >= 1, got " + s.str());
}

Tensor::Tensor(Shape s) : shape_(s) {
    validate_shape(s);
    data_.resize(static_cast<size_t>(s.size()), 0.0f);
}

Tensor::Tensor(Shape s, float fill) : shape_(s) {
    validate_shape(s);
    data_.resize(static_cast<size_t>(s.size()), fill);
}

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void debug_check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* what) {
#ifndef NDEBUG
    if (!t.all_finite()) throw error(std::string(what) + ": non-finite value in result");
#endif
}

uint64_t Rng::next_u64() {
    // splitmix64 (Steele, Lea, Flood 2014)
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

float Rng::uniform(float lo, float hi) {
    if (!(lo < hi)) throw param_error("uniform distribution requires lo < hi");
    double u = static_cast<double>(next_u64() >> 40) * 0x1.0p-24;  // [0, 1)
    return static_cast<float>(lo + (hi - lo) * u);
}

float Rng::normal(float mean, float std) {
    if (!(std > 0.0f)) throw param_error("normal distribution requires std > 0");
    if (has_cached_) {
        has_cached_ = false;
        return static_cast<float>(mean + std * cached_);
    }
    // Box-Muller on two fresh uniforms; u1 shifted away from zero for the log.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return static_cast<float>(mean + std * r * std::cos(a));
}

Tensor new_filled(Shape s, float value) { return Tensor(s, value); }

Tensor new_random(Shape s, Rng& rng, NormalDist dist) {
    Tensor t(s);
    float* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i) p[i] = rng.normal(dist.mean, dist.std);
    return t;
}

Tensor new_random(Shape s, Rng& rng, UniformDist dist) {
    Tensor t(s);
    float* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(dist.lo, dist.hi);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw shape_error("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    debug_check_finite(out, "add");
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
    return out;
}

float gelu_scalar(float x) {
    // tanh form: 0.5 x (1 + tanh(c0 (x + c1 x^3))), c0 = sqrt(2/pi)
    const float c0 = 0.7978845608f;
    const float c1 = 0.044715f;
    float u = c0 * (x + c1 * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
}

float gelu_grad_scalar(float x) {
    const float c0 = 0.7978845608f;
    const float c1 = 0.044715f;
    float u = c0 * (x + c1 * x * x * x);
    float t = std::tanh(u);
    float du = c0 * (1.0f + 3.0f * c1 * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) po[i] = gelu_scalar(px[i]);
    debug_check_finite(out, "gelu");
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out({s.n, s.c, 1, 1});
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (float v : x.plane(n, c)) acc += v;
            out.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(s.h * s.w));
        }
    }
    debug_check_finite(out, "global_avg_pool");
    return out;
}

}  // namespace rlk
