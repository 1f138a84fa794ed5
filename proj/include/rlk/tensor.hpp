#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlk {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : error {
    using error::error;
};
struct param_error : error {
    using error::error;
};

/// Dense rank-4 shape in (batch, channels, rows, cols) order.
struct Shape {
    int64_t n = 1, c = 1, h = 1, w = 1;

    int64_t size() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense rank-4 float tensor, contiguous in (n, c, h, w) order.
/// Treated as immutable once an operation has produced it; kernels fill the
/// buffer during construction and never mutate shared tensors afterwards.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, float fill);

    const Shape& shape() const { return shape_; }
    int64_t size() const { return shape_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int64_t n, int64_t c, int64_t y, int64_t x) {
        return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    float at(int64_t n, int64_t c, int64_t y, int64_t x) const {
        return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

    /// One (batch, channel) image plane, h*w contiguous floats.
    std::span<float> plane(int64_t n, int64_t c) {
        return {data_.data() + (n * shape_.c + c) * shape_.h * shape_.w,
                static_cast<size_t>(shape_.h * shape_.w)};
    }
    std::span<const float> plane(int64_t n, int64_t c) const {
        return {data_.data() + (n * shape_.c + c) * shape_.h * shape_.w,
                static_cast<size_t>(shape_.h * shape_.w)};
    }

    bool all_finite() const;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<float> data_;
};

/// Deterministic pseudo-random stream. State advances with splitmix64;
/// uniforms take the top 24 bits scaled by 2^-24, normals come from the
/// Box-Muller transform evaluated in double precision. Same seed, same
/// stream, regardless of how many values each call consumes.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    /// Uniform in [lo, hi). Requires lo < hi.
    float uniform(float lo, float hi);
    /// Normal with the given mean and standard deviation. Requires std > 0.
    float normal(float mean, float std);

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

Tensor new_filled(Shape s, float value);

struct NormalDist {
    float mean = 0.0f, std = 1.0f;
};
struct UniformDist {
    float lo = 0.0f, hi = 1.0f;
};

Tensor new_random(Shape s, Rng& rng, NormalDist dist);
Tensor new_random(Shape s, Rng& rng, UniformDist dist);

Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
/// (n, c, h, w) -> (n, c, 1, 1), mean over each plane.
Tensor global_avg_pool(const Tensor& x);

float gelu_scalar(float x);
/// Derivative of the tanh-form gelu, used by the gradient chain.
float gelu_grad_scalar(float x);

/// Debug-build guard: throws if the tensor holds NaN/Inf. No-op in release.
void debug_check_finite(const Tensor& t, const char* what);

}  // namespace rlk
