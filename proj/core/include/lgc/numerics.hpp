#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace lgc {

/// Dense row-major float tensor. Every extent is at least one and the flat
/// buffer always holds exactly the product of the extents.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims);
    Tensor(std::vector<std::size_t> dims, std::vector<float> data);

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }
    static Tensor identity(std::size_t n);
    static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 helpers.
    std::size_t rows() const;
    std::size_t cols() const;
    float& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }
    std::span<float> row(std::size_t r);
    std::span<const float> row(std::size_t r) const;

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

std::size_t product(std::span<const std::size_t> dims);

/// Deterministic random source. The engine is mt19937_64, whose output
/// sequence is fixed by the C++ standard; the real-valued draws are derived
/// here from raw bits so they are identical on every conforming platform.
class Prng {
public:
    explicit Prng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal via Box-Muller (pairs are cached).
    double normal();

    /// Seed for an independent child stream: splitmix64 of (seed, stream).
    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <class T>
void shuffle(std::vector<T>& v, Prng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(v[i - 1], v[j]);
    }
}

/// c[m,n] += a[m,k] * b[k,n]. Loop order is fixed (i, p, j) so results are
/// bit-reproducible on a given platform.
void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                     std::size_t n) noexcept;

Tensor matmul(const Tensor& a, const Tensor& b);

struct CosineResult {
    double value = 0.0;
    bool degenerate = false;  // a vector had norm below kCosineEps; value is 0
};

inline constexpr double kCosineEps = 1e-12;

CosineResult cosine_similarity(std::span<const float> u, std::span<const float> v);

/// x_i * gain_i / sqrt(mean(x^2) + eps). A zero vector maps to zero.
std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain, float eps);
void rmsnorm_into(std::span<const float> x, std::span<const float> gain, float eps,
                  std::span<float> out);

float sigmoid(float x) noexcept;
float silu(float x) noexcept;

std::vector<float> softmax(std::span<const float> v);
std::vector<double> softmax64(std::span<const float> v);
/// log(sum(exp(v))) with max subtraction.
double log_sum_exp(std::span<const float> v);
double cross_entropy_from_logits(std::span<const float> logits, std::size_t target);
/// Lowest index wins ties.
std::size_t argmax(std::span<const float> v);

}  // namespace lgc
