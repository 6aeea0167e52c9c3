#include "lgc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "lgc/error.hpp"

namespace lgc {

namespace {

std::string dims_str(const std::vector<std::size_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

void check_dims(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw ShapeError("tensor needs at least one dimension");
    for (auto d : dims) {
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + dims_str(dims));
    }
}

}  // namespace

std::size_t product(std::span<const std::size_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_.assign(product(dims_), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != product(dims_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match dims " + dims_str(dims_));
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows() needs a rank-2 tensor, got " + dims_str(dims_));
    return dims_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols() needs a rank-2 tensor, got " + dims_str(dims_));
    return dims_[1];
}

std::span<float> Tensor::row(std::size_t r) {
    std::size_t c = cols();
    return std::span<float>(data_).subspan(r * c, c);
}

std::span<const float> Tensor::row(std::size_t r) const {
    std::size_t c = cols();
    return std::span<const float>(data_).subspan(r * c, c);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float x) { return std::isfinite(x); });
}

double Prng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Prng::uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_index needs n > 0");
    // Rejection sampling against the largest multiple of n: unbiased and fully specified.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

double Prng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Prng::derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                     std::size_t n) noexcept {
    for (std::size_t i = 0; i < m; ++i) {
        float* ci = c + i * n;
        const float* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const float aip = ai[p];
            const float* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul inner dimensions disagree: " + dims_str(a.dims()) + " x " +
                         dims_str(b.dims()));
    }
    Tensor c({a.rows(), b.cols()});
    gemm_accumulate(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(),
                    b.cols());
    return c;
}

CosineResult cosine_similarity(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity length mismatch");
    if (u.empty()) throw ShapeError("cosine_similarity of empty vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (std::sqrt(nu) < kCosineEps || std::sqrt(nv) < kCosineEps) return {0.0, true};
    // sqrt(a * a) == a exactly, so cos(u, u) is exactly 1.
    return {std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0), false};
}

void rmsnorm_into(std::span<const float> x, std::span<const float> gain, float eps,
                  std::span<float> out) {
    if (x.size() != gain.size() || out.size() != x.size()) throw ShapeError("rmsnorm length mismatch");
    if (x.empty()) throw ShapeError("rmsnorm of empty vector");
    if (!(eps >= 0.0f)) throw ContractError("rmsnorm eps must be non-negative");
    double ss = 0.0;
    for (float xi : x) ss += static_cast<double>(xi) * xi;
    double denom = std::sqrt(ss / static_cast<double>(x.size()) + eps);
    if (denom == 0.0) {
        std::fill(out.begin(), out.end(), 0.0f);
        return;
    }
    auto inv = static_cast<float>(1.0 / denom);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain, float eps) {
    std::vector<float> out(x.size());
    rmsnorm_into(x, gain, eps, out);
    return out;
}

float sigmoid(float x) noexcept { return 1.0f / (1.0f + std::exp(-x)); }

float silu(float x) noexcept { return x * sigmoid(x); }

std::vector<double> softmax64(std::span<const float> v) {
    if (v.empty()) throw ShapeError("softmax of empty vector");
    float m = *std::max_element(v.begin(), v.end());
    std::vector<double> p(v.size());
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        p[i] = std::exp(static_cast<double>(v[i]) - m);
        z += p[i];
    }
    for (auto& pi : p) pi /= z;
    return p;
}

std::vector<float> softmax(std::span<const float> v) {
    auto p = softmax64(v);
    return {p.begin(), p.end()};
}

double log_sum_exp(std::span<const float> v) {
    if (v.empty()) throw ShapeError("log_sum_exp of empty vector");
    float m = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (float x : v) z += std::exp(static_cast<double>(x) - m);
    return m + std::log(z);
}

double cross_entropy_from_logits(std::span<const float> logits, std::size_t target) {
    if (logits.empty()) throw ShapeError("cross_entropy of empty logits");
    if (target >= logits.size()) throw InputError("cross_entropy target out of range");
    return std::max(0.0, log_sum_exp(logits) - logits[target]);
}

std::size_t argmax(std::span<const float> v) {
    if (v.empty()) throw ShapeError("argmax of empty vector");
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace lgc
