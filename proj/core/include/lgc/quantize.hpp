#pragma once

// INT4 groupwise weight quantization, INT8 per-token dynamic activation
// quantization, nibble packing and the integer linear kernel.
//
// Weight groups:     s = max|g| / 7.5,  q = clip(round(g / s), -8, 7)
// Activation tokens: z = min x, s = (max x - min x) / 255,
//                    q = clip(round((x - z) / s), 0, 255)
// round() is half-to-even; every scale is floored at kScaleEps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lgc/numerics.hpp"

namespace lgc {

inline constexpr double kScaleEps = 1e-12;
inline constexpr int kInt4Min = -8;
inline constexpr int kInt4Max = 7;
inline constexpr int kUint8Max = 255;
inline constexpr std::size_t kLinearGroupSize = 256;
inline constexpr std::size_t kEmbeddingGroupSize = 32;

/// Round half to even under the default floating-point environment.
inline double round_half_even(double x) noexcept { return std::nearbyint(x); }

/// Quantizer for one weight group. T is the value type of the tensor being
/// quantized (float on the inference path, double for gradient checks).
template <class T>
struct WeightGroupQuantizer {
    T scale{};
    double max_abs{};  // 0 when the group is (numerically) all zero

    explicit WeightGroupQuantizer(std::span<const T> group) {
        T m = 0;
        for (T v : group) m = std::max(m, static_cast<T>(std::abs(v)));
        scale = m / static_cast<T>(7.5);
        if (!(static_cast<double>(scale) >= kScaleEps)) {
            scale = static_cast<T>(kScaleEps);
        } else {
            max_abs = static_cast<double>(m);
        }
    }

    /// Pre-round value x / s, computed as 7.5 * (x / max|g|) so the group
    /// extremes land exactly on +-7.5.
    double ratio(T x) const noexcept {
        return max_abs > 0.0 ? 7.5 * (static_cast<double>(x) / max_abs) : static_cast<double>(x) / kScaleEps;
    }
    static bool in_range(double r) noexcept { return r >= kInt4Min && r <= kInt4Max; }
    int code(T x) const noexcept {
        double q = round_half_even(ratio(x));
        return static_cast<int>(std::clamp(q, static_cast<double>(kInt4Min), static_cast<double>(kInt4Max)));
    }
    T dequant(int code) const noexcept { return scale * static_cast<T>(code); }
};

/// Per-token asymmetric quantizer with a real-valued zero point.
template <class T>
struct TokenQuantizer {
    T scale{};
    T zero{};
    double range{};  // max - min; 0 for a constant token

    explicit TokenQuantizer(std::span<const T> x) {
        auto [lo, hi] = std::minmax_element(x.begin(), x.end());
        zero = *lo;
        range = static_cast<double>(*hi) - static_cast<double>(*lo);
        scale = static_cast<T>((*hi - *lo) / static_cast<T>(kUint8Max));
        if (!(static_cast<double>(scale) >= kScaleEps)) scale = static_cast<T>(kScaleEps);
    }

    /// Pre-round value (x - z) / s, computed as 255 * ((x - z) / range) so
    /// the token's max lands exactly on 255.
    double ratio(T x) const noexcept {
        const double d = static_cast<double>(x) - static_cast<double>(zero);
        if (range == 0.0) return 0.0;
        if (range / kUint8Max < kScaleEps) return d / kScaleEps;
        return kUint8Max * (d / range);
    }
    static bool in_range(double r) noexcept { return r >= 0.0 && r <= kUint8Max; }
    int code(T x) const noexcept {
        double q = round_half_even(ratio(x));
        return static_cast<int>(std::clamp(q, 0.0, static_cast<double>(kUint8Max)));
    }
    T dequant(int code) const noexcept { return scale * static_cast<T>(code) + zero; }
};

struct WeightGroupCodes {
    std::vector<std::int8_t> codes;
    float scale = 0.0f;
};

WeightGroupCodes quant_weight_group(std::span<const float> group);

struct TokenCodes {
    std::vector<std::uint8_t> codes;
    float scale = 0.0f;
    float zero = 0.0f;
    std::vector<float> dequantize() const;
};

TokenCodes quant_act_token(std::span<const float> x);

/// Fake-quantize a row-major [rows, cols] matrix in groups of `group_size`
/// running along `axis` (0: down each column, 1: along each row). A trailing
/// short group behaves exactly as if zero-padded. When `mask` is non-null it
/// receives 1 where the pre-round ratio landed inside [-8, 7].
template <class T>
void fake_quant_groups(const T* in, std::size_t rows, std::size_t cols, std::size_t group_size,
                       int axis, T* out, std::uint8_t* mask);

template <class T>
void fake_quant_tokens(const T* in, std::size_t rows, std::size_t cols, T* out, std::uint8_t* mask);

/// Weight fake-quant of a linear stored as [in, out]: groups run along the
/// input axis for each output neuron.
Tensor fake_quant_weight(const Tensor& w, std::size_t group_size = kLinearGroupSize);
/// Embedding fake-quant: groups run along each token row.
Tensor fake_quant_embedding(const Tensor& table, std::size_t group_size = kEmbeddingGroupSize);
/// Per-row activation fake-quant.
Tensor fake_quant_activations(const Tensor& x);

/// Nibble = code + 8; even index in the low nibble, odd index in the high one.
std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes);
std::vector<std::int8_t> unpack_nibbles(std::span<const std::uint8_t> bytes, std::size_t n);

/// Packed INT4 linear. Logical weight is [out, in]; each row is zero-padded to
/// a multiple of group_size before packing.
class QuantizedLinear {
public:
    QuantizedLinear() = default;

    /// Quantize a dense linear stored as [in, out].
    static QuantizedLinear from_weights(const Tensor& w_in_out, std::size_t group_size);
    static QuantizedLinear from_parts(std::size_t out_features, std::size_t in_features,
                                      std::size_t group_size, std::vector<std::uint8_t> packed,
                                      std::vector<float> scales);

    std::size_t out_features() const noexcept { return out_; }
    std::size_t in_features() const noexcept { return in_; }
    std::size_t group_size() const noexcept { return group_; }
    std::size_t groups_per_row() const noexcept { return groups_; }
    std::size_t padded_in() const noexcept { return groups_ * group_; }
    std::size_t row_bytes() const noexcept { return padded_in() / 2; }

    const std::vector<std::uint8_t>& packed() const noexcept { return packed_; }
    const std::vector<float>& scales() const noexcept { return scales_; }
    float scale(std::size_t row, std::size_t group) const { return scales_[row * groups_ + group]; }
    std::int32_t code_sum(std::size_t row, std::size_t group) const { return sums_[row * groups_ + group]; }
    int code(std::size_t row, std::size_t col) const;

    /// Dequantized weight in the model's [in, out] layout.
    Tensor dequantize() const;

    friend bool operator==(const QuantizedLinear& a, const QuantizedLinear& b) {
        return a.out_ == b.out_ && a.in_ == b.in_ && a.group_ == b.group_ && a.packed_ == b.packed_ &&
               a.scales_ == b.scales_;
    }

private:
    void validate_and_index();

    std::size_t out_ = 0, in_ = 0, group_ = 0, groups_ = 0;
    std::vector<std::uint8_t> packed_;
    std::vector<float> scales_;
    std::vector<std::int32_t> sums_;  // per (row, group) sum of codes, derived
};

/// y[rows, out] for x[rows, in] via INT8 activations x INT4 weights with
/// 32-bit integer dot products:
///   y_j = sum_g s_w[j,g] * (s_x * idot(q_x[g], q_w[j,g]) + z * isum(q_w[j,g]))
void qlinear_forward_rows(const float* x, std::size_t rows, const QuantizedLinear& qw, float* y);
Tensor qlinear_forward(const Tensor& x, const QuantizedLinear& qw);

/// INT4 embedding table with groups along each row; rows are looked up and
/// dequantized on demand.
class QuantizedEmbedding {
public:
    QuantizedEmbedding() = default;
    static QuantizedEmbedding from_weights(const Tensor& table, std::size_t group_size);
    static QuantizedEmbedding from_parts(std::size_t vocab, std::size_t dim, std::size_t group_size,
                                         std::vector<std::uint8_t> packed, std::vector<float> scales);

    std::size_t vocab() const noexcept { return vocab_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t group_size() const noexcept { return group_; }
    std::size_t groups_per_row() const noexcept { return groups_; }
    std::size_t row_bytes() const noexcept { return groups_ * group_ / 2; }
    const std::vector<std::uint8_t>& packed() const noexcept { return packed_; }
    const std::vector<float>& scales() const noexcept { return scales_; }

    void lookup(std::size_t id, std::span<float> out) const;
    Tensor dequantize() const;

    friend bool operator==(const QuantizedEmbedding&, const QuantizedEmbedding&) = default;

private:
    std::size_t vocab_ = 0, dim_ = 0, group_ = 0, groups_ = 0;
    std::vector<std::uint8_t> packed_;
    std::vector<float> scales_;
};

}  // namespace lgc
