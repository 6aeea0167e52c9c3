#include "lgc/quantize.hpp"

#include <string>

#include "lgc/error.hpp"

namespace lgc {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void check_group(std::size_t group_size) {
    if (group_size == 0) throw ContractError("group size must be at least 1");
}

// Packs a row of codes into `dst`, zero-code padding up to padded_len.
void pack_row(std::span<const std::int8_t> codes, std::size_t padded_len, std::uint8_t* dst) {
    for (std::size_t i = 0; i < padded_len; i += 2) {
        int lo = i < codes.size() ? codes[i] : 0;
        int hi = i + 1 < codes.size() ? codes[i + 1] : 0;
        dst[i / 2] = static_cast<std::uint8_t>((lo + 8) | ((hi + 8) << 4));
    }
}

inline int nibble_code(const std::uint8_t* row, std::size_t col) {
    std::uint8_t b = row[col / 2];
    int u = (col & 1) ? (b >> 4) : (b & 0x0F);
    return u - 8;
}

}  // namespace

WeightGroupCodes quant_weight_group(std::span<const float> group) {
    if (group.empty()) throw ContractError("quant_weight_group needs a nonempty group");
    WeightGroupQuantizer<float> q(group);
    WeightGroupCodes out;
    out.scale = q.scale;
    out.codes.reserve(group.size());
    for (float v : group) out.codes.push_back(static_cast<std::int8_t>(q.code(v)));
    return out;
}

std::vector<float> TokenCodes::dequantize() const {
    std::vector<float> out(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = scale * static_cast<float>(codes[i]) + zero;
    return out;
}

TokenCodes quant_act_token(std::span<const float> x) {
    if (x.empty()) throw ContractError("quant_act_token needs a nonempty vector");
    TokenQuantizer<float> q(x);
    TokenCodes out;
    out.scale = q.scale;
    out.zero = q.zero;
    out.codes.reserve(x.size());
    for (float v : x) out.codes.push_back(static_cast<std::uint8_t>(q.code(v)));
    return out;
}

template <class T>
void fake_quant_groups(const T* in, std::size_t rows, std::size_t cols, std::size_t group_size,
                       int axis, T* out, std::uint8_t* mask) {
    check_group(group_size);
    if (axis != 0 && axis != 1) throw ContractError("fake_quant_groups axis must be 0 or 1");
    const std::size_t lines = axis == 0 ? cols : rows;    // independent quantization lines
    const std::size_t length = axis == 0 ? rows : cols;   // elements per line
    const std::size_t stride = axis == 0 ? cols : 1;      // step between line elements
    const std::size_t line_step = axis == 0 ? 1 : cols;
    std::vector<T> buf(group_size);
    for (std::size_t line = 0; line < lines; ++line) {
        const std::size_t base = line * line_step;
        for (std::size_t g0 = 0; g0 < length; g0 += group_size) {
            std::size_t n = std::min(group_size, length - g0);
            for (std::size_t i = 0; i < n; ++i) buf[i] = in[base + (g0 + i) * stride];
            WeightGroupQuantizer<T> q(std::span<const T>(buf.data(), n));
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t idx = base + (g0 + i) * stride;
                out[idx] = q.dequant(q.code(buf[i]));
                if (mask) mask[idx] = WeightGroupQuantizer<T>::in_range(q.ratio(buf[i])) ? 1 : 0;
            }
        }
    }
}

template <class T>
void fake_quant_tokens(const T* in, std::size_t rows, std::size_t cols, T* out, std::uint8_t* mask) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = in + r * cols;
        TokenQuantizer<T> q(std::span<const T>(x, cols));
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = q.dequant(q.code(x[c]));
            if (mask) mask[r * cols + c] = TokenQuantizer<T>::in_range(q.ratio(x[c])) ? 1 : 0;
        }
    }
}

template void fake_quant_groups<float>(const float*, std::size_t, std::size_t, std::size_t, int, float*,
                                       std::uint8_t*);
template void fake_quant_groups<double>(const double*, std::size_t, std::size_t, std::size_t, int,
                                        double*, std::uint8_t*);
template void fake_quant_tokens<float>(const float*, std::size_t, std::size_t, float*, std::uint8_t*);
template void fake_quant_tokens<double>(const double*, std::size_t, std::size_t, double*, std::uint8_t*);

Tensor fake_quant_weight(const Tensor& w, std::size_t group_size) {
    Tensor out(w.dims());
    fake_quant_groups(w.data().data(), w.rows(), w.cols(), group_size, 0, out.data().data(), nullptr);
    return out;
}

Tensor fake_quant_embedding(const Tensor& table, std::size_t group_size) {
    Tensor out(table.dims());
    fake_quant_groups(table.data().data(), table.rows(), table.cols(), group_size, 1,
                      out.data().data(), nullptr);
    return out;
}

Tensor fake_quant_activations(const Tensor& x) {
    Tensor out(x.dims());
    fake_quant_tokens(x.data().data(), x.rows(), x.cols(), out.data().data(), nullptr);
    return out;
}

std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes) {
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] < kInt4Min || codes[i] > kInt4Max) {
            throw ContractError("pack_nibbles: code " + std::to_string(codes[i]) + " at index " +
                                std::to_string(i) + " is outside [-8, 7]");
        }
    }
    std::vector<std::uint8_t> out(ceil_div(codes.size(), 2));
    pack_row(codes, out.size() * 2, out.data());
    return out;
}

std::vector<std::int8_t> unpack_nibbles(std::span<const std::uint8_t> bytes, std::size_t n) {
    if (bytes.size() != ceil_div(n, 2)) {
        throw ShapeError("unpack_nibbles: " + std::to_string(bytes.size()) + " bytes cannot hold exactly " +
                         std::to_string(n) + " codes");
    }
    std::vector<std::int8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int8_t>(nibble_code(bytes.data(), i));
    return out;
}

// ---------------------------------------------------------------------------
// QuantizedLinear

QuantizedLinear QuantizedLinear::from_weights(const Tensor& w, std::size_t group_size) {
    check_group(group_size);
    QuantizedLinear q;
    q.in_ = w.rows();
    q.out_ = w.cols();
    q.group_ = group_size;
    q.groups_ = ceil_div(q.in_, group_size);
    q.packed_.assign(q.out_ * q.row_bytes(), 0);
    q.scales_.assign(q.out_ * q.groups_, 0.0f);

    std::vector<float> column(q.in_);
    std::vector<std::int8_t> codes(q.in_);
    for (std::size_t j = 0; j < q.out_; ++j) {
        for (std::size_t i = 0; i < q.in_; ++i) column[i] = w.at(i, j);
        for (std::size_t g = 0; g < q.groups_; ++g) {
            std::size_t g0 = g * group_size;
            std::size_t n = std::min(group_size, q.in_ - g0);
            auto gq = quant_weight_group(std::span<const float>(column).subspan(g0, n));
            q.scales_[j * q.groups_ + g] = gq.scale;
            std::copy(gq.codes.begin(), gq.codes.end(), codes.begin() + static_cast<std::ptrdiff_t>(g0));
        }
        pack_row(codes, q.padded_in(), q.packed_.data() + j * q.row_bytes());
    }
    q.validate_and_index();
    return q;
}

QuantizedLinear QuantizedLinear::from_parts(std::size_t out_features, std::size_t in_features,
                                            std::size_t group_size, std::vector<std::uint8_t> packed,
                                            std::vector<float> scales) {
    check_group(group_size);
    QuantizedLinear q;
    q.out_ = out_features;
    q.in_ = in_features;
    q.group_ = group_size;
    q.groups_ = ceil_div(in_features, group_size);
    q.packed_ = std::move(packed);
    q.scales_ = std::move(scales);
    q.validate_and_index();
    return q;
}

void QuantizedLinear::validate_and_index() {
    if (out_ == 0 || in_ == 0) throw ShapeError("quantized linear extents must be positive");
    if (group_ % 2 != 0 && groups_ > 1) {
        throw ContractError("odd group sizes cannot be nibble-aligned across groups");
    }
    if (padded_in() % 2 != 0) throw ContractError("padded input width must be even");
    if (packed_.size() != out_ * row_bytes()) throw ShapeError("packed weight byte count mismatch");
    if (scales_.size() != out_ * groups_) throw ShapeError("scale count mismatch");
    for (float s : scales_) {
        if (!(s > 0.0f) || !std::isfinite(s)) throw ContractError("quantized linear scales must be positive");
    }
    sums_.assign(out_ * groups_, 0);
    for (std::size_t j = 0; j < out_; ++j) {
        const std::uint8_t* row = packed_.data() + j * row_bytes();
        for (std::size_t g = 0; g < groups_; ++g) {
            std::int32_t s = 0;
            for (std::size_t i = g * group_; i < (g + 1) * group_; ++i) s += nibble_code(row, i);
            sums_[j * groups_ + g] = s;
        }
    }
}

int QuantizedLinear::code(std::size_t row, std::size_t col) const {
    return nibble_code(packed_.data() + row * row_bytes(), col);
}

Tensor QuantizedLinear::dequantize() const {
    Tensor w({in_, out_});
    for (std::size_t j = 0; j < out_; ++j) {
        for (std::size_t i = 0; i < in_; ++i) {
            w.at(i, j) = scale(j, i / group_) * static_cast<float>(code(j, i));
        }
    }
    return w;
}

void qlinear_forward_rows(const float* x, std::size_t rows, const QuantizedLinear& qw, float* y) {
    const std::size_t in = qw.in_features();
    const std::size_t out = qw.out_features();
    const std::size_t G = qw.group_size();
    const std::size_t groups = qw.groups_per_row();
    const std::size_t row_bytes = qw.row_bytes();

    std::vector<std::uint8_t> qx(qw.padded_in(), 0);
    std::vector<std::int32_t> qx_group_sum(groups);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * in;
        TokenQuantizer<float> tq(std::span<const float>(xr, in));
        for (std::size_t i = 0; i < in; ++i) qx[i] = static_cast<std::uint8_t>(tq.code(xr[i]));
        for (std::size_t g = 0; g < groups; ++g) {
            std::int32_t s = 0;
            for (std::size_t i = g * G; i < (g + 1) * G; ++i) s += qx[i];
            qx_group_sum[g] = s;
        }
        float* yr = y + r * out;
        for (std::size_t j = 0; j < out; ++j) {
            const std::uint8_t* wrow = qw.packed().data() + j * row_bytes;
            float acc = 0.0f;
            for (std::size_t g = 0; g < groups; ++g) {
                // Stored nibbles are code + 8, so idot = sum(q_x * nibble) - 8 * sum(q_x).
                const std::uint8_t* wb = wrow + g * G / 2;
                const std::uint8_t* xg = qx.data() + g * G;
                std::int32_t udot = 0;
                for (std::size_t b = 0; b < G / 2; ++b) {
                    udot += static_cast<std::int32_t>(xg[2 * b]) * (wb[b] & 0x0F) +
                            static_cast<std::int32_t>(xg[2 * b + 1]) * (wb[b] >> 4);
                }
                std::int32_t idot = udot - 8 * qx_group_sum[g];
                float partial = tq.scale * static_cast<float>(idot) +
                                tq.zero * static_cast<float>(qw.code_sum(j, g));
                acc += qw.scale(j, g) * partial;
            }
            yr[j] = acc;
        }
    }
}

Tensor qlinear_forward(const Tensor& x, const QuantizedLinear& qw) {
    if (x.rank() != 2 || x.cols() != qw.in_features()) {
        throw ShapeError("qlinear_forward: input width does not match the quantized linear");
    }
    Tensor y({x.rows(), qw.out_features()});
    qlinear_forward_rows(x.data().data(), x.rows(), qw, y.data().data());
    return y;
}

// ---------------------------------------------------------------------------
// QuantizedEmbedding

QuantizedEmbedding QuantizedEmbedding::from_weights(const Tensor& table, std::size_t group_size) {
    check_group(group_size);
    QuantizedEmbedding e;
    e.vocab_ = table.rows();
    e.dim_ = table.cols();
    e.group_ = group_size;
    e.groups_ = ceil_div(e.dim_, group_size);
    if ((e.groups_ * group_size) % 2 != 0) throw ContractError("padded embedding width must be even");
    e.packed_.assign(e.vocab_ * e.row_bytes(), 0);
    e.scales_.assign(e.vocab_ * e.groups_, 0.0f);
    std::vector<std::int8_t> codes(e.dim_);
    for (std::size_t v = 0; v < e.vocab_; ++v) {
        auto row = table.row(v);
        for (std::size_t g = 0; g < e.groups_; ++g) {
            std::size_t g0 = g * group_size;
            std::size_t n = std::min(group_size, e.dim_ - g0);
            auto gq = quant_weight_group(row.subspan(g0, n));
            e.scales_[v * e.groups_ + g] = gq.scale;
            std::copy(gq.codes.begin(), gq.codes.end(), codes.begin() + static_cast<std::ptrdiff_t>(g0));
        }
        pack_row(codes, e.groups_ * group_size, e.packed_.data() + v * e.row_bytes());
    }
    return e;
}

QuantizedEmbedding QuantizedEmbedding::from_parts(std::size_t vocab, std::size_t dim, std::size_t group_size,
                                                  std::vector<std::uint8_t> packed, std::vector<float> scales) {
    check_group(group_size);
    QuantizedEmbedding e;
    e.vocab_ = vocab;
    e.dim_ = dim;
    e.group_ = group_size;
    e.groups_ = ceil_div(dim, group_size);
    if (vocab == 0 || dim == 0) throw ShapeError("quantized embedding extents must be positive");
    if ((e.groups_ * group_size) % 2 != 0) throw ContractError("padded embedding width must be even");
    if (packed.size() != vocab * e.row_bytes()) throw ShapeError("packed embedding byte count mismatch");
    if (scales.size() != vocab * e.groups_) throw ShapeError("embedding scale count mismatch");
    e.packed_ = std::move(packed);
    e.scales_ = std::move(scales);
    return e;
}

void QuantizedEmbedding::lookup(std::size_t id, std::span<float> out) const {
    if (id >= vocab_) throw InputError("embedding lookup id out of range");
    if (out.size() != dim_) throw ShapeError("embedding lookup output width mismatch");
    const std::uint8_t* row = packed_.data() + id * row_bytes();
    for (std::size_t i = 0; i < dim_; ++i) {
        out[i] = scales_[id * groups_ + i / group_] * static_cast<float>(nibble_code(row, i));
    }
}

Tensor QuantizedEmbedding::dequantize() const {
    Tensor t({vocab_, dim_});
    for (std::size_t v = 0; v < vocab_; ++v) lookup(v, t.row(v));
    return t;
}

}  // namespace lgc
