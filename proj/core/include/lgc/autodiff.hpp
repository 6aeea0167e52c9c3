#pragma once

// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
// already a topological order and backward is a single reverse sweep.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lgc {

struct Var {
    std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
    leaf,
    matmul,
    add,
    mul,
    scale,
    silu,
    square,
    sum,
    rmsnorm,
    embedding,
    rope,
    causal_attention,
    select_rows,
    fake_quant_weight,
    fake_quant_activation,
    cross_entropy,
    soft_cross_entropy,
};

template <class T>
class Tape {
public:
    Tape() = default;

    Var leaf(std::vector<T> values, std::vector<std::size_t> dims, bool requires_grad = true);
    Var constant(std::vector<T> values, std::vector<std::size_t> dims) {
        return leaf(std::move(values), std::move(dims), false);
    }

    const std::vector<T>& value(Var v) const { return nodes_[v.id].value; }
    const std::vector<std::size_t>& dims(Var v) const { return nodes_[v.id].dims; }
    const std::vector<T>& grad(Var v) const { return nodes_[v.id].grad; }
    OpKind kind(Var v) const { return nodes_[v.id].op; }
    /// Elementwise STE mask recorded by a fake-quant node.
    const std::vector<std::uint8_t>& mask(Var v) const { return nodes_[v.id].mask; }
    T scalar(Var v) const;

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, T factor);
    Var silu(Var a);
    Var square(Var a);
    Var sum(Var a);
    /// Row-wise RMS norm over the last axis of a [rows, d] input.
    Var rmsnorm(Var x, Var gain, T eps);
    Var embedding(Var table, std::span<const std::int32_t> ids);
    /// Rotary embedding of a [seq, n_heads * head_dim] input, rows at positions pos0...
    Var rope(Var x, std::size_t n_heads, std::size_t head_dim, double base, std::size_t pos0 = 0);
    /// Causal grouped-query attention over full sequences starting at position 0.
    Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t n_kv_heads);
    Var select_rows(Var x, std::span<const std::size_t> rows);
    /// Quantize-dequantize of a [rows, cols] weight with groups along `axis`.
    /// Backward passes the gradient where the pre-round ratio is inside
    /// [-8, 7] and blocks it elsewhere; the scales are constants.
    Var fake_quant_weight(Var w, std::size_t group_size, int axis = 0);
    /// Per-row asymmetric INT8 quantize-dequantize with the same STE rule.
    Var fake_quant_activation(Var x);
    /// Sum over rows of -log softmax(logits[r])[targets[r]].
    Var cross_entropy(Var logits, std::span<const std::size_t> targets);
    /// Sum over rows of -sum_v probs[r, v] * log softmax(logits[r])[v].
    Var soft_cross_entropy(Var logits, std::span<const T> target_probs);

    /// Zeroes every gradient, then accumulates d(root)/d(node). Running it
    /// twice yields identical gradients.
    void backward(Var root);

    void clear() { nodes_.clear(); }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        OpKind op = OpKind::leaf;
        std::uint32_t in[3] = {0, 0, 0};
        std::vector<std::size_t> dims;
        std::vector<T> value;
        std::vector<T> grad;
        bool requires_grad = false;
        std::vector<T> cache;             // op-specific saved forward values
        std::vector<std::uint8_t> mask;   // STE clip mask
        std::vector<std::size_t> index;   // ids / rows / targets
        T factor{};
        std::size_t p0 = 0, p1 = 0;       // op-specific extents
        double pd = 0.0;
    };

    Var push(Node n);
    Node& node(Var v) { return nodes_[v.id]; }
    const Node& node(Var v) const { return nodes_[v.id]; }
    void backprop(Node& n);

    std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lgc
