#include "lgc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lgc/error.hpp"
#include "lgc/model.hpp"
#include "lgc/quantize.hpp"

namespace lgc {

namespace {

std::size_t count(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void require(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

template <class T>
T sigmoid_t(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <class T>
Var Tape<T>::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
T Tape<T>::scalar(Var v) const {
    const auto& n = node(v);
    if (n.value.size() != 1) throw ContractError("scalar() on a non-scalar node");
    return n.value[0];
}

template <class T>
Var Tape<T>::leaf(std::vector<T> values, std::vector<std::size_t> dims, bool requires_grad) {
    require(values.size() == count(dims), "leaf values do not match dims");
    Node n;
    n.op = OpKind::leaf;
    n.dims = std::move(dims);
    n.value = std::move(values);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

template <class T>
Var Tape<T>::matmul(Var a, Var b) {
    const auto& A = node(a);
    const auto& B = node(b);
    require(A.dims.size() == 2 && B.dims.size() == 2 && A.dims[1] == B.dims[0], "tape matmul shape mismatch");
    const std::size_t m = A.dims[0], k = A.dims[1], n = B.dims[1];
    Node out;
    out.op = OpKind::matmul;
    out.in[0] = a.id;
    out.in[1] = b.id;
    out.dims = {m, n};
    out.value.assign(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = out.value.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = A.value[i * k + p];
            const T* bp = B.value.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    out.requires_grad = A.requires_grad || B.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
    const auto& A = node(a);
    const auto& B = node(b);
    require(A.dims == B.dims, "tape add shape mismatch");
    Node out;
    out.op = OpKind::add;
    out.in[0] = a.id;
    out.in[1] = b.id;
    out.dims = A.dims;
    out.value.resize(A.value.size());
    for (std::size_t i = 0; i < A.value.size(); ++i) out.value[i] = A.value[i] + B.value[i];
    out.requires_grad = A.requires_grad || B.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::mul(Var a, Var b) {
    const auto& A = node(a);
    const auto& B = node(b);
    require(A.dims == B.dims, "tape mul shape mismatch");
    Node out;
    out.op = OpKind::mul;
    out.in[0] = a.id;
    out.in[1] = b.id;
    out.dims = A.dims;
    out.value.resize(A.value.size());
    for (std::size_t i = 0; i < A.value.size(); ++i) out.value[i] = A.value[i] * B.value[i];
    out.requires_grad = A.requires_grad || B.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::scale(Var a, T factor) {
    const auto& A = node(a);
    Node out;
    out.op = OpKind::scale;
    out.in[0] = a.id;
    out.dims = A.dims;
    out.factor = factor;
    out.value.resize(A.value.size());
    for (std::size_t i = 0; i < A.value.size(); ++i) out.value[i] = A.value[i] * factor;
    out.requires_grad = A.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::silu(Var a) {
    const auto& A = node(a);
    Node out;
    out.op = OpKind::silu;
    out.in[0] = a.id;
    out.dims = A.dims;
    out.value.resize(A.value.size());
    for (std::size_t i = 0; i < A.value.size(); ++i) out.value[i] = A.value[i] * sigmoid_t(A.value[i]);
    out.requires_grad = A.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::square(Var a) {
    const auto& A = node(a);
    Node out;
    out.op = OpKind::square;
    out.in[0] = a.id;
    out.dims = A.dims;
    out.value.resize(A.value.size());
    for (std::size_t i = 0; i < A.value.size(); ++i) out.value[i] = A.value[i] * A.value[i];
    out.requires_grad = A.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::sum(Var a) {
    const auto& A = node(a);
    Node out;
    out.op = OpKind::sum;
    out.in[0] = a.id;
    out.dims = {1};
    T s = 0;
    for (T x : A.value) s += x;
    out.value = {s};
    out.requires_grad = A.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::rmsnorm(Var x, Var gain, T eps) {
    const auto& X = node(x);
    const auto& G = node(gain);
    require(X.dims.size() == 2 && G.value.size() == X.dims[1], "tape rmsnorm shape mismatch");
    const std::size_t rows = X.dims[0], d = X.dims[1];
    Node out;
    out.op = OpKind::rmsnorm;
    out.in[0] = x.id;
    out.in[1] = gain.id;
    out.dims = X.dims;
    out.value.resize(X.value.size());
    out.cache.resize(rows);  // per-row inverse RMS
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X.value.data() + r * d;
        double ss = 0.0;
        for (std::size_t i = 0; i < d; ++i) ss += static_cast<double>(xr[i]) * xr[i];
        double denom = std::sqrt(ss / static_cast<double>(d) + static_cast<double>(eps));
        T inv = denom == 0.0 ? T(0) : static_cast<T>(1.0 / denom);
        out.cache[r] = inv;
        for (std::size_t i = 0; i < d; ++i) out.value[r * d + i] = xr[i] * inv * G.value[i];
    }
    out.requires_grad = X.requires_grad || G.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::embedding(Var table, std::span<const std::int32_t> ids) {
    const auto& E = node(table);
    require(E.dims.size() == 2 && !ids.empty(), "tape embedding needs a [vocab, dim] table");
    const std::size_t vocab = E.dims[0], d = E.dims[1];
    Node out;
    out.op = OpKind::embedding;
    out.in[0] = table.id;
    out.dims = {ids.size(), d};
    out.value.resize(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) throw InputError("token id outside vocabulary");
        out.index.push_back(static_cast<std::size_t>(ids[r]));
        std::copy_n(E.value.data() + out.index.back() * d, d, out.value.data() + r * d);
    }
    out.requires_grad = E.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::rope(Var x, std::size_t n_heads, std::size_t head_dim, double base, std::size_t pos0) {
    const auto& X = node(x);
    require(X.dims.size() == 2 && X.dims[1] == n_heads * head_dim && head_dim % 2 == 0, "tape rope shape mismatch");
    const std::size_t seq = X.dims[0], width = X.dims[1], half = head_dim / 2;
    Node out;
    out.op = OpKind::rope;
    out.in[0] = x.id;
    out.dims = X.dims;
    out.p0 = n_heads;
    out.p1 = head_dim;
    out.value.resize(X.value.size());
    out.cache.resize(seq * half * 2);  // cos, sin per (row, pair)
    std::vector<double> cs(half), sn(half);
    for (std::size_t r = 0; r < seq; ++r) {
        rope_angles(pos0 + r, head_dim, base, cs, sn);
        for (std::size_t i = 0; i < half; ++i) {
            out.cache[(r * half + i) * 2] = static_cast<T>(static_cast<float>(cs[i]));
            out.cache[(r * half + i) * 2 + 1] = static_cast<T>(static_cast<float>(sn[i]));
        }
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t j = r * width + h * head_dim + 2 * i;
                const T c = out.cache[(r * half + i) * 2], s = out.cache[(r * half + i) * 2 + 1];
                const T x0 = X.value[j], x1 = X.value[j + 1];
                out.value[j] = x0 * c - x1 * s;
                out.value[j + 1] = x0 * s + x1 * c;
            }
        }
    }
    out.requires_grad = X.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t n_kv_heads) {
    const auto& Q = node(q);
    const auto& K = node(k);
    const auto& V = node(v);
    require(Q.dims.size() == 2 && K.dims == V.dims && K.dims.size() == 2 && Q.dims[0] == K.dims[0],
            "tape attention shape mismatch");
    require(n_kv_heads > 0 && n_heads % n_kv_heads == 0 && Q.dims[1] % n_heads == 0, "tape attention head mismatch");
    const std::size_t seq = Q.dims[0], d = Q.dims[1], hd = d / n_heads, kvd = K.dims[1];
    require(kvd == n_kv_heads * hd, "tape attention kv width mismatch");
    const std::size_t group = n_heads / n_kv_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Node out;
    out.op = OpKind::causal_attention;
    out.in[0] = q.id;
    out.in[1] = k.id;
    out.in[2] = v.id;
    out.dims = {seq, d};
    out.p0 = n_heads;
    out.p1 = n_kv_heads;
    out.value.assign(seq * d, T(0));
    // probabilities for (row r, head h, t <= r), rows packed triangularly
    out.cache.resize(seq * (seq + 1) / 2 * n_heads);
    std::vector<T> scores(seq);
    for (std::size_t r = 0; r < seq; ++r) {
        const std::size_t tri = r * (r + 1) / 2 * n_heads;
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t g = h / group;
            const T* qv = Q.value.data() + r * d + h * hd;
            T mx = -INFINITY;
            for (std::size_t t = 0; t <= r; ++t) {
                const T* kt = K.value.data() + t * kvd + g * hd;
                T s = 0;
                for (std::size_t i = 0; i < hd; ++i) s += qv[i] * kt[i];
                s *= scale;
                scores[t] = s;
                mx = std::max(mx, s);
            }
            T z = 0;
            for (std::size_t t = 0; t <= r; ++t) {
                scores[t] = std::exp(scores[t] - mx);
                z += scores[t];
            }
            T* o = out.value.data() + r * d + h * hd;
            T* probs = out.cache.data() + tri + h * (r + 1);
            for (std::size_t t = 0; t <= r; ++t) {
                const T pt = scores[t] / z;
                probs[t] = pt;
                const T* vt = V.value.data() + t * kvd + g * hd;
                for (std::size_t i = 0; i < hd; ++i) o[i] += pt * vt[i];
            }
        }
    }
    out.requires_grad = Q.requires_grad || K.requires_grad || V.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::select_rows(Var x, std::span<const std::size_t> rows) {
    const auto& X = node(x);
    require(X.dims.size() == 2 && !rows.empty(), "select_rows needs a matrix and rows");
    const std::size_t d = X.dims[1];
    Node out;
    out.op = OpKind::select_rows;
    out.in[0] = x.id;
    out.dims = {rows.size(), d};
    out.value.resize(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < X.dims[0], "select_rows index out of range");
        out.index.push_back(rows[i]);
        std::copy_n(X.value.data() + rows[i] * d, d, out.value.data() + i * d);
    }
    out.requires_grad = X.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::fake_quant_weight(Var w, std::size_t group_size, int axis) {
    const auto& W = node(w);
    require(W.dims.size() == 2, "fake_quant_weight needs a matrix");
    Node out;
    out.op = OpKind::fake_quant_weight;
    out.in[0] = w.id;
    out.dims = W.dims;
    out.value.resize(W.value.size());
    out.mask.resize(W.value.size());
    fake_quant_groups<T>(W.value.data(), W.dims[0], W.dims[1], group_size, axis, out.value.data(), out.mask.data());
    out.requires_grad = W.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::fake_quant_activation(Var x) {
    const auto& X = node(x);
    require(X.dims.size() == 2, "fake_quant_activation needs a matrix");
    Node out;
    out.op = OpKind::fake_quant_activation;
    out.in[0] = x.id;
    out.dims = X.dims;
    out.value.resize(X.value.size());
    out.mask.resize(X.value.size());
    fake_quant_tokens<T>(X.value.data(), X.dims[0], X.dims[1], out.value.data(), out.mask.data());
    out.requires_grad = X.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::cross_entropy(Var logits, std::span<const std::size_t> targets) {
    const auto& L = node(logits);
    require(L.dims.size() == 2 && targets.size() == L.dims[0], "cross_entropy needs one target per row");
    const std::size_t rows = L.dims[0], V = L.dims[1];
    Node out;
    out.op = OpKind::cross_entropy;
    out.in[0] = logits.id;
    out.dims = {1};
    out.cache.resize(rows * V);  // softmax
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= V) throw InputError("cross_entropy target outside logits");
        const T* l = L.value.data() + r * V;
        T mx = *std::max_element(l, l + V);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(l[j]) - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < V; ++j) {
            out.cache[r * V + j] = static_cast<T>(std::exp(static_cast<double>(l[j]) - lse));
        }
        total += lse - static_cast<double>(l[targets[r]]);
        out.index.push_back(targets[r]);
    }
    out.value = {static_cast<T>(total)};
    out.requires_grad = L.requires_grad;
    return push(std::move(out));
}

template <class T>
Var Tape<T>::soft_cross_entropy(Var logits, std::span<const T> target_probs) {
    const auto& L = node(logits);
    require(L.dims.size() == 2 && target_probs.size() == L.value.size(), "soft_cross_entropy shape mismatch");
    const std::size_t rows = L.dims[0], V = L.dims[1];
    Node out;
    out.op = OpKind::soft_cross_entropy;
    out.in[0] = logits.id;
    out.dims = {1};
    out.cache.resize(rows * V * 2);  // softmax, then target probabilities
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* l = L.value.data() + r * V;
        T mx = *std::max_element(l, l + V);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(l[j]) - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < V; ++j) {
            const double logp = static_cast<double>(l[j]) - lse;
            out.cache[r * V + j] = static_cast<T>(std::exp(logp));
            out.cache[rows * V + r * V + j] = target_probs[r * V + j];
            total -= static_cast<double>(target_probs[r * V + j]) * logp;
        }
    }
    out.value = {static_cast<T>(total)};
    out.requires_grad = L.requires_grad;
    return push(std::move(out));
}

// ---------------------------------------------------------------------------

template <class T>
void Tape<T>::backward(Var root) {
    if (root.id >= nodes_.size()) throw ContractError("backward root is not on this tape");
    if (nodes_[root.id].value.size() != 1) throw ContractError("backward needs a scalar root");
    for (auto& n : nodes_) {
        if (n.requires_grad) {
            n.grad.assign(n.value.size(), T(0));
        } else {
            n.grad.clear();
        }
    }
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.op == OpKind::leaf) continue;
        backprop(n);
    }
}

template <class T>
void Tape<T>::backprop(Node& n) {
    auto input = [&](int slot) -> Node& { return nodes_[n.in[slot]]; };
    const std::vector<T>& g = n.grad;

    switch (n.op) {
        case OpKind::leaf: break;
        case OpKind::matmul: {
            Node& A = input(0);
            Node& B = input(1);
            const std::size_t m = A.dims[0], k = A.dims[1], cols = B.dims[1];
            if (A.requires_grad) {
                // dA = dC * B^T, as row updates against a transposed copy of B
                // so the inner loop is a contiguous axpy.
                std::vector<T> bt(cols * k);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < cols; ++j) bt[j * k + p] = B.value[p * cols + j];
                for (std::size_t i = 0; i < m; ++i) {
                    const T* gi = g.data() + i * cols;
                    T* ai = A.grad.data() + i * k;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const T gij = gi[j];
                        const T* bj = bt.data() + j * k;
                        for (std::size_t p = 0; p < k; ++p) ai[p] += gij * bj[p];
                    }
                }
            }
            if (B.requires_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    const T* gi = g.data() + i * cols;
                    for (std::size_t p = 0; p < k; ++p) {
                        const T aip = A.value[i * k + p];
                        T* bg = B.grad.data() + p * cols;
                        for (std::size_t j = 0; j < cols; ++j) bg[j] += aip * gi[j];
                    }
                }
            }
            break;
        }
        case OpKind::add: {
            for (int s = 0; s < 2; ++s) {
                Node& X = input(s);
                if (!X.requires_grad) continue;
                for (std::size_t i = 0; i < g.size(); ++i) X.grad[i] += g[i];
            }
            break;
        }
        case OpKind::mul: {
            Node& A = input(0);
            Node& B = input(1);
            if (A.requires_grad) {
                for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * B.value[i];
            }
            if (B.requires_grad) {
                for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * A.value[i];
            }
            break;
        }
        case OpKind::scale: {
            Node& A = input(0);
            for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.factor;
            break;
        }
        case OpKind::silu: {
            Node& A = input(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = A.value[i];
                const T s = sigmoid_t(x);
                A.grad[i] += g[i] * (s + x * s * (T(1) - s));
            }
            break;
        }
        case OpKind::square: {
            Node& A = input(0);
            for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * T(2) * A.value[i];
            break;
        }
        case OpKind::sum: {
            Node& A = input(0);
            for (auto& ag : A.grad) ag += g[0];
            break;
        }
        case OpKind::rmsnorm: {
            Node& X = input(0);
            Node& G = input(1);
            const std::size_t rows = X.dims[0], d = X.dims[1];
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = X.value.data() + r * d;
                const T* gr = g.data() + r * d;
                const T inv = n.cache[r];
                if (G.requires_grad) {
                    for (std::size_t i = 0; i < d; ++i) G.grad[i] += gr[i] * xr[i] * inv;
                }
                if (X.requires_grad) {
                    T dot = 0;
                    for (std::size_t i = 0; i < d; ++i) dot += gr[i] * G.value[i] * xr[i];
                    const T coeff = inv * inv * inv * dot / static_cast<T>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        X.grad[r * d + i] += inv * G.value[i] * gr[i] - coeff * xr[i];
                    }
                }
            }
            break;
        }
        case OpKind::embedding: {
            Node& E = input(0);
            const std::size_t d = E.dims[1];
            for (std::size_t r = 0; r < n.index.size(); ++r) {
                T* dst = E.grad.data() + n.index[r] * d;
                for (std::size_t i = 0; i < d; ++i) dst[i] += g[r * d + i];
            }
            break;
        }
        case OpKind::rope: {
            Node& X = input(0);
            const std::size_t seq = X.dims[0], width = X.dims[1], H = n.p0, hd = n.p1, half = hd / 2;
            for (std::size_t r = 0; r < seq; ++r) {
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t i = 0; i < half; ++i) {
                        const std::size_t j = r * width + h * hd + 2 * i;
                        const T c = n.cache[(r * half + i) * 2], s = n.cache[(r * half + i) * 2 + 1];
                        X.grad[j] += c * g[j] + s * g[j + 1];
                        X.grad[j + 1] += -s * g[j] + c * g[j + 1];
                    }
                }
            }
            break;
        }
        case OpKind::causal_attention: {
            Node& Q = input(0);
            Node& K = input(1);
            Node& V = input(2);
            const std::size_t seq = Q.dims[0], d = Q.dims[1], H = n.p0, KVH = n.p1;
            const std::size_t hd = d / H, kvd = K.dims[1], group = H / KVH;
            const T scale = T(1) / std::sqrt(static_cast<T>(hd));
            std::vector<T> dp(seq);
            for (std::size_t r = 0; r < seq; ++r) {
                const std::size_t tri = r * (r + 1) / 2 * H;
                for (std::size_t h = 0; h < H; ++h) {
                    const std::size_t gk = h / group;
                    const T* probs = n.cache.data() + tri + h * (r + 1);
                    const T* go = g.data() + r * d + h * hd;
                    T weighted = 0;
                    for (std::size_t t = 0; t <= r; ++t) {
                        const T* vt = V.value.data() + t * kvd + gk * hd;
                        T s = 0;
                        for (std::size_t i = 0; i < hd; ++i) s += go[i] * vt[i];
                        dp[t] = s;
                        weighted += probs[t] * s;
                        if (V.requires_grad) {
                            T* vg = V.grad.data() + t * kvd + gk * hd;
                            for (std::size_t i = 0; i < hd; ++i) vg[i] += probs[t] * go[i];
                        }
                    }
                    const T* qv = Q.value.data() + r * d + h * hd;
                    T* qg = Q.requires_grad ? Q.grad.data() + r * d + h * hd : nullptr;
                    for (std::size_t t = 0; t <= r; ++t) {
                        const T ds = probs[t] * (dp[t] - weighted) * scale;
                        const T* kt = K.value.data() + t * kvd + gk * hd;
                        if (qg) {
                            for (std::size_t i = 0; i < hd; ++i) qg[i] += ds * kt[i];
                        }
                        if (K.requires_grad) {
                            T* kg = K.grad.data() + t * kvd + gk * hd;
                            for (std::size_t i = 0; i < hd; ++i) kg[i] += ds * qv[i];
                        }
                    }
                }
            }
            break;
        }
        case OpKind::select_rows: {
            Node& X = input(0);
            const std::size_t d = X.dims[1];
            for (std::size_t i = 0; i < n.index.size(); ++i) {
                T* dst = X.grad.data() + n.index[i] * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
            }
            break;
        }
        case OpKind::fake_quant_weight:
        case OpKind::fake_quant_activation: {
            Node& X = input(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (n.mask[i]) X.grad[i] += g[i];
            }
            break;
        }
        case OpKind::cross_entropy: {
            Node& L = input(0);
            const std::size_t V = L.dims[1];
            for (std::size_t r = 0; r < n.index.size(); ++r) {
                for (std::size_t j = 0; j < V; ++j) {
                    const T onehot = j == n.index[r] ? T(1) : T(0);
                    L.grad[r * V + j] += g[0] * (n.cache[r * V + j] - onehot);
                }
            }
            break;
        }
        case OpKind::soft_cross_entropy: {
            Node& L = input(0);
            const std::size_t rows = L.dims[0], V = L.dims[1];
            for (std::size_t r = 0; r < rows; ++r) {
                T mass = 0;
                for (std::size_t j = 0; j < V; ++j) mass += n.cache[rows * V + r * V + j];
                for (std::size_t j = 0; j < V; ++j) {
                    L.grad[r * V + j] += g[0] * (mass * n.cache[r * V + j] - n.cache[rows * V + r * V + j]);
                }
            }
            break;
        }
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lgc
