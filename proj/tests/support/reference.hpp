#pragma once

// Independent 64-bit decoder used as a test oracle. It is written position by
// position with plain loops and shares no code with the library's forward.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lgc/model.hpp"

namespace lgc::testing {

using Vec = std::vector<double>;

struct RefTrace {
    std::vector<std::vector<Vec>> x_in, x_out, hidden;  // [block][position]
};

inline Vec ref_rmsnorm(const Vec& x, const Tensor& gain, double eps) {
    double ss = 0;
    for (double v : x) ss += v * v;
    double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
    return out;
}

// x (row vector) times W stored [in, out].
inline Vec ref_vecmat(const Vec& x, const Tensor& w) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    Vec y(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < in; ++i) s += x[i] * static_cast<double>(w.at(i, j));
        y[j] = s;
    }
    return y;
}

inline void ref_rope(Vec& x, std::size_t heads, std::size_t hd, std::size_t pos, double base) {
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < hd / 2; ++i) {
            double theta = static_cast<double>(pos) / std::pow(base, 2.0 * static_cast<double>(i) / hd);
            double a = x[h * hd + 2 * i], b = x[h * hd + 2 * i + 1];
            x[h * hd + 2 * i] = a * std::cos(theta) - b * std::sin(theta);
            x[h * hd + 2 * i + 1] = a * std::sin(theta) + b * std::cos(theta);
        }
    }
}

/// Logits per position over the weights' output columns.
inline std::vector<Vec> ref_forward(const ModelWeights& w, const ModelConfig& c, std::span<const std::int32_t> tokens,
                                    RefTrace* trace = nullptr) {
    const std::size_t n = tokens.size(), d = c.dim, hd = d / c.n_heads;
    const std::size_t rep = c.n_heads / c.n_kv_heads;
    std::vector<Vec> x(n, Vec(d));
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < d; ++i) x[t][i] = w.embedding.at(static_cast<std::size_t>(tokens[t]), i);
    if (trace) *trace = RefTrace{};

    for (const auto& blk : w.blocks) {
        if (trace) trace->x_in.push_back(x);
        std::vector<Vec> q(n), k(n), v(n);
        for (std::size_t t = 0; t < n; ++t) {
            Vec h = ref_rmsnorm(x[t], blk.attn_norm, c.norm_eps);
            q[t] = ref_vecmat(h, blk.wq);
            k[t] = ref_vecmat(h, blk.wk);
            v[t] = ref_vecmat(h, blk.wv);
            ref_rope(q[t], c.n_heads, hd, t, c.rope_base);
            ref_rope(k[t], c.n_kv_heads, hd, t, c.rope_base);
        }
        for (std::size_t t = 0; t < n; ++t) {
            Vec att(d, 0.0);
            for (std::size_t h = 0; h < c.n_heads; ++h) {
                const std::size_t g = h / rep;
                Vec s(t + 1);
                double mx = -1e300;
                for (std::size_t u = 0; u <= t; ++u) {
                    double dot = 0;
                    for (std::size_t i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[u][g * hd + i];
                    s[u] = dot / std::sqrt(static_cast<double>(hd));
                    mx = std::max(mx, s[u]);
                }
                double z = 0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t u = 0; u <= t; ++u)
                    for (std::size_t i = 0; i < hd; ++i) att[h * hd + i] += s[u] / z * v[u][g * hd + i];
            }
            Vec o = ref_vecmat(att, blk.wo);
            for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
        }
        if (trace) trace->hidden.emplace_back();
        for (std::size_t t = 0; t < n; ++t) {
            Vec u = ref_rmsnorm(x[t], blk.mlp_norm, c.norm_eps);
            Vec a = ref_vecmat(u, blk.w_gate), b = ref_vecmat(u, blk.w_up);
            for (std::size_t j = 0; j < a.size(); ++j) a[j] = a[j] / (1.0 + std::exp(-a[j])) * b[j];
            if (trace) trace->hidden.back().push_back(a);
            Vec o = ref_vecmat(a, blk.w_down);
            for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
        }
        if (trace) trace->x_out.push_back(x);
    }

    std::vector<Vec> logits(n);
    for (std::size_t t = 0; t < n; ++t) logits[t] = ref_vecmat(ref_rmsnorm(x[t], w.final_norm, c.norm_eps), w.unembedding);
    return logits;
}

inline double ref_cosine(const Vec& a, const Vec& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

inline ModelConfig tiny_config(std::size_t vocab = 11, std::size_t dim = 8, std::size_t layers = 2) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.dim = dim;
    c.n_layers = layers;
    c.n_heads = 2;
    c.n_kv_heads = 1;
    c.mlp_hidden = 12;
    c.norm_eps = 1e-5f;
    c.max_seq_len = 32;
    c.rope_base = 10000.0f;
    return c;
}

inline ModelConfig toy_config() {
    ModelConfig c;
    c.vocab_size = 512;
    c.dim = 64;
    c.n_layers = 8;
    c.n_heads = 4;
    c.n_kv_heads = 2;
    c.mlp_hidden = 256;
    c.max_seq_len = 128;
    return c;
}

inline Tensor random_tensor(std::vector<std::size_t> dims, Prng& rng, double scale = 1.0) {
    Tensor t(std::move(dims));
    for (auto& v : t.data()) v = static_cast<float>(rng.normal() * scale);
    return t;
}

}  // namespace lgc::testing
