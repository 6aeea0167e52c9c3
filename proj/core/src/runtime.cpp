#include "lgc/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lgc/error.hpp"

namespace lgc {

std::size_t LinearRef::in_features() const {
    if (quant) return quant->in_features();
    if (dense) return dense->rows();
    throw ContractError("empty linear reference");
}

std::size_t LinearRef::out_features() const {
    if (quant) return quant->out_features();
    if (dense) return dense->cols();
    throw ContractError("empty linear reference");
}

DecoderView make_view(const ModelWeights& w, const ModelConfig& config, bool fake_quant_activations) {
    w.validate(config);
    DecoderView v;
    v.config = config;
    v.embedding = &w.embedding;
    v.blocks.reserve(w.blocks.size());
    for (const auto& b : w.blocks) {
        BlockView bv;
        bv.attn_norm = b.attn_norm.data();
        bv.mlp_norm = b.mlp_norm.data();
        bv.wq.dense = &b.wq;
        bv.wk.dense = &b.wk;
        bv.wv.dense = &b.wv;
        bv.wo.dense = &b.wo;
        bv.w_gate.dense = &b.w_gate;
        bv.w_up.dense = &b.w_up;
        bv.w_down.dense = &b.w_down;
        v.blocks.push_back(bv);
    }
    v.final_norm = w.final_norm.data();
    v.output.dense = &w.unembedding;
    v.output_ids = w.output_ids;
    v.fake_quant_activations = fake_quant_activations;
    return v;
}

namespace {

class LinearRunner {
public:
    explicit LinearRunner(bool fake_quant) : fake_quant_(fake_quant) {}

    // y[n, out] = x[n, in] * W. Dense linears optionally see fake-quantized
    // inputs; packed linears always quantize their inputs.
    void run(const LinearRef& lin, const float* x, std::size_t n, float* y) {
        const std::size_t in = lin.in_features(), out = lin.out_features();
        if (lin.quant) {
            qlinear_forward_rows(x, n, *lin.quant, y);
            return;
        }
        const float* src = x;
        if (fake_quant_) {
            scratch_.resize(n * in);
            fake_quant_tokens(x, n, in, scratch_.data(), nullptr);
            src = scratch_.data();
        }
        std::fill(y, y + n * out, 0.0f);
        gemm_accumulate(src, lin.dense->data().data(), y, n, in, out);
    }

private:
    bool fake_quant_;
    std::vector<float> scratch_;
};

void apply_rope(float* x, std::size_t n_heads, std::size_t head_dim, const float* cs, const float* sn) {
    const std::size_t half = head_dim / 2;
    for (std::size_t h = 0; h < n_heads; ++h) {
        float* xh = x + h * head_dim;
        for (std::size_t i = 0; i < half; ++i) {
            const float x0 = xh[2 * i], x1 = xh[2 * i + 1];
            xh[2 * i] = x0 * cs[i] - x1 * sn[i];
            xh[2 * i + 1] = x0 * sn[i] + x1 * cs[i];
        }
    }
}

}  // namespace

DecodeSession::DecodeSession(const DecoderView& view) : view_(&view) {
    view.config.validate();
    if (view.blocks.size() != view.config.n_layers) throw ShapeError("view block count mismatch");
    k_cache_.resize(view.blocks.size());
    v_cache_.resize(view.blocks.size());
}

Tensor DecodeSession::append(std::span<const std::int32_t> tokens, LogitRows rows, ForwardTrace* trace,
                             bool capture_block_io, bool capture_mlp_hidden) {
    const DecoderView& V = *view_;
    const ModelConfig& c = V.config;
    const std::size_t n = tokens.size();
    if (n == 0) throw InputError("append needs at least one token");
    if (pos_ + n > c.max_seq_len) throw InputError("sequence exceeds max_seq_len");
    for (auto t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
            throw InputError("token id " + std::to_string(t) + " outside vocabulary of " +
                             std::to_string(c.vocab_size));
        }
    }

    const std::size_t d = c.dim, kvd = c.kv_dim(), hd = c.head_dim(), K = c.mlp_hidden;
    const std::size_t H = c.n_heads, KVH = c.n_kv_heads, group = H / KVH;
    const std::size_t half = hd / 2;

    std::vector<float> x(n * d), h(n * d), q(n * d), k(n * kvd), v(n * kvd), att(n * d), tmp(n * d);
    std::vector<float> gate(n * K), up(n * K);

    for (std::size_t r = 0; r < n; ++r) {
        std::span<float> row(x.data() + r * d, d);
        if (V.quant_embedding) {
            V.quant_embedding->lookup(static_cast<std::size_t>(tokens[r]), row);
        } else {
            auto src = V.embedding->row(static_cast<std::size_t>(tokens[r]));
            std::copy(src.begin(), src.end(), row.begin());
        }
    }

    std::vector<float> rope_cos(n * half), rope_sin(n * half);
    {
        std::vector<double> cs(half), sn(half);
        for (std::size_t r = 0; r < n; ++r) {
            rope_angles(pos_ + r, hd, c.rope_base, cs, sn);
            for (std::size_t i = 0; i < half; ++i) {
                rope_cos[r * half + i] = static_cast<float>(cs[i]);
                rope_sin[r * half + i] = static_cast<float>(sn[i]);
            }
        }
    }

    LinearRunner lin(V.fake_quant_activations);
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<float> scores(pos_ + n);

    for (std::size_t b = 0; b < V.blocks.size(); ++b) {
        const BlockView& B = V.blocks[b];
        auto& kc = k_cache_[b];
        auto& vc = v_cache_[b];
        kc.resize((pos_ + n) * kvd);
        vc.resize((pos_ + n) * kvd);

        if (trace && capture_block_io) trace->x_in.emplace_back(std::vector<std::size_t>{n, d}, x);

        for (std::size_t r = 0; r < n; ++r) {
            rmsnorm_into(std::span<const float>(x.data() + r * d, d), B.attn_norm, c.norm_eps,
                         std::span<float>(h.data() + r * d, d));
        }
        lin.run(B.wq, h.data(), n, q.data());
        lin.run(B.wk, h.data(), n, k.data());
        lin.run(B.wv, h.data(), n, v.data());
        for (std::size_t r = 0; r < n; ++r) {
            apply_rope(q.data() + r * d, H, hd, rope_cos.data() + r * half, rope_sin.data() + r * half);
            apply_rope(k.data() + r * kvd, KVH, hd, rope_cos.data() + r * half, rope_sin.data() + r * half);
        }
        std::copy(k.begin(), k.end(), kc.begin() + static_cast<std::ptrdiff_t>(pos_ * kvd));
        std::copy(v.begin(), v.end(), vc.begin() + static_cast<std::ptrdiff_t>(pos_ * kvd));

        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t p = pos_ + r;
            for (std::size_t hh = 0; hh < H; ++hh) {
                const std::size_t g = hh / group;
                const float* qv = q.data() + r * d + hh * hd;
                float mx = -INFINITY;
                for (std::size_t t = 0; t <= p; ++t) {
                    const float* kt = kc.data() + t * kvd + g * hd;
                    float s = 0.0f;
                    for (std::size_t i = 0; i < hd; ++i) s += qv[i] * kt[i];
                    s *= attn_scale;
                    scores[t] = s;
                    mx = std::max(mx, s);
                }
                float z = 0.0f;
                for (std::size_t t = 0; t <= p; ++t) {
                    scores[t] = std::exp(scores[t] - mx);
                    z += scores[t];
                }
                float* out = att.data() + r * d + hh * hd;
                std::fill(out, out + hd, 0.0f);
                for (std::size_t t = 0; t <= p; ++t) {
                    const float pt = scores[t] / z;
                    const float* vt = vc.data() + t * kvd + g * hd;
                    for (std::size_t i = 0; i < hd; ++i) out[i] += pt * vt[i];
                }
            }
        }
        lin.run(B.wo, att.data(), n, tmp.data());
        for (std::size_t i = 0; i < n * d; ++i) x[i] += tmp[i];

        for (std::size_t r = 0; r < n; ++r) {
            rmsnorm_into(std::span<const float>(x.data() + r * d, d), B.mlp_norm, c.norm_eps,
                         std::span<float>(h.data() + r * d, d));
        }
        lin.run(B.w_gate, h.data(), n, gate.data());
        lin.run(B.w_up, h.data(), n, up.data());
        for (std::size_t i = 0; i < n * K; ++i) gate[i] = silu(gate[i]) * up[i];
        if (trace && capture_mlp_hidden) trace->mlp_hidden.emplace_back(std::vector<std::size_t>{n, K}, gate);
        lin.run(B.w_down, gate.data(), n, tmp.data());
        for (std::size_t i = 0; i < n * d; ++i) x[i] += tmp[i];

        if (trace && capture_block_io) trace->x_out.emplace_back(std::vector<std::size_t>{n, d}, x);
    }
    pos_ += n;

    if (rows == LogitRows::none) return Tensor();
    const std::size_t first = rows == LogitRows::last ? n - 1 : 0;
    const std::size_t m = n - first;
    for (std::size_t r = 0; r < m; ++r) {
        rmsnorm_into(std::span<const float>(x.data() + (first + r) * d, d), V.final_norm, c.norm_eps,
                     std::span<float>(h.data() + r * d, d));
    }
    Tensor logits({m, V.output_width()});
    lin.run(V.output, h.data(), m, logits.data().data());
    return logits;
}

std::vector<std::int32_t> greedy_generate(const DecoderView& view, std::span<const std::int32_t> prompt,
                                          std::size_t max_new, std::int32_t stop_id) {
    std::vector<std::int32_t> out;
    if (max_new == 0) return out;
    DecodeSession session(view);
    Tensor logits = session.append(prompt, LogitRows::last);
    for (std::size_t i = 0; i < max_new; ++i) {
        std::int32_t id = view.vocab_id(argmax(logits.row(0)));
        out.push_back(id);
        if (id == stop_id || i + 1 == max_new) break;
        if (session.position() >= view.config.max_seq_len) break;
        const std::int32_t next[1] = {id};
        logits = session.append(next, LogitRows::last);
    }
    return out;
}

}  // namespace lgc
