#include <gtest/gtest.h>

#include <cmath>

#include "lgc/error.hpp"
#include "lgc/model.hpp"
#include "lgc/runtime.hpp"
#include "support/reference.hpp"

using namespace lgc;
using namespace lgc::testing;

namespace {

std::uint64_t closed_form_params(std::uint64_t V, std::uint64_t d, std::uint64_t L, std::uint64_t H,
                                 std::uint64_t KVH, std::uint64_t K, std::uint64_t out) {
    const std::uint64_t hd = d / H, kv = KVH * hd;
    return V * d + L * (d + d * d + d * kv + d * kv + d * d + d + d * K + d * K + K * d) + d + d * out;
}

}  // namespace

TEST(Forward, MatchesStraightLineOracle) {
    ModelConfig c = tiny_config();
    ModelWeights w = init_random(c, 1);
    Prng rng(2);
    for (auto& b : w.blocks) {
        for (auto& v : b.attn_norm.data()) v = static_cast<float>(1 + 0.3 * rng.normal());
        for (auto& v : b.mlp_norm.data()) v = static_cast<float>(1 + 0.3 * rng.normal());
    }
    std::vector<std::int32_t> tokens{1, 5, 10, 0, 3, 3, 7};
    auto got = forward(w, c, tokens).logits;
    auto ref = ref_forward(w, c, tokens);
    ASSERT_EQ(got.dims(), (std::vector<std::size_t>{7, 11}));
    for (std::size_t t = 0; t < 7; ++t)
        for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(got.at(t, v), ref[t][v], 1e-5);
}

TEST(Forward, TraceMatchesOracle) {
    ModelConfig c = tiny_config();
    ModelWeights w = init_random(c, 3);
    std::vector<std::int32_t> tokens{2, 4, 6};
    ForwardOptions o;
    o.capture_block_io = o.capture_mlp_hidden = true;
    auto res = forward(w, c, tokens, o);
    RefTrace rt;
    ref_forward(w, c, tokens, &rt);
    ASSERT_TRUE(res.trace);
    ASSERT_EQ(res.trace->x_in.size(), 2u);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t t = 0; t < 3; ++t) {
            for (std::size_t i = 0; i < c.dim; ++i) {
                EXPECT_NEAR(res.trace->x_in[b].at(t, i), rt.x_in[b][t][i], 1e-5);
                EXPECT_NEAR(res.trace->x_out[b].at(t, i), rt.x_out[b][t][i], 1e-5);
            }
            for (std::size_t k = 0; k < c.mlp_hidden; ++k)
                EXPECT_NEAR(res.trace->mlp_hidden[b].at(t, k), rt.hidden[b][t][k], 1e-5);
        }
    }
    EXPECT_FALSE(forward(w, c, tokens).trace.has_value());
}

TEST(Forward, ZeroBlocksAreResidualIdentity) {
    ModelConfig c = tiny_config(11, 8, 3);
    ModelWeights w = zero_block_weights(c, 4);
    std::vector<std::int32_t> tokens{3, 1, 4, 1, 5};
    auto res = forward(w, c, tokens, true);
    for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(res.trace->x_in[b], res.trace->x_out[b]);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto h = rmsnorm(w.embedding.row(static_cast<std::size_t>(tokens[t])), w.final_norm.data(), c.norm_eps);
        Tensor row = matmul(Tensor({1, c.dim}, h), w.unembedding);
        for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_EQ(res.logits.at(t, v), row[v]);
    }
}

TEST(Forward, CausalityAndShapes) {
    ModelConfig c = tiny_config();
    ModelWeights w = init_random(c, 5);
    std::vector<std::int32_t> a{1, 2, 3, 4, 5, 6}, b = a;
    b[3] = 9;
    auto la = forward(w, c, a).logits, lb = forward(w, c, b).logits;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_EQ(la.at(t, v), lb.at(t, v));
    EXPECT_NE(la.row(3)[0], lb.row(3)[0]);
    std::vector<std::int32_t> one{7};
    EXPECT_EQ(forward(w, c, one).logits.dims(), (std::vector<std::size_t>{1, 11}));
}

TEST(Forward, InputErrors) {
    ModelConfig c = tiny_config();
    ModelWeights w = init_random(c, 6);
    std::vector<std::int32_t> bad{1, 11};
    EXPECT_THROW(forward(w, c, bad), InputError);
    std::vector<std::int32_t> neg{-1};
    EXPECT_THROW(forward(w, c, neg), InputError);
    std::vector<std::int32_t> longseq(c.max_seq_len + 1, 1);
    EXPECT_THROW(forward(w, c, longseq), InputError);
}

TEST(Forward, IncrementalDecodeMatchesFullForward) {
    ModelConfig c = tiny_config();
    ModelWeights w = init_random(c, 7);
    std::vector<std::int32_t> tokens{1, 2, 3, 4, 5};
    auto full = forward(w, c, tokens).logits;
    DecoderView view = make_view(w, c);
    DecodeSession s(view);
    s.append(std::span(tokens).first(2), LogitRows::none);
    for (std::size_t t = 2; t < tokens.size(); ++t) {
        Tensor step = s.append(std::span(tokens).subspan(t, 1), LogitRows::last);
        for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_EQ(step.at(0, v), full.at(t, v));
    }
}

TEST(Config, ValidationRejectsBadShapes) {
    ModelConfig c = tiny_config();
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.n_kv_heads = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(model_config_from_json(to_json_string(tiny_config())), tiny_config());
}

TEST(ParamCount, BillionScaleConfigs) {
    ModelConfig c = llama32_1b_config();
    EXPECT_EQ(param_count(c), closed_form_params(128256, 2048, 16, 32, 8, 8192, 128256));
    EXPECT_NEAR(static_cast<double>(param_count(c)), 1.498e9, 0.001e9);
    c.n_layers = 12;
    c.mlp_hidden = 6400;
    EXPECT_NEAR(static_cast<double>(param_count(c)), 1.123e9, 0.005 * 1.123e9);
    EXPECT_EQ(param_count(c), closed_form_params(128256, 2048, 12, 32, 8, 6400, 128256));
}

TEST(ParamCount, AllOnesConfigAndTied) {
    ModelConfig c{1, 1, 1, 1, 1, 1, 1e-5f, 1, 10000.0f};
    EXPECT_EQ(param_count(c), 12u);
    EXPECT_EQ(param_count(c, true), 11u);
    EXPECT_EQ(param_count(init_random(tiny_config(), 1)), param_count(tiny_config()));
}

TEST(SizeBytes, Real16IsTwiceParamCount) {
    for (auto c : {tiny_config(), toy_config(), llama32_1b_config()}) {
        EXPECT_EQ(size_bytes(c, StoragePlan::bf16()), 2 * param_count(c));
    }
    EXPECT_NEAR(to_gib(size_bytes(llama32_1b_config(), StoragePlan::bf16())), 2.79, 0.01);
}

TEST(SizeBytes, GroupedFormatArithmetic) {
    // 4 rows of 512 values at group 256 with 4-byte scales: 4 * (256 + 2 * 4).
    EXPECT_EQ(StorageFormat::int4_group(256).bytes(4, 512), 4u * (256 + 8));
    // Short trailing groups still pay one scale; padding is not counted.
    EXPECT_EQ(StorageFormat::int4_group(32).bytes(1, 40), 20u + 2 * 4);
    EXPECT_EQ(StorageFormat::int8().bytes(2, 10), 2u * (10 + 4));
}

TEST(Init, DeterministicAndScaled) {
    ModelConfig c = toy_config();
    EXPECT_EQ(init_random(c, 1), init_random(c, 1));
    EXPECT_NE(init_random(c, 1), init_random(c, 2));
    double ms = 0;
    std::size_t n = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto w = init_random(c, 100 + s);
        for (float v : w.blocks[0].w_gate.data()) {
            ms += static_cast<double>(v) * v;
            ++n;
        }
        for (float v : w.blocks[0].attn_norm.data()) EXPECT_EQ(v, 1.0f);
    }
    EXPECT_NEAR(ms / static_cast<double>(n), 1.0 / 64, 0.05 / 64);
}

TEST(Weights, ValidateCatchesShapeMismatch) {
    ModelConfig c = tiny_config();
    ModelWeights w = init_random(c, 1);
    w.blocks[1].w_down = Tensor({3, 3});
    EXPECT_THROW(w.validate(c), ShapeError);
}
