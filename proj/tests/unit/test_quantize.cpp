#include <gtest/gtest.h>

#include <cmath>

#include "lgc/error.hpp"
#include "lgc/quantize.hpp"
#include "support/reference.hpp"

using namespace lgc;
using lgc::testing::random_tensor;

TEST(WeightGroup, HandExample) {
    std::vector<float> g{7.5f, -7.5f, 3.75f};
    auto q = quant_weight_group(g);
    EXPECT_EQ(q.scale, 1.0f);
    EXPECT_EQ(q.codes, (std::vector<std::int8_t>{7, -8, 4}));
}

TEST(WeightGroup, ZerosAndSingleNegative) {
    auto z = quant_weight_group(std::vector<float>(8, 0.0f));
    for (auto c : z.codes) EXPECT_EQ(c, 0);
    EXPECT_EQ(z.scale * z.codes[0], 0.0f);
    auto n = quant_weight_group(std::vector<float>{-7.5f});
    EXPECT_EQ(n.scale, 1.0f);
    EXPECT_EQ(n.codes[0], -8);
    EXPECT_EQ(n.scale * n.codes[0], -8.0f);
}

TEST(WeightGroup, HalfToEven) {
    // s = 1: 2.5 -> 2, 3.5 -> 4, -0.5 -> -0
    auto q = quant_weight_group(std::vector<float>{7.5f, 2.5f, 3.5f, -0.5f});
    EXPECT_EQ(q.codes, (std::vector<std::int8_t>{7, 2, 4, 0}));
}

TEST(ActToken, HandExample) {
    auto t = quant_act_token(std::vector<float>{0, 1, 2});
    EXPECT_EQ(t.zero, 0.0f);
    EXPECT_FLOAT_EQ(t.scale, 2.0f / 255.0f);
    EXPECT_EQ(t.codes, (std::vector<std::uint8_t>{0, 128, 255}));
    auto d = t.dequantize();
    EXPECT_EQ(d[0], 0.0f);
    EXPECT_NEAR(d[1], 1.00392, 1e-5);
    EXPECT_NEAR(d[2], 2.0, 1e-6);
}

TEST(ActToken, ConstantVectorIsExact) {
    auto t = quant_act_token(std::vector<float>{-1.25f, -1.25f, -1.25f});
    for (auto c : t.codes) EXPECT_EQ(c, 0);
    for (float v : t.dequantize()) EXPECT_EQ(v, -1.25f);
}

TEST(ActToken, ErrorBoundAndBracketing) {
    Prng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<float> x(1 + rng.uniform_index(64));
        double spread = std::exp(rng.uniform(-4, 4));
        for (auto& v : x) v = static_cast<float>(rng.normal() * spread + rng.uniform(-2, 2));
        auto t = quant_act_token(x);
        auto d = t.dequantize();
        auto [lo, hi] = std::minmax_element(x.begin(), x.end());
        auto [dlo, dhi] = std::minmax_element(d.begin(), d.end());
        const double s = t.scale;
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_LE(std::abs(static_cast<double>(d[i]) - x[i]), s / 2 * (1 + 1e-5) + 1e-7) << trial;
        }
        EXPECT_LE(std::abs(*dlo - *lo), s + 1e-6);
        EXPECT_LE(std::abs(*dhi - *hi), s + 1e-6);
    }
}

TEST(FakeQuant, WeightMatchesPerGroupComposition) {
    Prng rng(12);
    for (std::size_t group : {32u, 256u}) {
        Tensor w = random_tensor({300, 7}, rng);  // trailing group is short
        Tensor fq = fake_quant_weight(w, group);
        for (std::size_t j = 0; j < 7; ++j) {
            for (std::size_t g0 = 0; g0 < 300; g0 += group) {
                std::size_t g1 = std::min<std::size_t>(300, g0 + group);
                std::vector<float> col;
                for (std::size_t i = g0; i < g1; ++i) col.push_back(w.at(i, j));
                auto q = quant_weight_group(col);
                for (std::size_t i = g0; i < g1; ++i) {
                    EXPECT_EQ(fq.at(i, j), q.scale * static_cast<float>(q.codes[i - g0]));
                }
            }
        }
    }
}

TEST(FakeQuant, ZeroTensorStaysZero) {
    Tensor z({64, 3});
    EXPECT_EQ(fake_quant_weight(z, 32), z);
    EXPECT_EQ(fake_quant_embedding(Tensor({3, 64}), 32), Tensor({3, 64}));
}

TEST(FakeQuant, ReconstructionErrorAtMostHalfStep) {
    Prng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor w = random_tensor({256, 4}, rng, rng.uniform(0.01, 10));
        Tensor fq = fake_quant_weight(w, 32);
        for (std::size_t j = 0; j < 4; ++j) {
            for (std::size_t g = 0; g < 256; g += 32) {
                float mx = 0;
                for (std::size_t i = g; i < g + 32; ++i) mx = std::max(mx, std::abs(w.at(i, j)));
                double s = mx / 7.5;
                for (std::size_t i = g; i < g + 32; ++i) {
                    EXPECT_LE(std::abs(static_cast<double>(fq.at(i, j)) - w.at(i, j)), s / 2 * (1 + 1e-5));
                }
            }
        }
    }
}

TEST(FakeQuant, MaskMarksInRangeRatios) {
    std::vector<float> x{1.0f, 0.2f, -0.9f, 0.5f};
    std::vector<float> out(4);
    std::vector<std::uint8_t> mask(4);
    fake_quant_groups(x.data(), 1, 4, 4, 1, out.data(), mask.data());
    // s = 1/7.5: ratios 7.5 (clipped), 1.5, -6.75, 3.75
    EXPECT_EQ(mask, (std::vector<std::uint8_t>{0, 1, 1, 1}));
}

TEST(Nibbles, PackHandExampleAndRoundTrip) {
    std::vector<std::int8_t> c{-8, 7};
    auto b = pack_nibbles(c);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0], 0xF0);
    EXPECT_TRUE(pack_nibbles({}).empty());
    // An odd tail is padded with code 0 (nibble 8) in the high half.
    EXPECT_EQ(pack_nibbles(std::vector<std::int8_t>{3}), (std::vector<std::uint8_t>{0x8B}));

    Prng rng(14);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::int8_t> codes(rng.uniform_index(40));
        for (auto& v : codes) v = static_cast<std::int8_t>(static_cast<int>(rng.uniform_index(16)) - 8);
        EXPECT_EQ(unpack_nibbles(pack_nibbles(codes), codes.size()), codes);
    }
}

TEST(Nibbles, OutOfRangeCodeRejected) {
    EXPECT_THROW(pack_nibbles(std::vector<std::int8_t>{8}), ContractError);
    EXPECT_THROW(pack_nibbles(std::vector<std::int8_t>{-9}), ContractError);
}

TEST(QLinear, ZeroWeightsGiveZero) {
    Prng rng(15);
    auto q = QuantizedLinear::from_weights(Tensor({64, 5}), 32);
    Tensor y = qlinear_forward(random_tensor({3, 64}, rng), q);
    for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(QLinear, ExactlyRepresentableCaseIsExact) {
    Prng rng(16);
    Tensor w({32, 6});
    for (auto& v : w.data()) v = static_cast<float>(static_cast<int>(rng.uniform_index(15)) - 7);
    for (std::size_t j = 0; j < 6; ++j) w.at(j, j) = -7.5f;  // s = 1 in every group
    Tensor x({4, 32});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t i = 0; i < 32; ++i) x.at(r, i) = static_cast<float>(rng.uniform_index(256));
        x.at(r, 0) = 0.0f;
        x.at(r, 1) = 255.0f;  // s_x = 1, z = 0
    }
    auto q = QuantizedLinear::from_weights(w, 32);
    EXPECT_EQ(qlinear_forward(x, q), matmul(x, q.dequantize()));
}

TEST(QLinear, MatchesDequantizedReference) {
    Prng rng(17);
    Tensor w = random_tensor({512, 64}, rng, 0.05);
    Tensor x = random_tensor({4, 512}, rng);
    auto q = QuantizedLinear::from_weights(w, 256);
    Tensor y = qlinear_forward(x, q);
    Tensor wd = q.dequantize();
    for (std::size_t r = 0; r < 4; ++r) {
        auto xd = quant_act_token(x.row(r)).dequantize();
        for (std::size_t j = 0; j < 64; ++j) {
            double ref = 0;
            for (std::size_t i = 0; i < 512; ++i) ref += static_cast<double>(xd[i]) * wd.at(i, j);
            EXPECT_LE(std::abs(y.at(r, j) - ref), std::max(1e-3 * std::abs(ref), 1e-5));
        }
    }
}

TEST(QLinear, PaddedInputAndShapeErrors) {
    Prng rng(18);
    Tensor w = random_tensor({40, 3}, rng);
    auto q = QuantizedLinear::from_weights(w, 32);
    EXPECT_EQ(q.padded_in(), 64u);
    EXPECT_EQ(q.groups_per_row(), 2u);
    EXPECT_EQ(q.dequantize(), fake_quant_weight(w, 32));
    EXPECT_THROW(qlinear_forward(Tensor({1, 41}), q), ShapeError);
}

TEST(QEmbedding, IdenticalValuesHandArithmetic) {
    Tensor t({2, 32});
    for (std::size_t i = 0; i < 32; ++i) t.at(1, i) = 1.0f;
    auto q = QuantizedEmbedding::from_weights(t, 32);
    std::vector<float> row(32);
    q.lookup(1, row);
    for (float v : row) EXPECT_FLOAT_EQ(v, 14.0f / 15.0f);
    q.lookup(0, row);
    for (float v : row) EXPECT_EQ(v, 0.0f);
}

TEST(QEmbedding, MaxMagnitudeWithinHalfStep) {
    Prng rng(19);
    Tensor t = random_tensor({10, 64}, rng);
    auto q = QuantizedEmbedding::from_weights(t, 32);
    Tensor d = q.dequantize();
    EXPECT_EQ(d, fake_quant_embedding(t, 32));
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t g = 0; g < 64; g += 32) {
            std::size_t arg = g;
            for (std::size_t i = g; i < g + 32; ++i)
                if (std::abs(t.at(r, i)) > std::abs(t.at(r, arg))) arg = i;
            double s = std::abs(t.at(r, arg)) / 7.5;
            EXPECT_LE(std::abs(d.at(r, arg) - t.at(r, arg)), s / 2 * (1 + 1e-5));
        }
    }
}

TEST(QLinear, PackingIsDeterministic) {
    Prng a(20), b(20);
    auto qa = QuantizedLinear::from_weights(random_tensor({256, 8}, a), 256);
    auto qb = QuantizedLinear::from_weights(random_tensor({256, 8}, b), 256);
    EXPECT_EQ(qa.packed(), qb.packed());
    EXPECT_EQ(qa.scales(), qb.scales());
    for (float s : qa.scales()) EXPECT_GT(s, 0.0f);
}
