#include <gtest/gtest.h>

#include <cmath>

#include "lgc/calibrate.hpp"
#include "lgc/error.hpp"
#include "lgc/evalbench.hpp"
#include "support/reference.hpp"

using namespace lgc;
using namespace lgc::testing;

namespace {

CalibrationStream fixed_stream(const ModelConfig& c, std::size_t batches, std::uint64_t seed) {
    Prng rng(seed);
    std::vector<CalibrationBatch> out(batches);
    for (auto& b : out) {
        for (int s = 0; s < 2; ++s) {
            CalibrationSequence seq;
            std::size_t n = 3 + rng.uniform_index(5);
            for (std::size_t t = 0; t < n; ++t) {
                seq.tokens.push_back(static_cast<std::int32_t>(rng.uniform_index(c.vocab_size)));
                seq.valid.push_back(t + 2 < n ? 1 : 0);  // last two positions are padding
            }
            b.push_back(seq);
        }
    }
    return CalibrationStream(std::move(out));
}

}  // namespace

TEST(BlockImportance, ClosedFormEnumeration) {
    ModelConfig c = tiny_config(11, 8, 3);
    ModelWeights w = init_random(c, 1);
    CalibrationStream stream = fixed_stream(c, 4, 2);
    auto scores = block_importance(w, c, stream);
    std::vector<double> sum(3, 0.0);
    double n = 0;
    for (const auto& b : stream.batches()) {
        for (const auto& s : b) {
            RefTrace rt;
            ref_forward(w, c, s.tokens, &rt);
            for (std::size_t t = 0; t < s.tokens.size(); ++t) {
                if (!s.valid[t]) continue;
                for (std::size_t k = 0; k < 3; ++k) sum[k] += ref_cosine(rt.x_in[k][t], rt.x_out[k][t]);
                n += 1;
            }
        }
    }
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(scores[k], sum[k] / n, 1e-6);
}

TEST(BlockImportance, ZeroBlockScoresExactlyOne) {
    ModelConfig c = tiny_config(11, 8, 2);
    ModelWeights w = init_random(c, 3);
    ModelWeights z = zero_block_weights(c, 3);
    w.blocks[1] = z.blocks[1];
    auto scores = block_importance(w, c, fixed_stream(c, 2, 4));
    EXPECT_EQ(scores[1], 1.0);
    EXPECT_LT(scores[0], 1.0);
}

TEST(BlockImportance, InjectedNegatedTraceAndRescaling) {
    Prng rng(5);
    Tensor x = random_tensor({6, 4}, rng);
    Tensor y = random_tensor({6, 4}, rng);
    Tensor neg = x;
    for (auto& v : neg.data()) v = -v;
    std::vector<std::uint8_t> valid(6, 1);
    ImportanceAccumulator acc(2, 1);
    acc.add_block_io(0, x, neg, valid);
    acc.add_block_io(1, x, y, valid);
    acc.add_positions(6);
    auto base = acc.report();
    EXPECT_NEAR(base.block_scores[0], -1.0, 1e-12);

    for (int trial = 0; trial < 20; ++trial) {
        float a = static_cast<float>(std::exp(rng.uniform(-3, 3))), b = static_cast<float>(std::exp(rng.uniform(-3, 3)));
        Tensor xa = x, yb = y;
        for (auto& v : xa.data()) v *= a;
        for (auto& v : yb.data()) v *= b;
        ImportanceAccumulator s(2, 1);
        s.add_block_io(0, xa, neg, valid);
        s.add_block_io(1, xa, yb, valid);
        s.add_positions(6);
        auto r = s.report();
        EXPECT_NEAR(r.block_scores[1], base.block_scores[1], 1e-6);
    }
}

TEST(MlpImportance, HandComputedTwoNeurons) {
    // h for one token: [0.5, -2]; score = h^2.
    Tensor h = Tensor::matrix({{0.5f, -2.0f}});
    std::vector<std::uint8_t> valid{1};
    ImportanceAccumulator acc(1, 2);
    acc.add_mlp_hidden(0, h, valid);
    acc.add_positions(1);
    auto r = acc.report();
    EXPECT_EQ(r.mlp_scores[0][0], 0.25);
    EXPECT_EQ(r.mlp_scores[0][1], 4.0);
}

TEST(MlpImportance, MatchesOracleZeroNeuronAndScaling) {
    ModelConfig c = tiny_config(11, 8, 2);
    ModelWeights w = init_random(c, 6);
    for (std::size_t i = 0; i < c.dim; ++i) {
        w.blocks[0].w_gate.at(i, 3) = 0.0f;
        w.blocks[0].w_up.at(i, 3) = 0.0f;
    }
    CalibrationStream stream = fixed_stream(c, 3, 7);
    auto scores = mlp_importance(w, c, stream);
    EXPECT_EQ(scores[0][3], 0.0);

    std::vector<std::vector<double>> sum(2, std::vector<double>(c.mlp_hidden, 0.0));
    double n = 0, norm_sq = 0;
    for (const auto& b : stream.batches()) {
        for (const auto& s : b) {
            RefTrace rt;
            ref_forward(w, c, s.tokens, &rt);
            for (std::size_t t = 0; t < s.tokens.size(); ++t) {
                if (!s.valid[t]) continue;
                for (std::size_t l = 0; l < 2; ++l)
                    for (std::size_t k = 0; k < c.mlp_hidden; ++k) sum[l][k] += rt.hidden[l][t][k] * rt.hidden[l][t][k];
                for (std::size_t k = 0; k < c.mlp_hidden; ++k) norm_sq += rt.hidden[1][t][k] * rt.hidden[1][t][k];
                n += 1;
            }
        }
    }
    double total = 0;
    for (std::size_t k = 0; k < c.mlp_hidden; ++k) {
        EXPECT_NEAR(scores[0][k], sum[0][k] / n, 1e-6 * std::max(1.0, sum[0][k] / n));
        EXPECT_NEAR(scores[1][k], sum[1][k] / n, 1e-6 * std::max(1.0, sum[1][k] / n));
        total += scores[1][k];
    }
    EXPECT_NEAR(total, norm_sq / n, 1e-5 * std::max(1.0, norm_sq / n));

    // Doubling the gate and up columns of neuron 5 in the last block changes
    // only that neuron's hidden value; the oracle gives the exact new score.
    ModelWeights w2 = w;
    for (std::size_t i = 0; i < c.dim; ++i) {
        w2.blocks[1].w_gate.at(i, 5) *= 2.0f;
        w2.blocks[1].w_up.at(i, 5) *= 2.0f;
    }
    auto scaled = mlp_importance(w2, c, stream);
    double expect = 0;
    for (const auto& b : stream.batches()) {
        for (const auto& s : b) {
            RefTrace rt;
            ref_forward(w2, c, s.tokens, &rt);
            for (std::size_t t = 0; t < s.tokens.size(); ++t)
                if (s.valid[t]) expect += rt.hidden[1][t][5] * rt.hidden[1][t][5];
        }
    }
    EXPECT_NEAR(scaled[1][5], expect / n, 1e-6 * std::max(1.0, expect / n));
    EXPECT_GT(scaled[1][5], scores[1][5]);
}

TEST(Calibrate, AllPadStreamIsEmptyData) {
    CalibrationSequence s;
    s.tokens = {1, 2, 3};
    s.valid = {0, 0, 0};
    CalibrationStream stream({CalibrationBatch{s}});
    ModelConfig c = tiny_config();
    EXPECT_THROW(calibrate(init_random(c, 1), c, stream), EmptyDataError);
    EXPECT_THROW(CalibrationStream({}), EmptyDataError);
}

TEST(Calibrate, ReproducibleAndJsonRoundTrip) {
    SynthTaskConfig tc;
    tc.triggers_per_category = 2;
    SynthTask task(tc);
    CalibrationConfig cc{4, 2, 64, 9};
    ModelConfig c = toy_config();
    c.n_layers = 2;
    ModelWeights w = init_random(c, 10);
    auto s1 = CalibrationStream::from_task(task, cc), s2 = CalibrationStream::from_task(task, cc);
    auto r1 = calibrate(w, c, s1), r2 = calibrate(w, c, s2);
    EXPECT_EQ(r1, r2);
    EXPECT_EQ(r1.sample_count, s1.valid_tokens());
    EXPECT_EQ(ImportanceReport::from_json(r1.to_json()), r1);
    for (double v : r1.block_scores) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(CalibrationStream, RowsHoldWholeExamples) {
    SynthTaskConfig tc;
    tc.triggers_per_category = 2;
    SynthTask task(tc);
    CalibrationConfig cc{3, 4, 48, 1};
    auto s = CalibrationStream::from_task(task, cc);
    ASSERT_EQ(s.n_batches(), 3u);
    for (const auto& b : s.batches()) {
        ASSERT_EQ(b.size(), 4u);
        for (const auto& seq : b) {
            ASSERT_EQ(seq.tokens.size(), 48u);
            EXPECT_EQ(seq.tokens[0], synth::kBos);
            bool in_pad = false;
            for (std::size_t t = 0; t < 48; ++t) {
                if (!seq.valid[t]) in_pad = true;
                if (in_pad) {
                    EXPECT_EQ(seq.valid[t], 0);
                    EXPECT_EQ(seq.tokens[t], synth::kPad);
                }
            }
        }
    }
}

TEST(Convergence, DuplicatedHalvesAndSingleBatch) {
    ModelConfig c = tiny_config(11, 8, 2);
    ModelWeights w = init_random(c, 11);
    auto one = fixed_stream(c, 1, 12);
    std::vector<CalibrationBatch> twice{one.batches()[0], one.batches()[0]};
    CalibrationStream dup(twice);
    EXPECT_EQ(estimate_convergence(w, c, dup, ImportanceMetric::block).max_relative_deviation, 0.0);
    EXPECT_EQ(estimate_convergence(w, c, dup, ImportanceMetric::mlp).max_relative_deviation, 0.0);
    EXPECT_TRUE(estimate_convergence(w, c, one, ImportanceMetric::block).undefined);
    EXPECT_THROW(estimate_convergence(w, c, dup, ImportanceMetric::block, 1), ContractError);
}

TEST(Convergence, DeviationShrinksWithMoreBatches) {
    ModelConfig c = tiny_config(11, 8, 2);
    ModelWeights w = init_random(c, 13);
    // Average over repeated independent streams to smooth the comparison.
    auto mean_dev = [&](std::size_t batches) {
        double s = 0;
        for (std::uint64_t r = 0; r < 8; ++r)
            s += estimate_convergence(w, c, fixed_stream(c, batches, 100 + r), ImportanceMetric::mlp).max_relative_deviation;
        return s / 8;
    };
    double small = mean_dev(4), large = mean_dev(64);
    EXPECT_LT(large, small);
}
