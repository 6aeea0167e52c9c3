#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include <json.hpp>

#include "lgc/error.hpp"
#include "lgc/evalbench.hpp"
#include "lgc/packed_model.hpp"
#include "lgc/runtime.hpp"
#include "support/reference.hpp"

using namespace lgc;
using namespace lgc::testing;
namespace sy = lgc::synth;

namespace {

SynthExample labeled(bool unsafe, std::vector<int> cats = {}) {
    SynthExample e;
    e.tokens = {sy::kBos, 40, sy::kPromptEnd};
    e.prompt_len = 3;
    e.unsafe = unsafe;
    e.categories = std::move(cats);
    return e;
}

const std::vector<std::int32_t> kSafeAns{sy::kSafe, sy::kEot};
std::vector<std::int32_t> unsafe_ans(int c) { return {sy::kUnsafe, sy::kNewline, sy::kS, sy::kCategoryBase + c, sy::kEot}; }

}  // namespace

TEST(Metrics, HandValues) {
    ConfusionCounts c{8, 1, 10, 1};
    EXPECT_NEAR(f1(c).value, 8.0 / 9.0, 1e-12);
    EXPECT_NEAR(fpr(c).value, 1.0 / 11.0, 1e-12);
    EXPECT_NEAR(precision(c).value, 8.0 / 9.0, 1e-12);
    EXPECT_NEAR(recall(c).value, 8.0 / 9.0, 1e-12);

    ConfusionCounts perfect{5, 0, 7, 0};
    EXPECT_EQ(f1(perfect).value, 1.0);
    EXPECT_EQ(fpr(perfect).value, 0.0);

    ConfusionCounts missed{0, 0, 3, 4};
    EXPECT_EQ(f1(missed).value, 0.0);
    EXPECT_THROW(f1(ConfusionCounts{}), EmptyDataError);
    EXPECT_TRUE(fpr(ConfusionCounts{3, 0, 0, 1}).undefined);
}

TEST(ParseAnswer, Grammar) {
    EXPECT_FALSE(parse_answer(kSafeAns).unsafe);
    EXPECT_FALSE(parse_answer(kSafeAns).malformed);
    auto two = parse_answer({sy::kUnsafe, sy::kNewline, sy::kS, 5 + 4, sy::kComma, sy::kS, 10 + 4, sy::kEot});
    EXPECT_TRUE(two.unsafe);
    EXPECT_FALSE(two.malformed);
    EXPECT_EQ(two.categories, (std::vector<int>{5, 10}));
    for (const auto& bad : std::vector<std::vector<std::int32_t>>{
             {}, {sy::kSafe}, {sy::kSafe, sy::kComma}, {40, 41}, {sy::kUnsafe, sy::kEot},
             {sy::kUnsafe, sy::kNewline, sy::kS, 30, sy::kEot}, {sy::kUnsafe, sy::kNewline, sy::kS, 5, sy::kComma, sy::kEot}}) {
        auto a = parse_answer(bad);
        EXPECT_TRUE(a.malformed);
        EXPECT_TRUE(a.unsafe);
    }
}

TEST(Score, HandLabeledTenExamples) {
    std::vector<SynthExample> data;
    std::vector<std::vector<std::int32_t>> gens;
    // 4 unsafe: 3 detected (one malformed), 1 missed.
    data.push_back(labeled(true, {1}));
    gens.push_back(unsafe_ans(1));
    data.push_back(labeled(true, {2, 3}));
    gens.push_back(unsafe_ans(2));
    data.push_back(labeled(true, {4}));
    gens.push_back({sy::kUnsafe, 40});
    data.push_back(labeled(true, {1}));
    gens.push_back(kSafeAns);
    // 6 safe: 2 false positives, one of them malformed.
    for (int i = 0; i < 4; ++i) {
        data.push_back(labeled(false));
        gens.push_back(kSafeAns);
    }
    data.push_back(labeled(false));
    gens.push_back(unsafe_ans(7));
    data.push_back(labeled(false));
    gens.push_back({sy::kPad});

    auto r = score_predictions(data, gens);
    EXPECT_EQ(r.counts, (ConfusionCounts{3, 2, 4, 1}));
    EXPECT_EQ(r.malformed, 2u);
    EXPECT_NEAR(r.f1.value, 6.0 / 9.0, 1e-12);
    EXPECT_NEAR(r.fpr.value, 2.0 / 6.0, 1e-12);
    EXPECT_EQ(r.per_category[1].support, 2u);
    EXPECT_EQ(r.per_category[1].detected, 1u);
    EXPECT_EQ(r.per_category[1].named, 1u);
    EXPECT_EQ(r.per_category[3].named, 0u);
    auto j = nlohmann::json::parse(r.to_json());
    EXPECT_EQ(j["counts"]["tp"], 3);
    EXPECT_EQ(j["malformed"], 2);

    // Permutation and self-concatenation leave the metrics unchanged.
    auto pd = data;
    auto pg = gens;
    std::reverse(pd.begin(), pd.end());
    std::reverse(pg.begin(), pg.end());
    auto rp = score_predictions(pd, pg);
    EXPECT_EQ(rp.f1.value, r.f1.value);
    EXPECT_EQ(rp.fpr.value, r.fpr.value);
    pd.insert(pd.end(), data.begin(), data.end());
    pg.insert(pg.end(), gens.begin(), gens.end());
    pd.erase(pd.begin(), pd.begin() + 10);
    pg.erase(pg.begin(), pg.begin() + 10);
    pd.insert(pd.end(), data.begin(), data.end());
    pg.insert(pg.end(), gens.begin(), gens.end());
    auto rc = score_predictions(pd, pg);
    EXPECT_EQ(rc.f1.value, r.f1.value);
    EXPECT_EQ(rc.fpr.value, r.fpr.value);
}

TEST(Score, AllSafeGeneratorOnSafeData) {
    std::vector<SynthExample> data(5, labeled(false));
    std::vector<std::vector<std::int32_t>> gens(5, kSafeAns);
    auto r = score_predictions(data, gens);
    EXPECT_TRUE(r.f1.undefined);
    EXPECT_EQ(r.fpr.value, 0.0);
    EXPECT_FALSE(r.fpr.undefined);
}

TEST(SynthTask, DatasetProperties) {
    SynthTaskConfig tc;
    SynthTask task(tc);
    auto keep = task.keep_list();
    ASSERT_EQ(keep.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(keep[i], static_cast<std::int32_t>(3 + i));

    auto a = task.make_dataset(101, 5), b = task.make_dataset(101, 5);
    std::size_t unsafe = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].tokens, b[i].tokens);
        const auto& e = a[i];
        unsafe += e.unsafe;
        ASSERT_EQ(e.mask.size(), e.tokens.size());
        EXPECT_EQ(e.tokens[0], sy::kBos);
        EXPECT_EQ(e.tokens[e.prompt_len - 1], sy::kPromptEnd);
        EXPECT_EQ(e.tokens.back(), sy::kEot);
        for (std::size_t t = 0; t < e.tokens.size(); ++t) EXPECT_EQ(e.mask[t], t >= e.prompt_len ? 1 : 0);
        std::set<int> seen;
        for (std::size_t t = 1; t + 1 < e.prompt_len; ++t) {
            if (task.is_trigger(e.tokens[t])) seen.insert((e.tokens[t] - sy::kContentBase) / static_cast<int>(tc.triggers_per_category) + 1);
        }
        EXPECT_EQ(std::vector<int>(seen.begin(), seen.end()), e.categories);
        std::vector<std::int32_t> answer(e.tokens.begin() + static_cast<std::ptrdiff_t>(e.prompt_len), e.tokens.end());
        auto p = parse_answer(answer);
        EXPECT_FALSE(p.malformed);
        EXPECT_EQ(p.unsafe, e.unsafe);
        EXPECT_EQ(p.categories, e.categories);
    }
    EXPECT_TRUE(unsafe == 50 || unsafe == 51);
    EXPECT_NE(task.make_dataset(20, 6)[0].tokens, task.make_dataset(20, 7)[0].tokens);
}

TEST(SynthTask, ConfigValidation) {
    SynthTaskConfig tc;
    tc.vocab_size = 100;
    EXPECT_THROW(SynthTask{tc}, ConfigError);
}

TEST(Classify, PackedAgreesWithFakeQuantFloat) {
    ModelConfig c = toy_config();
    c.n_layers = 2;
    ModelWeights w = init_random(c, 3);
    PackedQuantSpec spec;
    spec.linear_group = 32;
    PackedModel pm = pack_model(w, c, spec);
    ModelWeights fq = fake_quantized_embedding(fake_quantized_linears(w, 32), spec.embedding_group);
    DecoderView pv = make_view(pm), fv = make_view(fq, c, true);

    SynthTaskConfig tc;
    tc.triggers_per_category = 2;
    auto data = SynthTask(tc).make_dataset(30, 4);
    // Activation codes sitting on a rounding boundary can flip by one step
    // between the integer and float paths, so logits agree only loosely.
    for (const auto& ex : data) {
        DecodeSession a(pv), b(fv);
        Tensor la = a.append(ex.prompt()), lb = b.append(ex.prompt());
        for (std::size_t i = 0; i < la.size(); ++i) EXPECT_NEAR(la[i], lb[i], 0.1 * std::max(1.0f, std::abs(lb[i])));
    }
    auto ra = classify_and_score(pv, data), rb = classify_and_score(fv, data);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < data.size(); ++i) agree += ra.generations[i] == rb.generations[i];
    EXPECT_GE(agree, 27u);
    if (agree == data.size()) {
        EXPECT_EQ(ra.counts, rb.counts);
    }
}

TEST(Bench, ReportsAndScaling) {
    ModelConfig c = toy_config();
    c.n_layers = 2;
    PackedModel pm = pack_model(init_random(c, 5), c, PackedQuantSpec{32, 32, 4, 8});
    DecoderView v = make_view(pm);
    EXPECT_THROW(throughput_bench(v, 8, 8, 2), ContractError);
    auto z = throughput_bench(v, 8, 0, 3);
    EXPECT_EQ(z.gen_len, 0u);
    EXPECT_GT(z.ttft_seconds, 0.0);
    EXPECT_TRUE(z.deterministic);

    auto a = throughput_bench(v, 8, 48, 5), b = throughput_bench(v, 8, 96, 5);
    EXPECT_TRUE(a.deterministic);
    EXPECT_EQ(a.tokens.size(), 48u);
    double ratio = b.decode_seconds / a.decode_seconds;
    EXPECT_GE(ratio, 1.5);
    EXPECT_LE(ratio, 2.5);
    auto j = nlohmann::json::parse(a.to_json());
    EXPECT_TRUE(j.contains("tokens_per_second"));
    EXPECT_TRUE(j.contains("host"));
}
