#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include <json.hpp>

#include "lgc/error.hpp"
#include "lgc/io.hpp"
#include "lgc/pipeline.hpp"

using namespace lgc;

namespace {

std::string config_path(const char* name) { return std::string(LGC_SOURCE_DIR) + "/configs/" + name; }

PipelineConfig micro_config() {
    PipelineConfig c = load_pipeline_config(config_path("toy.json"));
    c.model.dim = c.teacher_model.dim = 32;
    c.model.n_layers = c.teacher_model.n_layers = 3;
    c.model.mlp_hidden = c.teacher_model.mlp_hidden = 64;
    c.n_layers_out = 2;
    c.mlp_hidden_out = 48;
    c.train_examples = 64;
    c.eval_examples = 16;
    c.calibration.batches = 2;
    c.calibration.batch_size = 2;
    c.calibration.seq_len = 32;
    c.quant.embedding_group = 32;
    for (TrainHyper* h : {&c.baseline_train, &c.teacher_train, &c.student_train}) {
        h->steps = 4;
        h->warmup = 1;
        h->batch_size = 4;
    }
    return c;
}

}  // namespace

TEST(PipelineConfig, ShippedConfigsParse) {
    PipelineConfig toy = load_pipeline_config(config_path("toy.json"));
    EXPECT_NO_THROW(toy.validate());
    EXPECT_EQ(pipeline_config_from_json(to_json_string(toy)).model, toy.model);
    EXPECT_EQ(to_json_string(pipeline_config_from_json(to_json_string(toy))), to_json_string(toy));
    PipelineConfig big = load_pipeline_config(config_path("llama1b.json"));
    EXPECT_NO_THROW(big.validate_shapes());
}

TEST(PipelineConfig, InvalidValuesAreConfigErrors) {
    PipelineConfig c = load_pipeline_config(config_path("toy.json"));
    auto bad = c;
    bad.n_layers_out = bad.model.n_layers;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.mlp_hidden_out = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.schema_version = 99;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.calibration.seq_len = bad.model.max_seq_len + 1;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_THROW(pipeline_config_from_json("{"), ConfigError);
    EXPECT_THROW(pipeline_config_from_json("{\"schema_version\": 1}"), ConfigError);
    EXPECT_THROW(load_pipeline_config("/nonexistent/config.json"), ConfigError);
}

TEST(Pipeline, StageSeedsAreDistinct) {
    PipelineConfig c;
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 1; s <= 8; ++s) seen.insert(stage_seed(c, static_cast<SeedStream>(s)));
    EXPECT_EQ(seen.size(), 8u);
    PipelineConfig d;
    d.seed = 1;
    EXPECT_NE(stage_seed(c, SeedStream::train_data), stage_seed(d, SeedStream::train_data));
}

TEST(Pipeline, SizeChainJson) {
    PipelineConfig big = load_pipeline_config(config_path("llama1b.json"));
    auto chain = compression_size_chain(big.model, compression_targets(big));
    auto j = nlohmann::json::parse(size_chain_json(chain));
    ASSERT_EQ(j.size(), 5u);
    EXPECT_EQ(j[0]["params"].get<std::uint64_t>(), param_count(big.model));
    EXPECT_EQ(j[4]["output_width"], 20);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_LT(j[i]["bytes"].get<std::uint64_t>(), j[i - 1]["bytes"].get<std::uint64_t>());
}

TEST(Pipeline, MicroRunIsDeterministic) {
    PipelineConfig c = micro_config();
    auto root = std::filesystem::temp_directory_path() / "lgc_pipeline_test";
    std::filesystem::remove_all(root);
    auto a = run_pipeline(c, root / "a", nullptr);
    auto b = run_pipeline(c, root / "b", nullptr);
    EXPECT_EQ(a.manifest, b.manifest);
    EXPECT_EQ(read_file(root / "a" / "packed.lgpq"), read_file(root / "b" / "packed.lgpq"));
    auto m = nlohmann::json::parse(a.manifest);
    Checkpoint pruned = load_checkpoint(root / "a" / "pruned.lgck");
    EXPECT_EQ(m["params"]["pruned"].get<std::uint64_t>(), param_count(pruned.weights));
    Checkpoint st = load_checkpoint(root / "a" / "student.lgck");
    EXPECT_EQ(st.config.n_layers, 2u);
    EXPECT_EQ(st.config.mlp_hidden, 48u);
    EXPECT_EQ(st.weights.output_ids.size(), 20u);
    std::filesystem::remove_all(root);
}
