#pragma once

// Whole compression flow: train baseline and teacher, calibrate, prune
// blocks and MLP width, prune the unembedding, QAT-distill, pack, evaluate
// and account sizes. Every stage seed is derived from one config seed.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "lgc/calibrate.hpp"
#include "lgc/evalbench.hpp"
#include "lgc/model.hpp"
#include "lgc/packed_model.hpp"
#include "lgc/prune.hpp"
#include "lgc/train.hpp"

namespace lgc {

inline constexpr int kPipelineSchemaVersion = 1;

struct PipelineConfig {
    int schema_version = kPipelineSchemaVersion;
    std::uint64_t seed = 0;
    ModelConfig model;
    ModelConfig teacher_model;

    SynthTaskConfig task;
    std::size_t train_examples = 1024;
    std::size_t eval_examples = 400;

    CalibrationConfig calibration;

    std::size_t n_layers_out = 0;
    std::size_t mlp_hidden_out = 0;
    PruneDirection direction = PruneDirection::drop_highest;
    std::string keep_list_path;  // empty: the task's own keep list
    std::size_t keep_tokens = 20;  // size-calculator target when no list is loaded

    PackedQuantSpec quant;

    TrainHyper baseline_train;
    TrainHyper teacher_train;
    TrainHyper student_train;
    Objective student_objective = Objective::qat_distill;
    std::string teacher_path;  // empty: train the teacher in-pipeline

    /// Throws ConfigError on any violated invariant.
    void validate() const;
    /// Validation of the model and prune targets alone (enough for `size`).
    void validate_shapes() const;
};

PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string to_json_string(const PipelineConfig& config);

/// Derived seed streams.
enum class SeedStream : std::uint64_t {
    train_data = 1,
    eval_data = 2,
    baseline_init = 3,
    baseline_train = 4,
    teacher_init = 5,
    teacher_train = 6,
    calibration = 7,
    student_train = 8,
};
std::uint64_t stage_seed(const PipelineConfig& config, SeedStream stream);

std::vector<TrainExample> to_train_examples(const std::vector<SynthExample>& data);
CompressionTargets compression_targets(const PipelineConfig& config);
KeepList resolve_keep_list(const PipelineConfig& config);

struct PipelineSummary {
    double baseline_f1 = 0.0;
    double teacher_f1 = 0.0;
    double packed_f1 = 0.0;
    double retention = 0.0;  // packed_f1 / baseline_f1
    std::string manifest;    // JSON text written to manifest.json
};

/// Runs every stage and writes its artifacts under `out_dir`.
PipelineSummary run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir, std::ostream* log);

std::string size_chain_json(const std::vector<SizeStage>& chain);

}  // namespace lgc
