#pragma once

// Monte-Carlo estimates of block importance (mean cosine between a block's
// input and output) and MLP neuron importance (mean squared activation of
// each neuron feeding W_down), pooled uniformly over non-pad positions.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lgc/evalbench.hpp"
#include "lgc/model.hpp"

namespace lgc {

struct CalibrationConfig {
    std::size_t batches = 64;
    std::size_t batch_size = 8;
    std::size_t seq_len = 128;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CalibrationSequence {
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> valid;  // 0 on pad positions
};

using CalibrationBatch = std::vector<CalibrationSequence>;

class CalibrationStream {
public:
    explicit CalibrationStream(std::vector<CalibrationBatch> batches);

    /// Rows of `seq_len` tokens filled with whole task examples; the unused
    /// tail of each row is padding.
    static CalibrationStream from_task(const SynthTask& task, const CalibrationConfig& config);

    const std::vector<CalibrationBatch>& batches() const noexcept { return batches_; }
    std::size_t n_batches() const noexcept { return batches_.size(); }
    std::size_t valid_tokens() const;

private:
    std::vector<CalibrationBatch> batches_;
};

struct ImportanceReport {
    std::vector<double> block_scores;
    std::vector<std::vector<double>> mlp_scores;  // [block][neuron]
    std::uint64_t sample_count = 0;
    std::uint64_t degenerate_count = 0;  // positions where a cosine was undefined

    std::string to_json() const;
    static ImportanceReport from_json(const std::string& text);
    friend bool operator==(const ImportanceReport&, const ImportanceReport&) = default;
};

/// Running sums for both estimators. Sums are kept in double and combined in
/// the order positions are added.
class ImportanceAccumulator {
public:
    ImportanceAccumulator(std::size_t n_blocks, std::size_t mlp_hidden);

    /// x_in/x_out are [seq, dim]; `valid` selects the positions to pool.
    void add_block_io(std::size_t block, const Tensor& x_in, const Tensor& x_out,
                      std::span<const std::uint8_t> valid);
    /// h is [seq, K].
    void add_mlp_hidden(std::size_t block, const Tensor& h, std::span<const std::uint8_t> valid);
    void merge(const ImportanceAccumulator& other);

    std::uint64_t positions() const noexcept { return positions_; }
    /// Throws EmptyDataError when no position was added.
    ImportanceReport report() const;

    void add_positions(std::uint64_t n) noexcept { positions_ += n; }

private:
    std::vector<double> cos_sum_;
    std::vector<std::uint64_t> cos_count_;
    std::vector<std::vector<double>> energy_sum_;
    std::vector<std::uint64_t> energy_count_;
    std::uint64_t positions_ = 0;
    std::uint64_t degenerate_ = 0;
};

/// Accumulates one batch; the forward pass runs on one sequence at a time.
void accumulate_batch(const ModelWeights& weights, const ModelConfig& config, const CalibrationBatch& batch,
                      ImportanceAccumulator& acc, bool blocks, bool mlp);

ImportanceReport calibrate(const ModelWeights& weights, const ModelConfig& config, const CalibrationStream& stream);
std::vector<double> block_importance(const ModelWeights& weights, const ModelConfig& config,
                                     const CalibrationStream& stream);
std::vector<std::vector<double>> mlp_importance(const ModelWeights& weights, const ModelConfig& config,
                                                const CalibrationStream& stream);

enum class ImportanceMetric { block, mlp };

struct ConvergenceReport {
    /// Block metric: max over splits and blocks of |split - pooled| / |pooled|.
    /// MLP metric: max over splits and blocks of ||split - pooled||_2 / ||pooled||_2.
    double max_relative_deviation = 0.0;
    bool undefined = false;  // fewer batches than splits
    std::size_t splits = 0;
};

/// Splits the stream into `splits` contiguous runs of batches and compares
/// each run's estimate with the pooled estimate.
ConvergenceReport estimate_convergence(const ModelWeights& weights, const ModelConfig& config,
                                       const CalibrationStream& stream, ImportanceMetric metric,
                                       std::size_t splits = 2);
/// Same comparison over precomputed per-batch accumulators.
ConvergenceReport estimate_convergence(const std::vector<ImportanceAccumulator>& per_batch,
                                       ImportanceMetric metric, std::size_t splits = 2);

}  // namespace lgc
