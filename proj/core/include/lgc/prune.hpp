#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lgc/calibrate.hpp"
#include "lgc/model.hpp"

namespace lgc {

/// Strictly increasing, unique token ids below the vocabulary size.
class KeepList {
public:
    KeepList(std::vector<std::int32_t> ids, std::size_t vocab_size);

    const std::vector<std::int32_t>& ids() const noexcept { return ids_; }
    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t vocab_size() const noexcept { return vocab_; }

    std::string to_json() const;
    static KeepList from_json(const std::string& text, std::size_t vocab_size);

private:
    std::vector<std::int32_t> ids_;
    std::size_t vocab_;
};

inline constexpr float kDefaultLogitFill = -1e9f;

struct LogitExpander {
    KeepList keep;
    float fill = kDefaultLogitFill;
};

/// [seq, |keep|] -> [seq, vocab]; kept columns are copied unchanged.
Tensor expand_logits(const Tensor& pruned_logits, const LogitExpander& expander);

enum class PruneDirection { drop_highest, drop_lowest };
std::string to_string(PruneDirection d);
PruneDirection parse_direction(const std::string& s);

struct BlockPruneResult {
    ModelWeights weights;
    ModelConfig config;
    std::vector<std::size_t> dropped;  // ascending original indices
};

/// Ranks blocks by score in `direction` (ties: lower index first) and removes
/// the first n_drop. Requires 0 < n_drop < n_layers.
std::vector<std::size_t> select_blocks_to_drop(std::span<const double> scores, std::size_t n_drop,
                                               PruneDirection direction);
BlockPruneResult prune_blocks(const ModelWeights& weights, const ModelConfig& config,
                              const ImportanceReport& report, std::size_t n_drop,
                              PruneDirection direction = PruneDirection::drop_highest);

struct MlpPruneResult {
    ModelWeights weights;
    ModelConfig config;
    std::vector<std::vector<std::size_t>> kept;  // per block, ascending neuron indices
};

/// Indices of the `keep` largest scores (ties: lower index kept), ascending.
std::vector<std::size_t> select_neurons(std::span<const double> scores, std::size_t keep);
MlpPruneResult prune_mlp(const ModelWeights& weights, const ModelConfig& config,
                         const ImportanceReport& report, std::size_t new_hidden);

struct UnembeddingPruneResult {
    ModelWeights weights;
    LogitExpander expander;
};

UnembeddingPruneResult prune_unembedding(const ModelWeights& weights, const KeepList& keep);

/// Report for the blocks that survive dropping `dropped`.
ImportanceReport restrict_report(const ImportanceReport& report, const std::vector<std::size_t>& dropped);

struct PruneProvenance {
    std::string direction;
    std::vector<std::size_t> dropped_blocks;
    std::size_t layers_before = 0, layers_after = 0;
    std::size_t mlp_hidden_before = 0, mlp_hidden_after = 0;
    std::vector<std::size_t> dropped_neurons;  // per surviving block
    std::vector<std::int32_t> keep_list;

    std::string to_json() const;
};

}  // namespace lgc
