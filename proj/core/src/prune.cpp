#include "lgc/prune.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>

#include "lgc/error.hpp"

namespace lgc {

using nlohmann::json;

KeepList::KeepList(std::vector<std::int32_t> ids, std::size_t vocab_size) : ids_(std::move(ids)), vocab_(vocab_size) {
    if (ids_.empty()) throw ContractError("keep list is empty");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (ids_[i] < 0 || static_cast<std::size_t>(ids_[i]) >= vocab_) {
            throw InputError("keep list id " + std::to_string(ids_[i]) + " outside vocabulary");
        }
        if (i > 0 && ids_[i] <= ids_[i - 1]) throw InputError("keep list ids must be strictly increasing");
    }
}

std::string KeepList::to_json() const { return json(ids_).dump(); }

KeepList KeepList::from_json(const std::string& text, std::size_t vocab_size) {
    std::vector<std::int32_t> ids;
    try {
        ids = json::parse(text).get<std::vector<std::int32_t>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("keep list: ") + e.what(), 0);
    }
    return KeepList(std::move(ids), vocab_size);
}

Tensor expand_logits(const Tensor& pruned, const LogitExpander& ex) {
    const auto& ids = ex.keep.ids();
    if (pruned.rank() != 2 || pruned.cols() != ids.size()) throw ShapeError("pruned logits width != keep list size");
    Tensor out({pruned.rows(), ex.keep.vocab_size()});
    std::fill(out.storage().begin(), out.storage().end(), ex.fill);
    for (std::size_t r = 0; r < pruned.rows(); ++r) {
        for (std::size_t j = 0; j < ids.size(); ++j) out.at(r, static_cast<std::size_t>(ids[j])) = pruned.at(r, j);
    }
    return out;
}

std::string to_string(PruneDirection d) { return d == PruneDirection::drop_highest ? "drop-highest" : "drop-lowest"; }

PruneDirection parse_direction(const std::string& s) {
    if (s == "drop-highest") return PruneDirection::drop_highest;
    if (s == "drop-lowest") return PruneDirection::drop_lowest;
    throw ConfigError("direction must be drop-highest or drop-lowest, got '" + s + "'");
}

std::vector<std::size_t> select_blocks_to_drop(std::span<const double> scores, std::size_t n_drop,
                                               PruneDirection direction) {
    if (n_drop == 0 || n_drop >= scores.size()) {
        throw ContractError("n_drop must satisfy 0 < n_drop < n_layers (got " + std::to_string(n_drop) + " of " +
                            std::to_string(scores.size()) + ")");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return direction == PruneDirection::drop_highest ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    order.resize(n_drop);
    std::sort(order.begin(), order.end());
    return order;
}

BlockPruneResult prune_blocks(const ModelWeights& weights, const ModelConfig& config, const ImportanceReport& report,
                              std::size_t n_drop, PruneDirection direction) {
    weights.validate(config);
    if (report.block_scores.size() != config.n_layers) throw ShapeError("report block count != n_layers");
    BlockPruneResult r;
    r.dropped = select_blocks_to_drop(report.block_scores, n_drop, direction);
    r.config = config;
    r.config.n_layers -= n_drop;
    r.weights.embedding = weights.embedding;
    r.weights.final_norm = weights.final_norm;
    r.weights.unembedding = weights.unembedding;
    r.weights.output_ids = weights.output_ids;
    for (std::size_t b = 0; b < weights.blocks.size(); ++b) {
        if (!std::binary_search(r.dropped.begin(), r.dropped.end(), b)) r.weights.blocks.push_back(weights.blocks[b]);
    }
    return r;
}

std::vector<std::size_t> select_neurons(std::span<const double> scores, std::size_t keep) {
    if (keep == 0 || keep > scores.size()) {
        throw ContractError("new_hidden must satisfy 1 <= new_hidden <= K (got " + std::to_string(keep) + ")");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    return order;
}

MlpPruneResult prune_mlp(const ModelWeights& weights, const ModelConfig& config, const ImportanceReport& report,
                         std::size_t new_hidden) {
    weights.validate(config);
    if (report.mlp_scores.size() != config.n_layers) throw ShapeError("report block count != n_layers");
    const std::size_t d = config.dim, K = config.mlp_hidden;
    MlpPruneResult r;
    r.config = config;
    r.config.mlp_hidden = new_hidden;
    r.weights = weights;
    for (std::size_t b = 0; b < config.n_layers; ++b) {
        if (report.mlp_scores[b].size() != K) throw ShapeError("report neuron count != mlp_hidden");
        auto kept = select_neurons(report.mlp_scores[b], new_hidden);
        const BlockWeights& src = weights.blocks[b];
        BlockWeights& dst = r.weights.blocks[b];
        dst.w_gate = Tensor({d, new_hidden});
        dst.w_up = Tensor({d, new_hidden});
        dst.w_down = Tensor({new_hidden, d});
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < new_hidden; ++j) {
                dst.w_gate.at(i, j) = src.w_gate.at(i, kept[j]);
                dst.w_up.at(i, j) = src.w_up.at(i, kept[j]);
            }
        }
        for (std::size_t j = 0; j < new_hidden; ++j) {
            auto from = src.w_down.row(kept[j]);
            std::copy(from.begin(), from.end(), dst.w_down.row(j).begin());
        }
        r.kept.push_back(std::move(kept));
    }
    return r;
}

UnembeddingPruneResult prune_unembedding(const ModelWeights& weights, const KeepList& keep) {
    if (weights.unembedding_pruned()) throw ContractError("unembedding is already pruned");
    const std::size_t d = weights.unembedding.rows(), vocab = weights.unembedding.cols();
    if (keep.vocab_size() != vocab) throw ShapeError("keep list vocabulary != unembedding width");
    UnembeddingPruneResult r{weights, LogitExpander{keep, kDefaultLogitFill}};
    const auto& ids = keep.ids();
    Tensor u({d, ids.size()});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < ids.size(); ++j) u.at(i, j) = weights.unembedding.at(i, static_cast<std::size_t>(ids[j]));
    }
    r.weights.unembedding = std::move(u);
    r.weights.output_ids = ids;
    return r;
}

ImportanceReport restrict_report(const ImportanceReport& report, const std::vector<std::size_t>& dropped) {
    ImportanceReport r;
    r.sample_count = report.sample_count;
    r.degenerate_count = report.degenerate_count;
    for (std::size_t b = 0; b < report.block_scores.size(); ++b) {
        if (std::find(dropped.begin(), dropped.end(), b) != dropped.end()) continue;
        r.block_scores.push_back(report.block_scores[b]);
        if (b < report.mlp_scores.size()) r.mlp_scores.push_back(report.mlp_scores[b]);
    }
    return r;
}

std::string PruneProvenance::to_json() const {
    json j = {{"direction", direction},
              {"dropped_blocks", dropped_blocks},
              {"layers_before", layers_before},
              {"layers_after", layers_after},
              {"mlp_hidden_before", mlp_hidden_before},
              {"mlp_hidden_after", mlp_hidden_after},
              {"dropped_neurons", dropped_neurons},
              {"keep_list", keep_list}};
    return j.dump(2);
}

}  // namespace lgc
