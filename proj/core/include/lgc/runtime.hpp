#pragma once

// Inference runtime shared by float checkpoints and packed INT4 models. A
// DecoderView borrows the weights; a DecodeSession owns the KV cache.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lgc/model.hpp"
#include "lgc/quantize.hpp"

namespace lgc {

/// Either a dense [in, out] matrix or a packed INT4 linear.
struct LinearRef {
    const Tensor* dense = nullptr;
    const QuantizedLinear* quant = nullptr;

    std::size_t in_features() const;
    std::size_t out_features() const;
};

struct BlockView {
    std::span<const float> attn_norm;
    std::span<const float> mlp_norm;
    LinearRef wq, wk, wv, wo, w_gate, w_up, w_down;
};

struct DecoderView {
    ModelConfig config;
    const Tensor* embedding = nullptr;
    const QuantizedEmbedding* quant_embedding = nullptr;
    std::vector<BlockView> blocks;
    std::span<const float> final_norm;
    LinearRef output;
    std::span<const std::int32_t> output_ids;  // empty: output column == vocab id
    bool fake_quant_activations = false;

    std::size_t output_width() const { return output.out_features(); }
    /// Vocabulary id for an output column.
    std::int32_t vocab_id(std::size_t column) const {
        return output_ids.empty() ? static_cast<std::int32_t>(column) : output_ids[column];
    }
};

DecoderView make_view(const ModelWeights& weights, const ModelConfig& config, bool fake_quant_activations = false);

enum class LogitRows { all, last, none };

/// Incremental decoder with a KV cache. The view (and everything it borrows)
/// must outlive the session.
class DecodeSession {
public:
    explicit DecodeSession(const DecoderView& view);

    /// Runs `tokens` at the next positions and returns their logits
    /// ([n, width], [1, width] for LogitRows::last, empty for none).
    Tensor append(std::span<const std::int32_t> tokens, LogitRows rows = LogitRows::all,
                  ForwardTrace* trace = nullptr, bool capture_block_io = false,
                  bool capture_mlp_hidden = false);

    std::size_t position() const noexcept { return pos_; }
    void reset() noexcept { pos_ = 0; }

private:
    const DecoderView* view_;
    std::size_t pos_ = 0;
    std::vector<std::vector<float>> k_cache_, v_cache_;  // per block, [max_seq, kv_dim]
};

/// Greedy argmax continuation. Stops after `max_new` tokens or right after
/// emitting `stop_id` (when non-negative). Returned ids are vocabulary ids.
std::vector<std::int32_t> greedy_generate(const DecoderView& view, std::span<const std::int32_t> prompt,
                                          std::size_t max_new, std::int32_t stop_id = -1);

}  // namespace lgc
