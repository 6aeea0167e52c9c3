#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgc/numerics.hpp"

namespace lgc {

/// Llama-style decoder hyperparameters.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t mlp_hidden = 0;  // MLP hidden width K
    float norm_eps = 1e-5f;
    std::size_t max_seq_len = 0;
    float rope_base = 10000.0f;

    std::size_t head_dim() const noexcept { return dim / n_heads; }
    std::size_t kv_dim() const noexcept { return n_kv_heads * head_dim(); }
    /// Throws ConfigError on any violated invariant.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Published Llama 3.2 1B shape (the guard model's starting point).
ModelConfig llama32_1b_config();

std::string to_json_string(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json);

struct BlockWeights {
    Tensor attn_norm;  // [dim]
    Tensor wq;         // [dim, dim]
    Tensor wk;         // [dim, kv_dim]
    Tensor wv;         // [dim, kv_dim]
    Tensor wo;         // [dim, dim]
    Tensor mlp_norm;   // [dim]
    Tensor w_gate;     // [dim, K]
    Tensor w_up;       // [dim, K]
    Tensor w_down;     // [K, dim]

    friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

/// Full weight set. Embedding and unembedding are always separate tensors.
/// After unembedding pruning `unembedding` is [dim, |output_ids|] and
/// `output_ids` lists the vocabulary id of each column.
struct ModelWeights {
    Tensor embedding;  // [vocab, dim]
    std::vector<BlockWeights> blocks;
    Tensor final_norm;   // [dim]
    Tensor unembedding;  // [dim, vocab] or [dim, |output_ids|]
    std::vector<std::int32_t> output_ids;

    bool unembedding_pruned() const noexcept { return !output_ids.empty(); }
    std::size_t output_width() const { return unembedding.cols(); }
    /// Throws ShapeError when any tensor disagrees with `config`.
    void validate(const ModelConfig& config) const;

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Visits every tensor in canonical checkpoint order with its stable name.
void for_each_tensor(ModelWeights& w, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const ModelWeights& w,
                     const std::function<void(const std::string&, const Tensor&)>& fn);

/// Deterministic init: every matrix ~ N(0, 1/dim), norm gains = 1.
ModelWeights init_random(const ModelConfig& config, std::uint64_t seed);
/// All block-internal projections zero, so every block is the identity.
ModelWeights zero_block_weights(const ModelConfig& config, std::uint64_t seed);

/// Exact number of weights. `output_width` defaults to the vocabulary.
std::uint64_t param_count(const ModelConfig& config, bool tied_embeddings = false,
                          std::optional<std::size_t> output_width = std::nullopt);
std::uint64_t param_count(const ModelWeights& weights);

// ---------------------------------------------------------------------------
// Storage accounting

struct StorageFormat {
    enum class Kind { real16, real32, int4_group, int8 };
    Kind kind = Kind::real16;
    std::size_t group_size = 0;   // int4_group only
    std::size_t scale_bytes = 4;  // per-group (int4) or per-row (int8) scale width

    static StorageFormat real16() { return {Kind::real16, 0, 0}; }
    static StorageFormat real32() { return {Kind::real32, 0, 0}; }
    static StorageFormat int4_group(std::size_t group, std::size_t scale_bytes = 4) {
        return {Kind::int4_group, group, scale_bytes};
    }
    static StorageFormat int8(std::size_t scale_bytes = 4) { return {Kind::int8, 0, scale_bytes}; }

    /// Bytes for `lines` independent rows of `length` grouped values each.
    /// Padding to a group multiple is not counted.
    std::uint64_t bytes(std::uint64_t lines, std::uint64_t length) const;
    std::string describe() const;
};

/// Storage format per tensor class.
struct StoragePlan {
    StorageFormat embedding = StorageFormat::real16();
    StorageFormat linear = StorageFormat::real16();       // attention + MLP projections
    StorageFormat unembedding = StorageFormat::real16();
    StorageFormat norm = StorageFormat::real16();

    static StoragePlan uniform(StorageFormat f) { return {f, f, f, f}; }
    static StoragePlan bf16() { return uniform(StorageFormat::real16()); }
};

std::uint64_t size_bytes(const ModelConfig& config, const StoragePlan& plan,
                         std::optional<std::size_t> output_width = std::nullopt);

inline double to_gib(std::uint64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0); }

struct SizeStage {
    std::string name;
    ModelConfig config;
    std::size_t output_width = 0;
    StoragePlan plan;
    std::uint64_t params = 0;
    std::uint64_t bytes = 0;
};

struct CompressionTargets {
    std::size_t n_layers = 0;
    std::size_t mlp_hidden = 0;
    std::size_t keep_tokens = 0;
    std::size_t linear_group = 256;
    std::size_t embedding_group = 32;
    std::size_t scale_bytes = 4;
};

/// The five-step size chain: base bf16, pruned bf16, INT4 linears (including
/// the unembedding), INT4 embedding, pruned unembedding.
std::vector<SizeStage> compression_size_chain(const ModelConfig& base, const CompressionTargets& targets);

/// 4-bit payload saved by cutting the unembedding to `keep_tokens` columns.
std::uint64_t unembedding_prune_savings_bytes(const ModelConfig& config, std::size_t keep_tokens,
                                              unsigned bits = 4);

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardTrace {
    std::vector<Tensor> x_in;        // per block, [seq, dim]
    std::vector<Tensor> x_out;       // per block, [seq, dim]
    std::vector<Tensor> mlp_hidden;  // per block, [seq, K]; the vector feeding W_down
};

struct ForwardOptions {
    bool capture_block_io = false;
    bool capture_mlp_hidden = false;
    /// Emulate dynamic INT8 activation quantization at every dense linear input.
    bool fake_quant_activations = false;
};

struct ForwardResult {
    Tensor logits;  // [seq, output_width]
    std::optional<ForwardTrace> trace;
};

/// Pre-norm residual decoder with rotary causal attention and a SwiGLU MLP.
ForwardResult forward(const ModelWeights& weights, const ModelConfig& config,
                      std::span<const std::int32_t> tokens, const ForwardOptions& options = {});
inline ForwardResult forward(const ModelWeights& weights, const ModelConfig& config,
                             std::span<const std::int32_t> tokens, bool capture) {
    ForwardOptions o;
    o.capture_block_io = capture;
    return forward(weights, config, tokens, o);
}

/// cos/sin of the rotary angles for one position: pair i rotates by
/// pos * base^(-2i/head_dim).
void rope_angles(std::size_t pos, std::size_t head_dim, double base, std::span<double> cos_out,
                 std::span<double> sin_out);

}  // namespace lgc
