#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lgc/model.hpp"
#include "lgc/quantize.hpp"
#include "lgc/runtime.hpp"

namespace lgc {

struct PackedQuantSpec {
    std::size_t linear_group = kLinearGroupSize;
    std::size_t embedding_group = kEmbeddingGroupSize;
    unsigned weight_bits = 4;
    unsigned activation_bits = 8;

    void validate() const;
    friend bool operator==(const PackedQuantSpec&, const PackedQuantSpec&) = default;
};

struct PackedBlock {
    Tensor attn_norm;
    Tensor mlp_norm;
    QuantizedLinear wq, wk, wv, wo, w_gate, w_up, w_down;

    friend bool operator==(const PackedBlock&, const PackedBlock&) = default;
};

/// Deployable model: INT4 linears and embedding, float norm gains.
struct PackedModel {
    ModelConfig config;
    PackedQuantSpec spec;
    QuantizedEmbedding embedding;
    std::vector<PackedBlock> blocks;
    Tensor final_norm;
    QuantizedLinear unembedding;
    std::vector<std::int32_t> output_ids;

    friend bool operator==(const PackedModel&, const PackedModel&) = default;
};

PackedModel pack_model(const ModelWeights& weights, const ModelConfig& config, const PackedQuantSpec& spec);
DecoderView make_view(const PackedModel& model);

/// Float weights with every linear (including the unembedding) replaced by its
/// fake-quantized value. The embedding is left untouched.
ModelWeights fake_quantized_linears(const ModelWeights& weights, std::size_t linear_group);

/// Float weights with the embedding replaced by its groupwise INT4 rounding.
ModelWeights fake_quantized_embedding(const ModelWeights& weights, std::size_t embedding_group);

}  // namespace lgc
