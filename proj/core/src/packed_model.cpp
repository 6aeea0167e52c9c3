#include "lgc/packed_model.hpp"

#include "lgc/error.hpp"

namespace lgc {

void PackedQuantSpec::validate() const {
    if (linear_group == 0 || embedding_group == 0) throw ConfigError("quant group sizes must be positive");
    if (linear_group % 2 != 0 || embedding_group % 2 != 0) throw ConfigError("quant group sizes must be even");
    if (weight_bits != 4) throw ConfigError("only 4-bit weights are supported");
    if (activation_bits != 8) throw ConfigError("only 8-bit activations are supported");
}

PackedModel pack_model(const ModelWeights& w, const ModelConfig& config, const PackedQuantSpec& spec) {
    spec.validate();
    w.validate(config);
    PackedModel p;
    p.config = config;
    p.spec = spec;
    p.embedding = QuantizedEmbedding::from_weights(w.embedding, spec.embedding_group);
    const std::size_t g = spec.linear_group;
    p.blocks.reserve(w.blocks.size());
    for (const auto& b : w.blocks) {
        PackedBlock pb;
        pb.attn_norm = b.attn_norm;
        pb.mlp_norm = b.mlp_norm;
        pb.wq = QuantizedLinear::from_weights(b.wq, g);
        pb.wk = QuantizedLinear::from_weights(b.wk, g);
        pb.wv = QuantizedLinear::from_weights(b.wv, g);
        pb.wo = QuantizedLinear::from_weights(b.wo, g);
        pb.w_gate = QuantizedLinear::from_weights(b.w_gate, g);
        pb.w_up = QuantizedLinear::from_weights(b.w_up, g);
        pb.w_down = QuantizedLinear::from_weights(b.w_down, g);
        p.blocks.push_back(std::move(pb));
    }
    p.final_norm = w.final_norm;
    p.unembedding = QuantizedLinear::from_weights(w.unembedding, g);
    p.output_ids = w.output_ids;
    return p;
}

DecoderView make_view(const PackedModel& m) {
    m.config.validate();
    DecoderView v;
    v.config = m.config;
    v.quant_embedding = &m.embedding;
    for (const auto& b : m.blocks) {
        BlockView bv;
        bv.attn_norm = b.attn_norm.data();
        bv.mlp_norm = b.mlp_norm.data();
        bv.wq.quant = &b.wq;
        bv.wk.quant = &b.wk;
        bv.wv.quant = &b.wv;
        bv.wo.quant = &b.wo;
        bv.w_gate.quant = &b.w_gate;
        bv.w_up.quant = &b.w_up;
        bv.w_down.quant = &b.w_down;
        v.blocks.push_back(bv);
    }
    v.final_norm = m.final_norm.data();
    v.output.quant = &m.unembedding;
    v.output_ids = m.output_ids;
    return v;
}

ModelWeights fake_quantized_linears(const ModelWeights& w, std::size_t group) {
    ModelWeights out = w;
    for (auto& b : out.blocks) {
        for (Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w_gate, &b.w_up, &b.w_down}) {
            *t = fake_quant_weight(*t, group);
        }
    }
    out.unembedding = fake_quant_weight(out.unembedding, group);
    return out;
}

ModelWeights fake_quantized_embedding(const ModelWeights& w, std::size_t group) {
    ModelWeights out = w;
    out.embedding = fake_quant_embedding(w.embedding, group);
    return out;
}

}  // namespace lgc
