#include "lgc/model.hpp"

#include <cmath>
#include <string>

#include <json.hpp>

#include "lgc/error.hpp"
#include "lgc/runtime.hpp"

namespace lgc {

using nlohmann::json;

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid model config: " + what);
    };
    require(vocab_size >= 1, "vocab_size must be >= 1");
    require(dim >= 1, "dim must be >= 1");
    require(n_layers >= 1, "n_layers must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(n_kv_heads >= 1, "n_kv_heads must be >= 1");
    require(mlp_hidden >= 1, "mlp_hidden must be >= 1");
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
    require(dim % n_heads == 0, "dim must be divisible by n_heads");
    require(n_heads % n_kv_heads == 0, "n_heads must be divisible by n_kv_heads");
    require(head_dim() % 2 == 0, "head_dim must be even for rotary embeddings");
    require(norm_eps > 0.0f && std::isfinite(norm_eps), "norm_eps must be positive");
    require(rope_base > 0.0f && std::isfinite(rope_base), "rope_base must be positive");
}

ModelConfig llama32_1b_config() {
    ModelConfig c;
    c.vocab_size = 128256;
    c.dim = 2048;
    c.n_layers = 16;
    c.n_heads = 32;
    c.n_kv_heads = 8;
    c.mlp_hidden = 8192;
    c.norm_eps = 1e-5f;
    c.max_seq_len = 8192;
    c.rope_base = 500000.0f;
    return c;
}

std::string to_json_string(const ModelConfig& c) {
    json j = {{"vocab_size", c.vocab_size}, {"dim", c.dim},           {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"n_kv_heads", c.n_kv_heads}, {"mlp_hidden", c.mlp_hidden},
              {"norm_eps", c.norm_eps},     {"max_seq_len", c.max_seq_len}, {"rope_base", c.rope_base}};
    return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.dim = j.at("dim").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.n_kv_heads = j.value("n_kv_heads", c.n_heads);
        c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
        c.norm_eps = j.value("norm_eps", 1e-5f);
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        c.rope_base = j.value("rope_base", 10000.0f);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

namespace {

void expect_dims(const Tensor& t, std::vector<std::size_t> dims, const std::string& name) {
    if (t.dims() != dims) throw ShapeError("tensor '" + name + "' has the wrong shape");
}

template <class W, class Fn>
void visit_tensors(W& w, Fn&& fn) {
    fn(std::string("tok_embeddings"), w.embedding);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        auto& b = w.blocks[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        fn(p + "attention_norm", b.attn_norm);
        fn(p + "attention.wq", b.wq);
        fn(p + "attention.wk", b.wk);
        fn(p + "attention.wv", b.wv);
        fn(p + "attention.wo", b.wo);
        fn(p + "ffn_norm", b.mlp_norm);
        fn(p + "feed_forward.w_gate", b.w_gate);
        fn(p + "feed_forward.w_up", b.w_up);
        fn(p + "feed_forward.w_down", b.w_down);
    }
    fn(std::string("norm"), w.final_norm);
    fn(std::string("output"), w.unembedding);
}

}  // namespace

void for_each_tensor(ModelWeights& w, const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_tensors(w, fn);
}

void for_each_tensor(const ModelWeights& w, const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_tensors(w, fn);
}

void ModelWeights::validate(const ModelConfig& c) const {
    const std::size_t d = c.dim, kv = c.kv_dim(), k = c.mlp_hidden;
    if (blocks.size() != c.n_layers) throw ShapeError("block count does not match n_layers");
    expect_dims(embedding, {c.vocab_size, d}, "tok_embeddings");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        expect_dims(b.attn_norm, {d}, p + "attention_norm");
        expect_dims(b.wq, {d, d}, p + "attention.wq");
        expect_dims(b.wk, {d, kv}, p + "attention.wk");
        expect_dims(b.wv, {d, kv}, p + "attention.wv");
        expect_dims(b.wo, {d, d}, p + "attention.wo");
        expect_dims(b.mlp_norm, {d}, p + "ffn_norm");
        expect_dims(b.w_gate, {d, k}, p + "feed_forward.w_gate");
        expect_dims(b.w_up, {d, k}, p + "feed_forward.w_up");
        expect_dims(b.w_down, {k, d}, p + "feed_forward.w_down");
    }
    expect_dims(final_norm, {d}, "norm");
    const std::size_t width = output_ids.empty() ? c.vocab_size : output_ids.size();
    expect_dims(unembedding, {d, width}, "output");
    for (std::size_t i = 0; i < output_ids.size(); ++i) {
        if (output_ids[i] < 0 || static_cast<std::size_t>(output_ids[i]) >= c.vocab_size ||
            (i > 0 && output_ids[i] <= output_ids[i - 1])) {
            throw ShapeError("output ids must be strictly increasing vocabulary ids");
        }
    }
}

ModelWeights init_random(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t d = config.dim, kv = config.kv_dim(), k = config.mlp_hidden;
    ModelWeights w;
    w.embedding = Tensor({config.vocab_size, d});
    w.blocks.resize(config.n_layers);
    for (auto& b : w.blocks) {
        b.attn_norm = Tensor({d});
        b.wq = Tensor({d, d});
        b.wk = Tensor({d, kv});
        b.wv = Tensor({d, kv});
        b.wo = Tensor({d, d});
        b.mlp_norm = Tensor({d});
        b.w_gate = Tensor({d, k});
        b.w_up = Tensor({d, k});
        b.w_down = Tensor({k, d});
    }
    w.final_norm = Tensor({d});
    w.unembedding = Tensor({d, config.vocab_size});

    Prng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    for_each_tensor(w, [&](const std::string&, Tensor& t) {
        if (t.rank() == 1) {
            std::fill(t.data().begin(), t.data().end(), 1.0f);
        } else {
            for (auto& x : t.data()) x = static_cast<float>(stddev * rng.normal());
        }
    });
    return w;
}

ModelWeights zero_block_weights(const ModelConfig& config, std::uint64_t seed) {
    ModelWeights w = init_random(config, seed);
    for (auto& b : w.blocks) {
        for (Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w_gate, &b.w_up, &b.w_down}) {
            std::fill(t->data().begin(), t->data().end(), 0.0f);
        }
    }
    return w;
}

std::uint64_t param_count(const ModelConfig& c, bool tied, std::optional<std::size_t> output_width) {
    const std::uint64_t d = c.dim, kv = c.kv_dim(), k = c.mlp_hidden;
    const std::uint64_t width = output_width.value_or(c.vocab_size);
    const std::uint64_t block = 2 * d + 2 * d * d + 2 * d * kv + 3 * d * k;
    std::uint64_t total = c.vocab_size * d + c.n_layers * block + d;
    if (!tied) total += d * width;
    return total;
}

std::uint64_t param_count(const ModelWeights& w) {
    std::uint64_t n = 0;
    for_each_tensor(w, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

// ---------------------------------------------------------------------------

std::uint64_t StorageFormat::bytes(std::uint64_t lines, std::uint64_t length) const {
    const std::uint64_t n = lines * length;
    switch (kind) {
        case Kind::real16: return 2 * n;
        case Kind::real32: return 4 * n;
        case Kind::int8: return n + lines * scale_bytes;
        case Kind::int4_group: {
            if (group_size == 0) throw ContractError("int4 storage needs a group size");
            const std::uint64_t groups = lines * ((length + group_size - 1) / group_size);
            return (n + 1) / 2 + groups * scale_bytes;
        }
    }
    return 0;
}

std::string StorageFormat::describe() const {
    switch (kind) {
        case Kind::real16: return "real16";
        case Kind::real32: return "real32";
        case Kind::int8: return "int8(scale " + std::to_string(scale_bytes) + "B)";
        case Kind::int4_group:
            return "int4-group(" + std::to_string(group_size) + ", scale " + std::to_string(scale_bytes) + "B)";
    }
    return "?";
}

std::uint64_t size_bytes(const ModelConfig& c, const StoragePlan& plan, std::optional<std::size_t> output_width) {
    const std::uint64_t d = c.dim, kv = c.kv_dim(), k = c.mlp_hidden;
    const std::uint64_t width = output_width.value_or(c.vocab_size);
    auto norm_bytes = [&](std::uint64_t n) {
        if (plan.norm.kind == StorageFormat::Kind::int4_group || plan.norm.kind == StorageFormat::Kind::int8) {
            throw ContractError("norm gains must be stored as reals");
        }
        return plan.norm.bytes(1, n);
    };
    // Linears are [in, out]: one quantization line per output neuron.
    auto lin = [&](std::uint64_t in, std::uint64_t out) { return plan.linear.bytes(out, in); };
    const std::uint64_t block = 2 * norm_bytes(d) + lin(d, d) + 2 * lin(d, kv) + lin(d, d) +
                                2 * lin(d, k) + lin(k, d);
    return plan.embedding.bytes(c.vocab_size, d) + c.n_layers * block + norm_bytes(d) +
           plan.unembedding.bytes(width, d);
}

std::vector<SizeStage> compression_size_chain(const ModelConfig& base, const CompressionTargets& t) {
    ModelConfig pruned = base;
    pruned.n_layers = t.n_layers;
    pruned.mlp_hidden = t.mlp_hidden;
    pruned.validate();

    StoragePlan int4_linears;
    int4_linears.linear = StorageFormat::int4_group(t.linear_group, t.scale_bytes);
    int4_linears.unembedding = int4_linears.linear;
    int4_linears.embedding = StorageFormat::real16();
    int4_linears.norm = StorageFormat::real32();
    StoragePlan int4_all = int4_linears;
    int4_all.embedding = StorageFormat::int4_group(t.embedding_group, t.scale_bytes);

    std::vector<SizeStage> out;
    auto add = [&](std::string name, const ModelConfig& c, std::size_t width, const StoragePlan& plan) {
        out.push_back({std::move(name), c, width, plan, param_count(c, false, width), size_bytes(c, plan, width)});
    };
    add("base-bf16", base, base.vocab_size, StoragePlan::bf16());
    add("pruned-bf16", pruned, pruned.vocab_size, StoragePlan::bf16());
    add("int4-linears", pruned, pruned.vocab_size, int4_linears);
    add("int4-embedding", pruned, pruned.vocab_size, int4_all);
    add("unembedding-pruned", pruned, t.keep_tokens, int4_all);
    return out;
}

std::uint64_t unembedding_prune_savings_bytes(const ModelConfig& c, std::size_t keep_tokens, unsigned bits) {
    if (keep_tokens > c.vocab_size) throw ContractError("keep list larger than the vocabulary");
    const std::uint64_t removed = static_cast<std::uint64_t>(c.dim) * (c.vocab_size - keep_tokens);
    return removed * bits / 8;
}

// ---------------------------------------------------------------------------

void rope_angles(std::size_t pos, std::size_t head_dim, double base, std::span<double> cos_out,
                 std::span<double> sin_out) {
    const std::size_t half = head_dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        double a = static_cast<double>(pos) * freq;
        cos_out[i] = std::cos(a);
        sin_out[i] = std::sin(a);
    }
}

ForwardResult forward(const ModelWeights& weights, const ModelConfig& config, std::span<const std::int32_t> tokens,
                      const ForwardOptions& options) {
    if (tokens.empty()) throw InputError("forward needs at least one token");
    if (tokens.size() > config.max_seq_len) throw InputError("sequence longer than max_seq_len");
    DecoderView view = make_view(weights, config, options.fake_quant_activations);
    DecodeSession session(view);
    ForwardResult result;
    const bool capture = options.capture_block_io || options.capture_mlp_hidden;
    if (capture) result.trace.emplace();
    result.logits = session.append(tokens, LogitRows::all, capture ? &*result.trace : nullptr,
                                   options.capture_block_io, options.capture_mlp_hidden);
    return result;
}

}  // namespace lgc
