#include "lgc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "lgc/error.hpp"

namespace lgc {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

using nlohmann::json;

namespace {

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void put_blob(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    std::size_t size() const noexcept { return buf_.size(); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    void need(std::uint64_t n) const {
        if (n > b_.size() || pos_ > b_.size() - n) throw FormatError("truncated file", pos_);
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::uint64_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string get_blob() { return get_string(get<std::uint32_t>()); }
    std::uint64_t pos() const noexcept { return pos_; }

private:
    std::span<const std::uint8_t> b_;
    std::uint64_t pos_ = 0;
};

struct PendingTensor {
    std::string name;
    DType dtype;
    std::vector<std::uint32_t> dims;
    const void* data;
    std::uint64_t bytes;
};

std::vector<std::uint32_t> dims32(const std::vector<std::size_t>& dims) {
    std::vector<std::uint32_t> out;
    for (auto d : dims) out.push_back(static_cast<std::uint32_t>(d));
    return out;
}

std::vector<std::uint8_t> write_container(const char magic[4], std::uint32_t version,
                                          const std::vector<std::string>& blobs,
                                          const std::vector<PendingTensor>& tensors) {
    std::uint64_t header = 4 + 4;
    for (const auto& b : blobs) header += 4 + b.size();
    header += 4;
    for (const auto& t : tensors) header += 2 + t.name.size() + 1 + 1 + 4 * t.dims.size() + 8 + 8;

    Writer w;
    w.put_bytes(magic, 4);
    w.put<std::uint32_t>(version);
    for (const auto& b : blobs) w.put_blob(b);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = header;
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF || t.dims.size() > 0xFF) throw ContractError("tensor name or rank too large");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name.data(), t.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.put<std::uint32_t>(d);
        w.put<std::uint64_t>(offset);
        w.put<std::uint64_t>(t.bytes);
        offset += t.bytes;
    }
    for (const auto& t : tensors) w.put_bytes(t.data, t.bytes);
    return w.take();
}

struct Container {
    std::vector<std::string> blobs;
    std::vector<DirectoryEntry> entries;
};

Container read_container(std::span<const std::uint8_t> bytes, const char magic[4], std::uint32_t version,
                         std::size_t n_blobs) {
    Reader r(bytes);
    if (r.get_string(4) != std::string(magic, 4)) throw FormatError("bad magic, expected " + std::string(magic, 4), 0);
    const std::uint64_t vpos = r.pos();
    const auto v = r.get<std::uint32_t>();
    if (v != version) {
        throw FormatError("unsupported version " + std::to_string(v) + " (expected " + std::to_string(version) + ")", vpos);
    }
    Container c;
    for (std::size_t i = 0; i < n_blobs; ++i) c.blobs.push_back(r.get_blob());
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        DirectoryEntry e;
        const std::uint64_t at = r.pos();
        e.name = r.get_string(r.get<std::uint16_t>());
        const auto tag = r.get<std::uint8_t>();
        if (tag > static_cast<std::uint8_t>(DType::i32)) throw FormatError("unknown dtype tag " + std::to_string(tag), at);
        e.dtype = static_cast<DType>(tag);
        const auto rank = r.get<std::uint8_t>();
        for (std::uint8_t k = 0; k < rank; ++k) e.dims.push_back(r.get<std::uint32_t>());
        e.offset = r.get<std::uint64_t>();
        e.byte_length = r.get<std::uint64_t>();
        c.entries.push_back(std::move(e));
    }
    const std::uint64_t data_start = r.pos();
    std::uint64_t expected = data_start;
    for (const auto& e : c.entries) {
        if (e.offset != expected) throw FormatError("tensor '" + e.name + "' is not contiguous", e.offset);
        if (e.byte_length > bytes.size() || e.offset > bytes.size() - e.byte_length) {
            throw FormatError("truncated data for tensor '" + e.name + "'", bytes.size());
        }
        expected += e.byte_length;
    }
    if (expected != bytes.size()) throw FormatError("trailing bytes after the data section", expected);
    return c;
}

std::uint64_t count_of(const DirectoryEntry& e) {
    std::uint64_t n = 1;
    for (auto d : e.dims) n *= d;
    return n;
}

void check_entry(const DirectoryEntry& e, const std::string& name, DType t, std::uint64_t bytes) {
    if (e.name != name) throw FormatError("expected tensor '" + name + "', found '" + e.name + "'", e.offset);
    if (e.dtype != t) throw FormatError("tensor '" + name + "' has an unexpected dtype", e.offset);
    if (e.byte_length != bytes) throw FormatError("tensor '" + name + "' has an unexpected byte length", e.offset);
}

Tensor read_f32(std::span<const std::uint8_t> bytes, const DirectoryEntry& e, const std::string& name,
                const std::vector<std::size_t>& dims) {
    check_entry(e, name, DType::f32, product(dims) * 4);
    std::vector<std::uint32_t> want = dims32(dims);
    if (e.dims != want) throw FormatError("tensor '" + name + "' has unexpected dims", e.offset);
    std::vector<float> data(product(dims));
    std::memcpy(data.data(), bytes.data() + e.offset, e.byte_length);
    return Tensor(dims, std::move(data));
}

std::vector<std::int32_t> read_i32(std::span<const std::uint8_t> bytes, const DirectoryEntry& e, const std::string& name) {
    if (e.dims.size() != 1) throw FormatError("tensor '" + name + "' must be rank 1", e.offset);
    check_entry(e, name, DType::i32, count_of(e) * 4);
    std::vector<std::int32_t> out(count_of(e));
    std::memcpy(out.data(), bytes.data() + e.offset, e.byte_length);
    return out;
}

ModelConfig parse_config(const std::string& blob) {
    try {
        return model_config_from_json(blob);
    } catch (const Error& e) {
        throw FormatError(std::string("config blob: ") + e.what(), 8);
    }
}

std::vector<std::size_t> linear_dims(const std::string& name, const ModelConfig& c, std::size_t width) {
    const std::size_t d = c.dim, kv = c.kv_dim(), k = c.mlp_hidden;
    auto ends = [&](const char* s) { return name.size() >= std::strlen(s) && name.compare(name.size() - std::strlen(s), std::string::npos, s) == 0; };
    if (name == "output") return {d, width};
    if (ends("attention.wq") || ends("attention.wo")) return {d, d};
    if (ends("attention.wk") || ends("attention.wv")) return {d, kv};
    if (ends("w_gate") || ends("w_up")) return {d, k};
    if (ends("w_down")) return {k, d};
    return {d};
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelWeights& weights, const ModelConfig& config) {
    config.validate();
    weights.validate(config);
    std::vector<PendingTensor> ts;
    for_each_tensor(weights, [&](const std::string& name, const Tensor& t) {
        ts.push_back({name, DType::f32, dims32(t.dims()), t.data().data(), t.size() * 4});
    });
    if (weights.unembedding_pruned()) {
        ts.push_back({"output_ids", DType::i32, {static_cast<std::uint32_t>(weights.output_ids.size())},
                      weights.output_ids.data(), weights.output_ids.size() * 4});
    }
    return write_container("LGCK", kCheckpointVersion, {to_json_string(config)}, ts);
}

std::vector<DirectoryEntry> read_directory(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "LGPQ", 4) == 0) {
        return read_container(bytes, "LGPQ", kPackedVersion, 2).entries;
    }
    return read_container(bytes, "LGCK", kCheckpointVersion, 1).entries;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    Container c = read_container(bytes, "LGCK", kCheckpointVersion, 1);
    Checkpoint ck;
    ck.config = parse_config(c.blobs[0]);
    const bool pruned = !c.entries.empty() && c.entries.back().name == "output_ids";
    std::size_t width = ck.config.vocab_size;
    if (pruned) {
        ck.weights.output_ids = read_i32(bytes, c.entries.back(), "output_ids");
        width = ck.weights.output_ids.size();
    }
    const std::size_t expected = 3 + 9 * ck.config.n_layers + (pruned ? 1 : 0);
    if (c.entries.size() != expected) {
        throw FormatError("checkpoint has " + std::to_string(c.entries.size()) + " tensors, expected " +
                              std::to_string(expected),
                          8);
    }
    ck.weights.blocks.resize(ck.config.n_layers);
    std::size_t i = 0;
    for_each_tensor(ck.weights, [&](const std::string& name, Tensor& t) {
        std::vector<std::size_t> dims =
            name == "tok_embeddings" ? std::vector<std::size_t>{ck.config.vocab_size, ck.config.dim}
                                     : linear_dims(name, ck.config, width);
        t = read_f32(bytes, c.entries[i++], name, dims);
    });
    try {
        ck.weights.validate(ck.config);
    } catch (const Error& e) {
        throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), 0);
    }
    return ck;
}

// ---------------------------------------------------------------------------

std::string to_json_string(const PackedQuantSpec& s) {
    json j = {{"linear_group", s.linear_group}, {"embedding_group", s.embedding_group},
              {"weight_bits", s.weight_bits},   {"activation_bits", s.activation_bits}};
    return j.dump();
}

PackedQuantSpec quant_spec_from_json(const std::string& text) {
    PackedQuantSpec s;
    try {
        json j = json::parse(text);
        s.linear_group = j.at("linear_group").get<std::size_t>();
        s.embedding_group = j.at("embedding_group").get<std::size_t>();
        s.weight_bits = j.at("weight_bits").get<unsigned>();
        s.activation_bits = j.at("activation_bits").get<unsigned>();
        s.validate();
    } catch (const json::exception& e) {
        throw FormatError(std::string("quant spec: ") + e.what(), 0);
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(std::string("quant spec: ") + e.what(), 0);
    }
    return s;
}

namespace {

void push_linear(std::vector<PendingTensor>& ts, const std::string& name, const QuantizedLinear& q) {
    ts.push_back({name, DType::i4_packed,
                  {static_cast<std::uint32_t>(q.out_features()), static_cast<std::uint32_t>(q.in_features())},
                  q.packed().data(), q.packed().size()});
    ts.push_back({name + ".scales", DType::f32,
                  {static_cast<std::uint32_t>(q.out_features()), static_cast<std::uint32_t>(q.groups_per_row())},
                  q.scales().data(), q.scales().size() * 4});
}

void push_f32(std::vector<PendingTensor>& ts, const std::string& name, const Tensor& t) {
    ts.push_back({name, DType::f32, dims32(t.dims()), t.data().data(), t.size() * 4});
}

template <class Fn>
void visit_packed(const PackedModel& m, Fn&& fn_lin, auto&& fn_f32) {
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const auto& b = m.blocks[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        fn_f32(p + "attention_norm", b.attn_norm);
        fn_lin(p + "attention.wq", b.wq);
        fn_lin(p + "attention.wk", b.wk);
        fn_lin(p + "attention.wv", b.wv);
        fn_lin(p + "attention.wo", b.wo);
        fn_f32(p + "ffn_norm", b.mlp_norm);
        fn_lin(p + "feed_forward.w_gate", b.w_gate);
        fn_lin(p + "feed_forward.w_up", b.w_up);
        fn_lin(p + "feed_forward.w_down", b.w_down);
    }
}

std::vector<std::uint8_t> slice(std::span<const std::uint8_t> bytes, const DirectoryEntry& e) {
    return {bytes.begin() + static_cast<std::ptrdiff_t>(e.offset),
            bytes.begin() + static_cast<std::ptrdiff_t>(e.offset + e.byte_length)};
}

std::vector<float> slice_f32(std::span<const std::uint8_t> bytes, const DirectoryEntry& e) {
    std::vector<float> out(e.byte_length / 4);
    std::memcpy(out.data(), bytes.data() + e.offset, out.size() * 4);
    return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_packed(const PackedModel& m) {
    m.config.validate();
    m.spec.validate();
    std::vector<PendingTensor> ts;
    const auto& e = m.embedding;
    ts.push_back({"tok_embeddings", DType::i4_packed,
                  {static_cast<std::uint32_t>(e.vocab()), static_cast<std::uint32_t>(e.dim())}, e.packed().data(),
                  e.packed().size()});
    ts.push_back({"tok_embeddings.scales", DType::f32,
                  {static_cast<std::uint32_t>(e.vocab()), static_cast<std::uint32_t>(e.groups_per_row())},
                  e.scales().data(), e.scales().size() * 4});
    visit_packed(
        m, [&](const std::string& n, const QuantizedLinear& q) { push_linear(ts, n, q); },
        [&](const std::string& n, const Tensor& t) { push_f32(ts, n, t); });
    push_f32(ts, "norm", m.final_norm);
    push_linear(ts, "output", m.unembedding);
    if (!m.output_ids.empty()) {
        ts.push_back({"output_ids", DType::i32, {static_cast<std::uint32_t>(m.output_ids.size())},
                      m.output_ids.data(), m.output_ids.size() * 4});
    }
    return write_container("LGPQ", kPackedVersion, {to_json_string(m.config), to_json_string(m.spec)}, ts);
}

PackedModel deserialize_packed(std::span<const std::uint8_t> bytes) {
    Container c = read_container(bytes, "LGPQ", kPackedVersion, 2);
    PackedModel m;
    m.config = parse_config(c.blobs[0]);
    m.spec = quant_spec_from_json(c.blobs[1]);
    const ModelConfig& cfg = m.config;
    std::size_t i = 0;
    auto next = [&]() -> const DirectoryEntry& {
        if (i >= c.entries.size()) throw FormatError("packed model is missing tensors", bytes.size());
        return c.entries[i++];
    };
    auto expect = [&](const DirectoryEntry& e, const std::string& name, DType t, std::uint32_t rows,
                      std::uint32_t cols) {
        if (e.name != name || e.dtype != t || e.dims != std::vector<std::uint32_t>{rows, cols}) {
            throw FormatError("unexpected entry '" + e.name + "' (wanted '" + name + "')", e.offset);
        }
    };
    try {
        {
            const auto& pe = next();
            const auto& se = next();
            expect(pe, "tok_embeddings", DType::i4_packed, static_cast<std::uint32_t>(cfg.vocab_size),
                   static_cast<std::uint32_t>(cfg.dim));
            expect(se, "tok_embeddings.scales", DType::f32, se.dims.size() == 2 ? se.dims[0] : 0,
                   se.dims.size() == 2 ? se.dims[1] : 0);
            m.embedding = QuantizedEmbedding::from_parts(cfg.vocab_size, cfg.dim, m.spec.embedding_group,
                                                         slice(bytes, pe), slice_f32(bytes, se));
        }
        auto read_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
            const auto& pe = next();
            const auto& se = next();
            expect(pe, name, DType::i4_packed, static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in));
            if (se.name != name + ".scales" || se.dtype != DType::f32) {
                throw FormatError("missing scales for '" + name + "'", se.offset);
            }
            return QuantizedLinear::from_parts(out, in, m.spec.linear_group, slice(bytes, pe), slice_f32(bytes, se));
        };
        auto read_norm = [&](const std::string& name) {
            const auto& e = next();
            return read_f32(bytes, e, name, {cfg.dim});
        };
        const std::size_t d = cfg.dim, kv = cfg.kv_dim(), k = cfg.mlp_hidden;
        m.blocks.resize(cfg.n_layers);
        for (std::size_t b = 0; b < cfg.n_layers; ++b) {
            const std::string p = "layers." + std::to_string(b) + ".";
            auto& B = m.blocks[b];
            B.attn_norm = read_norm(p + "attention_norm");
            B.wq = read_linear(p + "attention.wq", d, d);
            B.wk = read_linear(p + "attention.wk", d, kv);
            B.wv = read_linear(p + "attention.wv", d, kv);
            B.wo = read_linear(p + "attention.wo", d, d);
            B.mlp_norm = read_norm(p + "ffn_norm");
            B.w_gate = read_linear(p + "feed_forward.w_gate", d, k);
            B.w_up = read_linear(p + "feed_forward.w_up", d, k);
            B.w_down = read_linear(p + "feed_forward.w_down", k, d);
        }
        m.final_norm = read_norm("norm");
        std::size_t width = cfg.vocab_size;
        if (c.entries.size() >= 2 && c.entries.back().name == "output_ids") {
            m.output_ids = read_i32(bytes, c.entries.back(), "output_ids");
            width = m.output_ids.size();
        }
        m.unembedding = read_linear("output", d, width);
        if (!m.output_ids.empty()) ++i;
        if (i != c.entries.size()) throw FormatError("unexpected extra tensors", c.entries[i].offset);
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(std::string("inconsistent packed model: ") + e.what(), 0);
    }
    return m;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'", 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
    auto b = read_file(path);
    return {b.begin(), b.end()};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w, const ModelConfig& c) {
    write_file(path, serialize_checkpoint(w, c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

void save_packed(const std::filesystem::path& path, const PackedModel& m) { write_file(path, serialize_packed(m)); }

PackedModel load_packed(const std::filesystem::path& path) { return deserialize_packed(read_file(path)); }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

}  // namespace lgc
