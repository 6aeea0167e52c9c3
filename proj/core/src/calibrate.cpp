#include "lgc/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "lgc/error.hpp"

namespace lgc {

using nlohmann::json;

void CalibrationConfig::validate() const {
    if (batches == 0 || batch_size == 0 || seq_len < 2) throw ConfigError("calibration sizes must be positive");
}

CalibrationStream::CalibrationStream(std::vector<CalibrationBatch> batches) : batches_(std::move(batches)) {
    if (batches_.empty()) throw EmptyDataError("calibration stream has no batches");
    for (const auto& b : batches_) {
        if (b.empty()) throw EmptyDataError("calibration batch is empty");
        for (const auto& s : b) {
            if (s.tokens.empty() || s.tokens.size() != s.valid.size()) {
                throw ShapeError("calibration sequence needs one pad flag per token");
            }
        }
    }
}

CalibrationStream CalibrationStream::from_task(const SynthTask& task, const CalibrationConfig& config) {
    config.validate();
    Prng rng(config.seed);
    std::vector<CalibrationBatch> batches(config.batches);
    for (auto& batch : batches) {
        batch.resize(config.batch_size);
        for (auto& seq : batch) {
            seq.tokens.reserve(config.seq_len);
            while (true) {
                SynthExample ex = task.sample(rng.uniform() < 0.5, rng);
                if (seq.tokens.size() + ex.tokens.size() > config.seq_len) {
                    if (seq.tokens.empty()) ex.tokens.resize(config.seq_len);
                    else break;
                }
                seq.tokens.insert(seq.tokens.end(), ex.tokens.begin(), ex.tokens.end());
            }
            seq.valid.assign(seq.tokens.size(), 1);
            seq.tokens.resize(config.seq_len, synth::kPad);
            seq.valid.resize(config.seq_len, 0);
        }
    }
    return CalibrationStream(std::move(batches));
}

std::size_t CalibrationStream::valid_tokens() const {
    std::size_t n = 0;
    for (const auto& b : batches_)
        for (const auto& s : b) n += static_cast<std::size_t>(std::count(s.valid.begin(), s.valid.end(), 1));
    return n;
}

// ---------------------------------------------------------------------------

std::string ImportanceReport::to_json() const {
    json j = {{"block_scores", block_scores},
              {"mlp_scores", mlp_scores},
              {"sample_count", sample_count},
              {"degenerate_count", degenerate_count}};
    return j.dump(1);
}

ImportanceReport ImportanceReport::from_json(const std::string& text) {
    ImportanceReport r;
    try {
        json j = json::parse(text);
        r.block_scores = j.at("block_scores").get<std::vector<double>>();
        r.mlp_scores = j.at("mlp_scores").get<std::vector<std::vector<double>>>();
        r.sample_count = j.at("sample_count").get<std::uint64_t>();
        r.degenerate_count = j.value("degenerate_count", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw FormatError(std::string("importance report: ") + e.what(), 0);
    }
    if (r.sample_count == 0) throw FormatError("importance report has sample_count 0", 0);
    return r;
}

ImportanceAccumulator::ImportanceAccumulator(std::size_t n_blocks, std::size_t mlp_hidden)
    : cos_sum_(n_blocks, 0.0),
      cos_count_(n_blocks, 0),
      energy_sum_(n_blocks, std::vector<double>(mlp_hidden, 0.0)),
      energy_count_(n_blocks, 0) {}

void ImportanceAccumulator::add_block_io(std::size_t block, const Tensor& x_in, const Tensor& x_out,
                                         std::span<const std::uint8_t> valid) {
    if (block >= cos_sum_.size()) throw ShapeError("block index out of range");
    if (x_in.dims() != x_out.dims() || x_in.rank() != 2 || valid.size() != x_in.rows()) {
        throw ShapeError("block trace shapes disagree");
    }
    for (std::size_t t = 0; t < x_in.rows(); ++t) {
        if (!valid[t]) continue;
        CosineResult c = cosine_similarity(x_in.row(t), x_out.row(t));
        if (c.degenerate) ++degenerate_;
        cos_sum_[block] += c.value;
        ++cos_count_[block];
    }
}

void ImportanceAccumulator::add_mlp_hidden(std::size_t block, const Tensor& h, std::span<const std::uint8_t> valid) {
    if (block >= energy_sum_.size()) throw ShapeError("block index out of range");
    auto& sum = energy_sum_[block];
    if (h.rank() != 2 || h.cols() != sum.size() || valid.size() != h.rows()) {
        throw ShapeError("mlp trace shape disagrees with the accumulator");
    }
    for (std::size_t t = 0; t < h.rows(); ++t) {
        if (!valid[t]) continue;
        auto row = h.row(t);
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += static_cast<double>(row[k]) * row[k];
        ++energy_count_[block];
    }
}

void ImportanceAccumulator::merge(const ImportanceAccumulator& o) {
    if (o.cos_sum_.size() != cos_sum_.size() || o.energy_sum_.size() != energy_sum_.size()) {
        throw ShapeError("accumulator shapes disagree");
    }
    for (std::size_t b = 0; b < cos_sum_.size(); ++b) {
        cos_sum_[b] += o.cos_sum_[b];
        cos_count_[b] += o.cos_count_[b];
        if (o.energy_sum_[b].size() != energy_sum_[b].size()) throw ShapeError("accumulator widths disagree");
        for (std::size_t k = 0; k < energy_sum_[b].size(); ++k) energy_sum_[b][k] += o.energy_sum_[b][k];
        energy_count_[b] += o.energy_count_[b];
    }
    positions_ += o.positions_;
    degenerate_ += o.degenerate_;
}

ImportanceReport ImportanceAccumulator::report() const {
    if (positions_ == 0) throw EmptyDataError("no non-pad positions in the calibration stream");
    ImportanceReport r;
    r.sample_count = positions_;
    r.degenerate_count = degenerate_;
    r.block_scores.resize(cos_sum_.size());
    for (std::size_t b = 0; b < cos_sum_.size(); ++b) {
        r.block_scores[b] = cos_count_[b] ? cos_sum_[b] / static_cast<double>(cos_count_[b]) : 0.0;
    }
    r.mlp_scores.resize(energy_sum_.size());
    for (std::size_t b = 0; b < energy_sum_.size(); ++b) {
        r.mlp_scores[b].resize(energy_sum_[b].size());
        const double n = static_cast<double>(std::max<std::uint64_t>(energy_count_[b], 1));
        for (std::size_t k = 0; k < energy_sum_[b].size(); ++k) r.mlp_scores[b][k] = energy_sum_[b][k] / n;
    }
    return r;
}

void accumulate_batch(const ModelWeights& weights, const ModelConfig& config, const CalibrationBatch& batch,
                      ImportanceAccumulator& acc, bool blocks, bool mlp) {
    ForwardOptions opt;
    opt.capture_block_io = blocks;
    opt.capture_mlp_hidden = mlp;
    DecoderView view = make_view(weights, config);
    for (const auto& seq : batch) {
        const std::size_t valid = static_cast<std::size_t>(std::count(seq.valid.begin(), seq.valid.end(), 1));
        if (valid == 0) continue;
        ForwardTrace trace;
        DecodeSession session(view);
        session.append(seq.tokens, LogitRows::none, &trace, blocks, mlp);
        for (std::size_t b = 0; b < config.n_layers; ++b) {
            if (blocks) acc.add_block_io(b, trace.x_in[b], trace.x_out[b], seq.valid);
            if (mlp) acc.add_mlp_hidden(b, trace.mlp_hidden[b], seq.valid);
        }
        acc.add_positions(valid);
    }
}

namespace {

std::vector<ImportanceAccumulator> per_batch_sums(const ModelWeights& w, const ModelConfig& c,
                                                  const CalibrationStream& stream, bool blocks, bool mlp) {
    std::vector<ImportanceAccumulator> out;
    out.reserve(stream.n_batches());
    for (const auto& batch : stream.batches()) {
        out.emplace_back(c.n_layers, c.mlp_hidden);
        accumulate_batch(w, c, batch, out.back(), blocks, mlp);
    }
    return out;
}

ImportanceAccumulator pooled(const std::vector<ImportanceAccumulator>& parts, std::size_t lo, std::size_t hi) {
    ImportanceAccumulator acc = parts[lo];
    for (std::size_t i = lo + 1; i < hi; ++i) acc.merge(parts[i]);
    return acc;
}

ImportanceReport run(const ModelWeights& w, const ModelConfig& c, const CalibrationStream& s, bool blocks, bool mlp) {
    w.validate(c);
    auto parts = per_batch_sums(w, c, s, blocks, mlp);
    return pooled(parts, 0, parts.size()).report();
}

}  // namespace

ImportanceReport calibrate(const ModelWeights& weights, const ModelConfig& config, const CalibrationStream& stream) {
    return run(weights, config, stream, true, true);
}

std::vector<double> block_importance(const ModelWeights& weights, const ModelConfig& config,
                                     const CalibrationStream& stream) {
    return run(weights, config, stream, true, false).block_scores;
}

std::vector<std::vector<double>> mlp_importance(const ModelWeights& weights, const ModelConfig& config,
                                                const CalibrationStream& stream) {
    return run(weights, config, stream, false, true).mlp_scores;
}

ConvergenceReport estimate_convergence(const std::vector<ImportanceAccumulator>& parts, ImportanceMetric metric,
                                       std::size_t splits) {
    if (splits < 2) throw ContractError("estimate_convergence needs at least 2 splits");
    ConvergenceReport rep;
    rep.splits = splits;
    if (parts.size() < splits) {
        rep.undefined = true;
        return rep;
    }
    const ImportanceReport all = pooled(parts, 0, parts.size()).report();
    for (std::size_t s = 0; s < splits; ++s) {
        const std::size_t lo = s * parts.size() / splits, hi = (s + 1) * parts.size() / splits;
        const ImportanceReport part = pooled(parts, lo, hi).report();
        if (metric == ImportanceMetric::block) {
            for (std::size_t b = 0; b < all.block_scores.size(); ++b) {
                const double ref = std::abs(all.block_scores[b]);
                const double dev = std::abs(part.block_scores[b] - all.block_scores[b]) / std::max(ref, 1e-12);
                rep.max_relative_deviation = std::max(rep.max_relative_deviation, dev);
            }
        } else {
            for (std::size_t b = 0; b < all.mlp_scores.size(); ++b) {
                double num = 0.0, den = 0.0;
                for (std::size_t k = 0; k < all.mlp_scores[b].size(); ++k) {
                    const double d = part.mlp_scores[b][k] - all.mlp_scores[b][k];
                    num += d * d;
                    den += all.mlp_scores[b][k] * all.mlp_scores[b][k];
                }
                const double dev = den > 0.0 ? std::sqrt(num / den) : (num > 0.0 ? 1.0 : 0.0);
                rep.max_relative_deviation = std::max(rep.max_relative_deviation, dev);
            }
        }
    }
    return rep;
}

ConvergenceReport estimate_convergence(const ModelWeights& weights, const ModelConfig& config,
                                       const CalibrationStream& stream, ImportanceMetric metric, std::size_t splits) {
    weights.validate(config);
    if (splits < 2) throw ContractError("estimate_convergence needs at least 2 splits");
    auto parts = per_batch_sums(weights, config, stream, metric == ImportanceMetric::block,
                                metric == ImportanceMetric::mlp);
    return estimate_convergence(parts, metric, splits);
}

}  // namespace lgc
