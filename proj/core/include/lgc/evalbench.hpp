#pragma once

// Synthetic moderation task, F1/FPR scoring and decode throughput.
//
// Sequences look like
//   BOS p_1 ... p_n PROMPT_END safe EOT
//   BOS p_1 ... p_n PROMPT_END unsafe \n S c_1 [, S c_2] EOT
// where prompts of the unsafe kind contain trigger tokens of the listed
// categories and safe prompts contain none.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lgc/runtime.hpp"

namespace lgc {

namespace synth {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kPromptEnd = 2;
inline constexpr std::int32_t kSafe = 3;
inline constexpr std::int32_t kUnsafe = 4;
inline constexpr std::int32_t kCategoryBase = 4;  // category c (1-based) is kCategoryBase + c
inline constexpr std::int32_t kNewline = 19;
inline constexpr std::int32_t kS = 20;
inline constexpr std::int32_t kComma = 21;
inline constexpr std::int32_t kEot = 22;
inline constexpr std::int32_t kContentBase = 32;
inline constexpr int kCategories = 14;
}  // namespace synth

struct SynthTaskConfig {
    std::size_t vocab_size = 512;
    std::size_t triggers_per_category = 8;
    std::size_t min_prompt = 6;
    std::size_t max_prompt = 12;
    double two_category_rate = 0.25;

    void validate() const;
};

struct SynthExample {
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> mask;  // 1 on response tokens
    std::size_t prompt_len = 0;      // BOS .. PROMPT_END inclusive
    bool unsafe = false;
    std::vector<int> categories;     // ascending, 1-based

    std::vector<std::int32_t> prompt() const {
        return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(prompt_len)};
    }
};

class SynthTask {
public:
    explicit SynthTask(SynthTaskConfig config);

    const SynthTaskConfig& config() const noexcept { return config_; }
    /// The 20 ids a moderation answer can ever use.
    std::vector<std::int32_t> keep_list() const;
    std::int32_t trigger(int category, std::size_t j) const;
    bool is_trigger(std::int32_t id) const;

    /// n examples, labels balanced within one, deterministic per seed.
    std::vector<SynthExample> make_dataset(std::size_t n, std::uint64_t seed) const;
    /// One fresh random example.
    SynthExample sample(bool unsafe, Prng& rng) const;

private:
    SynthTaskConfig config_;
    std::vector<std::int32_t> neutral_;
};

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp, fp += o.fp, tn += o.tn, fn += o.fn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Metric {
    double value = 0.0;
    bool undefined = false;  // a denominator was zero; value is 0
};

Metric precision(const ConfusionCounts& c);
Metric recall(const ConfusionCounts& c);
Metric f1(const ConfusionCounts& c);
Metric fpr(const ConfusionCounts& c);

struct ParsedAnswer {
    bool unsafe = true;
    bool malformed = false;
    std::vector<int> categories;
};

/// Parses a generated answer. Anything other than "safe EOT" or a well-formed
/// unsafe answer is flagged malformed and treated as unsafe.
ParsedAnswer parse_answer(const std::vector<std::int32_t>& generated);

struct CategoryStats {
    std::uint64_t support = 0;   // unsafe examples carrying the category
    std::uint64_t detected = 0;  // of those, predicted unsafe
    std::uint64_t named = 0;     // of those, the category appears in the answer
};

struct ScoreReport {
    ConfusionCounts counts;
    Metric f1;
    Metric fpr;
    std::uint64_t malformed = 0;
    std::map<int, CategoryStats> per_category;
    std::vector<std::vector<std::int32_t>> generations;

    std::string to_json() const;
};

inline constexpr std::size_t kMaxAnswerTokens = 8;

ScoreReport score_predictions(const std::vector<SynthExample>& data,
                              const std::vector<std::vector<std::int32_t>>& generations);
ScoreReport classify_and_score(const DecoderView& view, const std::vector<SynthExample>& data);

struct BenchResult {
    double tokens_per_second = 0.0;  // decode phase
    double ttft_seconds = 0.0;       // prefill plus first token
    double decode_seconds = 0.0;
    std::size_t prompt_len = 0, gen_len = 0, reps = 0;
    bool deterministic = true;       // identical tokens on every rep
    std::vector<std::int32_t> tokens;

    std::string to_json() const;
};

/// Median over `reps` (>= 3) greedy decodes of a fixed prompt.
BenchResult throughput_bench(const DecoderView& view, std::size_t prompt_len, std::size_t gen_len,
                             std::size_t reps, std::uint64_t seed = 0);

}  // namespace lgc
