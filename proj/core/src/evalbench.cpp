#include "lgc/evalbench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <json.hpp>
#include <thread>

#include "lgc/error.hpp"

namespace lgc {

using nlohmann::json;

void SynthTaskConfig::validate() const {
    const std::size_t triggers = synth::kCategories * triggers_per_category;
    if (triggers_per_category == 0) throw ConfigError("triggers_per_category must be positive");
    if (vocab_size < synth::kContentBase + triggers + 16) {
        throw ConfigError("vocab_size " + std::to_string(vocab_size) + " too small for the synthetic task");
    }
    if (min_prompt < 2 || max_prompt < min_prompt) throw ConfigError("invalid prompt length range");
    if (!(two_category_rate >= 0.0 && two_category_rate <= 1.0)) throw ConfigError("two_category_rate outside [0, 1]");
}

SynthTask::SynthTask(SynthTaskConfig config) : config_(config) {
    config_.validate();
    const auto first = static_cast<std::int32_t>(synth::kContentBase + synth::kCategories * config_.triggers_per_category);
    for (auto id = first; id < static_cast<std::int32_t>(config_.vocab_size); ++id) neutral_.push_back(id);
}

std::vector<std::int32_t> SynthTask::keep_list() const {
    std::vector<std::int32_t> ids;
    for (std::int32_t id = synth::kSafe; id <= synth::kEot; ++id) ids.push_back(id);
    return ids;
}

std::int32_t SynthTask::trigger(int category, std::size_t j) const {
    return static_cast<std::int32_t>(synth::kContentBase +
                                     static_cast<std::size_t>(category - 1) * config_.triggers_per_category + j);
}

bool SynthTask::is_trigger(std::int32_t id) const {
    return id >= synth::kContentBase &&
           id < static_cast<std::int32_t>(synth::kContentBase + synth::kCategories * config_.triggers_per_category);
}

SynthExample SynthTask::sample(bool unsafe, Prng& rng) const {
    const std::size_t len =
        config_.min_prompt + rng.uniform_index(config_.max_prompt - config_.min_prompt + 1);
    std::vector<std::int32_t> prompt(len);
    for (auto& t : prompt) t = neutral_[rng.uniform_index(neutral_.size())];

    SynthExample ex;
    ex.unsafe = unsafe;
    if (unsafe) {
        const std::size_t n_cat = rng.uniform() < config_.two_category_rate ? 2 : 1;
        while (ex.categories.size() < n_cat) {
            int c = 1 + static_cast<int>(rng.uniform_index(synth::kCategories));
            if (std::find(ex.categories.begin(), ex.categories.end(), c) == ex.categories.end()) {
                ex.categories.push_back(c);
            }
        }
        std::sort(ex.categories.begin(), ex.categories.end());
        std::vector<std::size_t> slots(len);
        for (std::size_t i = 0; i < len; ++i) slots[i] = i;
        shuffle(slots, rng);
        for (std::size_t i = 0; i < n_cat; ++i) {
            prompt[slots[i]] = trigger(ex.categories[i], rng.uniform_index(config_.triggers_per_category));
        }
    }

    ex.tokens.push_back(synth::kBos);
    ex.tokens.insert(ex.tokens.end(), prompt.begin(), prompt.end());
    ex.tokens.push_back(synth::kPromptEnd);
    ex.prompt_len = ex.tokens.size();
    if (!unsafe) {
        ex.tokens.push_back(synth::kSafe);
    } else {
        ex.tokens.push_back(synth::kUnsafe);
        ex.tokens.push_back(synth::kNewline);
        for (std::size_t i = 0; i < ex.categories.size(); ++i) {
            if (i > 0) ex.tokens.push_back(synth::kComma);
            ex.tokens.push_back(synth::kS);
            ex.tokens.push_back(synth::kCategoryBase + ex.categories[i]);
        }
    }
    ex.tokens.push_back(synth::kEot);
    ex.mask.assign(ex.tokens.size(), 0);
    std::fill(ex.mask.begin() + static_cast<std::ptrdiff_t>(ex.prompt_len), ex.mask.end(), 1);
    return ex;
}

std::vector<SynthExample> SynthTask::make_dataset(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw ContractError("make_synth_dataset needs n >= 1");
    Prng rng(seed);
    std::vector<std::uint8_t> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n / 2), 1);
    shuffle(labels, rng);
    std::vector<SynthExample> out;
    out.reserve(n);
    for (auto l : labels) out.push_back(sample(l != 0, rng));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

Metric ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return {0.0, true};
    return {static_cast<double>(num) / static_cast<double>(den), false};
}

void require_nonempty(const ConfusionCounts& c) {
    if (c.total() == 0) throw EmptyDataError("cannot score an empty evaluation");
}

}  // namespace

Metric precision(const ConfusionCounts& c) {
    require_nonempty(c);
    return ratio(c.tp, c.tp + c.fp);
}

Metric recall(const ConfusionCounts& c) {
    require_nonempty(c);
    return ratio(c.tp, c.tp + c.fn);
}

Metric f1(const ConfusionCounts& c) {
    require_nonempty(c);
    // 2PR / (P + R) == 2tp / (2tp + fp + fn); the integer form avoids rounding.
    if (c.tp == 0) return {0.0, true};
    return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

Metric fpr(const ConfusionCounts& c) {
    require_nonempty(c);
    return ratio(c.fp, c.fp + c.tn);
}

ParsedAnswer parse_answer(const std::vector<std::int32_t>& g) {
    ParsedAnswer a;
    if (!g.empty() && g[0] == synth::kSafe) {
        a.malformed = !(g.size() == 2 && g[1] == synth::kEot);
        a.unsafe = a.malformed;
        return a;
    }
    a.unsafe = true;
    if (g.empty() || g[0] != synth::kUnsafe) {
        a.malformed = true;
        return a;
    }
    // unsafe \n S c (, S c)* EOT
    std::size_t i = 1;
    auto expect = [&](std::int32_t id) {
        if (i < g.size() && g[i] == id) {
            ++i;
            return true;
        }
        return false;
    };
    auto category = [&]() {
        if (i < g.size() && g[i] > synth::kCategoryBase && g[i] <= synth::kCategoryBase + synth::kCategories) {
            a.categories.push_back(g[i] - synth::kCategoryBase);
            ++i;
            return true;
        }
        return false;
    };
    bool ok = expect(synth::kNewline) && expect(synth::kS) && category();
    while (ok && i < g.size() && g[i] == synth::kComma) {
        ++i;
        ok = expect(synth::kS) && category();
    }
    ok = ok && expect(synth::kEot) && i == g.size();
    a.malformed = !ok;
    return a;
}

ScoreReport score_predictions(const std::vector<SynthExample>& data,
                              const std::vector<std::vector<std::int32_t>>& generations) {
    if (data.size() != generations.size()) throw ShapeError("one generation per example required");
    ScoreReport r;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        ParsedAnswer a = parse_answer(generations[i]);
        if (a.malformed) ++r.malformed;
        if (ex.unsafe) {
            (a.unsafe ? r.counts.tp : r.counts.fn) += 1;
            for (int c : ex.categories) {
                auto& s = r.per_category[c];
                ++s.support;
                if (a.unsafe) ++s.detected;
                if (std::find(a.categories.begin(), a.categories.end(), c) != a.categories.end()) ++s.named;
            }
        } else {
            (a.unsafe ? r.counts.fp : r.counts.tn) += 1;
        }
    }
    r.f1 = f1(r.counts);
    r.fpr = fpr(r.counts);
    r.generations = generations;
    return r;
}

ScoreReport classify_and_score(const DecoderView& view, const std::vector<SynthExample>& data) {
    std::vector<std::vector<std::int32_t>> gens;
    gens.reserve(data.size());
    for (const auto& ex : data) {
        auto prompt = ex.prompt();
        std::size_t room = view.config.max_seq_len - std::min(view.config.max_seq_len, prompt.size());
        gens.push_back(greedy_generate(view, prompt, std::min(kMaxAnswerTokens, room), synth::kEot));
    }
    return score_predictions(data, gens);
}

std::string ScoreReport::to_json() const {
    json pc = json::object();
    for (const auto& [c, s] : per_category) {
        pc["S" + std::to_string(c)] = {{"support", s.support}, {"detected", s.detected}, {"named", s.named}};
    }
    json j = {{"f1", f1.value},
              {"f1_undefined", f1.undefined},
              {"fpr", fpr.value},
              {"fpr_undefined", fpr.undefined},
              {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}}},
              {"malformed", malformed},
              {"per_category", pc}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult throughput_bench(const DecoderView& view, std::size_t prompt_len, std::size_t gen_len,
                             std::size_t reps, std::uint64_t seed) {
    if (reps < 3) throw ContractError("throughput_bench needs reps >= 3");
    if (prompt_len == 0) throw ContractError("throughput_bench needs a non-empty prompt");
    if (prompt_len + gen_len > view.config.max_seq_len) throw ContractError("prompt_len + gen_len exceeds max_seq_len");

    Prng rng(seed);
    std::vector<std::int32_t> prompt(prompt_len);
    prompt[0] = synth::kBos;
    for (std::size_t i = 1; i < prompt_len; ++i) {
        prompt[i] = static_cast<std::int32_t>(rng.uniform_index(view.config.vocab_size));
    }

    using clock = std::chrono::steady_clock;
    BenchResult res;
    res.prompt_len = prompt_len;
    res.gen_len = gen_len;
    res.reps = reps;
    std::vector<double> ttft, decode;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        std::vector<std::int32_t> out;
        DecodeSession session(view);
        auto t0 = clock::now();
        Tensor logits = session.append(prompt, LogitRows::last);
        std::int32_t next = view.vocab_id(argmax(logits.row(0)));
        auto t1 = clock::now();
        if (gen_len > 0) out.push_back(next);
        for (std::size_t i = 1; i < gen_len; ++i) {
            const std::int32_t in[1] = {next};
            logits = session.append(in, LogitRows::last);
            next = view.vocab_id(argmax(logits.row(0)));
            out.push_back(next);
        }
        auto t2 = clock::now();
        ttft.push_back(std::chrono::duration<double>(t1 - t0).count());
        decode.push_back(std::chrono::duration<double>(t2 - t1).count());
        if (rep == 0) {
            res.tokens = out;
        } else if (out != res.tokens) {
            res.deterministic = false;
        }
    }
    res.ttft_seconds = median(ttft);
    res.decode_seconds = median(decode);
    if (gen_len > 1 && res.decode_seconds > 0.0) {
        res.tokens_per_second = static_cast<double>(gen_len - 1) / res.decode_seconds;
    }
    return res;
}

std::string BenchResult::to_json() const {
    utsname u{};
    json host = {{"hardware_threads", std::thread::hardware_concurrency()}, {"compiler", __VERSION__}};
    if (uname(&u) == 0) {
        host["system"] = u.sysname;
        host["release"] = u.release;
        host["machine"] = u.machine;
    }
    json j = {{"tokens_per_second", tokens_per_second},
              {"ttft_seconds", ttft_seconds},
              {"decode_seconds", decode_seconds},
              {"prompt_len", prompt_len},
              {"gen_len", gen_len},
              {"reps", reps},
              {"deterministic", deterministic},
              {"host", host}};
    return j.dump(2);
}

}  // namespace lgc
