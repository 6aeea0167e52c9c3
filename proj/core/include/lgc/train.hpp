#pragma once

// Masked next-token finetuning, QAT with fake-quantized linears and
// activations, and logit distillation from a teacher.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lgc/autodiff.hpp"
#include "lgc/model.hpp"

namespace lgc {

struct TrainExample {
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> mask;  // 1 where the token is a target output
};

/// Positions t whose logits predict a target token (mask[t + 1] == 1).
std::vector<std::size_t> loss_rows(const TrainExample& ex);

struct LossValue {
    double value = 0.0;
    bool empty_mask = false;  // no target position; value is 0
};

/// Mean over t with mask[t+1] = 1 of CE(logits[t], tokens[t+1]). When the
/// logits cover a pruned vocabulary, `output_ids` maps columns to token ids.
LossValue masked_ce_loss(const Tensor& logits, const TrainExample& ex, std::span<const std::int32_t> output_ids = {});

/// Mean over rows with row_mask = 1 of -sum_v softmax(y_t)[v] log softmax(y_s)[v].
LossValue distill_loss(const Tensor& y_s, const Tensor& y_t, std::span<const std::uint8_t> row_mask);

enum class Objective { ce, distill, qat_ce, qat_distill };
std::string to_string(Objective o);
Objective parse_objective(const std::string& s);
inline bool uses_teacher(Objective o) { return o == Objective::distill || o == Objective::qat_distill; }
inline bool uses_qat(Objective o) { return o == Objective::qat_ce || o == Objective::qat_distill; }

struct TrainHyper {
    std::size_t steps = 200;
    std::size_t batch_size = 16;
    double lr = 3e-4;
    double min_lr = 0.0;  // cosine floor
    std::size_t warmup = 0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 1.0;       // global L2 norm; 0 disables
    double distill_weight = 1.0;  // lambda: lambda * distill + (1 - lambda) * CE
    std::size_t linear_group = 256;
    std::size_t log_every = 1;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(std::size_t step) const;
};

class Adam {
public:
    Adam(double beta1, double beta2, double eps, double weight_decay)
        : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    /// One update of `param` given `grad`; slot identifies the moment buffers.
    void update(std::size_t slot, std::span<float> param, std::span<const float> grad, double lr);
    /// Advances the shared step counter; call once before the updates of a step.
    void next_step() noexcept { ++t_; }
    std::size_t step_count() const noexcept { return t_; }

private:
    double b1_, b2_, eps_, wd_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Teacher soft targets for one example: [loss rows, student output width].
struct SoftTargets {
    std::vector<float> probs;
    std::size_t rows = 0, width = 0;
};

/// Teacher distribution at the example's loss rows. When the student's
/// unembedding is pruned, teacher probabilities are renormalized over the
/// student's output ids.
SoftTargets teacher_targets(const ModelWeights& teacher, const ModelConfig& teacher_config, const TrainExample& ex,
                            std::span<const std::int32_t> student_output_ids, std::size_t student_vocab);

/// Differentiable loss of the model over a batch. Parameters are given in
/// checkpoint order (see for_each_tensor).
struct LossSetup {
    Objective objective = Objective::ce;
    double distill_weight = 1.0;
    std::size_t linear_group = 256;
};

template <class T>
struct BatchLoss {
    T loss{};  // mean over all loss rows of the batch
    std::size_t rows = 0;
    std::vector<std::vector<T>> grads;  // same layout as the parameters
};

template <class T>
BatchLoss<T> batch_loss(const ModelConfig& config, std::span<const std::int32_t> output_ids,
                        const std::vector<std::vector<T>>& params, const std::vector<const TrainExample*>& batch,
                        const std::vector<const SoftTargets*>& targets, const LossSetup& setup, bool want_grads);

/// Parameters in checkpoint order, converted to T.
template <class T>
std::vector<std::vector<T>> flatten_params(const ModelWeights& w);
void unflatten_params(ModelWeights& w, const std::vector<std::vector<float>>& params);

struct LossPoint {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ModelWeights weights;
    std::vector<LossPoint> curve;
    double final_loss = 0.0;
    std::size_t steps = 0;
};

struct TeacherRef {
    const ModelWeights* weights = nullptr;
    const ModelConfig* config = nullptr;
};

using CheckpointHook = std::function<void(std::size_t step, const ModelWeights&)>;

/// Deterministic given hyper.seed. Throws DivergenceError on a non-finite loss.
TrainResult train_loop(const ModelWeights& weights, const ModelConfig& config, const std::vector<TrainExample>& data,
                       Objective objective, const TeacherRef* teacher, const TrainHyper& hyper,
                       const CheckpointHook& checkpoint = {}, std::size_t checkpoint_every = 0);

std::string loss_csv(const std::vector<LossPoint>& curve);

}  // namespace lgc
