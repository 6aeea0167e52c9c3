#include "lgc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lgc/error.hpp"
#include "lgc/runtime.hpp"

namespace lgc {

std::vector<std::size_t> loss_rows(const TrainExample& ex) {
    if (ex.mask.size() != ex.tokens.size()) throw ShapeError("mask length != sequence length");
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t + 1 < ex.tokens.size(); ++t) {
        if (ex.mask[t + 1]) rows.push_back(t);
    }
    return rows;
}

namespace {

std::size_t column_of(std::int32_t token, std::span<const std::int32_t> output_ids, std::size_t width) {
    if (output_ids.empty()) {
        if (token < 0 || static_cast<std::size_t>(token) >= width) throw InputError("target token outside logits");
        return static_cast<std::size_t>(token);
    }
    auto it = std::lower_bound(output_ids.begin(), output_ids.end(), token);
    if (it == output_ids.end() || *it != token) {
        throw InputError("target token " + std::to_string(token) + " is not among the model's output ids");
    }
    return static_cast<std::size_t>(it - output_ids.begin());
}

}  // namespace

LossValue masked_ce_loss(const Tensor& logits, const TrainExample& ex, std::span<const std::int32_t> output_ids) {
    if (logits.rank() != 2 || logits.rows() != ex.tokens.size()) throw ShapeError("logits must be [seq, vocab]");
    auto rows = loss_rows(ex);
    if (rows.empty()) return {0.0, true};
    double total = 0.0;
    for (auto t : rows) {
        total += cross_entropy_from_logits(logits.row(t), column_of(ex.tokens[t + 1], output_ids, logits.cols()));
    }
    return {total / static_cast<double>(rows.size()), false};
}

LossValue distill_loss(const Tensor& y_s, const Tensor& y_t, std::span<const std::uint8_t> row_mask) {
    if (y_s.dims() != y_t.dims() || y_s.rank() != 2) throw ShapeError("student and teacher logits differ in shape");
    if (row_mask.size() != y_s.rows()) throw ShapeError("row mask length != logit rows");
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < y_s.rows(); ++r) {
        if (!row_mask[r]) continue;
        auto p = softmax64(y_t.row(r));
        const double lse = log_sum_exp(y_s.row(r));
        for (std::size_t v = 0; v < p.size(); ++v) total -= p[v] * (static_cast<double>(y_s.at(r, v)) - lse);
        ++n;
    }
    if (n == 0) return {0.0, true};
    return {total / static_cast<double>(n), false};
}

std::string to_string(Objective o) {
    switch (o) {
        case Objective::ce: return "ce";
        case Objective::distill: return "distill";
        case Objective::qat_ce: return "qat-ce";
        case Objective::qat_distill: return "qat-distill";
    }
    return "?";
}

Objective parse_objective(const std::string& s) {
    if (s == "ce") return Objective::ce;
    if (s == "distill") return Objective::distill;
    if (s == "qat-ce") return Objective::qat_ce;
    if (s == "qat-distill") return Objective::qat_distill;
    throw ConfigError("objective must be ce, distill, qat-ce or qat-distill, got '" + s + "'");
}

void TrainHyper::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr >= 0.0) || !(min_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas outside [0, 1)");
    if (!(distill_weight >= 0.0 && distill_weight <= 1.0)) throw ConfigError("distill_weight outside [0, 1]");
    if (linear_group == 0 || linear_group % 2) throw ConfigError("linear_group must be even and positive");
    if (log_every == 0) throw ConfigError("log_every must be positive");
}

double TrainHyper::lr_at(std::size_t step) const {
    if (step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double span = static_cast<double>(std::max<std::size_t>(steps - std::min(steps, warmup), 1));
    const double progress = static_cast<double>(step - warmup) / span;
    return min_lr + (lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Adam::update(std::size_t slot, std::span<float> param, std::span<const float> grad, double lr) {
    if (param.size() != grad.size()) throw ShapeError("gradient shape != parameter shape");
    if (t_ == 0) throw ContractError("Adam::next_step must precede update");
    if (slot >= m_.size()) {
        m_.resize(slot + 1);
        v_.resize(slot + 1);
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    if (m.empty()) {
        m.assign(param.size(), 0.0);
        v.assign(param.size(), 0.0);
    }
    if (m.size() != param.size()) throw ShapeError("parameter changed shape between steps");
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * param[i];
        param[i] = static_cast<float>(param[i] - lr * step);
    }
}

SoftTargets teacher_targets(const ModelWeights& teacher, const ModelConfig& tc, const TrainExample& ex,
                            std::span<const std::int32_t> student_ids, std::size_t student_vocab) {
    auto rows = loss_rows(ex);
    SoftTargets st;
    st.rows = rows.size();
    if (rows.empty()) return st;
    if (tc.vocab_size < student_vocab) throw ContractError("teacher vocabulary smaller than the student's");
    Tensor logits = forward(teacher, tc, ex.tokens).logits;
    std::vector<std::size_t> cols;
    if (student_ids.empty()) {
        if (teacher.unembedding_pruned() || logits.cols() != student_vocab) {
            throw ContractError("full-vocabulary student needs a full-vocabulary teacher of the same size");
        }
    } else {
        for (auto id : student_ids) cols.push_back(column_of(id, teacher.output_ids, logits.cols()));
    }
    st.width = cols.empty() ? logits.cols() : cols.size();
    st.probs.resize(st.rows * st.width);
    std::vector<float> sel(st.width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto row = logits.row(rows[i]);
        std::span<const float> src = row;
        if (!cols.empty()) {
            for (std::size_t j = 0; j < cols.size(); ++j) sel[j] = row[cols[j]];
            src = sel;
        }
        auto p = softmax64(src);
        for (std::size_t j = 0; j < st.width; ++j) st.probs[i * st.width + j] = static_cast<float>(p[j]);
    }
    return st;
}

template <class T>
std::vector<std::vector<T>> flatten_params(const ModelWeights& w) {
    std::vector<std::vector<T>> out;
    for_each_tensor(w, [&](const std::string&, const Tensor& t) { out.emplace_back(t.data().begin(), t.data().end()); });
    return out;
}

void unflatten_params(ModelWeights& w, const std::vector<std::vector<float>>& params) {
    std::size_t i = 0;
    for_each_tensor(w, [&](const std::string& name, Tensor& t) {
        if (i >= params.size() || params[i].size() != t.size()) throw ShapeError("parameter layout mismatch at " + name);
        std::copy(params[i].begin(), params[i].end(), t.storage().begin());
        ++i;
    });
    if (i != params.size()) throw ShapeError("parameter count mismatch");
}

template <class T>
BatchLoss<T> batch_loss(const ModelConfig& c, std::span<const std::int32_t> output_ids,
                        const std::vector<std::vector<T>>& params, const std::vector<const TrainExample*>& batch,
                        const std::vector<const SoftTargets*>& targets, const LossSetup& setup, bool want_grads) {
    const std::size_t L = c.n_layers, d = c.dim, kvd = c.kv_dim(), K = c.mlp_hidden;
    const std::size_t width = output_ids.empty() ? c.vocab_size : output_ids.size();
    if (params.size() != 3 + 9 * L) throw ShapeError("parameter list does not match the config");
    const bool distill = uses_teacher(setup.objective);
    const bool qat = uses_qat(setup.objective);
    if (distill && targets.size() != batch.size()) throw ContractError("distillation needs one target set per example");
    const double lambda = distill ? setup.distill_weight : 0.0;

    Tape<T> tape;
    std::vector<Var> leaf;
    auto add_leaf = [&](std::vector<std::size_t> dims) {
        const std::size_t i = leaf.size();
        if (params[i].size() != product(dims)) throw ShapeError("parameter " + std::to_string(i) + " has wrong size");
        leaf.push_back(tape.leaf(params[i], std::move(dims), want_grads));
    };
    add_leaf({c.vocab_size, d});
    for (std::size_t b = 0; b < L; ++b) {
        add_leaf({d});
        add_leaf({d, d});
        add_leaf({d, kvd});
        add_leaf({d, kvd});
        add_leaf({d, d});
        add_leaf({d});
        add_leaf({d, K});
        add_leaf({d, K});
        add_leaf({K, d});
    }
    add_leaf({d});
    add_leaf({d, width});

    // Linear weights as seen by the forward pass.
    std::vector<Var> lin(leaf);
    auto is_linear = [&](std::size_t i) {
        if (i == leaf.size() - 1) return true;
        if (i == 0 || i == leaf.size() - 2) return false;
        const std::size_t r = (i - 1) % 9;
        return r != 0 && r != 5;
    };
    if (qat) {
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            if (is_linear(i)) lin[i] = tape.fake_quant_weight(leaf[i], setup.linear_group, 0);
        }
    }
    auto act = [&](Var x) { return qat ? tape.fake_quant_activation(x) : x; };
    const T eps = static_cast<T>(c.norm_eps);

    BatchLoss<T> out;
    Var total{};
    bool have_total = false;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const TrainExample& ex = *batch[e];
        auto rows = loss_rows(ex);
        if (rows.empty()) continue;
        if (ex.tokens.size() > c.max_seq_len) throw InputError("example longer than max_seq_len");
        Var x = tape.embedding(leaf[0], ex.tokens);
        for (std::size_t b = 0; b < L; ++b) {
            const std::size_t o = 1 + 9 * b;
            Var h = act(tape.rmsnorm(x, leaf[o], eps));
            Var q = tape.rope(tape.matmul(h, lin[o + 1]), c.n_heads, c.head_dim(), c.rope_base);
            Var k = tape.rope(tape.matmul(h, lin[o + 2]), c.n_kv_heads, c.head_dim(), c.rope_base);
            Var v = tape.matmul(h, lin[o + 3]);
            Var a = tape.causal_attention(q, k, v, c.n_heads, c.n_kv_heads);
            x = tape.add(x, tape.matmul(act(a), lin[o + 4]));
            Var h2 = act(tape.rmsnorm(x, leaf[o + 5], eps));
            Var gate = tape.matmul(h2, lin[o + 6]);
            Var up = tape.matmul(h2, lin[o + 7]);
            Var m = tape.mul(tape.silu(gate), up);
            x = tape.add(x, tape.matmul(act(m), lin[o + 8]));
        }
        Var sel = tape.select_rows(x, rows);
        Var logits = tape.matmul(act(tape.rmsnorm(sel, leaf[leaf.size() - 2], eps)), lin.back());

        Var ex_loss{};
        bool have = false;
        if (lambda < 1.0) {
            std::vector<std::size_t> cols;
            for (auto t : rows) cols.push_back(column_of(ex.tokens[t + 1], output_ids, width));
            ex_loss = tape.cross_entropy(logits, cols);
            if (lambda > 0.0) ex_loss = tape.scale(ex_loss, static_cast<T>(1.0 - lambda));
            have = true;
        }
        if (lambda > 0.0) {
            const SoftTargets& st = *targets[e];
            if (st.rows != rows.size() || st.width != width) throw ShapeError("soft targets do not match the logits");
            std::vector<T> p(st.probs.begin(), st.probs.end());
            Var soft = tape.soft_cross_entropy(logits, p);
            if (lambda < 1.0) soft = tape.scale(soft, static_cast<T>(lambda));
            ex_loss = have ? tape.add(ex_loss, soft) : soft;
        }
        total = have_total ? tape.add(total, ex_loss) : ex_loss;
        have_total = true;
        out.rows += rows.size();
    }
    if (!have_total) return out;
    Var loss = tape.scale(total, static_cast<T>(1.0 / static_cast<double>(out.rows)));
    out.loss = tape.scalar(loss);
    if (want_grads) {
        tape.backward(loss);
        for (auto v : leaf) out.grads.push_back(tape.grad(v));
    }
    return out;
}

template std::vector<std::vector<float>> flatten_params<float>(const ModelWeights&);
template std::vector<std::vector<double>> flatten_params<double>(const ModelWeights&);
template BatchLoss<float> batch_loss<float>(const ModelConfig&, std::span<const std::int32_t>,
                                            const std::vector<std::vector<float>>&,
                                            const std::vector<const TrainExample*>&,
                                            const std::vector<const SoftTargets*>&, const LossSetup&, bool);
template BatchLoss<double> batch_loss<double>(const ModelConfig&, std::span<const std::int32_t>,
                                              const std::vector<std::vector<double>>&,
                                              const std::vector<const TrainExample*>&,
                                              const std::vector<const SoftTargets*>&, const LossSetup&, bool);

TrainResult train_loop(const ModelWeights& weights, const ModelConfig& config, const std::vector<TrainExample>& data,
                       Objective objective, const TeacherRef* teacher, const TrainHyper& hyper,
                       const CheckpointHook& checkpoint, std::size_t checkpoint_every) {
    config.validate();
    weights.validate(config);
    hyper.validate();
    if (data.empty()) throw EmptyDataError("no training examples");
    const bool distill = uses_teacher(objective);
    if (distill != (teacher != nullptr && teacher->weights != nullptr)) {
        throw ContractError("a teacher is required exactly when the objective distills");
    }

    std::vector<SoftTargets> targets;
    if (distill) {
        teacher->config->validate();
        teacher->weights->validate(*teacher->config);
        targets.reserve(data.size());
        for (const auto& ex : data) {
            targets.push_back(teacher_targets(*teacher->weights, *teacher->config, ex, weights.output_ids,
                                              config.vocab_size));
        }
    }

    TrainResult res;
    res.weights = weights;
    auto params = flatten_params<float>(weights);
    Adam adam(hyper.beta1, hyper.beta2, hyper.adam_eps, hyper.weight_decay);
    LossSetup setup{objective, hyper.distill_weight, hyper.linear_group};

    Prng rng(hyper.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    std::size_t cursor = 0;

    for (std::size_t step = 0; step < hyper.steps; ++step) {
        std::vector<const TrainExample*> batch;
        std::vector<const SoftTargets*> soft;
        for (std::size_t i = 0; i < hyper.batch_size; ++i) {
            if (cursor == order.size()) {
                shuffle(order, rng);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            batch.push_back(&data[idx]);
            if (distill) soft.push_back(&targets[idx]);
        }
        BatchLoss<float> bl = batch_loss<float>(config, weights.output_ids, params, batch, soft, setup, true);
        if (!std::isfinite(bl.loss)) {
            throw DivergenceError("loss became non-finite at step " + std::to_string(step));
        }
        const double lr = hyper.lr_at(step);
        if (bl.rows > 0) {
            double scale = 1.0;
            if (hyper.grad_clip > 0.0) {
                double ss = 0.0;
                for (const auto& g : bl.grads)
                    for (float x : g) ss += static_cast<double>(x) * x;
                const double norm = std::sqrt(ss);
                if (!std::isfinite(norm)) throw DivergenceError("gradient became non-finite at step " + std::to_string(step));
                if (norm > hyper.grad_clip) scale = hyper.grad_clip / norm;
            }
            adam.next_step();
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (scale != 1.0) {
                    for (auto& g : bl.grads[i]) g = static_cast<float>(g * scale);
                }
                adam.update(i, params[i], bl.grads[i], lr);
            }
        }
        res.final_loss = bl.loss;
        res.steps = step + 1;
        if (step % hyper.log_every == 0 || step + 1 == hyper.steps) res.curve.push_back({step, bl.loss, lr});
        if (checkpoint && checkpoint_every > 0 && (step + 1) % checkpoint_every == 0) {
            unflatten_params(res.weights, params);
            checkpoint(step + 1, res.weights);
        }
    }
    unflatten_params(res.weights, params);
    return res;
}

std::string loss_csv(const std::vector<LossPoint>& curve) {
    std::ostringstream os;
    os.precision(9);
    os << "step,loss,lr\n";
    for (const auto& p : curve) os << p.step << ',' << p.loss << ',' << p.lr << '\n';
    return os.str();
}

}  // namespace lgc
