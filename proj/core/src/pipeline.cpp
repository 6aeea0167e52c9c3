#include "lgc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <ostream>

#include "lgc/error.hpp"
#include "lgc/io.hpp"

namespace lgc {

using nlohmann::json;

namespace {

TrainHyper hyper_from_json(const json& j, const TrainHyper& d) {
    TrainHyper h = d;
    h.steps = j.value("steps", d.steps);
    h.batch_size = j.value("batch_size", d.batch_size);
    h.lr = j.value("lr", d.lr);
    h.min_lr = j.value("min_lr", d.min_lr);
    h.warmup = j.value("warmup", d.warmup);
    h.beta1 = j.value("beta1", d.beta1);
    h.beta2 = j.value("beta2", d.beta2);
    h.adam_eps = j.value("adam_eps", d.adam_eps);
    h.weight_decay = j.value("weight_decay", d.weight_decay);
    h.grad_clip = j.value("grad_clip", d.grad_clip);
    h.distill_weight = j.value("distill_weight", d.distill_weight);
    h.log_every = j.value("log_every", d.log_every);
    return h;
}

json hyper_to_json(const TrainHyper& h) {
    return {{"steps", h.steps},   {"batch_size", h.batch_size},     {"lr", h.lr},
            {"min_lr", h.min_lr}, {"warmup", h.warmup},             {"beta1", h.beta1},
            {"beta2", h.beta2},   {"adam_eps", h.adam_eps},         {"weight_decay", h.weight_decay},
            {"grad_clip", h.grad_clip}, {"distill_weight", h.distill_weight}, {"log_every", h.log_every}};
}

json config_json(const ModelConfig& c) { return json::parse(to_json_string(c)); }

}  // namespace

void PipelineConfig::validate_shapes() const {
    if (schema_version != kPipelineSchemaVersion) {
        throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
    }
    model.validate();
    if (n_layers_out == 0 || n_layers_out >= model.n_layers) {
        throw ConfigError("prune.n_layers_out must satisfy 0 < n_layers_out < model.n_layers");
    }
    if (mlp_hidden_out == 0 || mlp_hidden_out > model.mlp_hidden) {
        throw ConfigError("prune.mlp_hidden_out must satisfy 1 <= mlp_hidden_out <= model.mlp_hidden");
    }
    if (keep_tokens == 0 || keep_tokens > model.vocab_size) throw ConfigError("prune.keep_tokens out of range");
    quant.validate();
}

void PipelineConfig::validate() const {
    validate_shapes();
    teacher_model.validate();
    task.validate();
    calibration.validate();
    if (task.vocab_size != model.vocab_size || teacher_model.vocab_size != model.vocab_size) {
        throw ConfigError("task, model and teacher must share one vocabulary size");
    }
    if (task.max_prompt + 9 > model.max_seq_len || task.max_prompt + 9 > teacher_model.max_seq_len) {
        throw ConfigError("max_seq_len too small for the task's longest example");
    }
    if (calibration.seq_len > model.max_seq_len) throw ConfigError("calibration.seq_len exceeds model.max_seq_len");
    if (train_examples == 0 || eval_examples == 0) throw ConfigError("example counts must be positive");
    baseline_train.validate();
    teacher_train.validate();
    student_train.validate();
    if (quant.linear_group != student_train.linear_group) {
        throw ConfigError("quant.linear_group and the QAT group size must agree");
    }
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
    PipelineConfig c;
    try {
        json j = json::parse(text);
        c.schema_version = j.at("schema_version").get<int>();
        c.seed = j.value("seed", std::uint64_t{0});
        c.model = model_config_from_json(j.at("model").dump());
        c.teacher_model = j.contains("teacher_model") ? model_config_from_json(j["teacher_model"].dump()) : c.model;

        json t = j.value("task", json::object());
        c.task.vocab_size = t.value("vocab_size", c.model.vocab_size);
        c.task.triggers_per_category = t.value("triggers_per_category", c.task.triggers_per_category);
        c.task.min_prompt = t.value("min_prompt", c.task.min_prompt);
        c.task.max_prompt = t.value("max_prompt", c.task.max_prompt);
        c.task.two_category_rate = t.value("two_category_rate", c.task.two_category_rate);
        c.train_examples = t.value("train_examples", c.train_examples);
        c.eval_examples = t.value("eval_examples", c.eval_examples);

        json cal = j.value("calibration", json::object());
        c.calibration.batches = cal.value("batches", c.calibration.batches);
        c.calibration.batch_size = cal.value("batch_size", c.calibration.batch_size);
        c.calibration.seq_len = cal.value("seq_len", c.calibration.seq_len);

        json p = j.value("prune", json::object());
        c.n_layers_out = p.value("n_layers_out", std::size_t{0});
        c.mlp_hidden_out = p.value("mlp_hidden_out", std::size_t{0});
        c.direction = parse_direction(p.value("direction", std::string("drop-highest")));
        c.keep_list_path = p.value("keep_list", std::string());
        c.keep_tokens = p.value("keep_tokens", c.keep_tokens);

        json q = j.value("quant", json::object());
        c.quant.linear_group = q.value("linear_group", c.quant.linear_group);
        c.quant.embedding_group = q.value("embedding_group", c.quant.embedding_group);
        c.quant.weight_bits = q.value("weight_bits", c.quant.weight_bits);
        c.quant.activation_bits = q.value("activation_bits", c.quant.activation_bits);

        json tr = j.value("train", json::object());
        c.baseline_train = hyper_from_json(tr.value("baseline", json::object()), c.baseline_train);
        c.teacher_train = hyper_from_json(tr.value("teacher", json::object()), c.teacher_train);
        c.student_train = hyper_from_json(tr.value("student", json::object()), c.student_train);
        c.student_objective = parse_objective(tr.value("objective", std::string("qat-distill")));
        c.teacher_path = tr.value("teacher_path", std::string());
        c.baseline_train.linear_group = c.teacher_train.linear_group = c.student_train.linear_group =
            c.quant.linear_group;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const FormatError&) {
        throw ConfigError("cannot read config '" + path.string() + "'");
    }
    return pipeline_config_from_json(text);
}

std::string to_json_string(const PipelineConfig& c) {
    json j = {{"schema_version", c.schema_version},
              {"seed", c.seed},
              {"model", config_json(c.model)},
              {"teacher_model", config_json(c.teacher_model)},
              {"task",
               {{"vocab_size", c.task.vocab_size},
                {"triggers_per_category", c.task.triggers_per_category},
                {"min_prompt", c.task.min_prompt},
                {"max_prompt", c.task.max_prompt},
                {"two_category_rate", c.task.two_category_rate},
                {"train_examples", c.train_examples},
                {"eval_examples", c.eval_examples}}},
              {"calibration",
               {{"batches", c.calibration.batches},
                {"batch_size", c.calibration.batch_size},
                {"seq_len", c.calibration.seq_len}}},
              {"prune",
               {{"n_layers_out", c.n_layers_out},
                {"mlp_hidden_out", c.mlp_hidden_out},
                {"direction", to_string(c.direction)},
                {"keep_list", c.keep_list_path},
                {"keep_tokens", c.keep_tokens}}},
              {"quant", json::parse(to_json_string(c.quant))},
              {"train",
               {{"baseline", hyper_to_json(c.baseline_train)},
                {"teacher", hyper_to_json(c.teacher_train)},
                {"student", hyper_to_json(c.student_train)},
                {"objective", to_string(c.student_objective)},
                {"teacher_path", c.teacher_path}}}};
    return j.dump(2);
}

std::uint64_t stage_seed(const PipelineConfig& c, SeedStream s) {
    return Prng::derive_seed(c.seed, static_cast<std::uint64_t>(s));
}

std::vector<TrainExample> to_train_examples(const std::vector<SynthExample>& data) {
    std::vector<TrainExample> out;
    out.reserve(data.size());
    for (const auto& ex : data) out.push_back({ex.tokens, ex.mask});
    return out;
}

CompressionTargets compression_targets(const PipelineConfig& c) {
    CompressionTargets t;
    t.n_layers = c.n_layers_out;
    t.mlp_hidden = c.mlp_hidden_out;
    t.keep_tokens = c.keep_tokens;
    t.linear_group = c.quant.linear_group;
    t.embedding_group = c.quant.embedding_group;
    t.scale_bytes = 4;
    return t;
}

KeepList resolve_keep_list(const PipelineConfig& c) {
    if (!c.keep_list_path.empty()) return KeepList::from_json(read_text_file(c.keep_list_path), c.model.vocab_size);
    return KeepList(SynthTask(c.task).keep_list(), c.model.vocab_size);
}

std::string size_chain_json(const std::vector<SizeStage>& chain) {
    json stages = json::array();
    for (const auto& s : chain) {
        stages.push_back({{"name", s.name},
                          {"n_layers", s.config.n_layers},
                          {"mlp_hidden", s.config.mlp_hidden},
                          {"output_width", s.output_width},
                          {"embedding", s.plan.embedding.describe()},
                          {"linear", s.plan.linear.describe()},
                          {"unembedding", s.plan.unembedding.describe()},
                          {"norm", s.plan.norm.describe()},
                          {"params", s.params},
                          {"bytes", s.bytes},
                          {"gib", to_gib(s.bytes)}});
    }
    return stages.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

struct Logger {
    std::ostream* os;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    template <class... A>
    void operator()(const A&... parts) const {
        if (!os) return;
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char stamp[32];
        std::snprintf(stamp, sizeof stamp, "%8.1fs ", t);
        *os << stamp;
        ((*os) << ... << parts) << '\n';
        os->flush();
    }
};

json score_json(const ScoreReport& r) {
    json j = json::parse(r.to_json());
    return {{"f1", j["f1"]}, {"fpr", j["fpr"]}, {"counts", j["counts"]}, {"malformed", j["malformed"]}};
}

json artifact(const std::filesystem::path& p) {
    auto bytes = read_file(p);
    return {{"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}};
}

}  // namespace

PipelineSummary run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out, std::ostream* log_stream) {
    cfg.validate();
    std::filesystem::create_directories(out);
    Logger log{log_stream};

    const SynthTask task(cfg.task);
    const auto train_synth = task.make_dataset(cfg.train_examples, stage_seed(cfg, SeedStream::train_data));
    const auto eval_synth = task.make_dataset(cfg.eval_examples, stage_seed(cfg, SeedStream::eval_data));
    const auto train_data = to_train_examples(train_synth);
    const KeepList keep = resolve_keep_list(cfg);
    json manifest;
    manifest["schema_version"] = kPipelineSchemaVersion;
    manifest["seed"] = cfg.seed;
    const std::string cfg_text = to_json_string(cfg);
    manifest["config_fnv1a64"] =
        hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(cfg_text.data()), cfg_text.size())));

    // Baseline: the uncompressed model finetuned on the task.
    log("[baseline] training ", cfg.model.n_layers, " layers, dim ", cfg.model.dim);
    TrainHyper bh = cfg.baseline_train;
    bh.seed = stage_seed(cfg, SeedStream::baseline_train);
    ModelWeights base_init = init_random(cfg.model, stage_seed(cfg, SeedStream::baseline_init));
    TrainResult base = train_loop(base_init, cfg.model, train_data, Objective::ce, nullptr, bh);
    save_checkpoint(out / "baseline.lgck", base.weights, cfg.model);
    write_text_file(out / "baseline_loss.csv", loss_csv(base.curve));
    ScoreReport base_score = classify_and_score(make_view(base.weights, cfg.model), eval_synth);
    write_text_file(out / "baseline_eval.json", base_score.to_json());
    log("[baseline] final loss ", base.final_loss, ", F1 ", base_score.f1.value);

    // Teacher.
    ModelWeights teacher_w;
    ModelConfig teacher_c = cfg.teacher_model;
    if (!cfg.teacher_path.empty()) {
        Checkpoint ck = load_checkpoint(cfg.teacher_path);
        teacher_w = std::move(ck.weights);
        teacher_c = ck.config;
        log("[teacher] loaded ", cfg.teacher_path);
    } else {
        log("[teacher] training ", teacher_c.n_layers, " layers, dim ", teacher_c.dim);
        TrainHyper th = cfg.teacher_train;
        th.seed = stage_seed(cfg, SeedStream::teacher_train);
        TrainResult tr = train_loop(init_random(teacher_c, stage_seed(cfg, SeedStream::teacher_init)), teacher_c,
                                    train_data, Objective::ce, nullptr, th);
        teacher_w = std::move(tr.weights);
        write_text_file(out / "teacher_loss.csv", loss_csv(tr.curve));
        manifest["train"]["teacher_final_loss"] = tr.final_loss;
    }
    save_checkpoint(out / "teacher.lgck", teacher_w, teacher_c);
    ScoreReport teacher_score = classify_and_score(make_view(teacher_w, teacher_c), eval_synth);
    log("[teacher] F1 ", teacher_score.f1.value);

    // Calibrate on the finetuned baseline.
    CalibrationConfig cc = cfg.calibration;
    cc.seed = stage_seed(cfg, SeedStream::calibration);
    CalibrationStream stream = CalibrationStream::from_task(task, cc);
    ImportanceReport report = calibrate(base.weights, cfg.model, stream);
    write_text_file(out / "importance.json", report.to_json());
    log("[calibrate] ", report.sample_count, " positions");

    // Prune blocks, then MLP width, then the unembedding.
    BlockPruneResult bp = prune_blocks(base.weights, cfg.model, report, cfg.model.n_layers - cfg.n_layers_out,
                                       cfg.direction);
    ImportanceReport kept_report = restrict_report(report, bp.dropped);
    MlpPruneResult mp = prune_mlp(bp.weights, bp.config, kept_report, cfg.mlp_hidden_out);
    UnembeddingPruneResult up = prune_unembedding(mp.weights, keep);
    ModelConfig student_c = mp.config;
    PruneProvenance prov;
    prov.direction = to_string(cfg.direction);
    prov.dropped_blocks = bp.dropped;
    prov.layers_before = cfg.model.n_layers;
    prov.layers_after = student_c.n_layers;
    prov.mlp_hidden_before = cfg.model.mlp_hidden;
    prov.mlp_hidden_after = student_c.mlp_hidden;
    for (std::size_t b = 0; b < student_c.n_layers; ++b) prov.dropped_neurons.push_back(cfg.model.mlp_hidden - cfg.mlp_hidden_out);
    prov.keep_list = keep.ids();
    write_text_file(out / "prune.json", prov.to_json());
    write_text_file(out / "keep_list.json", keep.to_json());
    save_checkpoint(out / "pruned.lgck", up.weights, student_c);
    log("[prune] dropped blocks ", json(bp.dropped).dump(), ", K ", cfg.model.mlp_hidden, " -> ", student_c.mlp_hidden);

    // QAT with distillation.
    TrainHyper sh = cfg.student_train;
    sh.seed = stage_seed(cfg, SeedStream::student_train);
    TeacherRef teacher{&teacher_w, &teacher_c};
    log("[train] ", to_string(cfg.student_objective), " for ", sh.steps, " steps");
    TrainResult st = train_loop(up.weights, student_c, train_data, cfg.student_objective,
                                uses_teacher(cfg.student_objective) ? &teacher : nullptr, sh);
    save_checkpoint(out / "student.lgck", st.weights, student_c);
    write_text_file(out / "student_loss.csv", loss_csv(st.curve));
    log("[train] final loss ", st.final_loss);

    // Pack and evaluate.
    PackedModel packed = pack_model(st.weights, student_c, cfg.quant);
    save_packed(out / "packed.lgpq", packed);
    PackedModel reloaded = load_packed(out / "packed.lgpq");
    if (!(reloaded == packed)) throw FormatError("packed model did not round-trip", 0);
    ScoreReport packed_score = classify_and_score(make_view(reloaded), eval_synth);
    write_text_file(out / "packed_eval.json", packed_score.to_json());
    log("[eval] packed F1 ", packed_score.f1.value, ", FPR ", packed_score.fpr.value);

    // Size accounting along the compression chain.
    CompressionTargets targets = compression_targets(cfg);
    targets.keep_tokens = keep.size();
    auto chain = compression_size_chain(cfg.model, targets);
    json stages = json::parse(size_chain_json(chain));
    if (param_count(base.weights) != chain[0].params || param_count(up.weights) != chain.back().params) {
        throw ContractError("manifest parameter counts disagree with the weights");
    }

    PipelineSummary sum;
    sum.baseline_f1 = base_score.f1.value;
    sum.teacher_f1 = teacher_score.f1.value;
    sum.packed_f1 = packed_score.f1.value;
    sum.retention = sum.baseline_f1 > 0.0 ? sum.packed_f1 / sum.baseline_f1 : 0.0;

    manifest["stages"] = stages;
    manifest["params"] = {{"baseline", param_count(base.weights)},
                          {"pruned_full_unembedding", param_count(mp.weights)},
                          {"pruned", param_count(up.weights)},
                          {"student", param_count(st.weights)}};
    manifest["calibration"] = {{"sample_count", report.sample_count}, {"block_scores", report.block_scores}};
    manifest["prune"] = json::parse(prov.to_json());
    manifest["train"]["baseline_final_loss"] = base.final_loss;
    manifest["train"]["student_final_loss"] = st.final_loss;
    manifest["train"]["student_objective"] = to_string(cfg.student_objective);
    manifest["eval"] = {{"baseline", score_json(base_score)},
                        {"teacher", score_json(teacher_score)},
                        {"packed", score_json(packed_score)},
                        {"retention", sum.retention}};
    json arts = json::object();
    for (const char* name : {"baseline.lgck", "teacher.lgck", "pruned.lgck", "student.lgck", "packed.lgpq"}) {
        arts[name] = artifact(out / name);
    }
    manifest["artifacts"] = arts;
    sum.manifest = manifest.dump(2) + "\n";
    write_text_file(out / "manifest.json", sum.manifest);
    log("[size] ", to_gib(chain.front().bytes), " GiB -> ", to_gib(chain.back().bytes), " GiB");
    return sum;
}

}  // namespace lgc
