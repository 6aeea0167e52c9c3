// lgc: command-line front end for the compression pipeline.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 format error,
// 4 numeric divergence.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "lgc/calibrate.hpp"
#include "lgc/error.hpp"
#include "lgc/evalbench.hpp"
#include "lgc/io.hpp"
#include "lgc/packed_model.hpp"
#include "lgc/pipeline.hpp"
#include "lgc/prune.hpp"
#include "lgc/train.hpp"

namespace fs = std::filesystem;
using namespace lgc;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string model;
    std::string teacher;
    std::string report;
    std::string packed;
    std::string direction;
    std::string objective;
    std::string plan = "int4-pipeline";
    std::string keep_list;
    std::size_t steps = 0;
    std::size_t prompt_len = 32;
    std::size_t gen_len = 32;
    std::size_t reps = 5;
};

PipelineConfig load_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    PipelineConfig c = load_pipeline_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (!o.direction.empty()) c.direction = parse_direction(o.direction);
    if (!o.objective.empty()) c.student_objective = parse_objective(o.objective);
    if (!o.keep_list.empty()) c.keep_list_path = o.keep_list;
    if (o.steps) c.student_train.steps = o.steps;
    return c;
}

void require(const std::string& v, const char* flag) {
    if (v.empty()) throw ConfigError(std::string(flag) + " is required");
}

void emit(const Options& o, const std::string& text) {
    if (o.out.empty()) {
        std::cout << text << '\n';
    } else {
        write_text_file(o.out, text + "\n");
    }
}

int cmd_calibrate(const Options& o) {
    PipelineConfig c = load_config(o);
    require(o.model, "--model");
    require(o.out, "--out");
    c.calibration.validate();
    Checkpoint ck = load_checkpoint(o.model);
    CalibrationConfig cc = c.calibration;
    cc.seed = stage_seed(c, SeedStream::calibration);
    SynthTaskConfig tc = c.task;
    tc.vocab_size = ck.config.vocab_size;
    CalibrationStream stream = CalibrationStream::from_task(SynthTask(tc), cc);
    ImportanceReport r = calibrate(ck.weights, ck.config, stream);
    write_text_file(o.out, r.to_json() + "\n");
    std::cout << "calibrated " << r.sample_count << " positions over " << stream.n_batches() << " batches\n";
    return 0;
}

int cmd_prune(const Options& o) {
    PipelineConfig c = load_config(o);
    require(o.model, "--model");
    require(o.report, "--report");
    require(o.out, "--out");
    Checkpoint ck = load_checkpoint(o.model);
    ImportanceReport report = ImportanceReport::from_json(read_text_file(o.report));
    if (c.n_layers_out == 0 || c.n_layers_out >= ck.config.n_layers) {
        throw ConfigError("prune.n_layers_out must be below the checkpoint's layer count");
    }
    BlockPruneResult bp = prune_blocks(ck.weights, ck.config, report, ck.config.n_layers - c.n_layers_out, c.direction);
    MlpPruneResult mp = prune_mlp(bp.weights, bp.config, restrict_report(report, bp.dropped), c.mlp_hidden_out);
    ModelWeights w = std::move(mp.weights);
    KeepList keep = c.keep_list_path.empty() ? KeepList(SynthTask(c.task).keep_list(), ck.config.vocab_size)
                                             : KeepList::from_json(read_text_file(c.keep_list_path), ck.config.vocab_size);
    if (!w.unembedding_pruned()) w = prune_unembedding(w, keep).weights;
    save_checkpoint(o.out, w, mp.config);
    PruneProvenance prov;
    prov.direction = to_string(c.direction);
    prov.dropped_blocks = bp.dropped;
    prov.layers_before = ck.config.n_layers;
    prov.layers_after = mp.config.n_layers;
    prov.mlp_hidden_before = ck.config.mlp_hidden;
    prov.mlp_hidden_after = mp.config.mlp_hidden;
    prov.dropped_neurons.assign(mp.config.n_layers, ck.config.mlp_hidden - mp.config.mlp_hidden);
    prov.keep_list = keep.ids();
    std::cout << prov.to_json() << '\n';
    return 0;
}

int cmd_train(const Options& o) {
    PipelineConfig c = load_config(o);
    require(o.model, "--model");
    require(o.out, "--out");
    Checkpoint ck = load_checkpoint(o.model);
    std::optional<Checkpoint> teacher;
    std::string tpath = o.teacher.empty() ? c.teacher_path : o.teacher;
    if (uses_teacher(c.student_objective)) {
        require(tpath, "--teacher");
        teacher = load_checkpoint(tpath);
    }
    SynthTaskConfig tc = c.task;
    tc.vocab_size = ck.config.vocab_size;
    auto data = to_train_examples(SynthTask(tc).make_dataset(c.train_examples, stage_seed(c, SeedStream::train_data)));
    TrainHyper h = c.student_train;
    h.seed = stage_seed(c, SeedStream::student_train);
    TeacherRef tref{teacher ? &teacher->weights : nullptr, teacher ? &teacher->config : nullptr};
    TrainResult r = train_loop(ck.weights, ck.config, data, c.student_objective, teacher ? &tref : nullptr, h);
    save_checkpoint(o.out, r.weights, ck.config);
    fs::path csv = fs::path(o.out).replace_extension(".loss.csv");
    write_text_file(csv, loss_csv(r.curve));
    std::cout << to_string(c.student_objective) << ": " << r.steps << " steps, final loss " << r.final_loss << '\n';
    return 0;
}

int cmd_pack(const Options& o) {
    PipelineConfig c = load_config(o);
    require(o.model, "--model");
    require(o.out, "--out");
    Checkpoint ck = load_checkpoint(o.model);
    PackedModel m = pack_model(ck.weights, ck.config, c.quant);
    save_packed(o.out, m);
    std::cout << "packed " << ck.config.n_layers << " layers into " << fs::file_size(o.out) << " bytes\n";
    return 0;
}

int cmd_eval(const Options& o) {
    PipelineConfig c = load_config(o);
    if (o.model.empty() == o.packed.empty()) throw ConfigError("exactly one of --model or --packed is required");
    std::optional<Checkpoint> ck;
    std::optional<PackedModel> pm;
    DecoderView view;
    if (!o.model.empty()) {
        ck = load_checkpoint(o.model);
        view = make_view(ck->weights, ck->config);
    } else {
        pm = load_packed(o.packed);
        view = make_view(*pm);
    }
    SynthTaskConfig tc = c.task;
    tc.vocab_size = view.config.vocab_size;
    auto data = SynthTask(tc).make_dataset(c.eval_examples, stage_seed(c, SeedStream::eval_data));
    emit(o, classify_and_score(view, data).to_json());
    return 0;
}

int cmd_bench(const Options& o) {
    require(o.packed, "--packed");
    PackedModel pm = load_packed(o.packed);
    DecoderView view = make_view(pm);
    emit(o, throughput_bench(view, o.prompt_len, o.gen_len, o.reps, o.seed.value_or(0)).to_json());
    return 0;
}

int cmd_size(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    PipelineConfig c = load_pipeline_config(o.config);
    c.validate_shapes();
    auto chain = compression_size_chain(c.model, compression_targets(c));
    if (o.plan == "bf16") {
        std::printf("%s: %llu params, %llu bytes, %.2f GiB\n", chain[0].name.c_str(),
                    static_cast<unsigned long long>(chain[0].params), static_cast<unsigned long long>(chain[0].bytes),
                    to_gib(chain[0].bytes));
    } else if (o.plan == "int4-pipeline") {
        for (const auto& s : chain) {
            std::printf("%-20s %14llu params %14llu bytes %8.3f GiB\n", s.name.c_str(),
                        static_cast<unsigned long long>(s.params), static_cast<unsigned long long>(s.bytes),
                        to_gib(s.bytes));
        }
        std::printf("unembedding prune saves %.1f MB at 4 bits\n",
                    static_cast<double>(unembedding_prune_savings_bytes(c.model, c.keep_tokens)) / 1e6);
    } else {
        throw ConfigError("--plan must be bf16 or int4-pipeline");
    }
    if (!o.out.empty()) write_text_file(o.out, size_chain_json(chain) + "\n");
    return 0;
}

int cmd_pipeline(const Options& o) {
    PipelineConfig c = load_config(o);
    require(o.out, "--out");
    PipelineSummary s = run_pipeline(c, o.out, &std::cerr);
    std::printf("baseline F1 %.4f, packed F1 %.4f, retention %.4f\n", s.baseline_f1, s.packed_f1, s.retention);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compression toolkit for Llama-style decoders"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Pipeline config JSON");
        sub->add_option("--seed", o.seed, "Override the config seed");
        sub->add_option("--out", o.out, "Output path or directory");
    };

    auto* calibrate_cmd = app.add_subcommand("calibrate", "Estimate block and MLP importance");
    common(calibrate_cmd);
    calibrate_cmd->add_option("--model", o.model, "Input LGCK checkpoint");

    auto* prune_cmd = app.add_subcommand("prune", "Drop blocks, shrink MLPs, prune the unembedding");
    common(prune_cmd);
    prune_cmd->add_option("--model", o.model, "Input LGCK checkpoint");
    prune_cmd->add_option("--report", o.report, "Importance report JSON");
    prune_cmd->add_option("--direction", o.direction, "drop-highest|drop-lowest");
    prune_cmd->add_option("--keep-list", o.keep_list, "JSON array of kept token ids");

    auto* train_cmd = app.add_subcommand("train", "Finetune, QAT or distill a checkpoint");
    common(train_cmd);
    train_cmd->add_option("--model", o.model, "Input LGCK checkpoint");
    train_cmd->add_option("--teacher", o.teacher, "Teacher LGCK checkpoint");
    train_cmd->add_option("--objective", o.objective, "ce|distill|qat-ce|qat-distill");
    train_cmd->add_option("--steps", o.steps, "Override the step count");

    auto* pack_cmd = app.add_subcommand("quantize-pack", "Quantize a checkpoint into an LGPQ file");
    common(pack_cmd);
    pack_cmd->add_option("--model", o.model, "Input LGCK checkpoint");

    auto* eval_cmd = app.add_subcommand("eval", "Score F1/FPR on held-out synthetic data");
    common(eval_cmd);
    eval_cmd->add_option("--model", o.model, "LGCK checkpoint");
    eval_cmd->add_option("--packed", o.packed, "LGPQ packed model");

    auto* bench_cmd = app.add_subcommand("bench", "Measure decode throughput of a packed model");
    bench_cmd->add_option("--seed", o.seed, "Prompt seed");
    bench_cmd->add_option("--out", o.out, "Write the JSON report here");
    bench_cmd->add_option("--packed", o.packed, "LGPQ packed model");
    bench_cmd->add_option("--prompt-len", o.prompt_len, "Prompt tokens");
    bench_cmd->add_option("--gen-len", o.gen_len, "Generated tokens");
    bench_cmd->add_option("--reps", o.reps, "Repetitions (>= 3)");

    auto* size_cmd = app.add_subcommand("size", "Parameter and byte accounting");
    size_cmd->add_option("--config", o.config, "Pipeline config JSON");
    size_cmd->add_option("--plan", o.plan, "bf16|int4-pipeline");
    size_cmd->add_option("--out", o.out, "Write the stage chain as JSON");

    auto* pipeline_cmd = app.add_subcommand("pipeline", "Run every stage end to end");
    common(pipeline_cmd);
    pipeline_cmd->add_option("--direction", o.direction, "drop-highest|drop-lowest");
    pipeline_cmd->add_option("--objective", o.objective, "ce|distill|qat-ce|qat-distill");
    pipeline_cmd->add_option("--keep-list", o.keep_list, "JSON array of kept token ids");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*calibrate_cmd) return cmd_calibrate(o);
        if (*prune_cmd) return cmd_prune(o);
        if (*train_cmd) return cmd_train(o);
        if (*pack_cmd) return cmd_pack(o);
        if (*eval_cmd) return cmd_eval(o);
        if (*bench_cmd) return cmd_bench(o);
        if (*size_cmd) return cmd_size(o);
        if (*pipeline_cmd) return cmd_pipeline(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
