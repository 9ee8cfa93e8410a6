// xlm: command-line front end for the ExplicitLM toy implementation.
//
// Subcommands: gen-data, train, eval, intervene, inspect.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xlm/common.hpp"
#include "xlm/corpus.hpp"
#include "xlm/eval.hpp"
#include "xlm/memory_bank.hpp"
#include "xlm/model.hpp"
#include "xlm/runconfig.hpp"
#include "xlm/trainer.hpp"

namespace {

using namespace xlm;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

void cmd_gen_data(const RunConfig& rc) {
    const GenParams params = rc.gen_params();
    Dataset ds = generate_dataset(params);
    write_dataset(ds, params, rc.data_dir);
    std::cout << "generated " << ds.kg.facts.size() << " facts over " << ds.kg.entities.size()
              << " entities and " << ds.kg.relations.size() << " relations\n"
              << "frozen facts: " << ds.split.frozen_fact_indices.size()
              << ", training sequences: " << ds.split.train_sequences.size()
              << ", vocabulary: " << ds.vocab.size() << "\n"
              << "eval items: op=" << ds.items_op.size() << " rr=" << ds.items_rr.size()
              << " fv=" << ds.items_fv.size() << "\n"
              << "wrote " << rc.data_dir << "/\n";
}

void write_train_log(const std::vector<LossReport>& log, const std::string& path, bool timestamps) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write training log: " + path);
    out << "step,l_ce,l_sim,l_div,l_total";
    if (timestamps) out << ",unix_ms";
    out << "\n";
    out.precision(10);
    for (std::size_t i = 0; i < log.size(); ++i) {
        out << i << "," << log[i].l_ce << "," << log[i].l_sim << "," << log[i].l_div << ","
            << log[i].l_total;
        if (timestamps)
            out << ","
                << std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
        out << "\n";
    }
}

void cmd_train(const RunConfig& rc) {
    Dataset ds = load_dataset(rc.data_dir);
    ModelConfig cfg = rc.model;
    cfg.vocab_size = ds.vocab.size();
    cfg.memory_enabled = !rc.no_memory;
    cfg.validate();

    std::filesystem::create_directories(rc.out_dir);
    TrainParams tp;
    tp.steps = rc.steps;
    tp.sample_limit = rc.samples;

    TrainRun run = run_training(cfg, ds, tp, [&](std::uint64_t step, const LossReport& r) {
        if (logging::debug_enabled() || (step + 1) % 100 == 0 || step == 0)
            logging::info("step " + std::to_string(step) + " l_ce=" + std::to_string(r.l_ce) +
                          " l_sim=" + std::to_string(r.l_sim) + " l_div=" + std::to_string(r.l_div) +
                          " l_total=" + std::to_string(r.l_total));
    });

    write_train_log(run.log, rc.out_dir + "/train_log.csv", rc.timestamps);
    save_checkpoint(run.model, rc.out_dir + "/model.xlmc");
    if (cfg.memory_enabled) save_bank(run.bank, &run.ema, rc.out_dir + "/bank.xlmb");

    std::cout << "trained " << rc.steps << " steps; final l_ce=" << run.log.back().l_ce
              << " l_total=" << run.log.back().l_total << "\n"
              << "wrote " << rc.out_dir << "/model.xlmc"
              << (cfg.memory_enabled ? ", bank.xlmb" : "") << ", train_log.csv\n";
}

struct LoadedModel {
    Model model;
    MemoryBank bank;
    std::optional<EmaState> ema;
};

LoadedModel load_model_and_bank(const RunConfig& rc) {
    const std::string ckpt =
        rc.checkpoint_path.empty() ? rc.out_dir + "/model.xlmc" : rc.checkpoint_path;
    LoadedModel lm{load_checkpoint(ckpt), {}, {}};
    if (lm.model.config.memory_enabled) {
        const std::string bank_path = rc.bank_path.empty() ? rc.out_dir + "/bank.xlmb" : rc.bank_path;
        auto [bank, ema] = load_bank(bank_path);
        lm.bank = std::move(bank);
        lm.ema = std::move(ema);
    }
    return lm;
}

void cmd_eval(const RunConfig& rc) {
    Dataset ds = load_dataset(rc.data_dir);
    LoadedModel lm = load_model_and_bank(rc);
    FullEval ev = evaluate_model(lm.model, lm.bank, ds);

    EvalReport report;
    report.set(task_name(Task::object_prediction), "accuracy", ev.op.accuracy);
    report.set(task_name(Task::object_prediction), "items", static_cast<double>(ev.op.outcomes.size()));
    report.set(task_name(Task::relation_reasoning), "accuracy", ev.rr.accuracy);
    report.set(task_name(Task::relation_reasoning), "items", static_cast<double>(ev.rr.outcomes.size()));
    report.set(task_name(Task::fact_verification), "accuracy", ev.fv.accuracy);
    report.set(task_name(Task::fact_verification), "items", static_cast<double>(ev.fv.outcomes.size()));
    if (lm.model.config.memory_enabled) {
        report.set("hit_rate", "overall", ev.rr_hits.overall);
        report.set("hit_rate", "correct_samples", ev.rr_hits.overall_correct);
        report.set("hit_rate", "incorrect_samples", ev.rr_hits.overall_incorrect);
        for (std::uint32_t l = 0; l < lm.model.config.n_layers; ++l) {
            report.set("hit_rate", "layer" + std::to_string(l) + "_correct",
                       ev.rr_hits.layer_rate_correct[l]);
            report.set("hit_rate", "layer" + std::to_string(l) + "_incorrect",
                       ev.rr_hits.layer_rate_incorrect[l]);
        }
    }
    report.print_table(std::cout);
    std::filesystem::create_directories(rc.out_dir);
    const std::string csv = rc.csv_path.empty() ? rc.out_dir + "/eval_report.csv" : rc.csv_path;
    report.write_csv(csv);
    std::cout << "wrote " << csv << "\n";
}

void cmd_intervene(const RunConfig& rc) {
    Dataset ds = load_dataset(rc.data_dir);
    LoadedModel lm = load_model_and_bank(rc);
    if (!lm.model.config.memory_enabled)
        throw config_error("intervention requires a memory-enabled checkpoint");

    EvalContext ctx;
    ctx.vocab = &ds.vocab;
    ctx.relation_names = ds.relation_names();

    InterventionSpec spec;
    spec.mode = InterventionMode::replace;
    if (rc.intervene_layers.empty()) {
        spec.target_layers = pick_intervention_layers(lm.model, lm.bank, ctx, ds.items_rr);
        std::ostringstream picked;
        for (std::uint32_t l : spec.target_layers) picked << " L" << l;
        std::cout << "auto-selected intervention layers:" << picked.str() << "\n";
    } else {
        std::istringstream in(rc.intervene_layers);
        std::string tok;
        while (std::getline(in, tok, ','))
            if (!tok.empty()) spec.target_layers.insert(static_cast<std::uint32_t>(std::stoul(tok)));
    }

    EvalReport report;
    std::cout << std::left << std::setw(24) << "task" << std::setw(12) << "retain" << std::setw(12)
              << "replace" << "delta\n"
              << std::string(56, '-') << "\n";
    auto run_task = [&](const std::vector<EvalItem>& items, Task task) {
        const InterventionResult r = replace_retain_experiment(lm.model, lm.bank, ctx, items, spec);
        std::cout << std::left << std::setw(24) << task_name(task) << std::setw(12) << std::fixed
                  << std::setprecision(4) << r.retain_accuracy << std::setw(12) << r.replace_accuracy
                  << std::showpos << r.delta() << std::noshowpos << "\n";
        report.set(task_name(task), "retain_accuracy", r.retain_accuracy);
        report.set(task_name(task), "replace_accuracy", r.replace_accuracy);
        report.set(task_name(task), "delta", r.delta());
    };
    run_task(ds.items_op, Task::object_prediction);
    run_task(ds.items_rr, Task::relation_reasoning);
    run_task(ds.items_fv, Task::fact_verification);

    std::filesystem::create_directories(rc.out_dir);
    const std::string csv = rc.csv_path.empty() ? rc.out_dir + "/intervention_report.csv" : rc.csv_path;
    report.write_csv(csv, "intervene");
    std::cout << "wrote " << csv << "\n";
}

void cmd_inspect(const RunConfig& rc) {
    const std::string bank_path = rc.bank_path.empty() ? rc.out_dir + "/bank.xlmb" : rc.bank_path;
    auto [bank, ema] = load_bank(bank_path);
    const std::string vocab_path =
        rc.vocab_path.empty() ? rc.data_dir + "/vocab.txt" : rc.vocab_path;
    const Vocabulary vocab = Vocabulary::load(vocab_path);

    const std::uint64_t from = rc.inspect_from;
    const std::uint64_t to = rc.inspect_to == std::uint64_t(-1) ? bank.capacity : rc.inspect_to;
    if (from > bank.capacity || to > bank.capacity || from > to)
        throw bounds_error("inspect range [" + std::to_string(from) + "," + std::to_string(to) +
                           ") out of bounds for bank of capacity " + std::to_string(bank.capacity));
    for (std::uint64_t i = from; i < to; ++i) {
        std::cout << i << "\t" << (bank.is_frozen(i) ? "frozen" : "updatable") << "\t"
                  << bank.uuids[i].to_string() << "\t" << detokenize_entry(bank.entry(i), vocab)
                  << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    using namespace xlm;
    RunConfig rc;

    // Config file applies before flag parsing so flags take precedence.
    try {
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            if (arg == "--config" && i + 1 < argc) load_config_file(rc, argv[i + 1]);
            else if (arg.rfind("--config=", 0) == 0) load_config_file(rc, arg.substr(9));
        }
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }

    CLI::App app{"ExplicitLM toy implementation: explicit memory-bank language model"};
    app.require_subcommand(1);
    std::string config_path_unused;
    app.add_option("--config", config_path_unused, "config file with key = value lines");

    auto add_shared = [&](CLI::App* cmd) {
        cmd->add_option("--seed", rc.model.seed, "random seed")->capture_default_str();
        cmd->add_option("--out", rc.out_dir, "output directory")->capture_default_str();
        cmd->add_option("--config", config_path_unused, "config file with key = value lines");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic knowledge-graph dataset");
    add_shared(gen);
    gen->add_option("--entities", rc.entities, "entity count")->capture_default_str();
    gen->add_option("--relations", rc.relations, "relation count")->capture_default_str();
    gen->add_option("--facts", rc.facts, "fact count")->capture_default_str();
    gen->add_option("--freeze-rate", rc.model.freeze_rate, "frozen fraction of the bank")
        ->capture_default_str();
    gen->add_option("--bank-size", rc.model.bank_capacity, "memory bank capacity (perfect square)")
        ->capture_default_str();
    gen->add_option("--filler-ratio", rc.filler_ratio, "filler lines per fact line")
        ->capture_default_str();
    gen->add_option("--distractors", rc.distractors, "distractors per object-prediction item")
        ->capture_default_str();
    gen->add_option("--items-per-fact", rc.items_per_fact,
                    "object-prediction items per frozen fact")
        ->capture_default_str();
    gen->add_option("--eval-seed", rc.eval_seed, "seed for evaluation item sampling")
        ->capture_default_str();
    gen->add_option("--data", rc.data_dir, "dataset output directory")->capture_default_str();

    CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
    add_shared(train);
    train->add_option("--data", rc.data_dir, "dataset directory")->capture_default_str();
    train->add_option("--steps", rc.steps, "training steps")->capture_default_str();
    train->add_option("--samples", rc.samples, "training sample limit (0 = all)")
        ->capture_default_str();
    train->add_option("--freeze-rate", rc.model.freeze_rate, "frozen fraction of the bank")
        ->capture_default_str();
    train->add_option("--candidates", rc.model.candidate_count, "stage-1 candidate count |I|")
        ->capture_default_str();
    train->add_option("--temp", rc.model.temperature, "Gumbel-Softmax temperature")
        ->capture_default_str();
    train->add_option("--lambda-sim", rc.model.lambda_sim, "relevance loss weight")
        ->capture_default_str();
    train->add_option("--lambda-div", rc.model.lambda_div, "diversity loss weight")
        ->capture_default_str();
    train->add_flag("--no-memory", rc.no_memory, "train the parameter-matched baseline");
    train->add_option("--dim", rc.model.dim, "embedding width")->capture_default_str();
    train->add_option("--layers", rc.model.n_layers, "decoder layers")->capture_default_str();
    train->add_option("--heads", rc.model.n_heads, "attention heads")->capture_default_str();
    train->add_option("--max-seq-len", rc.model.max_seq_len, "maximum sequence length")
        ->capture_default_str();
    train->add_option("--bank-size", rc.model.bank_capacity, "memory bank capacity")
        ->capture_default_str();
    train->add_option("--entry-len", rc.model.entry_length, "bank entry length L")
        ->capture_default_str();
    train->add_option("--batch", rc.model.batch_size, "batch size")->capture_default_str();
    train->add_option("--lr", rc.model.learning_rate, "learning rate")->capture_default_str();
    train->add_option("--grad-clip", rc.model.grad_clip, "gradient norm clip")->capture_default_str();
    train->add_option("--ema-decay", rc.model.ema_decay, "EMA decay gamma")->capture_default_str();
    train->add_option("--requantize-every", rc.model.requantize_every,
                      "steps between token requantization")
        ->capture_default_str();
    train->add_option("--requantize-mode", [&rc](const std::vector<std::string>& vals) {
            rc.model.requantize_mode = requantize_mode_from_string(vals.at(0));
            return true;
        }, "requantization mode: slot0 or full-greedy")
        ->expected(1);
    train->add_option("--gate-init", rc.model.gate_init, "pre-sigmoid fusion gate initialization")
        ->capture_default_str();
    train->add_flag("--anneal-temp", rc.model.anneal_temperature, "anneal temperature linearly");
    train->add_option("--anneal-steps", rc.model.anneal_steps, "anneal duration in steps")
        ->capture_default_str();
    train->add_flag("--timestamps", rc.timestamps, "add wall-clock timestamps to the training log");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the three tasks");
    add_shared(eval_cmd);
    eval_cmd->add_option("--data", rc.data_dir, "dataset directory")->capture_default_str();
    eval_cmd->add_option("--checkpoint", rc.checkpoint_path, "model checkpoint path");
    eval_cmd->add_option("--bank", rc.bank_path, "bank file path");
    eval_cmd->add_option("--csv", rc.csv_path, "CSV report output path");

    CLI::App* intervene = app.add_subcommand("intervene", "replace-vs-retain oracle experiment");
    add_shared(intervene);
    intervene->add_option("--data", rc.data_dir, "dataset directory")->capture_default_str();
    intervene->add_option("--checkpoint", rc.checkpoint_path, "model checkpoint path");
    intervene->add_option("--bank", rc.bank_path, "bank file path");
    intervene->add_option("--csv", rc.csv_path, "CSV report output path");
    intervene->add_option("--layers", rc.intervene_layers,
                          "comma-separated target layers (default: auto top-2 by hit rate)");

    CLI::App* inspect = app.add_subcommand("inspect", "dump bank entries as human-readable text");
    add_shared(inspect);
    inspect->add_option("--bank", rc.bank_path, "bank file path");
    inspect->add_option("--vocab", rc.vocab_path, "vocabulary file path");
    inspect->add_option("--data", rc.data_dir, "dataset directory (for the default vocab path)")
        ->capture_default_str();
    inspect->add_option("--from", rc.inspect_from, "first entry index")->capture_default_str();
    inspect->add_option("--to", rc.inspect_to, "one past the last entry index (default: capacity)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) cmd_gen_data(rc);
        else if (train->parsed()) cmd_train(rc);
        else if (eval_cmd->parsed()) cmd_eval(rc);
        else if (intervene->parsed()) cmd_intervene(rc);
        else if (inspect->parsed()) cmd_inspect(rc);
    } catch (const divergence_error& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
