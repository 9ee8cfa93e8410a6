#pragma once

// Run configuration shared by every subcommand: model hyperparameters, corpus
// generation knobs, paths and per-command flags. Precedence is built-in
// defaults < config file (`key = value` lines) < command-line flags.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "xlm/common.hpp"
#include "xlm/model.hpp"
#include "xlm/trainer.hpp"

namespace xlm {

struct RunConfig {
    ModelConfig model;

    // corpus generation
    std::uint32_t entities = 200;
    std::uint32_t relations = 12;
    std::uint64_t facts = 2000;
    double filler_ratio = 1.0;
    std::uint32_t distractors = 5;
    std::uint32_t items_per_fact = 1;
    std::uint64_t eval_seed = 11;

    // training
    std::uint64_t steps = 500;
    std::uint64_t samples = 0;  // 0 = all

    // paths
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string checkpoint_path;
    std::string bank_path;
    std::string vocab_path;
    std::string csv_path;

    // misc flags
    bool no_memory = false;
    bool timestamps = false;
    std::string intervene_layers;  // comma-separated; empty = auto
    std::uint64_t inspect_from = 0;
    std::uint64_t inspect_to = std::uint64_t(-1);  // default: whole bank

    GenParams gen_params() const {
        GenParams g;
        g.kg.seed = model.seed;
        g.kg.n_entities = entities;
        g.kg.n_relations = relations;
        g.kg.n_facts = facts;
        g.split.freeze_rate = model.freeze_rate;
        g.split.bank_capacity = model.bank_capacity;
        g.split.seed = model.seed;
        g.split.filler_ratio = filler_ratio;
        g.eval.n_distractors = distractors;
        g.eval.seed = eval_seed;
        g.eval.items_per_fact = items_per_fact;
        return g;
    }
};

// Applies one key=value pair; throws config_error on unknown keys so typos in
// config files fail loudly instead of silently using defaults.
inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
    auto u32 = [&] { return static_cast<std::uint32_t>(std::stoul(value)); };
    auto u64v = [&] { return std::stoull(value); };
    auto f64v = [&] { return std::stod(value); };
    auto boolean = [&] { return value == "1" || value == "true" || value == "on"; };

    if (key == "seed") rc.model.seed = u64v();
    else if (key == "dim") rc.model.dim = u32();
    else if (key == "layers") rc.model.n_layers = u32();
    else if (key == "heads") rc.model.n_heads = u32();
    else if (key == "max-seq-len") rc.model.max_seq_len = u32();
    else if (key == "bank-size") rc.model.bank_capacity = u64v();
    else if (key == "entry-len") rc.model.entry_length = u32();
    else if (key == "freeze-rate") rc.model.freeze_rate = f64v();
    else if (key == "candidates") rc.model.candidate_count = u32();
    else if (key == "temp") rc.model.temperature = f64v();
    else if (key == "lambda-sim") rc.model.lambda_sim = f64v();
    else if (key == "lambda-div") rc.model.lambda_div = f64v();
    else if (key == "ema-decay") rc.model.ema_decay = f64v();
    else if (key == "ema-epsilon") rc.model.ema_epsilon = f64v();
    else if (key == "lr") rc.model.learning_rate = f64v();
    else if (key == "grad-clip") rc.model.grad_clip = f64v();
    else if (key == "ffn-hidden") rc.model.ffn_hidden = u32();
    else if (key == "batch") rc.model.batch_size = u32();
    else if (key == "requantize-every") rc.model.requantize_every = u32();
    else if (key == "requantize-mode") rc.model.requantize_mode = requantize_mode_from_string(value);
    else if (key == "gate-init") rc.model.gate_init = f64v();
    else if (key == "anneal-temp") rc.model.anneal_temperature = boolean();
    else if (key == "temp-floor") rc.model.temperature_floor = f64v();
    else if (key == "anneal-steps") rc.model.anneal_steps = u64v();
    else if (key == "no-memory") rc.no_memory = boolean();
    else if (key == "entities") rc.entities = u32();
    else if (key == "relations") rc.relations = u32();
    else if (key == "facts") rc.facts = u64v();
    else if (key == "filler-ratio") rc.filler_ratio = f64v();
    else if (key == "distractors") rc.distractors = u32();
    else if (key == "items-per-fact") rc.items_per_fact = u32();
    else if (key == "eval-seed") rc.eval_seed = u64v();
    else if (key == "steps") rc.steps = u64v();
    else if (key == "samples") rc.samples = u64v();
    else if (key == "data") rc.data_dir = value;
    else if (key == "out") rc.out_dir = value;
    else if (key == "checkpoint") rc.checkpoint_path = value;
    else if (key == "bank") rc.bank_path = value;
    else if (key == "vocab") rc.vocab_path = value;
    else if (key == "csv") rc.csv_path = value;
    else if (key == "timestamps") rc.timestamps = boolean();
    else throw config_error("unknown config key: '" + key + "'");
}

inline void load_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw persistence_error("cannot read config file: " + path);
    std::string line;
    std::uint64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments and whitespace
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config file " + path + " line " + std::to_string(lineno) +
                               ": expected key = value");
        apply_config_key(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

}  // namespace xlm
