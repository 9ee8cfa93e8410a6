#pragma once

// Wires dataset artifacts, bank construction and the step loop together.
// Used by both the command-line tool and the acceptance experiments.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/corpus.hpp"
#include "xlm/eval.hpp"
#include "xlm/memory_bank.hpp"
#include "xlm/model.hpp"
#include "xlm/vocab.hpp"

namespace xlm {

struct DataPaths {
    std::string dir;
    std::string corpus() const { return dir + "/corpus.txt"; }
    std::string facts() const { return dir + "/facts.tsv"; }
    std::string entities() const { return dir + "/entities.txt"; }
    std::string relations() const { return dir + "/relations.txt"; }
    std::string splits() const { return dir + "/splits.txt"; }
    std::string vocab() const { return dir + "/vocab.txt"; }
    std::string eval_items(Task t) const { return dir + "/eval_" + task_name(t) + ".tsv"; }
};

struct Dataset {
    KnowledgeGraph kg;
    DatasetSplit split;
    Vocabulary vocab;
    std::vector<EvalItem> items_op;
    std::vector<EvalItem> items_rr;
    std::vector<EvalItem> items_fv;

    std::vector<std::string> relation_names() const {
        std::vector<std::string> names;
        for (const Relation& r : kg.relations) names.push_back(r.name);
        return names;
    }
};

struct GenParams {
    KgParams kg;
    SplitParams split;
    EvalItemParams eval;
};

inline Dataset generate_dataset(const GenParams& params) {
    Dataset ds;
    ds.kg = generate_kg(params.kg);
    ds.split = make_splits(ds.kg, params.split);
    ds.vocab = Vocabulary::build(vocab_source_sentences(ds.kg, ds.split));
    ds.items_op = make_eval_items(ds.kg, ds.split.frozen_fact_indices, Task::object_prediction,
                                  params.eval);
    EvalItemParams one = params.eval;
    one.items_per_fact = 1;
    ds.items_rr = make_eval_items(ds.kg, ds.split.frozen_fact_indices, Task::relation_reasoning, one);
    ds.items_fv = make_eval_items(ds.kg, ds.split.frozen_fact_indices, Task::fact_verification, one);
    return ds;
}

inline void write_dataset(const Dataset& ds, const GenParams& params, const std::string& dir) {
    std::filesystem::create_directories(dir);
    DataPaths paths{dir};
    write_corpus_file(ds.split.train_sequences, paths.corpus());
    write_facts_file(ds.kg, paths.facts());
    write_entities_file(ds.kg, paths.entities());
    write_relations_file(ds.kg, paths.relations());
    write_split_manifest(ds.kg, ds.split, params.split, paths.splits());
    ds.vocab.save(paths.vocab());
    write_eval_items_file(ds.items_op, paths.eval_items(Task::object_prediction));
    write_eval_items_file(ds.items_rr, paths.eval_items(Task::relation_reasoning));
    write_eval_items_file(ds.items_fv, paths.eval_items(Task::fact_verification));
}

inline Dataset load_dataset(const std::string& dir) {
    DataPaths paths{dir};
    Dataset ds;
    ds.kg = read_kg_files(paths.facts(), paths.entities(), paths.relations());
    ds.split = read_split_manifest(ds.kg, paths.splits(), paths.corpus());
    ds.vocab = Vocabulary::load(paths.vocab());
    ds.items_op = read_eval_items_file(paths.eval_items(Task::object_prediction));
    ds.items_rr = read_eval_items_file(paths.eval_items(Task::relation_reasoning));
    ds.items_fv = read_eval_items_file(paths.eval_items(Task::fact_verification));
    return ds;
}

// ---------------------------------------------------------------------------
// Bank construction
// ---------------------------------------------------------------------------

// Curated (frozen-eligible) fact surfaces occupy the leading slots in split
// order; the remainder starts as random non-special token sequences. The
// freeze mask covers the first round(rho*N) slots.
inline MemoryBank build_bank(const Dataset& ds, const ModelConfig& cfg, Rng& rng) {
    MemoryBank bank;
    bank.capacity = cfg.bank_capacity;
    bank.entry_length = cfg.entry_length;
    bank.vocab_size = ds.vocab.size();
    bank.tokens.assign(bank.capacity * bank.entry_length, Vocabulary::kPad);
    bank.uuids.assign(bank.capacity, Uuid{});

    const std::size_t n_curated = std::min<std::size_t>(ds.split.frozen_fact_indices.size(),
                                                        bank.capacity);
    for (std::size_t i = 0; i < n_curated; ++i) {
        const KnowledgeTriplet& f = ds.kg.facts[ds.split.frozen_fact_indices[i]];
        const auto toks = tokenize_entry(f.surface, ds.vocab, cfg.entry_length);
        std::copy(toks.begin(), toks.end(), bank.tokens.begin() + i * cfg.entry_length);
        bank.uuids[i] = f.uuid;
    }
    if (ds.vocab.size() < 3)
        throw config_error("vocabulary too small to draw random bank entries");
    for (std::uint64_t i = n_curated; i < bank.capacity; ++i) {
        for (std::uint32_t j = 0; j < cfg.entry_length; ++j)
            bank.tokens[i * cfg.entry_length + j] =
                2 + static_cast<std::uint32_t>(rng.uniform_u64(ds.vocab.size() - 2));
        bank.uuids[i] = Uuid::random(rng);
    }
    partition(bank, cfg.freeze_rate);
    return bank;
}

inline EmaState init_ema(const MemoryBank& bank, const Tensor& tok_emb, const ModelConfig& cfg) {
    EmaState ema;
    ema.updatable_count = bank.updatable_count();
    ema.dim = cfg.dim;
    ema.decay = cfg.ema_decay;
    ema.epsilon = cfg.ema_epsilon;
    ema.cluster_size.assign(ema.updatable_count, 1.0);
    ema.shadow.resize(ema.updatable_count * ema.dim);
    const std::uint64_t base = bank.updatable_base();
    for (std::uint64_t local = 0; local < ema.updatable_count; ++local) {
        const auto pooled = detail::pooled_entry_values(bank, base + local, tok_emb);
        std::copy(pooled.begin(), pooled.end(), ema.shadow.begin() + local * ema.dim);
    }
    return ema;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainParams {
    std::uint64_t steps = 500;
    std::uint64_t sample_limit = 0;  // 0 = use the whole training corpus
};

struct TrainRun {
    Model model;
    MemoryBank bank;
    EmaState ema;
    std::vector<LossReport> log;
};

inline TrainRun run_training(const ModelConfig& cfg, const Dataset& ds, const TrainParams& params,
                             const std::function<void(std::uint64_t, const LossReport&)>& on_step = {}) {
    cfg.validate();
    Rng rng(cfg.seed);

    std::vector<std::vector<std::uint32_t>> sequences;
    const std::size_t limit = params.sample_limit == 0
                                  ? ds.split.train_sequences.size()
                                  : std::min<std::size_t>(params.sample_limit,
                                                          ds.split.train_sequences.size());
    for (std::size_t i = 0; i < limit; ++i) {
        auto toks = ds.vocab.encode(ds.split.train_sequences[i]);
        if (toks.size() >= 2 && toks.size() <= cfg.max_seq_len) sequences.push_back(std::move(toks));
    }
    if (sequences.empty()) throw config_error("no usable training sequences");

    TrainRun run{.model = {}, .bank = build_bank(ds, cfg, rng), .ema = {}, .log = {}};
    run.model = init_model(cfg, rng, &run.bank);
    run.ema = init_ema(run.bank, run.model.tok_emb, cfg);

    TrainState state;
    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = 0;
    rng.shuffle(order);

    for (std::uint64_t step = 0; step < params.steps; ++step) {
        std::vector<std::vector<std::uint32_t>> batch;
        for (std::uint32_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(sequences[order[cursor++]]);
        }
        const LossReport report = train_step(run.model, run.bank, run.ema, state, batch, rng);
        run.log.push_back(report);
        if (on_step) on_step(step, report);
    }
    return run;
}

// ---------------------------------------------------------------------------
// Full evaluation of one trained model
// ---------------------------------------------------------------------------

struct FullEval {
    TaskEvalResult op, rr, fv;
    HitRateReport rr_hits;
};

inline FullEval evaluate_model(Model& model, const MemoryBank& bank, const Dataset& ds) {
    EvalContext ctx;
    ctx.vocab = &ds.vocab;
    ctx.relation_names = ds.relation_names();
    FullEval out;
    out.op = evaluate_items(model, bank, ctx, ds.items_op);
    out.rr = evaluate_items(model, bank, ctx, ds.items_rr);
    out.fv = evaluate_items(model, bank, ctx, ds.items_fv);
    if (model.config.memory_enabled) out.rr_hits = hit_rate_analysis(out.rr.outcomes, model.config.n_layers);
    return out;
}

}  // namespace xlm
