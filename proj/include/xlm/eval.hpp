#pragma once

// Task evaluators (object prediction, relation reasoning, fact verification),
// layer-wise hit-rate analysis, and the replace-vs-retain oracle intervention.
// All evaluation is deterministic: Gumbel noise is off outside training and
// items carry their distractor sets from generation time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/corpus.hpp"
#include "xlm/memory_bank.hpp"
#include "xlm/model.hpp"

namespace xlm {

// Sum over positions of log p(x_{t+1} | x_{<=t}). Also exposes the per-layer
// selections of this forward pass for hit accounting.
inline double score_sentence(Model& m, const MemoryBank* bank,
                             const std::vector<std::uint32_t>& tokens,
                             std::vector<std::uint64_t>* selected_out = nullptr,
                             const ForwardOptions* opt_in = nullptr) {
    if (tokens.size() < 2) throw contract_error("score_sentence: need at least 2 tokens");
    NoGradGuard guard;
    Rng rng(0);  // unused: eval mode draws no noise
    ForwardOptions opt;
    if (opt_in != nullptr) opt = *opt_in;
    opt.train_mode = false;
    std::vector<std::uint32_t> inputs(tokens.begin(), tokens.end() - 1);
    SequenceForward fwd = forward_sequence(m, inputs, bank, rng, opt);
    const std::size_t V = m.config.vocab_size;
    const auto& logits = fwd.logits.data();
    double total = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const double* row = logits.data() + t * V;
        double mx = row[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < V; ++j) denom += std::exp(row[j] - mx);
        total += row[tokens[t + 1]] - mx - std::log(denom);
    }
    if (selected_out != nullptr) {
        selected_out->clear();
        for (const LayerRetrieval& r : fwd.retrievals) selected_out->push_back(r.selection.hard_index);
    }
    return total;
}

struct ItemOutcome {
    std::uint64_t item_id = 0;
    bool correct = false;
    std::vector<bool> layer_hit;  // gold-sentence trace: selected uuid == gold uuid
    bool sample_hit = false;      // at least one layer hit
};

struct TaskEvalResult {
    Task task = Task::object_prediction;
    double accuracy = 0.0;
    std::vector<ItemOutcome> outcomes;
};

namespace detail {

inline std::vector<bool> hits_from_selection(const MemoryBank& bank,
                                             const std::vector<std::uint64_t>& selected,
                                             const Uuid& gold) {
    std::vector<bool> hits(selected.size(), false);
    for (std::size_t l = 0; l < selected.size(); ++l)
        hits[l] = bank.uuids[selected[l]] == gold;
    return hits;
}

}  // namespace detail

struct EvalContext {
    const Vocabulary* vocab = nullptr;
    std::vector<std::string> relation_names;  // relation reasoning candidates
    const InterventionSpec* intervention = nullptr;
};

// Shared scorer. Object prediction ranks the 6 candidate objects, relation
// reasoning ranks every predicate, fact verification thresholds sentence
// log-likelihood at the batch median. Ties count as incorrect. The hit trace
// comes from the forward pass over the gold-completed sentence.
inline TaskEvalResult evaluate_items(Model& m, const MemoryBank& bank, const EvalContext& ctx,
                                     const std::vector<EvalItem>& items) {
    if (items.empty()) throw contract_error("evaluate_items: empty item list");
    const Task task = items.front().task;

    std::unordered_map<std::uint64_t, std::uint64_t> entry_by_uuid_lo;
    for (std::uint64_t i = 0; i < bank.capacity; ++i) entry_by_uuid_lo[bank.uuids[i].lo] = i;
    auto oracle_entry_of = [&](const EvalItem& item) -> std::uint64_t {
        auto it = entry_by_uuid_lo.find(item.gold_uuid.lo);
        if (it == entry_by_uuid_lo.end() || bank.uuids[it->second] != item.gold_uuid)
            throw oracle_error("gold entry " + item.gold_uuid.to_string() + " absent from bank");
        return it->second;
    };

    const bool replacing =
        ctx.intervention != nullptr && ctx.intervention->mode == InterventionMode::replace;

    TaskEvalResult result;
    result.task = task;

    std::vector<double> fv_scores;  // fact verification needs the full batch first
    std::vector<std::vector<std::uint64_t>> fv_selected;

    for (const EvalItem& item : items) {
        ForwardOptions opt;
        std::optional<std::uint64_t> oracle;
        if (replacing) {
            oracle = oracle_entry_of(item);
            opt.intervention = ctx.intervention;
            opt.oracle_entry = *oracle;
        }
        const ForwardOptions* optp = replacing ? &opt : nullptr;

        switch (task) {
            case Task::object_prediction: {
                std::vector<std::string> candidates;
                candidates.push_back(item.object);
                for (const std::string& d : item.distractors) candidates.push_back(d);
                double gold_score = 0.0;
                bool gold_strictly_best = true;
                std::vector<std::uint64_t> gold_selected;
                for (std::size_t c = 0; c < candidates.size(); ++c) {
                    const auto tokens = ctx.vocab->encode(item_sentence(item, candidates[c]));
                    std::vector<std::uint64_t> selected;
                    const double s = score_sentence(m, &bank, tokens, &selected, optp);
                    if (c == 0) {
                        gold_score = s;
                        gold_selected = std::move(selected);
                    } else if (s >= gold_score) {
                        gold_strictly_best = false;
                    }
                }
                ItemOutcome o;
                o.item_id = item.item_id;
                o.correct = gold_strictly_best;
                o.layer_hit = detail::hits_from_selection(bank, gold_selected, item.gold_uuid);
                o.sample_hit = std::any_of(o.layer_hit.begin(), o.layer_hit.end(),
                                           [](bool h) { return h; });
                result.outcomes.push_back(std::move(o));
                break;
            }
            case Task::relation_reasoning: {
                if (ctx.relation_names.size() < 2)
                    throw contract_error("relation reasoning needs at least 2 predicates");
                double gold_score = 0.0;
                bool gold_strictly_best = true;
                std::vector<std::uint64_t> gold_selected;
                bool saw_gold = false;
                std::vector<double> other_scores;
                for (const std::string& rel : ctx.relation_names) {
                    const auto tokens = ctx.vocab->encode(item_sentence(item, rel));
                    std::vector<std::uint64_t> selected;
                    const double s = score_sentence(m, &bank, tokens, &selected, optp);
                    if (rel == item.predicate) {
                        gold_score = s;
                        gold_selected = std::move(selected);
                        saw_gold = true;
                    } else {
                        other_scores.push_back(s);
                    }
                }
                if (!saw_gold)
                    throw contract_error("gold predicate " + item.predicate +
                                         " missing from relation candidates");
                for (double s : other_scores)
                    if (s >= gold_score) gold_strictly_best = false;
                ItemOutcome o;
                o.item_id = item.item_id;
                o.correct = gold_strictly_best;
                o.layer_hit = detail::hits_from_selection(bank, gold_selected, item.gold_uuid);
                o.sample_hit = std::any_of(o.layer_hit.begin(), o.layer_hit.end(),
                                           [](bool h) { return h; });
                result.outcomes.push_back(std::move(o));
                break;
            }
            case Task::fact_verification: {
                const auto tokens = ctx.vocab->encode(item_sentence(item, item.shown_object));
                std::vector<std::uint64_t> selected;
                fv_scores.push_back(score_sentence(m, &bank, tokens, &selected, optp));
                fv_selected.push_back(std::move(selected));
                break;
            }
        }
    }

    if (task == Task::fact_verification) {
        std::vector<double> sorted = fv_scores;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        const double median =
            n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        for (std::size_t i = 0; i < items.size(); ++i) {
            const bool predicted_true = fv_scores[i] > median;
            ItemOutcome o;
            o.item_id = items[i].item_id;
            o.correct = predicted_true == items[i].label;
            o.layer_hit = detail::hits_from_selection(bank, fv_selected[i], items[i].gold_uuid);
            o.sample_hit = std::any_of(o.layer_hit.begin(), o.layer_hit.end(),
                                       [](bool h) { return h; });
            result.outcomes.push_back(std::move(o));
        }
    }

    std::size_t correct = 0;
    for (const ItemOutcome& o : result.outcomes) correct += o.correct ? 1 : 0;
    result.accuracy = static_cast<double>(correct) / static_cast<double>(result.outcomes.size());
    return result;
}

inline TaskEvalResult eval_object_prediction(Model& m, const MemoryBank& bank, const EvalContext& ctx,
                                             const std::vector<EvalItem>& items) {
    return evaluate_items(m, bank, ctx, items);
}
inline TaskEvalResult eval_relation_reasoning(Model& m, const MemoryBank& bank, const EvalContext& ctx,
                                              const std::vector<EvalItem>& items) {
    return evaluate_items(m, bank, ctx, items);
}
inline TaskEvalResult eval_fact_verification(Model& m, const MemoryBank& bank, const EvalContext& ctx,
                                             const std::vector<EvalItem>& items) {
    return evaluate_items(m, bank, ctx, items);
}

// ---------------------------------------------------------------------------
// Hit-rate analysis
// ---------------------------------------------------------------------------

struct HitRateReport {
    std::vector<double> layer_rate_correct;
    std::vector<double> layer_rate_incorrect;
    std::vector<double> layer_rate_overall;
    double overall_correct = 0.0;    // sample-hit rate among correct predictions
    double overall_incorrect = 0.0;  // sample-hit rate among incorrect predictions
    double overall = 0.0;
    std::uint64_t n_correct = 0;
    std::uint64_t n_incorrect = 0;
};

inline HitRateReport hit_rate_analysis(const std::vector<ItemOutcome>& outcomes,
                                       std::uint32_t n_layers) {
    if (outcomes.empty()) throw contract_error("hit_rate_analysis: no outcomes");
    for (const ItemOutcome& o : outcomes)
        if (o.layer_hit.size() != n_layers)
            throw contract_error("hit_rate_analysis: outcome lacks a per-layer trace");

    HitRateReport r;
    r.layer_rate_correct.assign(n_layers, 0.0);
    r.layer_rate_incorrect.assign(n_layers, 0.0);
    r.layer_rate_overall.assign(n_layers, 0.0);
    std::uint64_t hit_correct = 0, hit_incorrect = 0;
    for (const ItemOutcome& o : outcomes) {
        (o.correct ? r.n_correct : r.n_incorrect) += 1;
        if (o.sample_hit) (o.correct ? hit_correct : hit_incorrect) += 1;
        for (std::uint32_t l = 0; l < n_layers; ++l) {
            if (!o.layer_hit[l]) continue;
            r.layer_rate_overall[l] += 1.0;
            (o.correct ? r.layer_rate_correct[l] : r.layer_rate_incorrect[l]) += 1.0;
        }
    }
    const auto total = static_cast<double>(outcomes.size());
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        r.layer_rate_overall[l] /= total;
        if (r.n_correct > 0) r.layer_rate_correct[l] /= static_cast<double>(r.n_correct);
        if (r.n_incorrect > 0) r.layer_rate_incorrect[l] /= static_cast<double>(r.n_incorrect);
    }
    if (r.n_correct > 0) r.overall_correct = static_cast<double>(hit_correct) / static_cast<double>(r.n_correct);
    if (r.n_incorrect > 0)
        r.overall_incorrect = static_cast<double>(hit_incorrect) / static_cast<double>(r.n_incorrect);
    r.overall = static_cast<double>(hit_correct + hit_incorrect) / total;
    return r;
}

// ---------------------------------------------------------------------------
// Replace-vs-retain oracle intervention
// ---------------------------------------------------------------------------

// Default intervention targets: the layers with the highest overall hit rate
// on a validation slice of relation-reasoning items.
inline std::set<std::uint32_t> pick_intervention_layers(Model& m, const MemoryBank& bank,
                                                        const EvalContext& base_ctx,
                                                        const std::vector<EvalItem>& rr_items,
                                                        std::uint32_t how_many = 2) {
    const std::size_t slice = std::min<std::size_t>(rr_items.size(), 200);
    std::vector<EvalItem> subset(rr_items.begin(), rr_items.begin() + slice);
    EvalContext ctx = base_ctx;
    ctx.intervention = nullptr;
    TaskEvalResult res = evaluate_items(m, bank, ctx, subset);
    HitRateReport hits = hit_rate_analysis(res.outcomes, m.config.n_layers);
    std::vector<std::uint32_t> layers(m.config.n_layers);
    for (std::uint32_t l = 0; l < m.config.n_layers; ++l) layers[l] = l;
    std::sort(layers.begin(), layers.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (hits.layer_rate_overall[a] != hits.layer_rate_overall[b])
            return hits.layer_rate_overall[a] > hits.layer_rate_overall[b];
        return a < b;
    });
    std::set<std::uint32_t> out;
    for (std::uint32_t i = 0; i < std::min<std::uint32_t>(how_many, m.config.n_layers); ++i)
        out.insert(layers[i]);
    return out;
}

struct InterventionResult {
    double retain_accuracy = 0.0;
    double replace_accuracy = 0.0;
    double delta() const { return replace_accuracy - retain_accuracy; }
};

inline InterventionResult replace_retain_experiment(Model& m, const MemoryBank& bank,
                                                    const EvalContext& base_ctx,
                                                    const std::vector<EvalItem>& items,
                                                    const InterventionSpec& spec) {
    for (std::uint32_t l : spec.target_layers)
        if (l >= m.config.n_layers)
            throw config_error("intervention layer " + std::to_string(l) + " out of range");
    InterventionResult out;
    EvalContext retain_ctx = base_ctx;
    retain_ctx.intervention = nullptr;
    out.retain_accuracy = evaluate_items(m, bank, retain_ctx, items).accuracy;

    InterventionSpec replace_spec = spec;
    replace_spec.mode = InterventionMode::replace;
    EvalContext replace_ctx = base_ctx;
    replace_ctx.intervention = &replace_spec;
    out.replace_accuracy = evaluate_items(m, bank, replace_ctx, items).accuracy;
    return out;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

struct EvalReport {
    std::map<std::string, std::map<std::string, double>> sections;  // task -> metric -> value

    void set(const std::string& task, const std::string& metric, double value) {
        sections[task][metric] = value;
    }

    // rows: task,mode,metric,value
    void write_csv(const std::string& path, const std::string& mode = "eval") const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw persistence_error("cannot write report: " + path);
        out << "task,mode,metric,value\n";
        out.precision(10);
        for (const auto& [task, metrics] : sections)
            for (const auto& [metric, value] : metrics)
                out << task << "," << mode << "," << metric << "," << value << "\n";
    }

    void print_table(std::ostream& out) const {
        out << std::left << std::setw(24) << "task" << std::setw(28) << "metric"
            << "value\n";
        out << std::string(60, '-') << "\n";
        for (const auto& [task, metrics] : sections)
            for (const auto& [metric, value] : metrics)
                out << std::left << std::setw(24) << task << std::setw(28) << metric << std::fixed
                    << std::setprecision(4) << value << "\n";
        out.unsetf(std::ios::fixed);
    }
};

}  // namespace xlm
