#pragma once

// Synthetic knowledge-graph corpus: typed entities, functional relations
// (one object per subject-predicate pair), rendered fact sentences, filler
// text, and the train/frozen split that keeps every evaluation fact's surface
// out of the training sequences.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/memory_bank.hpp"
#include "xlm/vocab.hpp"

namespace xlm {

enum class EntityType : std::uint8_t { person = 0, place = 1, thing = 2 };

inline const char* entity_type_name(EntityType t) {
    switch (t) {
        case EntityType::person: return "person";
        case EntityType::place: return "place";
        case EntityType::thing: return "thing";
    }
    return "?";
}

inline EntityType entity_type_from_string(const std::string& s) {
    if (s == "person") return EntityType::person;
    if (s == "place") return EntityType::place;
    if (s == "thing") return EntityType::thing;
    throw contract_error("unknown entity type: " + s);
}

struct Entity {
    std::string name;
    EntityType type;
};

struct Relation {
    std::string name;
    EntityType object_type;
};

struct KnowledgeTriplet {
    std::string subject;
    std::string predicate;
    std::string object;
    Uuid uuid;
    std::string surface;  // "subject predicate object"
};

struct KnowledgeGraph {
    std::vector<Entity> entities;
    std::vector<Relation> relations;
    std::vector<KnowledgeTriplet> facts;

    std::vector<std::string> entities_of_type(EntityType t) const {
        std::vector<std::string> out;
        for (const Entity& e : entities)
            if (e.type == t) out.push_back(e.name);
        return out;
    }

    std::optional<EntityType> type_of(const std::string& name) const {
        for (const Entity& e : entities)
            if (e.name == name) return e.type;
        return std::nullopt;
    }

    std::optional<std::size_t> relation_index(const std::string& name) const {
        for (std::size_t i = 0; i < relations.size(); ++i)
            if (relations[i].name == name) return i;
        return std::nullopt;
    }
};

struct KgParams {
    std::uint64_t seed = 7;
    std::uint32_t n_entities = 200;
    std::uint32_t n_relations = 12;
    std::uint64_t n_facts = 2000;
};

namespace detail {

inline std::vector<Relation> default_relations(std::uint32_t n) {
    static const std::vector<Relation> curated = {
        {"born_in", EntityType::place},   {"lives_in", EntityType::place},
        {"works_in", EntityType::place},  {"traveled_to", EntityType::place},
        {"studied_in", EntityType::place},{"owns", EntityType::thing},
        {"created", EntityType::thing},   {"uses", EntityType::thing},
        {"collects", EntityType::thing},  {"knows", EntityType::person},
        {"mentors", EntityType::person},  {"admires", EntityType::person},
    };
    std::vector<Relation> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        if (i < curated.size()) {
            out.push_back(curated[i]);
        } else {
            const auto t = static_cast<EntityType>(i % 3);
            out.push_back({"rel" + std::to_string(i) + "_" + entity_type_name(t), t});
        }
    }
    return out;
}

}  // namespace detail

// Deterministic generator. Relations are functional: each (subject, predicate)
// pair occurs at most once, so Object Prediction has a unique answer.
inline KnowledgeGraph generate_kg(const KgParams& params) {
    if (params.n_facts == 0) throw generation_error("fact count must be positive");
    if (params.n_entities < 6)
        throw generation_error("need at least 6 entities, got " + std::to_string(params.n_entities));
    if (params.n_relations == 0) throw generation_error("relation count must be positive");
    const std::uint64_t max_pairs =
        static_cast<std::uint64_t>(params.n_entities) * params.n_relations;
    if (params.n_facts > max_pairs)
        throw generation_error("cannot generate " + std::to_string(params.n_facts) +
                               " functional facts from " + std::to_string(params.n_entities) +
                               " entities x " + std::to_string(params.n_relations) + " relations (max " +
                               std::to_string(max_pairs) + ")");

    Rng rng(params.seed);
    KnowledgeGraph kg;
    std::uint32_t per_type_counter[3] = {0, 0, 0};
    for (std::uint32_t i = 0; i < params.n_entities; ++i) {
        const auto t = static_cast<EntityType>(i % 3);
        kg.entities.push_back({std::string(entity_type_name(t)) +
                                   std::to_string(per_type_counter[static_cast<int>(t)]++),
                               t});
    }
    kg.relations = detail::default_relations(params.n_relations);

    std::vector<std::vector<std::uint32_t>> pool_by_type(3);
    for (std::uint32_t i = 0; i < kg.entities.size(); ++i)
        pool_by_type[static_cast<int>(kg.entities[i].type)].push_back(i);
    for (int t = 0; t < 3; ++t)
        if (pool_by_type[t].empty())
            throw generation_error("entity pool for type " +
                                   std::string(entity_type_name(static_cast<EntityType>(t))) +
                                   " is empty");

    // Enumerate all (subject, relation) pairs, visit in seeded random order.
    std::vector<std::uint64_t> pairs(max_pairs);
    for (std::uint64_t i = 0; i < max_pairs; ++i) pairs[i] = i;
    rng.shuffle(pairs);

    std::unordered_set<std::uint64_t> used_uuid_lo;
    for (std::uint64_t flat : pairs) {
        if (kg.facts.size() == params.n_facts) break;
        const std::uint32_t subj = static_cast<std::uint32_t>(flat / params.n_relations);
        const std::uint32_t rel = static_cast<std::uint32_t>(flat % params.n_relations);
        const auto& pool = pool_by_type[static_cast<int>(kg.relations[rel].object_type)];
        // draw an object of the relation's type, distinct from the subject
        std::uint32_t obj = pool[rng.uniform_u64(pool.size())];
        if (obj == subj) {
            if (pool.size() < 2) continue;
            while (obj == subj) obj = pool[rng.uniform_u64(pool.size())];
        }
        Uuid uuid = Uuid::random(rng);
        while (!used_uuid_lo.insert(uuid.lo).second) uuid = Uuid::random(rng);
        KnowledgeTriplet t;
        t.subject = kg.entities[subj].name;
        t.predicate = kg.relations[rel].name;
        t.object = kg.entities[obj].name;
        t.uuid = uuid;
        t.surface = t.subject + " " + t.predicate + " " + t.object;
        kg.facts.push_back(std::move(t));
    }
    if (kg.facts.size() < params.n_facts)
        throw generation_error("exhausted subject-predicate pairs at " +
                               std::to_string(kg.facts.size()) + " facts");
    return kg;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitParams {
    double freeze_rate = 0.2;
    std::uint64_t bank_capacity = 1024;
    std::uint64_t seed = 7;
    double filler_ratio = 1.0;  // filler lines per fact line
};

struct DatasetSplit {
    std::vector<std::uint32_t> frozen_fact_indices;  // ordered; bank layout order
    std::vector<std::uint32_t> train_fact_indices;
    std::vector<std::string> train_sequences;
    std::unordered_set<Uuid, UuidHash> frozen_uuids;
};

namespace detail {

inline const std::vector<std::string>& filler_nouns() {
    static const std::vector<std::string> v = {"cat",   "dog",   "bird",  "tree",  "river",
                                               "stone", "house", "cloud", "garden", "door"};
    return v;
}
inline const std::vector<std::string>& filler_verbs() {
    static const std::vector<std::string> v = {"sits", "runs",  "sleeps", "sings",
                                               "waits", "falls", "turns",  "opens"};
    return v;
}
inline const std::vector<std::string>& filler_adverbs() {
    static const std::vector<std::string> v = {"quietly", "slowly", "quickly", "today", "again", "soon"};
    return v;
}

inline std::string filler_sentence(Rng& rng) {
    const auto& nouns = filler_nouns();
    const auto& verbs = filler_verbs();
    const auto& advs = filler_adverbs();
    switch (rng.uniform_u64(3)) {
        case 0:
            return "the " + nouns[rng.uniform_u64(nouns.size())] + " " +
                   verbs[rng.uniform_u64(verbs.size())];
        case 1:
            return "the " + nouns[rng.uniform_u64(nouns.size())] + " " +
                   verbs[rng.uniform_u64(verbs.size())] + " " + advs[rng.uniform_u64(advs.size())];
        default:
            return "a " + nouns[rng.uniform_u64(nouns.size())] + " " +
                   verbs[rng.uniform_u64(verbs.size())] + " " + advs[rng.uniform_u64(advs.size())];
    }
}

// Training-only paraphrases; the canonical "s p o" rendering dominates.
inline std::string render_training_fact(const KnowledgeTriplet& t, Rng& rng) {
    switch (rng.uniform_u64(4)) {
        case 0: return "also " + t.surface;
        case 1: return "we know " + t.surface;
        default: return t.surface;
    }
}

}  // namespace detail

// Frozen facts are chosen subject-clustered: whole subjects go frozen until
// the quota is met. Their surfaces never reach the training text, and the
// bank layout groups same-subject facts into adjacent slots, which is what
// lets the product-key rows carry subject-level structure.
inline DatasetSplit make_splits(const KnowledgeGraph& kg, const SplitParams& params) {
    const std::uint64_t n_frozen = freeze_count_for(params.freeze_rate, params.bank_capacity);
    if (n_frozen == 0)
        throw config_error("freeze rate " + std::to_string(params.freeze_rate) +
                           " yields an empty frozen partition; no evaluation items can be built");
    if (n_frozen > kg.facts.size())
        throw config_error("frozen partition needs " + std::to_string(n_frozen) + " facts but only " +
                           std::to_string(kg.facts.size()) + " were generated");

    Rng rng(params.seed);

    std::map<std::string, std::vector<std::uint32_t>> by_subject;
    for (std::uint32_t i = 0; i < kg.facts.size(); ++i)
        by_subject[kg.facts[i].subject].push_back(i);
    std::vector<std::string> subjects;
    subjects.reserve(by_subject.size());
    for (auto& [s, facts] : by_subject) subjects.push_back(s);
    rng.shuffle(subjects);

    DatasetSplit split;
    std::vector<std::uint8_t> is_frozen(kg.facts.size(), 0);
    for (const std::string& s : subjects) {
        if (split.frozen_fact_indices.size() == n_frozen) break;
        auto group = by_subject[s];
        std::sort(group.begin(), group.end(), [&](std::uint32_t a, std::uint32_t b) {
            const auto ra = kg.relation_index(kg.facts[a].predicate).value_or(0);
            const auto rb = kg.relation_index(kg.facts[b].predicate).value_or(0);
            if (ra != rb) return ra < rb;
            return kg.facts[a].object < kg.facts[b].object;
        });
        for (std::uint32_t idx : group) {
            if (split.frozen_fact_indices.size() == n_frozen) break;
            split.frozen_fact_indices.push_back(idx);
            is_frozen[idx] = 1;
            split.frozen_uuids.insert(kg.facts[idx].uuid);
        }
    }

    for (std::uint32_t i = 0; i < kg.facts.size(); ++i)
        if (!is_frozen[i]) split.train_fact_indices.push_back(i);

    std::vector<std::string> lines;
    for (std::uint32_t idx : split.train_fact_indices)
        lines.push_back(detail::render_training_fact(kg.facts[idx], rng));
    const auto n_filler = static_cast<std::uint64_t>(
        std::llround(params.filler_ratio * static_cast<double>(lines.size())));
    for (std::uint64_t i = 0; i < n_filler; ++i) lines.push_back(detail::filler_sentence(rng));
    rng.shuffle(lines);
    split.train_sequences = std::move(lines);
    return split;
}

// ---------------------------------------------------------------------------
// Evaluation items
// ---------------------------------------------------------------------------

enum class Task : std::uint8_t { object_prediction = 0, relation_reasoning = 1, fact_verification = 2 };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::object_prediction: return "object_prediction";
        case Task::relation_reasoning: return "relation_reasoning";
        case Task::fact_verification: return "fact_verification";
    }
    return "?";
}

struct EvalItem {
    std::uint64_t item_id = 0;
    Task task = Task::object_prediction;
    Uuid gold_uuid;
    std::string subject;
    std::string predicate;  // gold predicate
    std::string object;     // gold object
    std::vector<std::string> distractors;  // object prediction only
    bool label = true;                     // fact verification
    std::string shown_object;              // fact verification (== object when positive)
};

struct EvalItemParams {
    std::uint32_t n_distractors = 5;
    std::uint64_t seed = 11;
    std::uint32_t items_per_fact = 1;  // object prediction resamples distractor sets
};

inline std::vector<EvalItem> make_eval_items(const KnowledgeGraph& kg,
                                             const std::vector<std::uint32_t>& frozen_fact_indices,
                                             Task task, const EvalItemParams& params) {
    if (frozen_fact_indices.empty())
        throw generation_error("no frozen facts available for evaluation items");
    Rng rng(params.seed);
    std::vector<EvalItem> items;
    std::uint64_t next_id = 0;

    auto type_pool = [&](const std::string& name) {
        const auto t = kg.type_of(name);
        if (!t) throw generation_error("entity missing from graph: " + name);
        return kg.entities_of_type(*t);
    };

    switch (task) {
        case Task::object_prediction: {
            for (std::uint32_t rep = 0; rep < std::max<std::uint32_t>(1, params.items_per_fact); ++rep) {
                for (std::uint32_t idx : frozen_fact_indices) {
                    const KnowledgeTriplet& f = kg.facts[idx];
                    std::vector<std::string> pool = type_pool(f.object);
                    pool.erase(std::remove(pool.begin(), pool.end(), f.object), pool.end());
                    if (pool.size() < params.n_distractors)
                        throw generation_error("too few " +
                                               std::string(entity_type_name(*kg.type_of(f.object))) +
                                               " entities for " + std::to_string(params.n_distractors) +
                                               " distractors");
                    rng.shuffle(pool);
                    EvalItem item;
                    item.item_id = next_id++;
                    item.task = task;
                    item.gold_uuid = f.uuid;
                    item.subject = f.subject;
                    item.predicate = f.predicate;
                    item.object = f.object;
                    item.distractors.assign(pool.begin(), pool.begin() + params.n_distractors);
                    items.push_back(std::move(item));
                }
            }
            break;
        }
        case Task::relation_reasoning: {
            if (kg.relations.size() < 2)
                throw generation_error("relation reasoning needs at least 2 predicates");
            for (std::uint32_t idx : frozen_fact_indices) {
                const KnowledgeTriplet& f = kg.facts[idx];
                EvalItem item;
                item.item_id = next_id++;
                item.task = task;
                item.gold_uuid = f.uuid;
                item.subject = f.subject;
                item.predicate = f.predicate;
                item.object = f.object;
                items.push_back(std::move(item));
            }
            break;
        }
        case Task::fact_verification: {
            for (std::uint32_t idx : frozen_fact_indices) {
                const KnowledgeTriplet& f = kg.facts[idx];
                EvalItem pos;
                pos.item_id = next_id++;
                pos.task = task;
                pos.gold_uuid = f.uuid;
                pos.subject = f.subject;
                pos.predicate = f.predicate;
                pos.object = f.object;
                pos.label = true;
                pos.shown_object = f.object;
                items.push_back(std::move(pos));

                std::vector<std::string> pool = type_pool(f.object);
                pool.erase(std::remove(pool.begin(), pool.end(), f.object), pool.end());
                if (pool.empty())
                    throw generation_error("no substitute object available for negative sample");
                EvalItem neg;
                neg.item_id = next_id++;
                neg.task = task;
                neg.gold_uuid = f.uuid;
                neg.subject = f.subject;
                neg.predicate = f.predicate;
                neg.object = f.object;
                neg.label = false;
                neg.shown_object = pool[rng.uniform_u64(pool.size())];
                items.push_back(std::move(neg));
            }
            break;
        }
    }
    return items;
}

// Sentence actually scored by the model for an item completion.
inline std::string item_sentence(const EvalItem& item, const std::string& completion) {
    switch (item.task) {
        case Task::object_prediction: return item.subject + " " + item.predicate + " " + completion;
        case Task::relation_reasoning: return item.subject + " " + completion + " " + item.object;
        case Task::fact_verification: return item.subject + " " + item.predicate + " " + completion;
    }
    throw contract_error("unknown task");
}

inline std::string item_gold_sentence(const EvalItem& item) {
    return item.subject + " " + item.predicate + " " + item.object;
}

// ---------------------------------------------------------------------------
// Dataset artifacts on disk
// ---------------------------------------------------------------------------

inline void write_corpus_file(const std::vector<std::string>& sequences, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write corpus: " + path);
    for (const std::string& s : sequences) out << s << "\n";
}

inline std::vector<std::string> read_corpus_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw persistence_error("cannot read corpus: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

inline void write_facts_file(const KnowledgeGraph& kg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write facts: " + path);
    for (const KnowledgeTriplet& f : kg.facts)
        out << f.uuid.to_string() << "\t" << f.subject << "\t" << f.predicate << "\t" << f.object
            << "\t" << f.surface << "\n";
}

inline void write_entities_file(const KnowledgeGraph& kg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write entities: " + path);
    for (const Entity& e : kg.entities) out << e.name << "\t" << entity_type_name(e.type) << "\n";
}

inline void write_relations_file(const KnowledgeGraph& kg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write relations: " + path);
    for (const Relation& r : kg.relations) out << r.name << "\t" << entity_type_name(r.object_type) << "\n";
}

inline KnowledgeGraph read_kg_files(const std::string& facts_path, const std::string& entities_path,
                                    const std::string& relations_path) {
    KnowledgeGraph kg;
    {
        std::ifstream in(entities_path);
        if (!in) throw persistence_error("cannot read entities: " + entities_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw persistence_error("malformed entity row: " + line);
            kg.entities.push_back({line.substr(0, tab), entity_type_from_string(line.substr(tab + 1))});
        }
    }
    {
        std::ifstream in(relations_path);
        if (!in) throw persistence_error("cannot read relations: " + relations_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw persistence_error("malformed relation row: " + line);
            kg.relations.push_back({line.substr(0, tab), entity_type_from_string(line.substr(tab + 1))});
        }
    }
    {
        std::ifstream in(facts_path);
        if (!in) throw persistence_error("cannot read facts: " + facts_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cols;
            std::size_t start = 0;
            while (true) {
                const auto tab = line.find('\t', start);
                cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
                if (tab == std::string::npos) break;
                start = tab + 1;
            }
            if (cols.size() != 5) throw persistence_error("malformed fact row: " + line);
            KnowledgeTriplet f;
            f.uuid = Uuid::parse(cols[0]);
            f.subject = cols[1];
            f.predicate = cols[2];
            f.object = cols[3];
            f.surface = cols[4];
            kg.facts.push_back(std::move(f));
        }
    }
    return kg;
}

inline void write_split_manifest(const KnowledgeGraph& kg, const DatasetSplit& split,
                                 const SplitParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write split manifest: " + path);
    out << "seed = " << params.seed << "\n";
    out << "freeze_rate = " << params.freeze_rate << "\n";
    out << "bank_capacity = " << params.bank_capacity << "\n";
    out << "n_frozen = " << split.frozen_fact_indices.size() << "\n";
    out << "n_train_facts = " << split.train_fact_indices.size() << "\n";
    out << "n_train_sequences = " << split.train_sequences.size() << "\n";
    out << "[frozen]\n";
    for (std::uint32_t idx : split.frozen_fact_indices) out << kg.facts[idx].uuid.to_string() << "\n";
    out << "[train]\n";
    for (std::uint32_t idx : split.train_fact_indices) out << kg.facts[idx].uuid.to_string() << "\n";
}

inline DatasetSplit read_split_manifest(const KnowledgeGraph& kg, const std::string& manifest_path,
                                        const std::string& corpus_path) {
    std::ifstream in(manifest_path);
    if (!in) throw persistence_error("cannot read split manifest: " + manifest_path);
    std::unordered_map<std::string, std::uint32_t> fact_by_uuid;
    for (std::uint32_t i = 0; i < kg.facts.size(); ++i)
        fact_by_uuid[kg.facts[i].uuid.to_string()] = i;

    DatasetSplit split;
    std::string line;
    int section = 0;  // 0 header, 1 frozen, 2 train
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line == "[frozen]") { section = 1; continue; }
        if (line == "[train]") { section = 2; continue; }
        if (section == 0) continue;  // key = value header
        auto it = fact_by_uuid.find(line);
        if (it == fact_by_uuid.end())
            throw persistence_error("split manifest references unknown fact uuid: " + line);
        if (section == 1) {
            split.frozen_fact_indices.push_back(it->second);
            split.frozen_uuids.insert(kg.facts[it->second].uuid);
        } else {
            split.train_fact_indices.push_back(it->second);
        }
    }
    split.train_sequences = read_corpus_file(corpus_path);
    return split;
}

inline void write_eval_items_file(const std::vector<EvalItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw persistence_error("cannot write eval items: " + path);
    for (const EvalItem& item : items) {
        out << item.item_id << "\t" << task_name(item.task) << "\t" << item.gold_uuid.to_string()
            << "\t" << item.subject << "\t" << item.predicate << "\t" << item.object << "\t";
        for (std::size_t i = 0; i < item.distractors.size(); ++i)
            out << (i ? "," : "") << item.distractors[i];
        out << "\t" << (item.label ? 1 : 0) << "\t" << item.shown_object << "\n";
    }
}

inline std::vector<EvalItem> read_eval_items_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw persistence_error("cannot read eval items: " + path);
    std::vector<EvalItem> items;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cols.size() != 9) throw persistence_error("malformed eval item row: " + line);
        EvalItem item;
        item.item_id = std::stoull(cols[0]);
        if (cols[1] == task_name(Task::object_prediction)) item.task = Task::object_prediction;
        else if (cols[1] == task_name(Task::relation_reasoning)) item.task = Task::relation_reasoning;
        else if (cols[1] == task_name(Task::fact_verification)) item.task = Task::fact_verification;
        else throw persistence_error("unknown task in eval item row: " + cols[1]);
        item.gold_uuid = Uuid::parse(cols[2]);
        item.subject = cols[3];
        item.predicate = cols[4];
        item.object = cols[5];
        if (!cols[6].empty()) {
            std::size_t s = 0;
            while (true) {
                const auto comma = cols[6].find(',', s);
                item.distractors.push_back(
                    cols[6].substr(s, comma == std::string::npos ? comma : comma - s));
                if (comma == std::string::npos) break;
                s = comma + 1;
            }
        }
        item.label = cols[7] == "1";
        item.shown_object = cols[8];
        items.push_back(std::move(item));
    }
    return items;
}

// Sentences feeding the vocabulary: training text plus every fact surface
// (frozen facts must tokenize for bank storage and evaluation even though
// they never appear in the training sequences) plus the paraphrase glue.
inline std::vector<std::string> vocab_source_sentences(const KnowledgeGraph& kg,
                                                       const DatasetSplit& split) {
    std::vector<std::string> all = split.train_sequences;
    for (const KnowledgeTriplet& f : kg.facts) all.push_back(f.surface);
    all.push_back("also we know");
    return all;
}

}  // namespace xlm
