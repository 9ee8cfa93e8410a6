#pragma once

// The explicit knowledge store: N entries of L token indices each, split into
// a frozen prefix (curated facts, immutable during training) and an updatable
// remainder adapted through EMA shadow embeddings plus token requantization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/serial.hpp"
#include "xlm/tensor.hpp"
#include "xlm/vocab.hpp"

namespace xlm {

struct MemoryBank {
    std::uint64_t capacity = 0;       // N; perfect square
    std::uint32_t entry_length = 0;   // L
    std::uint32_t vocab_size = 0;
    double freeze_rate = 0.0;         // rho
    std::vector<std::uint32_t> tokens;  // N*L row-major
    std::vector<std::uint8_t> frozen;   // N, 1 = frozen
    std::vector<Uuid> uuids;            // N

    std::span<const std::uint32_t> entry(std::uint64_t i) const {
        if (i >= capacity) throw bounds_error("bank entry index " + std::to_string(i) +
                                              " out of range " + std::to_string(capacity));
        return {tokens.data() + i * entry_length, entry_length};
    }

    std::span<std::uint32_t> entry_mut(std::uint64_t i) {
        if (i >= capacity) throw bounds_error("bank entry index out of range");
        return {tokens.data() + i * entry_length, entry_length};
    }

    bool is_frozen(std::uint64_t i) const {
        if (i >= capacity) throw bounds_error("bank entry index out of range");
        return frozen[i] != 0;
    }

    std::uint64_t frozen_count() const {
        std::uint64_t n = 0;
        for (std::uint8_t f : frozen) n += f;
        return n;
    }

    std::uint64_t updatable_count() const { return capacity - frozen_count(); }

    // First updatable index; frozen entries always occupy the prefix.
    std::uint64_t updatable_base() const { return frozen_count(); }

    std::uint64_t frozen_rows_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (std::uint64_t i = 0; i < capacity; ++i)
            if (frozen[i]) h = fnv1a64(tokens.data() + i * entry_length,
                                       entry_length * sizeof(std::uint32_t), h);
        return h;
    }

    std::optional<std::uint64_t> find_uuid(const Uuid& u) const {
        for (std::uint64_t i = 0; i < capacity; ++i)
            if (uuids[i] == u) return i;
        return std::nullopt;
    }
};

// EMA statistics for the updatable partition. shadow holds sum/(count+eps);
// the running sum itself is re-derived from that, which keeps the struct
// identical to what the bank file stores.
struct EmaState {
    std::uint64_t updatable_count = 0;
    std::uint32_t dim = 0;
    double decay = 0.99;     // gamma
    double epsilon = 1e-5;
    std::vector<double> cluster_size;  // N_updatable
    std::vector<double> shadow;        // N_updatable * dim

    std::span<const double> shadow_of(std::uint64_t local) const {
        if (local >= updatable_count) throw bounds_error("ema shadow index out of range");
        return {shadow.data() + local * dim, dim};
    }
};

inline std::uint64_t freeze_count_for(double rho, std::uint64_t capacity) {
    if (rho < 0.0 || rho > 1.0)
        throw config_error("freeze rate must lie in [0,1], got " + std::to_string(rho));
    return static_cast<std::uint64_t>(std::llround(rho * static_cast<double>(capacity)));
}

// ---------------------------------------------------------------------------
// Tokenize / detokenize
// ---------------------------------------------------------------------------

// Deterministic: right-pads with PAD to length L, truncates beyond L.
// Unknown words are an error, not an UNK substitution; bank entries must stay
// exactly decodable.
inline std::vector<std::uint32_t> tokenize_entry(const std::string& text, const Vocabulary& vocab,
                                                 std::uint32_t entry_length) {
    std::vector<std::uint32_t> ids(entry_length, Vocabulary::kPad);
    std::uint32_t slot = 0;
    for (const std::string& w : split_words(text)) {
        if (slot >= entry_length) break;
        ids[slot++] = vocab.id_of(w);
    }
    return ids;
}

inline std::string detokenize_entry(std::span<const std::uint32_t> tokens, const Vocabulary& vocab) {
    std::string out;
    for (std::uint32_t id : tokens) {
        if (id == Vocabulary::kPad) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.word_of(id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embed / pool
// ---------------------------------------------------------------------------

// E_i as a d x L matrix whose column j is the embedding row of token m_ij.
inline Tensor embed_entry(const MemoryBank& bank, std::uint64_t i, const Tensor& embedding_table) {
    auto toks = bank.entry(i);
    return transpose(gather_rows(embedding_table, std::vector<std::uint32_t>(toks.begin(), toks.end())));
}

// Mean over non-PAD columns of a d x L entry matrix -> {1,d}.
inline Tensor pool_entry(const Tensor& entry_matrix, const std::vector<bool>& pad_mask) {
    if (entry_matrix.shape().size() != 2) throw shape_error("pool_entry: entry matrix must be rank-2");
    const std::size_t L = entry_matrix.shape()[1];
    if (pad_mask.size() != L) throw shape_error("pool_entry: pad mask length mismatch");
    std::size_t live = 0;
    for (bool pad : pad_mask)
        if (!pad) ++live;
    if (live == 0) throw degenerate_entry_error("pool_entry: entry is all PAD");
    std::vector<double> weights(L, 0.0);
    for (std::size_t j = 0; j < L; ++j)
        if (!pad_mask[j]) weights[j] = 1.0 / static_cast<double>(live);
    Tensor w = Tensor::from({L, 1}, std::move(weights));
    return transpose(matmul(entry_matrix, w));
}

// Fast path used by the model: gathers only the non-PAD tokens of entry i and
// averages their embedding rows. Equivalent to pool_entry(embed_entry(...)).
inline Tensor pooled_entry(const MemoryBank& bank, std::uint64_t i, const Tensor& embedding_table) {
    auto toks = bank.entry(i);
    std::vector<std::uint32_t> live;
    live.reserve(toks.size());
    for (std::uint32_t t : toks)
        if (t != Vocabulary::kPad) live.push_back(t);
    if (live.empty())
        throw degenerate_entry_error("bank entry " + std::to_string(i) + " is all PAD");
    return mean_rows(gather_rows(embedding_table, live));
}

// ---------------------------------------------------------------------------
// Partition
// ---------------------------------------------------------------------------

// Curated entries are loaded first, so the frozen partition is the prefix.
inline void partition(MemoryBank& bank, double rho) {
    const std::uint64_t n_frozen = freeze_count_for(rho, bank.capacity);
    bank.freeze_rate = rho;
    bank.frozen.assign(bank.capacity, 0);
    for (std::uint64_t i = 0; i < n_frozen; ++i) bank.frozen[i] = 1;
}

// ---------------------------------------------------------------------------
// EMA update
// ---------------------------------------------------------------------------

struct EmaAssignment {
    std::uint64_t entry_index = 0;  // global bank index; must be updatable
    std::vector<double> query;
};

// Touched entries move shadow toward the mean of their assigned queries with
// decay gamma; untouched entries decay their counts only.
inline void ema_update(EmaState& ema, const MemoryBank& bank,
                       const std::vector<EmaAssignment>& assignments, double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        throw config_error("ema decay must lie in [0,1], got " + std::to_string(gamma));
    const std::uint64_t base = bank.updatable_base();

    // Per-entry aggregation of this step's assignments.
    std::vector<std::pair<std::uint64_t, std::pair<double, std::vector<double>>>> touched;
    for (const EmaAssignment& a : assignments) {
        if (a.entry_index >= bank.capacity)
            throw bounds_error("ema assignment index out of range");
        if (bank.is_frozen(a.entry_index))
            throw freeze_violation_error("ema assignment targets frozen entry " +
                                         std::to_string(a.entry_index));
        if (a.query.size() != ema.dim) throw shape_error("ema query dimension mismatch");
        const std::uint64_t local = a.entry_index - base;
        auto it = std::find_if(touched.begin(), touched.end(),
                               [local](const auto& t) { return t.first == local; });
        if (it == touched.end()) {
            touched.push_back({local, {1.0, a.query}});
        } else {
            it->second.first += 1.0;
            for (std::size_t j = 0; j < ema.dim; ++j) it->second.second[j] += a.query[j];
        }
    }

    std::vector<std::uint8_t> is_touched(ema.updatable_count, 0);
    for (auto& [local, agg] : touched) {
        if (local >= ema.updatable_count) throw bounds_error("ema local index out of range");
        is_touched[local] = 1;
        const double count = agg.first;
        const std::vector<double>& qsum = agg.second;
        const double old_c = ema.cluster_size[local];
        const double new_c = gamma * old_c + (1.0 - gamma) * count;
        double* sh = ema.shadow.data() + local * ema.dim;
        for (std::size_t j = 0; j < ema.dim; ++j) {
            const double old_sum = sh[j] * (old_c + ema.epsilon);
            const double new_sum = gamma * old_sum + (1.0 - gamma) * qsum[j];
            sh[j] = new_sum / (new_c + ema.epsilon);
        }
        ema.cluster_size[local] = new_c;
    }
    for (std::uint64_t local = 0; local < ema.updatable_count; ++local)
        if (!is_touched[local]) ema.cluster_size[local] *= gamma;
}

// ---------------------------------------------------------------------------
// Requantization: continuous shadows back to discrete, decodable tokens.
// ---------------------------------------------------------------------------

enum class RequantizeMode { slot0, full_greedy };

inline RequantizeMode requantize_mode_from_string(const std::string& s) {
    if (s == "slot0") return RequantizeMode::slot0;
    if (s == "full-greedy" || s == "full_greedy") return RequantizeMode::full_greedy;
    throw config_error("unknown requantize mode: '" + s + "' (expected slot0 or full-greedy)");
}

namespace detail {

// Nearest embedding row by L2 distance; PAD is excluded so requantization can
// never produce an undecodable all-PAD entry. Ties break toward the lower id.
inline std::uint32_t nearest_token(std::span<const double> target, const Tensor& table) {
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    if (target.size() != d) throw shape_error("nearest_token: dimension mismatch");
    std::uint32_t best = Vocabulary::kUnk;
    double best_dist = std::numeric_limits<double>::infinity();
    const auto& td = table.data();
    for (std::size_t v = 0; v < vocab; ++v) {
        if (v == Vocabulary::kPad) continue;
        const double* row = td.data() + v * d;
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = target[j] - row[j];
            dist += diff * diff;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<std::uint32_t>(v);
        }
    }
    return best;
}

}  // namespace detail

// slot0: write the token nearest to the shadow into slot 0, keep the rest.
// full_greedy: fill every slot so the running mean of chosen embeddings tracks
// the shadow as closely as possible.
inline std::vector<std::uint32_t> requantize_entry(std::span<const double> shadow,
                                                   const Tensor& embedding_table,
                                                   std::uint32_t entry_length,
                                                   std::span<const std::uint32_t> current_tokens,
                                                   RequantizeMode mode = RequantizeMode::slot0) {
    for (double v : shadow)
        if (!std::isfinite(v)) throw numeric_error("requantize_entry: non-finite shadow");
    const std::size_t d = embedding_table.shape()[1];
    std::vector<std::uint32_t> out(current_tokens.begin(), current_tokens.end());
    out.resize(entry_length, Vocabulary::kPad);

    if (mode == RequantizeMode::slot0) {
        out[0] = detail::nearest_token(shadow, embedding_table);
        return out;
    }

    // full_greedy: slot j minimizes || mean(e_{t_0..t_j}) - shadow ||.
    const auto& td = embedding_table.data();
    std::vector<double> acc(d, 0.0);
    for (std::uint32_t slot = 0; slot < entry_length; ++slot) {
        // target for this slot: (j+1)*shadow - sum_so_far
        std::vector<double> target(d);
        for (std::size_t j = 0; j < d; ++j)
            target[j] = static_cast<double>(slot + 1) * shadow[j] - acc[j];
        const std::uint32_t t = detail::nearest_token(target, embedding_table);
        out[slot] = t;
        const double* row = td.data() + static_cast<std::size_t>(t) * d;
        for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence: magic "XLMB", little-endian (format v1).
// ---------------------------------------------------------------------------

inline constexpr char kBankMagic[4] = {'X', 'L', 'M', 'B'};
inline constexpr std::uint32_t kBankVersion = 1;

inline void save_bank(const MemoryBank& bank, const EmaState* ema, const std::string& path) {
    ByteWriter w;
    w.magic(kBankMagic);
    w.u32(kBankVersion);
    w.u64(bank.capacity);
    w.u32(bank.entry_length);
    w.u32(bank.vocab_size);
    w.f64(bank.freeze_rate);
    for (std::uint32_t t : bank.tokens) w.u32(t);
    for (std::uint8_t f : bank.frozen) w.u8(f);
    for (const Uuid& u : bank.uuids) {
        w.u64(u.hi);
        w.u64(u.lo);
    }
    w.u8(ema != nullptr ? 1 : 0);
    if (ema != nullptr) {
        w.u64(ema->updatable_count);
        w.u32(ema->dim);
        w.f64(ema->decay);
        for (double c : ema->cluster_size) w.f64(c);
        for (double s : ema->shadow) w.f64(s);
    }
    w.to_file(path);
}

inline std::pair<MemoryBank, std::optional<EmaState>> load_bank(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic(kBankMagic, "bank file " + path);
    const std::uint32_t version = r.u32();
    if (version != kBankVersion)
        throw version_mismatch_error("bank version mismatch: file has v" + std::to_string(version) +
                                     ", reader supports v" + std::to_string(kBankVersion));
    MemoryBank bank;
    bank.capacity = r.u64();
    bank.entry_length = r.u32();
    bank.vocab_size = r.u32();
    bank.freeze_rate = r.f64();
    bank.tokens.resize(bank.capacity * bank.entry_length);
    for (std::uint32_t& t : bank.tokens) t = r.u32();
    bank.frozen.resize(bank.capacity);
    for (std::uint8_t& f : bank.frozen) f = r.u8();
    bank.uuids.resize(bank.capacity);
    for (Uuid& u : bank.uuids) {
        u.hi = r.u64();
        u.lo = r.u64();
    }
    std::optional<EmaState> ema;
    if (r.u8() == 1) {
        EmaState e;
        e.updatable_count = r.u64();
        e.dim = r.u32();
        e.decay = r.f64();
        e.cluster_size.resize(e.updatable_count);
        for (double& c : e.cluster_size) c = r.f64();
        e.shadow.resize(e.updatable_count * e.dim);
        for (double& s : e.shadow) s = r.f64();
        ema = std::move(e);
    }
    return {std::move(bank), std::move(ema)};
}

}  // namespace xlm
