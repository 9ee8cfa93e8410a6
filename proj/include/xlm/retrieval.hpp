#pragma once

// Two-stage differentiable retrieval over the memory bank.
//
// Stage 1 scores product keys: entry i has key [C[i / sqrtN] ; C'[i % sqrtN]],
// so exact top-|I| selection needs only 2*sqrtN sub-key dot products plus the
// combination of the two half-wise top lists. Stage 2 computes cosine
// similarities between the query and the pooled candidate embeddings and
// draws a Gumbel-Softmax selection whose forward value is the hard argmax
// while gradients follow the soft mixture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/tensor.hpp"

namespace xlm {

struct ProductKeySet {
    std::uint32_t sqrt_capacity = 0;   // sqrt(N)
    std::uint32_t half_dim = 0;        // d/2
    std::uint32_t candidate_count = 0; // |I|
    Tensor sub_keys_c;                 // {sqrtN, d/2}, learnable
    Tensor sub_keys_cprime;            // {sqrtN, d/2}, learnable

    std::uint64_t capacity() const {
        return static_cast<std::uint64_t>(sqrt_capacity) * sqrt_capacity;
    }

    void validate() const {
        if (sqrt_capacity == 0) throw config_error("product keys: empty codebooks");
        if (candidate_count == 0 || candidate_count > capacity())
            throw config_error("candidate count |I| must lie in [1, N]");
        if (sub_keys_c.shape() != std::vector<std::size_t>{sqrt_capacity, half_dim} ||
            sub_keys_cprime.shape() != std::vector<std::size_t>{sqrt_capacity, half_dim})
            throw shape_error("product keys: codebook shape mismatch");
    }
};

struct SelectionResult {
    std::vector<std::uint64_t> candidates;  // |I| entry indices
    std::vector<double> similarities;       // cs_i in [-1,1]
    std::vector<double> gumbel_noise;       // g_i (zeros in eval mode)
    std::vector<double> weights;            // p_i, sums to 1
    std::uint64_t hard_index = 0;           // candidates[argmax p]
    double temperature = 1.0;
};

inline std::pair<std::vector<double>, std::vector<double>> split_query(std::span<const double> q) {
    if (q.size() % 2 != 0)
        throw config_error("query dimension must be even for product-key splitting, got " +
                           std::to_string(q.size()));
    const std::size_t half = q.size() / 2;
    return {std::vector<double>(q.begin(), q.begin() + half),
            std::vector<double>(q.begin() + half, q.end())};
}

namespace detail {

// Indices 0..n-1 ordered by (score desc, index asc), truncated to k.
inline std::vector<std::uint32_t> top_k_indices(std::span<const double> scores, std::uint32_t k) {
    std::vector<std::uint32_t> idx(scores.size());
    for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const std::uint32_t kk = std::min<std::uint32_t>(k, static_cast<std::uint32_t>(idx.size()));
    std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    idx.resize(kk);
    return idx;
}

inline std::vector<double> half_scores(std::span<const double> half_query, const Tensor& codebook) {
    const std::size_t n = codebook.shape()[0], d = codebook.shape()[1];
    if (half_query.size() != d) throw shape_error("sub-key dimension mismatch");
    std::vector<double> scores(n, 0.0);
    const auto& kd = codebook.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = kd.data() + i * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += half_query[j] * row[j];
        scores[i] = acc;
    }
    return scores;
}

}  // namespace detail

// Exact top-|I| of {q1.c_a + q2.c'_b} over all (a,b). Any pair in the global
// top-k must have both halves inside their half-wise top-k (under the shared
// score-then-index ordering), so combining the two top lists loses nothing.
inline std::vector<std::uint64_t> stage1_candidates(std::span<const double> query,
                                                    const ProductKeySet& keys) {
    keys.validate();
    auto [q1, q2] = split_query(query);
    const std::vector<double> s1 = detail::half_scores(q1, keys.sub_keys_c);
    const std::vector<double> s2 = detail::half_scores(q2, keys.sub_keys_cprime);

    const std::uint32_t k = std::min<std::uint32_t>(keys.candidate_count, keys.sqrt_capacity);
    const std::vector<std::uint32_t> top1 = detail::top_k_indices(s1, k);
    const std::vector<std::uint32_t> top2 = detail::top_k_indices(s2, k);

    struct Combo {
        double score;
        std::uint64_t flat;
    };
    std::vector<Combo> combos;
    combos.reserve(static_cast<std::size_t>(top1.size()) * top2.size());
    for (std::uint32_t a : top1)
        for (std::uint32_t b : top2)
            combos.push_back({s1[a] + s2[b],
                              static_cast<std::uint64_t>(a) * keys.sqrt_capacity + b});
    const std::size_t take = std::min<std::size_t>(keys.candidate_count, combos.size());
    std::partial_sort(combos.begin(), combos.begin() + take, combos.end(),
                      [](const Combo& x, const Combo& y) {
                          if (x.score != y.score) return x.score > y.score;
                          return x.flat < y.flat;
                      });
    std::vector<std::uint64_t> out(take);
    for (std::size_t i = 0; i < take; ++i) out[i] = combos[i].flat;
    return out;
}

// Exhaustive reference: materializes all N combined scores. Shares the
// stage-1 tie-break so the two routes agree exactly.
inline std::vector<std::uint64_t> brute_force_topI(std::span<const double> query,
                                                   const ProductKeySet& keys,
                                                   std::uint64_t candidate_count) {
    keys.validate();
    auto [q1, q2] = split_query(query);
    const std::vector<double> s1 = detail::half_scores(q1, keys.sub_keys_c);
    const std::vector<double> s2 = detail::half_scores(q2, keys.sub_keys_cprime);
    const std::uint64_t n = keys.capacity();
    std::vector<std::uint64_t> idx(n);
    for (std::uint64_t i = 0; i < n; ++i) idx[i] = i;
    auto score = [&](std::uint64_t flat) {
        return s1[flat / keys.sqrt_capacity] + s2[flat % keys.sqrt_capacity];
    };
    const std::uint64_t take = std::min<std::uint64_t>(candidate_count, n);
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                      [&](std::uint64_t a, std::uint64_t b) {
                          const double sa = score(a), sb = score(b);
                          if (sa != sb) return sa > sb;
                          return a < b;
                      });
    idx.resize(take);
    return idx;
}

// Work accounting for the product-key shortcut versus the brute-force scan.
struct Stage1Cost {
    std::uint64_t subkey_dot_products = 0;   // 2 * sqrtN
    std::uint64_t combination_additions = 0; // min(|I|, sqrtN)^2
    std::uint64_t brute_force_dot_products = 0;  // N

    std::uint64_t score_evaluations() const { return subkey_dot_products + combination_additions; }
    bool saves_work() const { return score_evaluations() < brute_force_dot_products; }
};

inline Stage1Cost stage1_cost(const ProductKeySet& keys) {
    Stage1Cost c;
    c.subkey_dot_products = 2ull * keys.sqrt_capacity;
    const std::uint64_t k = std::min<std::uint64_t>(keys.candidate_count, keys.sqrt_capacity);
    c.combination_additions = k * k;
    c.brute_force_dot_products = keys.capacity();
    return c;
}

// Symbolic variant for configurations too large to instantiate.
inline Stage1Cost stage1_cost(std::uint64_t capacity, std::uint64_t candidate_count) {
    const auto sqrt_n = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(capacity))));
    if (sqrt_n * sqrt_n != capacity) throw config_error("stage1_cost: N must be a perfect square");
    Stage1Cost c;
    c.subkey_dot_products = 2 * sqrt_n;
    const std::uint64_t k = std::min(candidate_count, sqrt_n);
    c.combination_additions = k * k;
    c.brute_force_dot_products = capacity;
    return c;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

struct Stage2Output {
    SelectionResult result;
    Tensor output;                 // {1,d}; hard value, soft-mixture gradients
    Tensor soft_mixture;           // {1,d}; sum_i p_i E_i (the differentiable surrogate)
    Tensor weights;                // {1,|I|} graph node (p)
    std::vector<Tensor> cosines;   // per-candidate cs graph scalars
};

// p_i = exp((cs_i + g_i)/tau) / sum_j exp((cs_j + g_j)/tau), with
// g_i = -log(-log(eps_i)) drawn only in train mode. The forward output is the
// hard-selected embedding; backward follows sum_i p_i * E_i (straight-through).
inline Stage2Output stage2_select(const Tensor& query, const std::vector<Tensor>& candidate_embeddings,
                                  const std::vector<std::uint64_t>& candidate_indices, double tau,
                                  Rng& rng, bool train_mode) {
    if (candidate_embeddings.empty()) throw contract_error("stage2_select: empty candidate set");
    if (candidate_embeddings.size() != candidate_indices.size())
        throw contract_error("stage2_select: candidate index/embedding count mismatch");
    if (!(tau > 0.0)) throw config_error("stage2_select: temperature must be positive");

    const std::size_t n = candidate_embeddings.size();
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (double v : candidate_embeddings[i].data()) norm += v * v;
        if (norm == 0.0)
            throw degenerate_entry_error("stage2_select: zero-norm embedding for entry " +
                                         std::to_string(candidate_indices[i]));
    }

    std::vector<Tensor> cosines;
    cosines.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        cosines.push_back(cosine_similarity(query, candidate_embeddings[i]));

    std::vector<double> noise(n, 0.0);
    if (train_mode)
        for (double& g : noise) g = rng.gumbel();

    Tensor logits = scale(add_values(stack_scalars(cosines), noise), 1.0 / tau);
    Tensor p = softmax(logits, 1);

    const auto& pd = p.data();
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (pd[i] > pd[argmax]) argmax = i;

    Stage2Output out;
    out.result.candidates = candidate_indices;
    out.result.gumbel_noise = std::move(noise);
    out.result.weights.assign(pd.begin(), pd.end());
    out.result.similarities.reserve(n);
    for (const Tensor& cs : cosines) out.result.similarities.push_back(cs.value());
    out.result.hard_index = candidate_indices[argmax];
    out.result.temperature = tau;

    // soft = p * E  ({1,n} x {n,d}); output = hard + (soft - stopgrad(soft)).
    Tensor cand_matrix = concat_rows(candidate_embeddings);
    Tensor soft = matmul(p, cand_matrix);
    Tensor hard = stop_gradient(candidate_embeddings[argmax]);
    out.output = add(hard, sub(soft, stop_gradient(soft)));
    out.soft_mixture = soft;
    out.weights = p;
    out.cosines = std::move(cosines);
    return out;
}

}  // namespace xlm
