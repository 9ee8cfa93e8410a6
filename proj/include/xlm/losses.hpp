#pragma once

// The three-term joint objective: next-token cross-entropy, memory relevance
// (weighted query/candidate cosine), and candidate diversity (mean pairwise
// cosine among the retrieved set).

#include <cmath>
#include <cstdint>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/tensor.hpp"

namespace xlm {

struct LossReport {
    double l_ce = 0.0;
    double l_sim = 0.0;
    double l_div = 0.0;
    double l_total = 0.0;
    double lambda_sim = 0.0;
    double lambda_div = 0.0;
};

// -(1/T) sum_t log p(target_t | logits_t). One logit row per target.
inline Tensor lm_loss(const Tensor& logits, const std::vector<std::uint32_t>& targets) {
    return cross_entropy_rows(logits, targets);
}

// Variant reusing the cosine nodes stage 2 already built.
inline Tensor relevance_loss_from_cosines(const std::vector<Tensor>& cosines, const Tensor& weights) {
    if (cosines.empty()) throw contract_error("relevance_loss: empty candidate set");
    if (weights.numel() != cosines.size()) throw shape_error("relevance_loss: weight count mismatch");
    Tensor cs = stack_scalars(cosines);           // {1,|I|}
    return scale(sum(mul(weights, cs)), -1.0);
}

// -sum_i p_i * cos(q, E_i). weights is a {1,|I|} row summing to one.
inline Tensor relevance_loss(const Tensor& query, const std::vector<Tensor>& candidate_embeddings,
                             const Tensor& weights) {
    if (candidate_embeddings.empty()) throw contract_error("relevance_loss: empty candidate set");
    if (weights.numel() != candidate_embeddings.size())
        throw shape_error("relevance_loss: weight count mismatch");
    std::vector<Tensor> cosines;
    cosines.reserve(candidate_embeddings.size());
    for (const Tensor& e : candidate_embeddings) cosines.push_back(cosine_similarity(query, e));
    return relevance_loss_from_cosines(cosines, weights);
}

// Mean pairwise cosine among normalized candidates; 1 when all identical,
// 0 when mutually orthogonal. Scale-invariant in each candidate.
inline Tensor diversity_loss(const std::vector<Tensor>& candidate_embeddings) {
    const std::size_t n = candidate_embeddings.size();
    if (n < 2) throw contract_error("diversity_loss requires at least 2 candidates, got " +
                                    std::to_string(n));
    std::vector<Tensor> pair_cosines;
    pair_cosines.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            pair_cosines.push_back(cosine_similarity(candidate_embeddings[i], candidate_embeddings[j]));
    Tensor total = sum(stack_scalars(pair_cosines));
    return scale(total, 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1)));
}

// L_total = L_ce + lambda_sim * L_sim + lambda_div * L_div, on one graph.
inline Tensor total_loss(const Tensor& l_ce, const Tensor& l_sim, const Tensor& l_div,
                         double lambda_sim, double lambda_div) {
    if (!std::isfinite(l_ce.value()) || !std::isfinite(l_sim.value()) || !std::isfinite(l_div.value()))
        throw divergence_error("total_loss: non-finite loss term", 0);
    return add(l_ce, add(scale(l_sim, lambda_sim), scale(l_div, lambda_div)));
}

}  // namespace xlm
