#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "xlm/model.hpp"
#include "xlm/retrieval.hpp"
#include "xlm/trainer.hpp"

namespace xlmtest {

// Micro configuration used by the end-to-end gradient checks:
// d=8, 1 layer, N=16, |I|=4, short sequences, batch of 2.
inline xlm::Dataset micro_dataset() {
    xlm::GenParams gp;
    gp.kg.seed = 51;
    gp.kg.n_entities = 24;
    gp.kg.n_relations = 6;
    gp.kg.n_facts = 100;
    gp.split.freeze_rate = 0.25;
    gp.split.bank_capacity = 16;
    gp.split.seed = 51;
    gp.eval.seed = 52;
    return xlm::generate_dataset(gp);
}

inline xlm::ModelConfig micro_config(const xlm::Dataset& ds, bool memory_enabled,
                                     std::uint64_t seed = 100) {
    xlm::ModelConfig cfg;
    cfg.dim = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.vocab_size = ds.vocab.size();
    cfg.max_seq_len = 8;
    cfg.bank_capacity = 16;
    cfg.entry_length = 8;
    cfg.freeze_rate = 0.25;
    cfg.candidate_count = 4;
    cfg.batch_size = 2;
    cfg.learning_rate = 0.2;
    cfg.seed = seed;
    cfg.memory_enabled = memory_enabled;
    return cfg;
}

inline std::vector<std::vector<std::uint32_t>> micro_batch(const xlm::Dataset& ds, std::size_t n,
                                                           std::size_t max_len) {
    std::vector<std::vector<std::uint32_t>> batch;
    for (const std::string& line : ds.split.train_sequences) {
        auto toks = ds.vocab.encode(line);
        if (toks.size() < 2) continue;
        if (toks.size() > max_len) toks.resize(max_len);
        batch.push_back(std::move(toks));
        if (batch.size() == n) break;
    }
    return batch;
}

// Hard-selection margins of one loss build. Finite differences across a hard
// top-k or argmax boundary are meaningless, so gradient-check fixtures demand
// healthy gaps before differencing.
struct SelectionMargins {
    double stage1 = 1e300;  // combined-score gap at the candidate-set boundary
    double stage2 = 1e300;  // (cs+g)/tau gap between the top two candidates
};

inline SelectionMargins selection_margins(const xlm::Model& m, const xlm::BatchLoss& loss) {
    SelectionMargins out;
    const auto& keys = m.keys;
    for (const auto& fwd : loss.forwards) {
        for (const auto& r : fwd.retrievals) {
            const auto& sel = r.selection;
            std::vector<double> logits(sel.similarities.size());
            for (std::size_t i = 0; i < logits.size(); ++i)
                logits[i] = (sel.similarities[i] + sel.gumbel_noise[i]) / sel.temperature;
            std::sort(logits.begin(), logits.end(), std::greater<>());
            if (logits.size() >= 2) out.stage2 = std::min(out.stage2, logits[0] - logits[1]);

            auto [q1, q2] = xlm::split_query(r.query_values);
            std::vector<double> scores;
            scores.reserve(keys.capacity());
            const auto& c = keys.sub_keys_c.data();
            const auto& cp = keys.sub_keys_cprime.data();
            const std::size_t hd = keys.half_dim;
            for (std::uint32_t a = 0; a < keys.sqrt_capacity; ++a) {
                double s1 = 0.0;
                for (std::size_t j = 0; j < hd; ++j) s1 += q1[j] * c[a * hd + j];
                for (std::uint32_t b = 0; b < keys.sqrt_capacity; ++b) {
                    double s2 = 0.0;
                    for (std::size_t j = 0; j < hd; ++j) s2 += q2[j] * cp[b * hd + j];
                    scores.push_back(s1 + s2);
                }
            }
            std::sort(scores.begin(), scores.end(), std::greater<>());
            if (scores.size() > sel.candidates.size()) {
                const std::size_t k = sel.candidates.size();
                out.stage1 = std::min(out.stage1, scores[k - 1] - scores[k]);
            }
        }
    }
    return out;
}

// The full gradient-check fixture: a micro model, bank and batch whose hard
// selections sit far from every decision boundary, plus the noise seed that
// fixes the Gumbel draws. Stage-1 margins depend only on the model seed, so
// the scan varies the model seed in the outer loop and the noise seed inside.
struct GradcheckFixture {
    xlm::Dataset ds;
    xlm::ModelConfig cfg;
    xlm::MemoryBank bank;
    xlm::Model model;
    std::vector<std::vector<std::uint32_t>> batch;
    std::uint64_t noise_seed = 0;
};

// Model-level coordinate-wise gradient check. Central differences of a loss
// of magnitude ~|f| carry absolute noise ~2|f|*eps_machine/(2*eps), about
// 1e-10 here, so coordinates whose true gradient sits below ~2e-6 cannot meet
// a 1e-4 relative tolerance in f64 no matter how correct the backward pass
// is. Those coordinates are compared absolutely against a bound well above
// the noise floor; everything else uses the symmetric relative-error formula.
struct ModelFdResult {
    double max_rel_err = 0.0;   // coords with max(|analytic|,|numeric|) >= significance
    double max_abs_err = 0.0;   // remaining coords
    std::size_t significant = 0;
};

inline ModelFdResult model_fd_check(const std::function<xlm::Tensor()>& loss_fn, xlm::Tensor& param,
                                    double epsilon = 1e-5, double significance = 2e-6) {
    xlm::Tensor loss = loss_fn();
    param.zero_grad();
    xlm::backward(loss);
    const std::vector<double> analytic = param.grad();

    ModelFdResult out;
    auto& data = param.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + epsilon;
        const double up = loss_fn().value();
        data[i] = saved - epsilon;
        const double down = loss_fn().value();
        data[i] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        if (std::max(std::abs(analytic[i]), std::abs(numeric)) >= significance) {
            const double err = std::abs(analytic[i] - numeric) /
                               (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
            out.max_rel_err = std::max(out.max_rel_err, err);
            ++out.significant;
        } else {
            out.max_abs_err = std::max(out.max_abs_err, std::abs(analytic[i] - numeric));
        }
    }
    return out;
}

inline GradcheckFixture make_gradcheck_fixture(double min_margin = 5e-3) {
    GradcheckFixture f;
    f.ds = micro_dataset();
    for (std::uint64_t model_seed = 100; model_seed < 200; ++model_seed) {
        f.cfg = micro_config(f.ds, true, model_seed);
        f.cfg.lambda_sim = 0.1;
        f.cfg.lambda_div = 0.01;
        xlm::Rng rng(f.cfg.seed);
        f.bank = xlm::build_bank(f.ds, f.cfg, rng);
        f.model = xlm::init_model(f.cfg, rng, &f.bank);
        f.batch = micro_batch(f.ds, 2, 4);
        for (std::uint64_t noise_seed = 1; noise_seed <= 60; ++noise_seed) {
            xlm::NoGradGuard guard;
            xlm::Rng nrng(noise_seed);
            xlm::BatchLoss loss = xlm::build_batch_loss(f.model, &f.bank, f.batch, nrng, true, 1.0);
            const SelectionMargins margins = selection_margins(f.model, loss);
            if (margins.stage1 <= min_margin) break;  // a property of this model seed
            if (margins.stage2 > min_margin) {
                f.noise_seed = noise_seed;
                return f;
            }
        }
    }
    throw xlm::contract_error("no stable gradient-check fixture found");
}

}  // namespace xlmtest
