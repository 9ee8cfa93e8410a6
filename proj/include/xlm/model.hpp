#pragma once

// The toy ExplicitLM decoder. Pre-LN causal blocks; when memory is enabled
// each layer pools its post-attention hidden state into one query, runs the
// two-stage retrieval against the shared bank, and gates the selected entry
// back into the stream before the FFN. The memory-free baseline widens the
// FFN so parameter counts match.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xlm/common.hpp"
#include "xlm/losses.hpp"
#include "xlm/memory_bank.hpp"
#include "xlm/retrieval.hpp"
#include "xlm/serial.hpp"
#include "xlm/tensor.hpp"

namespace xlm {

struct ModelConfig {
    std::uint32_t dim = 64;
    std::uint32_t n_layers = 4;
    std::uint32_t n_heads = 4;
    std::uint32_t vocab_size = 0;
    std::uint32_t max_seq_len = 64;
    std::uint64_t bank_capacity = 1024;
    std::uint32_t entry_length = 8;
    double freeze_rate = 0.2;
    std::uint32_t candidate_count = 16;
    double temperature = 1.0;
    double lambda_sim = 0.1;
    double lambda_div = 0.01;
    double ema_decay = 0.99;
    double ema_epsilon = 1e-5;
    double learning_rate = 0.5;
    double grad_clip = 1.0;
    std::uint64_t seed = 1;
    bool memory_enabled = true;
    std::uint32_t ffn_hidden = 0;  // 0 = auto (4*dim; baseline widened for parity)
    std::uint32_t batch_size = 16;
    std::uint32_t requantize_every = 100;
    RequantizeMode requantize_mode = RequantizeMode::slot0;
    double gate_init = -2.0;  // pre-sigmoid fusion gate at initialization
    bool anneal_temperature = false;
    double temperature_floor = 0.1;
    std::uint64_t anneal_steps = 1000;

    std::uint32_t sqrt_capacity() const {
        const auto r = static_cast<std::uint64_t>(
            std::llround(std::sqrt(static_cast<double>(bank_capacity))));
        return static_cast<std::uint32_t>(r);
    }

    void validate() const {
        if (dim == 0 || dim % 2 != 0)
            throw config_error("embedding width must be positive and even, got " + std::to_string(dim));
        if (n_heads == 0 || dim % n_heads != 0)
            throw config_error("head count must divide the embedding width");
        if (n_layers == 0) throw config_error("layer count must be positive");
        if (vocab_size < 2) throw config_error("vocabulary must contain at least PAD and UNK");
        if (max_seq_len == 0) throw config_error("max sequence length must be positive");
        const std::uint64_t r = sqrt_capacity();
        if (r * r != bank_capacity)
            throw config_error("bank capacity must be a perfect square, got " +
                               std::to_string(bank_capacity));
        if (entry_length == 0) throw config_error("entry length must be positive");
        if (freeze_rate < 0.0 || freeze_rate > 1.0) throw config_error("freeze rate must lie in [0,1]");
        if (candidate_count == 0 || candidate_count > bank_capacity)
            throw config_error("candidate count must lie in [1, N]");
        if (!(temperature > 0.0)) throw config_error("temperature must be positive");
        if (ema_decay <= 0.0 || ema_decay > 1.0) throw config_error("ema decay must lie in (0,1]");
    }

    // Parameters the memory machinery adds on top of the plain decoder.
    std::uint64_t memory_parameter_count() const {
        const std::uint64_t per_layer = static_cast<std::uint64_t>(dim) * dim + dim + 1;
        return n_layers * per_layer + static_cast<std::uint64_t>(sqrt_capacity()) * dim;
    }

    std::uint32_t resolved_ffn_hidden() const {
        if (ffn_hidden != 0) return ffn_hidden;
        const std::uint32_t base = 4 * dim;
        if (memory_enabled) return base;
        // widen so the baseline matches the memory model's parameter count
        const double extra = static_cast<double>(memory_parameter_count());
        const double per_unit = static_cast<double>(n_layers) * (2.0 * dim + 1.0);
        return base + static_cast<std::uint32_t>(std::llround(extra / per_unit));
    }
};

inline ModelConfig baseline_config(const ModelConfig& cfg) {
    ModelConfig b = cfg;
    b.memory_enabled = false;
    b.ffn_hidden = 0;
    return b;
}

// ---------------------------------------------------------------------------
// Config <-> key=value lines (checkpoint header)
// ---------------------------------------------------------------------------

inline std::string config_to_kv(const ModelConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "dim=" << c.dim << "\n"
        << "n_layers=" << c.n_layers << "\n"
        << "n_heads=" << c.n_heads << "\n"
        << "vocab_size=" << c.vocab_size << "\n"
        << "max_seq_len=" << c.max_seq_len << "\n"
        << "bank_capacity=" << c.bank_capacity << "\n"
        << "entry_length=" << c.entry_length << "\n"
        << "freeze_rate=" << c.freeze_rate << "\n"
        << "candidate_count=" << c.candidate_count << "\n"
        << "temperature=" << c.temperature << "\n"
        << "lambda_sim=" << c.lambda_sim << "\n"
        << "lambda_div=" << c.lambda_div << "\n"
        << "ema_decay=" << c.ema_decay << "\n"
        << "ema_epsilon=" << c.ema_epsilon << "\n"
        << "learning_rate=" << c.learning_rate << "\n"
        << "grad_clip=" << c.grad_clip << "\n"
        << "seed=" << c.seed << "\n"
        << "memory_enabled=" << (c.memory_enabled ? 1 : 0) << "\n"
        << "ffn_hidden=" << c.ffn_hidden << "\n"
        << "batch_size=" << c.batch_size << "\n"
        << "requantize_every=" << c.requantize_every << "\n"
        << "requantize_mode="
        << (c.requantize_mode == RequantizeMode::slot0 ? "slot0" : "full-greedy") << "\n"
        << "gate_init=" << c.gate_init << "\n"
        << "anneal_temperature=" << (c.anneal_temperature ? 1 : 0) << "\n"
        << "temperature_floor=" << c.temperature_floor << "\n"
        << "anneal_steps=" << c.anneal_steps << "\n";
    return out.str();
}

inline ModelConfig config_from_kv(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw persistence_error("malformed config line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "dim") c.dim = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "n_layers") c.n_layers = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "n_heads") c.n_heads = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "vocab_size") c.vocab_size = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "max_seq_len") c.max_seq_len = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "bank_capacity") c.bank_capacity = std::stoull(val);
        else if (key == "entry_length") c.entry_length = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "freeze_rate") c.freeze_rate = std::stod(val);
        else if (key == "candidate_count") c.candidate_count = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "temperature") c.temperature = std::stod(val);
        else if (key == "lambda_sim") c.lambda_sim = std::stod(val);
        else if (key == "lambda_div") c.lambda_div = std::stod(val);
        else if (key == "ema_decay") c.ema_decay = std::stod(val);
        else if (key == "ema_epsilon") c.ema_epsilon = std::stod(val);
        else if (key == "learning_rate") c.learning_rate = std::stod(val);
        else if (key == "grad_clip") c.grad_clip = std::stod(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else if (key == "memory_enabled") c.memory_enabled = val == "1";
        else if (key == "ffn_hidden") c.ffn_hidden = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "batch_size") c.batch_size = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "requantize_every") c.requantize_every = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "requantize_mode") c.requantize_mode = requantize_mode_from_string(val);
        else if (key == "gate_init") c.gate_init = std::stod(val);
        else if (key == "anneal_temperature") c.anneal_temperature = val == "1";
        else if (key == "temperature_floor") c.temperature_floor = std::stod(val);
        else if (key == "anneal_steps") c.anneal_steps = std::stoull(val);
        else throw persistence_error("unknown config key: " + key);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor attn_wq, attn_wk, attn_wv, attn_wo;  // {d,d}; applied as x * W^T
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1, ffn_b1;  // {h,d}, {1,h}
    Tensor ffn_w2, ffn_b2;  // {d,h}, {1,d}
    Tensor query_w, query_b;  // memory only: {d,d}, {1,d}
    Tensor gate;              // memory only: {1}, pre-sigmoid, init -2
};

struct Model {
    ModelConfig config;
    Tensor tok_emb;  // {V,d}; shared by inputs, bank entries and the output head
    Tensor pos_emb;  // {maxT,d}
    std::vector<LayerParams> layers;
    Tensor final_ln_gain, final_ln_bias;
    ProductKeySet keys;  // memory only

    std::vector<std::pair<std::string, Tensor*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor*>> out;
        out.emplace_back("tok_emb", &tok_emb);
        out.emplace_back("pos_emb", &pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            LayerParams& lp = layers[l];
            out.emplace_back(p + "ln1_gain", &lp.ln1_gain);
            out.emplace_back(p + "ln1_bias", &lp.ln1_bias);
            out.emplace_back(p + "attn_wq", &lp.attn_wq);
            out.emplace_back(p + "attn_wk", &lp.attn_wk);
            out.emplace_back(p + "attn_wv", &lp.attn_wv);
            out.emplace_back(p + "attn_wo", &lp.attn_wo);
            out.emplace_back(p + "ln2_gain", &lp.ln2_gain);
            out.emplace_back(p + "ln2_bias", &lp.ln2_bias);
            out.emplace_back(p + "ffn_w1", &lp.ffn_w1);
            out.emplace_back(p + "ffn_b1", &lp.ffn_b1);
            out.emplace_back(p + "ffn_w2", &lp.ffn_w2);
            out.emplace_back(p + "ffn_b2", &lp.ffn_b2);
            if (config.memory_enabled) {
                out.emplace_back(p + "query_w", &lp.query_w);
                out.emplace_back(p + "query_b", &lp.query_b);
                out.emplace_back(p + "gate", &lp.gate);
            }
        }
        out.emplace_back("final_ln_gain", &final_ln_gain);
        out.emplace_back("final_ln_bias", &final_ln_bias);
        if (config.memory_enabled) {
            out.emplace_back("sub_keys_c", &keys.sub_keys_c);
            out.emplace_back("sub_keys_cprime", &keys.sub_keys_cprime);
        }
        return out;
    }

    std::uint64_t parameter_count() {
        std::uint64_t n = 0;
        for (auto& [name, t] : named_parameters()) n += t->numel();
        return n;
    }

    std::uint64_t parameter_hash() {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (auto& [name, t] : named_parameters()) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(t->data().data(), t->numel() * sizeof(double), h);
        }
        return h;
    }

    void zero_grads() {
        for (auto& [name, t] : named_parameters()) t->zero_grad();
    }
};

namespace detail {

// Raw pooled embedding of one entry (init-time helper, no graph).
inline std::vector<double> pooled_entry_values(const MemoryBank& bank, std::uint64_t i,
                                               const Tensor& table) {
    const std::size_t d = table.shape()[1];
    std::vector<double> acc(d, 0.0);
    std::size_t live = 0;
    for (std::uint32_t t : bank.entry(i)) {
        if (t == Vocabulary::kPad) continue;
        const double* row = table.data().data() + static_cast<std::size_t>(t) * d;
        for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
        ++live;
    }
    if (live > 0)
        for (double& v : acc) v /= static_cast<double>(live);
    return acc;
}

}  // namespace detail

// Sub-key initialization. Entry i lives in grid cell (i / sqrtN, i % sqrtN);
// each row key starts as the unit-normalized mean of the first embedding
// halves of its row's pooled entries, and likewise column keys from second
// halves. Queries pooled from token embeddings then land near the right grid
// cell from step zero, which matters because the hard stage-1 top-k passes
// no gradient back into the keys. Rows and columns that contain curated
// entries average those alone: random filler entries would otherwise drown
// the curated content signal in the shared columns.
inline void init_product_keys(ProductKeySet& keys, const MemoryBank* bank, const Tensor& tok_emb,
                              Rng& rng) {
    const std::uint32_t r = keys.sqrt_capacity;
    const std::uint32_t hd = keys.half_dim;
    std::vector<double> c(static_cast<std::size_t>(r) * hd, 0.0);
    std::vector<double> cp(static_cast<std::size_t>(r) * hd, 0.0);

    if (bank != nullptr && bank->capacity == keys.capacity()) {
        // curated entries carry non-nil provenance uuids
        auto curated = [&](std::uint64_t i) { return !bank->uuids[i].is_nil() && bank->is_frozen(i); };
        std::vector<std::uint32_t> row_curated(r, 0), col_curated(r, 0);
        for (std::uint64_t i = 0; i < bank->capacity; ++i) {
            if (!curated(i)) continue;
            ++row_curated[i / r];
            ++col_curated[i % r];
        }
        std::vector<std::uint32_t> row_n(r, 0), col_n(r, 0);
        for (std::uint64_t i = 0; i < bank->capacity; ++i) {
            const std::uint64_t row = i / r, col = i % r;
            const bool use_row = row_curated[row] == 0 || curated(i);
            const bool use_col = col_curated[col] == 0 || curated(i);
            if (!use_row && !use_col) continue;
            const std::vector<double> pooled = detail::pooled_entry_values(*bank, i, tok_emb);
            for (std::uint32_t j = 0; j < hd; ++j) {
                if (use_row) c[row * hd + j] += pooled[j];
                if (use_col) cp[col * hd + j] += pooled[hd + j];
            }
        }
    }
    auto normalize_rows = [&](std::vector<double>& m) {
        for (std::uint32_t a = 0; a < r; ++a) {
            double norm = 0.0;
            for (std::uint32_t j = 0; j < hd; ++j) norm += m[a * hd + j] * m[a * hd + j];
            norm = std::sqrt(norm);
            if (norm < 1e-12) {
                for (std::uint32_t j = 0; j < hd; ++j) m[a * hd + j] = rng.normal();
                norm = 0.0;
                for (std::uint32_t j = 0; j < hd; ++j) norm += m[a * hd + j] * m[a * hd + j];
                norm = std::sqrt(norm);
            }
            for (std::uint32_t j = 0; j < hd; ++j) m[a * hd + j] /= norm;
        }
    };
    normalize_rows(c);
    normalize_rows(cp);
    keys.sub_keys_c = Tensor::from({r, hd}, std::move(c), true);
    keys.sub_keys_cprime = Tensor::from({r, hd}, std::move(cp), true);
}

inline Model init_model(const ModelConfig& cfg, Rng& rng, const MemoryBank* bank = nullptr) {
    cfg.validate();
    Model m;
    m.config = cfg;
    const std::uint32_t d = cfg.dim;
    const std::uint32_t h = cfg.resolved_ffn_hidden();

    m.tok_emb = Tensor::randn({cfg.vocab_size, d}, rng, 0.08, true);
    // positions start silent so early pooled queries are pure token content
    m.pos_emb = Tensor::zeros({cfg.max_seq_len, d}, true);
    m.layers.resize(cfg.n_layers);
    for (LayerParams& lp : m.layers) {
        lp.ln1_gain = Tensor::full({1, d}, 1.0, true);
        lp.ln1_bias = Tensor::zeros({1, d}, true);
        lp.attn_wq = Tensor::randn({d, d}, rng, 0.06, true);
        lp.attn_wk = Tensor::randn({d, d}, rng, 0.06, true);
        lp.attn_wv = Tensor::randn({d, d}, rng, 0.06, true);
        lp.attn_wo = Tensor::randn({d, d}, rng, 0.01, true);
        lp.ln2_gain = Tensor::full({1, d}, 1.0, true);
        lp.ln2_bias = Tensor::zeros({1, d}, true);
        lp.ffn_w1 = Tensor::randn({h, d}, rng, 0.06, true);
        lp.ffn_b1 = Tensor::zeros({1, h}, true);
        lp.ffn_w2 = Tensor::randn({d, h}, rng, 0.01, true);
        lp.ffn_b2 = Tensor::zeros({1, d}, true);
        if (cfg.memory_enabled) {
            // identity-initialized query map keeps queries in embedding space
            Tensor qw = Tensor::identity(d, true);
            lp.query_w = qw;
            lp.query_b = Tensor::zeros({1, d}, true);
            lp.gate = Tensor::full({1}, cfg.gate_init, true);
        }
    }
    m.final_ln_gain = Tensor::full({1, d}, 1.0, true);
    m.final_ln_bias = Tensor::zeros({1, d}, true);

    if (cfg.memory_enabled) {
        m.keys.sqrt_capacity = cfg.sqrt_capacity();
        m.keys.half_dim = d / 2;
        m.keys.candidate_count = cfg.candidate_count;
        init_product_keys(m.keys, bank, m.tok_emb, rng);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

// Named building blocks, also used directly by the block loop below.

inline Tensor query_network(const Tensor& layer_hidden, const Tensor& query_w, const Tensor& query_b) {
    return add(matmul_nt(mean_rows(layer_hidden), query_w), query_b);
}

inline Tensor memory_fusion(const Tensor& layer_hidden, const Tensor& selected, const Tensor& gate) {
    return add_rowvec(layer_hidden, scale_by(selected, sigmoid(gate)));
}

struct LayerRetrieval {
    SelectionResult selection;
    Tensor weights;                           // {1,|I|} graph node
    std::vector<Tensor> cosines;              // per-candidate graph scalars
    std::vector<Tensor> candidate_embeddings; // pooled {1,d} nodes
    std::vector<double> query_values;
};

struct SequenceForward {
    Tensor logits;  // {T, V}
    std::vector<LayerRetrieval> retrievals;  // one per layer when memory on
};

enum class InterventionMode : std::uint8_t { retain = 0, replace = 1 };

struct InterventionSpec {
    std::set<std::uint32_t> target_layers;
    InterventionMode mode = InterventionMode::retain;
};

struct ForwardOptions {
    bool train_mode = false;
    double temperature_override = 0.0;  // 0 = config temperature
    const InterventionSpec* intervention = nullptr;
    std::uint64_t oracle_entry = 0;  // bank index fused at intervened layers
    // Fuse the soft mixture instead of the hard selection. The straight-
    // through estimator follows exactly this function's gradients, so the
    // end-to-end finite-difference check differentiates it; training and
    // inference keep the hard forward value.
    bool soft_fusion = false;
};

inline SequenceForward forward_sequence(Model& m, const std::vector<std::uint32_t>& tokens,
                                        const MemoryBank* bank, Rng& rng,
                                        const ForwardOptions& opt = {}) {
    const ModelConfig& cfg = m.config;
    const std::size_t T = tokens.size();
    if (T == 0) throw contract_error("forward: empty sequence");
    if (T > cfg.max_seq_len)
        throw length_error("sequence length " + std::to_string(T) + " exceeds maximum " +
                           std::to_string(cfg.max_seq_len));
    for (std::uint32_t t : tokens)
        if (t >= cfg.vocab_size) throw bounds_error("token id out of vocabulary range");
    if (cfg.memory_enabled && bank == nullptr)
        throw contract_error("forward: memory enabled but no bank snapshot provided");

    const std::uint32_t d = cfg.dim;
    const std::uint32_t n_heads = cfg.n_heads;
    const std::uint32_t hd = d / n_heads;
    const double tau = opt.temperature_override > 0.0 ? opt.temperature_override : cfg.temperature;

    std::vector<std::uint32_t> pos_ids(T);
    for (std::size_t i = 0; i < T; ++i) pos_ids[i] = static_cast<std::uint32_t>(i);
    Tensor x = add(gather_rows(m.tok_emb, tokens), gather_rows(m.pos_emb, pos_ids));

    // causal mask, additive
    std::vector<double> mask(T * T, 0.0);
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = i + 1; j < T; ++j) mask[i * T + j] = -1e30;

    SequenceForward out;
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        LayerParams& lp = m.layers[l];
        Tensor hn = layer_norm_rows(x, lp.ln1_gain, lp.ln1_bias);
        Tensor Q = matmul_nt(hn, lp.attn_wq);
        Tensor K = matmul_nt(hn, lp.attn_wk);
        Tensor V = matmul_nt(hn, lp.attn_wv);
        std::vector<Tensor> heads;
        heads.reserve(n_heads);
        for (std::uint32_t hidx = 0; hidx < n_heads; ++hidx) {
            Tensor Qh = slice_cols(Q, hidx * hd, (hidx + 1) * hd);
            Tensor Kh = slice_cols(K, hidx * hd, (hidx + 1) * hd);
            Tensor Vh = slice_cols(V, hidx * hd, (hidx + 1) * hd);
            Tensor scores = scale(matmul_nt(Qh, Kh), 1.0 / std::sqrt(static_cast<double>(hd)));
            scores = add_values(scores, mask);
            heads.push_back(matmul(softmax(scores, 1), Vh));
        }
        Tensor attn = matmul_nt(concat_cols(heads), lp.attn_wo);
        Tensor a = add(x, attn);

        if (cfg.memory_enabled) {
            Tensor q = query_network(a, lp.query_w, lp.query_b);
            const std::vector<std::uint64_t> cand =
                stage1_candidates(std::span<const double>(q.data()), m.keys);
            std::vector<Tensor> cand_emb;
            cand_emb.reserve(cand.size());
            for (std::uint64_t ci : cand) cand_emb.push_back(pooled_entry(*bank, ci, m.tok_emb));
            Stage2Output sel = stage2_select(q, cand_emb, cand, tau, rng, opt.train_mode);

            Tensor fused_entry = opt.soft_fusion ? sel.soft_mixture : sel.output;
            if (opt.intervention != nullptr && opt.intervention->mode == InterventionMode::replace &&
                opt.intervention->target_layers.count(l) != 0) {
                fused_entry = pooled_entry(*bank, opt.oracle_entry, m.tok_emb);
            }
            a = memory_fusion(a, fused_entry, lp.gate);

            LayerRetrieval rec;
            rec.selection = std::move(sel.result);
            rec.weights = sel.weights;
            rec.cosines = std::move(sel.cosines);
            rec.candidate_embeddings = std::move(cand_emb);
            rec.query_values = q.data();
            out.retrievals.push_back(std::move(rec));
        }

        Tensor h2 = layer_norm_rows(a, lp.ln2_gain, lp.ln2_bias);
        Tensor f = gelu(add_rowvec(matmul_nt(h2, lp.ffn_w1), lp.ffn_b1));
        f = add_rowvec(matmul_nt(f, lp.ffn_w2), lp.ffn_b2);
        x = add(a, f);
    }

    Tensor xf = layer_norm_rows(x, m.final_ln_gain, m.final_ln_bias);
    out.logits = matmul_nt(xf, m.tok_emb);
    return out;
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

struct BatchLoss {
    Tensor total;
    Tensor ce, sim, div;  // the three graph terms feeding total
    LossReport report;
    std::vector<SequenceForward> forwards;
};

// Builds the full loss graph for a batch of raw sequences. Each sequence
// needs at least two tokens; logits at position t predict token t+1.
inline BatchLoss build_batch_loss(Model& m, const MemoryBank* bank,
                                  const std::vector<std::vector<std::uint32_t>>& batch, Rng& rng,
                                  bool train_mode, double tau, bool soft_fusion = false) {
    if (batch.empty()) throw contract_error("empty training batch");
    const ModelConfig& cfg = m.config;

    std::vector<Tensor> ce_terms, sim_terms, div_terms;
    BatchLoss out;
    for (const std::vector<std::uint32_t>& seq : batch) {
        if (seq.size() < 2) throw contract_error("training sequence needs at least 2 tokens");
        std::vector<std::uint32_t> inputs(seq.begin(), seq.end() - 1);
        std::vector<std::uint32_t> targets(seq.begin() + 1, seq.end());

        ForwardOptions opt;
        opt.train_mode = train_mode;
        opt.temperature_override = tau;
        opt.soft_fusion = soft_fusion;
        SequenceForward fwd = forward_sequence(m, inputs, bank, rng, opt);
        ce_terms.push_back(lm_loss(fwd.logits, targets));

        if (cfg.memory_enabled) {
            std::vector<Tensor> layer_sim, layer_div;
            for (LayerRetrieval& r : fwd.retrievals) {
                layer_sim.push_back(relevance_loss_from_cosines(r.cosines, r.weights));
                if (r.candidate_embeddings.size() >= 2)
                    layer_div.push_back(diversity_loss(r.candidate_embeddings));
            }
            if (!layer_sim.empty())
                sim_terms.push_back(scale(sum(stack_scalars(layer_sim)),
                                          1.0 / static_cast<double>(layer_sim.size())));
            if (!layer_div.empty())
                div_terms.push_back(scale(sum(stack_scalars(layer_div)),
                                          1.0 / static_cast<double>(layer_div.size())));
        }
        out.forwards.push_back(std::move(fwd));
    }

    auto mean_of = [](std::vector<Tensor>& terms) {
        return scale(sum(stack_scalars(terms)), 1.0 / static_cast<double>(terms.size()));
    };
    Tensor l_ce = mean_of(ce_terms);
    Tensor l_sim = sim_terms.empty() ? Tensor::scalar(0.0) : mean_of(sim_terms);
    Tensor l_div = div_terms.empty() ? Tensor::scalar(0.0) : mean_of(div_terms);

    out.total = total_loss(l_ce, l_sim, l_div, cfg.lambda_sim, cfg.lambda_div);
    out.ce = l_ce;
    out.sim = l_sim;
    out.div = l_div;
    out.report.l_ce = l_ce.value();
    out.report.l_sim = l_sim.value();
    out.report.l_div = l_div.value();
    out.report.l_total = out.total.value();
    out.report.lambda_sim = cfg.lambda_sim;
    out.report.lambda_div = cfg.lambda_div;
    return out;
}

inline double annealed_temperature(const ModelConfig& cfg, std::uint64_t step) {
    if (!cfg.anneal_temperature || cfg.anneal_steps == 0) return cfg.temperature;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.anneal_steps));
    return cfg.temperature + f * (cfg.temperature_floor - cfg.temperature);
}

// Persistent bits of the optimizer/update loop that live across steps.
struct TrainState {
    std::uint64_t step = 0;
    std::set<std::uint64_t> touched_updatable;  // entries awaiting requantization
};

// One optimization step: loss, backward, clipped SGD on model params and
// sub-keys, then the EMA update of the updatable partition from this step's
// (selected entry, query) pairs, with periodic token requantization.
inline LossReport train_step(Model& m, MemoryBank& bank, EmaState& ema, TrainState& state,
                             const std::vector<std::vector<std::uint32_t>>& batch, Rng& rng) {
    const ModelConfig& cfg = m.config;
    const double tau = annealed_temperature(cfg, state.step);

    BatchLoss loss;
    try {
        loss = build_batch_loss(m, cfg.memory_enabled ? &bank : nullptr, batch, rng, true, tau);
    } catch (const divergence_error&) {
        throw divergence_error("non-finite training loss at step " + std::to_string(state.step),
                               state.step);
    }
    if (!std::isfinite(loss.report.l_total))
        throw divergence_error("non-finite training loss at step " + std::to_string(state.step),
                               state.step);

    m.zero_grads();
    backward(loss.total);

    auto params = m.named_parameters();
    double norm_sq = 0.0;
    for (auto& [name, t] : params)
        for (double g : t->grad()) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    const double clip_scale = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
    for (auto& [name, t] : params) {
        const auto& g = t->grad();
        auto& v = t->data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.learning_rate * clip_scale * g[i];
    }
    m.zero_grads();

    if (cfg.memory_enabled) {
        std::vector<EmaAssignment> assignments;
        for (const SequenceForward& fwd : loss.forwards) {
            for (const LayerRetrieval& r : fwd.retrievals) {
                if (!bank.is_frozen(r.selection.hard_index)) {
                    assignments.push_back({r.selection.hard_index, r.query_values});
                    state.touched_updatable.insert(r.selection.hard_index);
                }
            }
        }
        ema_update(ema, bank, assignments, cfg.ema_decay);

        if (cfg.requantize_every > 0 && (state.step + 1) % cfg.requantize_every == 0) {
            const std::uint64_t base = bank.updatable_base();
            for (std::uint64_t idx : state.touched_updatable) {
                const auto refreshed = requantize_entry(ema.shadow_of(idx - base), m.tok_emb,
                                                        cfg.entry_length, bank.entry(idx),
                                                        cfg.requantize_mode);
                std::copy(refreshed.begin(), refreshed.end(), bank.entry_mut(idx).begin());
            }
            state.touched_updatable.clear();
        }
    }

    ++state.step;
    return loss.report;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: magic "XLMC", little-endian (format v1).
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'X', 'L', 'M', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model& m, const std::string& path) {
    ByteWriter w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.str(config_to_kv(m.config));
    auto params = m.named_parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (auto& [name, t] : params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t->shape().size()));
        for (std::size_t dimv : t->shape()) w.u32(static_cast<std::uint32_t>(dimv));
        for (double v : t->data()) w.f64(v);
    }
    w.to_file(path);
}

inline Model load_checkpoint(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic(kCheckpointMagic, "checkpoint file " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw version_mismatch_error("checkpoint version mismatch: file has v" +
                                     std::to_string(version) + ", reader supports v" +
                                     std::to_string(kCheckpointVersion));
    const ModelConfig cfg = config_from_kv(r.str());
    Rng rng(cfg.seed);
    Model m = init_model(cfg, rng, nullptr);
    auto params = m.named_parameters();
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : params) by_name[name] = t;

    const std::uint32_t count = r.u32();
    if (count != params.size())
        throw persistence_error("checkpoint parameter count mismatch: file has " +
                                std::to_string(count) + ", model expects " +
                                std::to_string(params.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw persistence_error("unknown parameter in checkpoint: " + name);
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t j = 0; j < rank; ++j) shape[j] = r.u32();
        if (shape != it->second->shape())
            throw persistence_error("parameter shape mismatch for " + name);
        for (double& v : it->second->data()) v = r.f64();
    }
    return m;
}

}  // namespace xlm
