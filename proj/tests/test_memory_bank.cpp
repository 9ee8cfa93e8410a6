#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "xlm/memory_bank.hpp"
#include "xlm/vocab.hpp"

using namespace xlm;

namespace {

// Vocabulary engineered by word frequency so that paris=5, france=7,
// capital_of=9 (ids 2.. follow frequency-descending order after PAD/UNK).
Vocabulary toy_vocab() {
    std::vector<std::string> sentences;
    auto rep = [&](const std::string& w, int n) {
        for (int i = 0; i < n; ++i) sentences.push_back(w);
    };
    rep("w2", 10);
    rep("w3", 9);
    rep("w4", 8);
    rep("paris", 7);
    rep("w6", 6);
    rep("france", 5);
    rep("w8", 4);
    rep("capital_of", 3);
    return Vocabulary::build(sentences);
}

MemoryBank tiny_bank(std::uint64_t capacity, std::uint32_t entry_length, std::uint32_t vocab_size,
                     Rng& rng, double rho) {
    MemoryBank bank;
    bank.capacity = capacity;
    bank.entry_length = entry_length;
    bank.vocab_size = vocab_size;
    bank.tokens.resize(capacity * entry_length);
    for (auto& t : bank.tokens) t = 2 + static_cast<std::uint32_t>(rng.uniform_u64(vocab_size - 2));
    bank.uuids.resize(capacity);
    for (auto& u : bank.uuids) u = Uuid::random(rng);
    partition(bank, rho);
    return bank;
}

}  // namespace

TEST_CASE("tokenize_entry pads, truncates and is exact on the toy vocab", "[memory-bank]") {
    Vocabulary vocab = toy_vocab();
    REQUIRE(vocab.id_of("paris") == 5);
    REQUIRE(vocab.id_of("capital_of") == 9);
    REQUIRE(vocab.id_of("france") == 7);

    const auto empty = tokenize_entry("", vocab, 4);
    REQUIRE(empty == std::vector<std::uint32_t>{0, 0, 0, 0});

    const auto toks = tokenize_entry("paris capital_of france", vocab, 8);
    REQUIRE(toks == std::vector<std::uint32_t>{5, 9, 7, 0, 0, 0, 0, 0});

    // truncation beyond L
    const auto trunc = tokenize_entry("paris capital_of france paris", vocab, 2);
    REQUIRE(trunc == std::vector<std::uint32_t>{5, 9});

    REQUIRE_THROWS_AS(tokenize_entry("paris atlantis", vocab, 8), vocab_error);
    try {
        tokenize_entry("paris atlantis", vocab, 8);
    } catch (const vocab_error& e) {
        REQUIRE(std::string(e.what()).find("atlantis") != std::string::npos);
    }
}

TEST_CASE("tokenize(detokenize(m)) == m for stored entries without truncation", "[memory-bank]") {
    Vocabulary vocab = toy_vocab();
    Rng rng(9);
    for (int rep = 0; rep < 50; ++rep) {
        const std::uint32_t L = 8;
        const auto n_words = 1 + rng.uniform_u64(L);
        std::vector<std::uint32_t> entry(L, Vocabulary::kPad);
        for (std::uint64_t i = 0; i < n_words; ++i)
            entry[i] = 2 + static_cast<std::uint32_t>(rng.uniform_u64(vocab.size() - 2));
        REQUIRE(tokenize_entry(detokenize_entry(entry, vocab), vocab, L) == entry);
    }
}

TEST_CASE("embed_entry columns equal embedding rows of stored tokens", "[memory-bank]") {
    Rng rng(4);
    Vocabulary vocab = toy_vocab();
    MemoryBank bank = tiny_bank(4, 3, vocab.size(), rng, 0.0);
    const std::size_t d = 6;
    Tensor table = Tensor::randn({vocab.size(), d}, rng, 1.0);

    Tensor E = embed_entry(bank, 1, table);
    REQUIRE(E.shape() == std::vector<std::size_t>{d, 3});
    for (std::size_t j = 0; j < 3; ++j) {
        const std::uint32_t tok = bank.entry(1)[j];
        for (std::size_t r = 0; r < d; ++r)
            REQUIRE(E.data()[r * 3 + j] == Catch::Approx(table.data()[tok * d + r]));
    }

    // all-PAD entry embeds to PAD columns
    for (auto& t : bank.entry_mut(0)) t = Vocabulary::kPad;
    Tensor Epad = embed_entry(bank, 0, table);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t r = 0; r < d; ++r)
            REQUIRE(Epad.data()[r * 3 + j] == Catch::Approx(table.data()[Vocabulary::kPad * d + r]));

    // one-hot table gives one-hot columns
    Tensor onehot = Tensor::identity(vocab.size());
    Tensor E1 = embed_entry(bank, 2, onehot);
    for (std::size_t j = 0; j < 3; ++j) {
        const std::uint32_t tok = bank.entry(2)[j];
        for (std::size_t r = 0; r < vocab.size(); ++r)
            REQUIRE(E1.data()[r * 3 + j] == Catch::Approx(r == tok ? 1.0 : 0.0));
    }

    REQUIRE_THROWS_AS(embed_entry(bank, 99, table), bounds_error);
}

TEST_CASE("pool_entry is the masked mean over non-PAD columns", "[memory-bank]") {
    const std::size_t d = 4;
    // columns: v, w, pad
    std::vector<double> data(d * 3);
    std::vector<double> v{1, 2, 3, 4}, w{-1, 0, 1, 2};
    for (std::size_t r = 0; r < d; ++r) {
        data[r * 3 + 0] = v[r];
        data[r * 3 + 1] = w[r];
        data[r * 3 + 2] = 99.0;  // PAD column content must be ignored
    }
    Tensor E = Tensor::from({d, 3}, data);

    Tensor single = pool_entry(E, {false, true, true});
    for (std::size_t r = 0; r < d; ++r) REQUIRE(single.data()[r] == Catch::Approx(v[r]));

    Tensor both = pool_entry(E, {false, false, true});
    for (std::size_t r = 0; r < d; ++r)
        REQUIRE(both.data()[r] == Catch::Approx((v[r] + w[r]) / 2.0));

    REQUIRE_THROWS_AS(pool_entry(E, std::vector<bool>{true, true, true}), degenerate_entry_error);
}

TEST_CASE("pooled_entry equals pool_entry(embed_entry(...)) on random entries", "[memory-bank]") {
    Rng rng(21);
    Vocabulary vocab = toy_vocab();
    MemoryBank bank = tiny_bank(9, 5, vocab.size(), rng, 0.0);
    // introduce PAD tails of varied length
    for (std::uint64_t i = 0; i < bank.capacity; ++i) {
        const auto tail = rng.uniform_u64(4);
        for (std::uint64_t j = 0; j < tail; ++j) bank.entry_mut(i)[4 - j] = Vocabulary::kPad;
    }
    Tensor table = Tensor::randn({vocab.size(), 6}, rng, 1.0);
    for (std::uint64_t i = 0; i < bank.capacity; ++i) {
        std::vector<bool> mask;
        for (std::uint32_t t : bank.entry(i)) mask.push_back(t == Vocabulary::kPad);
        Tensor a = pool_entry(embed_entry(bank, i, table), mask);
        Tensor b = pooled_entry(bank, i, table);
        for (std::size_t j = 0; j < 6; ++j)
            REQUIRE(a.data()[j] == Catch::Approx(b.data()[j]).margin(1e-12));
    }
}

TEST_CASE("partition sizes follow round(rho*N)", "[memory-bank]") {
    REQUIRE(freeze_count_for(0.2, 1000) == 200);
    REQUIRE(freeze_count_for(0.2, 1024) == 205);
    REQUIRE(freeze_count_for(0.0, 1024) == 0);
    REQUIRE(freeze_count_for(1.0, 1024) == 1024);
    REQUIRE_THROWS_AS(freeze_count_for(-0.1, 100), config_error);
    REQUIRE_THROWS_AS(freeze_count_for(1.5, 100), config_error);

    Rng rng(2);
    MemoryBank bank = tiny_bank(16, 4, 20, rng, 0.25);
    REQUIRE(bank.frozen_count() == 4);
    for (std::uint64_t i = 0; i < 4; ++i) REQUIRE(bank.is_frozen(i));
    for (std::uint64_t i = 4; i < 16; ++i) REQUIRE_FALSE(bank.is_frozen(i));

    partition(bank, 0.0);
    REQUIRE(bank.frozen_count() == 0);
    partition(bank, 1.0);
    REQUIRE(bank.frozen_count() == 16);
}

namespace {
EmaState ema_for(const MemoryBank& bank, std::uint32_t d, Rng& rng) {
    EmaState ema;
    ema.updatable_count = bank.updatable_count();
    ema.dim = d;
    ema.cluster_size.assign(ema.updatable_count, 1.0);
    ema.shadow.resize(ema.updatable_count * d);
    for (auto& s : ema.shadow) s = rng.normal();
    return ema;
}
}  // namespace

TEST_CASE("ema_update limit cases", "[memory-bank]") {
    Rng rng(5);
    MemoryBank bank = tiny_bank(8, 4, 20, rng, 0.25);  // entries 0,1 frozen
    const std::uint32_t d = 3;
    EmaState ema = ema_for(bank, d, rng);

    SECTION("gamma = 1 leaves the state unchanged") {
        EmaState before = ema;
        ema_update(ema, bank, {{4, {1.0, 2.0, 3.0}}}, 1.0);
        REQUIRE(ema.cluster_size == before.cluster_size);
        REQUIRE(ema.shadow == before.shadow);
    }

    SECTION("gamma = 0 with queries {v,w} lands on their mean up to epsilon") {
        ema_update(ema, bank, {{4, {1.0, 2.0, 3.0}}, {4, {3.0, 4.0, 5.0}}}, 0.0);
        const std::uint64_t local = 4 - bank.updatable_base();
        auto sh = ema.shadow_of(local);
        REQUIRE(sh[0] == Catch::Approx(2.0).epsilon(1e-4));
        REQUIRE(sh[1] == Catch::Approx(3.0).epsilon(1e-4));
        REQUIRE(sh[2] == Catch::Approx(4.0).epsilon(1e-4));
    }

    SECTION("assignments to frozen entries are rejected") {
        REQUIRE_THROWS_AS(ema_update(ema, bank, {{1, {0.0, 0.0, 0.0}}}, 0.9),
                          freeze_violation_error);
    }

    SECTION("untouched entries decay counts only") {
        const double before_count = ema.cluster_size[0];
        const auto before_shadow = ema.shadow;
        ema_update(ema, bank, {{5, {1.0, 1.0, 1.0}}}, 0.9);
        REQUIRE(ema.cluster_size[0] == Catch::Approx(0.9 * before_count));
        const std::uint64_t untouched_local = 0;  // entry 2
        for (std::uint32_t j = 0; j < d; ++j)
            REQUIRE(ema.shadow[untouched_local * d + j] ==
                    Catch::Approx(before_shadow[untouched_local * d + j]));
    }
}

TEST_CASE("ema_update matches a hand-unrolled two-step recurrence", "[memory-bank]") {
    Rng rng(6);
    MemoryBank bank = tiny_bank(4, 4, 20, rng, 0.0);
    const std::uint32_t d = 2;
    EmaState ema = ema_for(bank, d, rng);
    const double eps = ema.epsilon;
    const double gamma = 0.9;

    const std::vector<double> s0 = {ema.shadow[0], ema.shadow[1]};
    const double c0 = ema.cluster_size[0];
    const std::vector<double> v = {1.0, -2.0}, w = {0.5, 4.0};

    ema_update(ema, bank, {{0, v}}, gamma);
    ema_update(ema, bank, {{0, w}}, gamma);

    // hand recurrence on (count, sum)
    double c = c0;
    std::vector<double> sum = {s0[0] * (c0 + eps), s0[1] * (c0 + eps)};
    for (const auto& q : {v, w}) {
        c = gamma * c + (1 - gamma) * 1.0;
        for (int j = 0; j < 2; ++j) sum[j] = gamma * sum[j] + (1 - gamma) * q[j];
    }
    REQUIRE(ema.cluster_size[0] == Catch::Approx(c).margin(1e-12));
    REQUIRE(ema.shadow[0] == Catch::Approx(sum[0] / (c + eps)).margin(1e-9));
    REQUIRE(ema.shadow[1] == Catch::Approx(sum[1] / (c + eps)).margin(1e-9));
}

TEST_CASE("ema contraction: constant query converges geometrically at ratio gamma",
          "[memory-bank]") {
    Rng rng(8);
    MemoryBank bank = tiny_bank(4, 4, 20, rng, 0.0);
    const std::uint32_t d = 3;
    EmaState ema = ema_for(bank, d, rng);
    const double gamma = 0.9;
    const std::vector<double> v = {2.0, -1.0, 0.5};

    auto error_norm = [&] {
        double e = 0.0;
        for (std::uint32_t j = 0; j < d; ++j) {
            const double diff = ema.shadow[j] - v[j];
            e += diff * diff;
        }
        return std::sqrt(e);
    };

    const double e0 = error_norm();
    std::vector<double> errors{e0};
    const int halving_steps = static_cast<int>(std::ceil(std::log(0.5) / std::log(gamma)));  // 7
    for (int t = 0; t < 60; ++t) {
        ema_update(ema, bank, {{0, v}}, gamma);
        errors.push_back(error_norm());
    }
    REQUIRE(errors[halving_steps] <= 0.5 * e0 * 1.05);
    for (int t = 0; t < 10; ++t)
        REQUIRE(errors[t + 1] / errors[t] == Catch::Approx(gamma).margin(0.02));
    REQUIRE(errors[50] < 0.01 * e0);
}

TEST_CASE("requantize_entry nearest-neighbor behavior", "[memory-bank]") {
    Rng rng(12);
    const std::uint32_t V = 12, d = 5, L = 4;
    Tensor table = Tensor::randn({V, d}, rng, 1.0);

    SECTION("shadow equal to a token embedding writes that token into slot 0") {
        const std::uint32_t t = 7;
        std::vector<double> shadow(table.data().begin() + t * d, table.data().begin() + (t + 1) * d);
        const std::vector<std::uint32_t> current = {3, 4, 5, 6};
        const auto out = requantize_entry(shadow, table, L, current, RequantizeMode::slot0);
        REQUIRE(out[0] == t);
        REQUIRE(out[1] == 4);
        REQUIRE(out[2] == 5);
        REQUIRE(out[3] == 6);
    }

    SECTION("equidistant shadows break ties toward the lower token id") {
        Tensor dup = Tensor::from(table.shape(), table.data());
        // make rows 9 and 4 identical; shadow exactly on them
        for (std::uint32_t j = 0; j < d; ++j) dup.data()[9 * d + j] = dup.data()[4 * d + j];
        std::vector<double> shadow(dup.data().begin() + 4 * d, dup.data().begin() + 5 * d);
        const auto out = requantize_entry(shadow, dup, L, std::vector<std::uint32_t>{2, 2, 2, 2},
                                          RequantizeMode::slot0);
        REQUIRE(out[0] == 4);
    }

    SECTION("random shadows match the exhaustive non-PAD scan oracle") {
        for (int rep = 0; rep < 30; ++rep) {
            std::vector<double> shadow(d);
            for (auto& s : shadow) s = rng.normal();
            const auto out = requantize_entry(shadow, table, L, std::vector<std::uint32_t>{2, 2, 2, 2},
                                              RequantizeMode::slot0);
            std::uint32_t best = 1;
            double best_dist = 1e300;
            for (std::uint32_t v = 1; v < V; ++v) {  // PAD excluded by contract
                double dist = 0.0;
                for (std::uint32_t j = 0; j < d; ++j) {
                    const double diff = shadow[j] - table.data()[v * d + j];
                    dist += diff * diff;
                }
                if (dist < best_dist) {
                    best_dist = dist;
                    best = v;
                }
            }
            REQUIRE(out[0] == best);
            REQUIRE(out[0] != Vocabulary::kPad);
        }
    }

    SECTION("full-greedy recovers a two-token mean exactly on an orthogonal table") {
        Tensor onehot = Tensor::identity(8);
        std::vector<double> shadow(8, 0.0);
        shadow[3] = 0.5;
        shadow[6] = 0.5;
        const auto out = requantize_entry(shadow, onehot, 2, std::vector<std::uint32_t>{1, 1},
                                          RequantizeMode::full_greedy);
        REQUIRE(out[0] == 3);
        REQUIRE(out[1] == 6);
    }

    SECTION("non-finite shadows are rejected") {
        std::vector<double> shadow(d, std::numeric_limits<double>::infinity());
        REQUIRE_THROWS_AS(requantize_entry(shadow, table, L, std::vector<std::uint32_t>{2, 2, 2, 2},
                                           RequantizeMode::slot0),
                          numeric_error);
    }
}

TEST_CASE("bank persistence round-trips bit-identically", "[memory-bank]") {
    Rng rng(31);
    MemoryBank bank = tiny_bank(16, 4, 30, rng, 0.25);
    EmaState ema;
    ema.updatable_count = bank.updatable_count();
    ema.dim = 5;
    ema.decay = 0.97;
    ema.cluster_size.resize(ema.updatable_count);
    for (auto& c : ema.cluster_size) c = rng.uniform01() * 3;
    ema.shadow.resize(ema.updatable_count * ema.dim);
    for (auto& s : ema.shadow) s = rng.normal();

    const std::string path = "test_bank_roundtrip.xlmb";
    save_bank(bank, &ema, path);
    auto [loaded, loaded_ema] = load_bank(path);

    REQUIRE(loaded.capacity == bank.capacity);
    REQUIRE(loaded.entry_length == bank.entry_length);
    REQUIRE(loaded.vocab_size == bank.vocab_size);
    REQUIRE(loaded.freeze_rate == bank.freeze_rate);
    REQUIRE(loaded.tokens == bank.tokens);
    REQUIRE(loaded.frozen == bank.frozen);
    REQUIRE(loaded.uuids == bank.uuids);
    REQUIRE(loaded_ema.has_value());
    REQUIRE(loaded_ema->updatable_count == ema.updatable_count);
    REQUIRE(loaded_ema->dim == ema.dim);
    REQUIRE(loaded_ema->decay == ema.decay);
    REQUIRE(loaded_ema->cluster_size == ema.cluster_size);
    REQUIRE(loaded_ema->shadow == ema.shadow);

    // the filesystem round trip is byte-stable
    save_bank(loaded, &*loaded_ema, path + "2");
    std::ifstream f1(path, std::ios::binary), f2(path + "2", std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);

    // bank without EMA state round-trips too
    save_bank(bank, nullptr, path);
    auto [again, no_ema] = load_bank(path);
    REQUIRE(again.tokens == bank.tokens);
    REQUIRE_FALSE(no_ema.has_value());

    std::remove(path.c_str());
    std::remove((path + "2").c_str());
}

TEST_CASE("bank persistence failure modes are distinct", "[memory-bank]") {
    Rng rng(32);
    MemoryBank bank = tiny_bank(4, 2, 10, rng, 0.5);
    const std::string path = "test_bank_errors.xlmb";
    save_bank(bank, nullptr, path);

    auto read_all = [&] {
        std::ifstream f(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    auto write_all = [&](const std::string& bytes) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };

    const std::string good = read_all();

    SECTION("corrupted magic") {
        std::string bad = good;
        bad[0] = 'Y';
        write_all(bad);
        REQUIRE_THROWS_AS(load_bank(path), bad_magic_error);
    }

    SECTION("version bump names both versions") {
        std::string bad = good;
        bad[4] = 9;  // little-endian u32 version
        write_all(bad);
        try {
            load_bank(path);
            FAIL("expected version_mismatch_error");
        } catch (const version_mismatch_error& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("v9") != std::string::npos);
            REQUIRE(msg.find("v1") != std::string::npos);
        }
    }

    SECTION("truncated file") {
        write_all(good.substr(0, good.size() / 2));
        REQUIRE_THROWS_AS(load_bank(path), truncated_file_error);
    }

    std::remove(path.c_str());
}
