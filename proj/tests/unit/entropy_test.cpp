#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "kelab/entropy.hpp"
#include "kelab/rng.hpp"

using namespace kelab;

namespace {

// Fabricated trace with given per-token coefficient rows (one layer).
InstrumentationTrace coeff_trace(const std::vector<std::vector<double>>& token_rows, int n_layers = 1) {
    InstrumentationTrace t;
    t.seq_len = static_cast<int64_t>(token_rows.size());
    t.ffn_inner = static_cast<int64_t>(token_rows[0].size());
    t.n_heads = 1;
    t.vocab = 2;
    t.coeff_mode = CoeffMode::AbsSwiglu;
    t.layers.resize(static_cast<size_t>(n_layers));
    for (auto& layer : t.layers) {
        for (const auto& row : token_rows) {
            layer.coeff.insert(layer.coeff.end(), row.begin(), row.end());
        }
        layer.attn.assign(1, std::vector<double>(static_cast<size_t>(t.seq_len * t.seq_len), 0.0));
        for (int64_t j = 0; j < t.seq_len; ++j) layer.attn[0][static_cast<size_t>(j * t.seq_len + j)] = 1.0;
    }
    t.logits.assign(static_cast<size_t>(t.seq_len * t.vocab), 0.0);
    return t;
}

double direct_entropy(std::vector<double> v) {
    double total = 0.0;
    for (double x : v) total += x;
    double h = 0.0;
    for (double x : v) {
        const double p = x / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

ModelConfig micro_config(uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.model_dim = 8;
    cfg.ffn_inner = 12;
    cfg.n_heads = 2;
    cfg.vocab_size = 16;
    cfg.max_seq_len = 10;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("accumulate: instance means weigh equally regardless of length") {
    CoefficientStats stats(1, 2, CoeffMode::AbsSwiglu);
    // one instance, one token
    stats.accumulate(coeff_trace({{0.4, 0.6}}));
    CHECK(stats.layer_mean(0) == std::vector<double>{0.4, 0.6});

    // second instance with three tokens, mean {1.0, 2.0}
    stats.accumulate(coeff_trace({{0.5, 1.0}, {1.0, 2.0}, {1.5, 3.0}}));
    const std::vector<double> mean = stats.layer_mean(0);
    CHECK(mean[0] == doctest::Approx((0.4 + 1.0) / 2.0).epsilon(1e-15));
    CHECK(mean[1] == doctest::Approx((0.6 + 2.0) / 2.0).epsilon(1e-15));
}

TEST_CASE("accumulate: instance-first averaging differs from token pooling") {
    // crafted so the two aggregation orders disagree
    CoefficientStats stats(1, 1, CoeffMode::AbsSwiglu);
    stats.accumulate(coeff_trace({{1.0}}));                     // 1 token, mean 1.0
    stats.accumulate(coeff_trace({{0.0}, {0.0}, {0.0}}));       // 3 tokens, mean 0.0
    const double instance_first = stats.layer_mean(0)[0];       // (1.0 + 0.0) / 2
    const double token_pooled = (1.0 + 0.0 + 0.0 + 0.0) / 4.0;  // all tokens pooled
    CHECK(instance_first == 0.5);
    CHECK(token_pooled == 0.25);
    CHECK(instance_first != token_pooled);
}

TEST_CASE("streaming accumulation equals two-pass oracle, any order") {
    Rng rng(404);
    const int m = 6;
    std::vector<std::vector<std::vector<double>>> instances;
    for (int i = 0; i < 64; ++i) {
        const size_t tokens = 1 + rng.below(7);
        std::vector<std::vector<double>> inst(tokens, std::vector<double>(m));
        for (auto& row : inst) {
            for (auto& x : row) x = rng.uniform() * 3.0;
        }
        instances.push_back(std::move(inst));
    }

    // two-pass oracle: store all instance means, then average
    std::vector<double> oracle(m, 0.0);
    for (const auto& inst : instances) {
        std::vector<double> inst_mean(m, 0.0);
        for (const auto& row : inst) {
            for (int i = 0; i < m; ++i) inst_mean[static_cast<size_t>(i)] += row[static_cast<size_t>(i)];
        }
        for (int i = 0; i < m; ++i) {
            oracle[static_cast<size_t>(i)] += inst_mean[static_cast<size_t>(i)] / static_cast<double>(inst.size());
        }
    }
    for (double& x : oracle) x /= static_cast<double>(instances.size());

    CoefficientStats sorted_stats(1, m, CoeffMode::AbsSwiglu);
    for (const auto& inst : instances) sorted_stats.accumulate(coeff_trace(inst));

    std::vector<size_t> order(instances.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(405);
    for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[shuffle_rng.below(k)]);
    CoefficientStats shuffled_stats(1, m, CoeffMode::AbsSwiglu);
    for (size_t i : order) shuffled_stats.accumulate(coeff_trace(instances[i]));

    for (int i = 0; i < m; ++i) {
        CHECK(std::abs(sorted_stats.layer_mean(0)[static_cast<size_t>(i)] - oracle[static_cast<size_t>(i)]) < 1e-12);
        CHECK(std::abs(shuffled_stats.layer_mean(0)[static_cast<size_t>(i)] -
                       sorted_stats.layer_mean(0)[static_cast<size_t>(i)]) < 1e-12);
    }
}

TEST_CASE("knowledge entropy: uniform, one-hot, direct oracle, degenerate") {
    CoefficientStats uniform(3, 256, CoeffMode::AbsSwiglu);
    uniform.accumulate(coeff_trace({std::vector<double>(256, 0.37)}, 3));
    KnowledgeEntropy ke = knowledge_entropy(uniform);
    for (double h : ke.per_layer) CHECK(std::abs(h - std::log(256.0)) < 1e-12);
    CHECK(std::abs(ke.total - 3.0 * std::log(256.0)) < 1e-12);

    CoefficientStats onehot(1, 8, CoeffMode::AbsSwiglu);
    std::vector<double> row(8, 0.0);
    row[3] = 2.5;
    onehot.accumulate(coeff_trace({row}));
    CHECK(knowledge_entropy(onehot).per_layer[0] == 0.0);

    CoefficientStats mixed(1, 4, CoeffMode::AbsSwiglu);
    mixed.accumulate(coeff_trace({{0.1, 0.2, 0.3, 0.4}}));
    CHECK(std::abs(knowledge_entropy(mixed).per_layer[0] - direct_entropy({0.1, 0.2, 0.3, 0.4})) <
          1e-12);

    CoefficientStats dead(1, 4, CoeffMode::AbsSwiglu);
    dead.accumulate(coeff_trace({{0.0, 0.0, 0.0, 0.0}}));
    CHECK_THROWS_AS(knowledge_entropy(dead), ValidationError);

    CoefficientStats empty(1, 4, CoeffMode::AbsSwiglu);
    CHECK_THROWS_AS(knowledge_entropy(empty), ValidationError);
}

TEST_CASE("entropy is invariant under positive layer rescaling") {
    CoefficientStats a(1, 5, CoeffMode::AbsSwiglu);
    CoefficientStats b(1, 5, CoeffMode::AbsSwiglu);
    a.accumulate(coeff_trace({{0.2, 0.9, 0.05, 0.4, 1.3}}));
    std::vector<double> scaled = {0.2 * 7.5, 0.9 * 7.5, 0.05 * 7.5, 0.4 * 7.5, 1.3 * 7.5};
    b.accumulate(coeff_trace({scaled}));
    CHECK(std::abs(knowledge_entropy(a).per_layer[0] - knowledge_entropy(b).per_layer[0]) < 1e-12);
}

TEST_CASE("replacing the lowest entries with the layer mean raises entropy") {
    Rng rng(606);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 4 + static_cast<int>(rng.below(60));
        std::vector<double> v(static_cast<size_t>(m));
        for (auto& x : v) x = 0.01 + rng.uniform() * (trial % 3 == 0 ? 100.0 : 2.0);
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        if (sorted.front() == sorted.back()) continue;  // uniform draw, nothing to raise
        const int rank = std::max<int>(1, static_cast<int>(std::ceil(0.5 * m)));
        const double threshold = sorted[static_cast<size_t>(rank - 1)];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(m);
        std::vector<double> raised = v;
        bool changed = false;
        for (auto& x : raised) {
            if (x <= threshold) {
                changed = changed || x != mean;
                x = mean;
            }
        }
        if (!changed) continue;
        CHECK(direct_entropy(raised) > direct_entropy(v));
    }
}

TEST_CASE("attention entropy: first position, uniform-prefix model, oracle") {
    // wq = wk = 0 makes every attention row uniform over its prefix
    ModelConfig cfg = micro_config(31);
    Checkpoint ckpt = init_model(cfg);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (const char* w : {"wq", "wk"}) {
            Tensor& t = ckpt.at("layer" + std::to_string(l) + "." + w);
            std::fill(t.values().begin(), t.values().end(), 0.0);
        }
    }
    MeasurementSet set;
    set.push_back({{1, 2, 3, 4, 5}, 5});
    AttentionEntropy ae = attention_entropy(ckpt, set);
    double expect = 0.0;  // mean over positions of ln(prefix length)
    for (int j = 0; j < 5; ++j) expect += std::log(static_cast<double>(j + 1));
    expect /= 5.0;
    for (double h : ae.per_layer) CHECK(std::abs(h - expect) < 1e-12);
    CHECK(std::abs(ae.total - expect * cfg.n_layers) < 1e-12);

    // single-token instance: all mass on self, entropy 0
    MeasurementSet single;
    single.push_back({{3}, 1});
    AttentionEntropy zero = attention_entropy(ckpt, single);
    CHECK(zero.total == 0.0);

    // random model, 2 instances, against a direct double-loop oracle
    Checkpoint rnd = init_model(micro_config(32));
    MeasurementSet two;
    two.push_back({{1, 5, 9, 11}, 4});
    two.push_back({{2, 3, 4, 5, 6, 7}, 6});
    AttentionEntropy got = attention_entropy(rnd, two);
    std::vector<double> oracle(static_cast<size_t>(rnd.config.n_layers), 0.0);
    for (const auto& inst : two) {
        InstrumentationTrace tr = forward(rnd, inst.tokens);
        for (int l = 0; l < rnd.config.n_layers; ++l) {
            double head_sum = 0.0;
            for (int h = 0; h < rnd.config.n_heads; ++h) {
                double inst_sum = 0.0;
                for (int64_t j = 0; j < tr.seq_len; ++j) {
                    double row_h = 0.0;
                    for (int64_t i = 0; i <= j; ++i) {
                        const double a =
                            tr.layers[static_cast<size_t>(l)].attn[static_cast<size_t>(h)]
                                        [static_cast<size_t>(j * tr.seq_len + i)];
                        if (a > 0.0) row_h -= a * std::log(a);
                    }
                    inst_sum += row_h;
                }
                head_sum += inst_sum / static_cast<double>(tr.seq_len);
            }
            oracle[static_cast<size_t>(l)] += head_sum / rnd.config.n_heads;
        }
    }
    for (auto& h : oracle) h /= static_cast<double>(two.size());
    for (int l = 0; l < rnd.config.n_layers; ++l) {
        CHECK(std::abs(got.per_layer[static_cast<size_t>(l)] - oracle[static_cast<size_t>(l)]) < 1e-10);
    }

    CHECK_THROWS_AS(attention_entropy(rnd, MeasurementSet{}), ValidationError);
}

TEST_CASE("next-token entropy: uniform, near-deterministic, direct oracle") {
    ModelConfig cfg = micro_config(33);
    Checkpoint uniform = init_model(cfg);
    std::fill(uniform.at("unembed").values().begin(), uniform.at("unembed").values().end(), 0.0);
    MeasurementSet set;
    set.push_back({{1, 2, 3}, 3});
    CHECK(std::abs(next_token_entropy(uniform, set) - std::log(static_cast<double>(cfg.vocab_size))) <
          1e-12);

    // a dominant +/- logit pair drives entropy toward zero
    Checkpoint sharp = init_model(cfg);
    Tensor& unembed = sharp.at("unembed");
    std::fill(unembed.values().begin(), unembed.values().end(), 0.0);
    for (int j = 0; j < cfg.model_dim; ++j) {
        unembed.data()[0 * cfg.model_dim + j] = 200.0;
        unembed.data()[1 * cfg.model_dim + j] = -200.0;
    }
    CHECK(next_token_entropy(sharp, set) < 1e-3);

    // random model against a direct softmax-entropy oracle over the trace
    Checkpoint rnd = init_model(micro_config(34));
    MeasurementSet two;
    two.push_back({{1, 2, 3, 4}, 4});
    two.push_back({{8, 9}, 2});
    double oracle = 0.0;
    for (const auto& inst : two) {
        InstrumentationTrace tr = forward(rnd, inst.tokens);
        double inst_sum = 0.0;
        for (int64_t j = 0; j < tr.seq_len; ++j) {
            const double* z = tr.logits.data() + j * tr.vocab;
            double mx = z[0];
            for (int64_t i = 1; i < tr.vocab; ++i) mx = std::max(mx, z[i]);
            double total = 0.0;
            for (int64_t i = 0; i < tr.vocab; ++i) total += std::exp(z[i] - mx);
            double h = 0.0;
            for (int64_t i = 0; i < tr.vocab; ++i) {
                const double p = std::exp(z[i] - mx) / total;
                if (p > 0.0) h -= p * std::log(p);
            }
            inst_sum += h;
        }
        oracle += inst_sum / static_cast<double>(tr.seq_len);
    }
    oracle /= static_cast<double>(two.size());
    CHECK(std::abs(next_token_entropy(rnd, two) - oracle) < 1e-12);
}

TEST_CASE("relu coefficient mode") {
    Tensor gate = Tensor::from_values({1, 3}, {1.0, -0.5, 2.0});
    Tensor up = Tensor::from_values({1, 3}, {2.0, 3.0, -1.0});
    Tensor c = relu_gate_coeff(gate, up);
    CHECK(c.data()[0] == 2.0);  // relu(1)*2
    CHECK(c.data()[1] == 0.0);  // gate <= 0
    CHECK(c.data()[2] == 0.0);  // negative product clamped

    Tensor all_neg = Tensor::from_values({1, 3}, {-1.0, -2.0, 0.0});
    Tensor c2 = relu_gate_coeff(all_neg, up);
    for (int64_t i = 0; i < 3; ++i) CHECK(c2.data()[i] == 0.0);

    // mode flag propagates trace -> stats -> report -> file
    Checkpoint ckpt = init_model(micro_config(35));
    Model model(ckpt.clone());
    MeasurementSet set;
    set.push_back({{1, 2, 3}, 3});
    ForwardOptions opts;
    opts.coeff_mode = CoeffMode::ReluGate;
    MeasureResult r = measure_entropy(model, set, opts, "fixture");
    CHECK(r.report.coeff_mode == CoeffMode::ReluGate);
    CHECK(r.stats.mode() == CoeffMode::ReluGate);
    r.stats.save("relu_stats.kelab");
    CHECK(CoefficientStats::load("relu_stats.kelab").mode() == CoeffMode::ReluGate);
    std::filesystem::remove("relu_stats.kelab");
}

TEST_CASE("coefficient stats persistence round trip") {
    CoefficientStats stats(2, 4, CoeffMode::AbsSwiglu);
    stats.accumulate(coeff_trace({{0.1, 0.2, 0.3, 0.4}, {0.5, 0.5, 0.5, 0.5}}, 2));
    stats.accumulate(coeff_trace({{1.0, 0.0, 2.0, 0.5}}, 2));
    stats.source = "unit";
    stats.save("stats_roundtrip.kelab");
    CoefficientStats loaded = CoefficientStats::load("stats_roundtrip.kelab");
    CHECK(loaded.n_instances() == 2);
    CHECK(loaded.n_layers() == 2);
    CHECK(loaded.source == "unit");
    for (int l = 0; l < 2; ++l) {
        const auto a = stats.layer_mean(l);
        const auto b = loaded.layer_mean(l);
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(static_cast<float>(a[i]) == doctest::Approx(b[i]).epsilon(1e-7));
        }
    }
    std::filesystem::remove("stats_roundtrip.kelab");
}

TEST_CASE("measure_entropy agrees with the single-purpose operations") {
    Checkpoint ckpt = init_model(micro_config(36));
    Model model(ckpt.clone());
    MeasurementSet set;
    set.push_back({{1, 2, 3, 4, 5}, 5});
    set.push_back({{6, 7, 8}, 3});
    MeasureResult combined = measure_entropy(model, set, {}, "x");

    Model m2(ckpt.clone());
    AttentionEntropy ae = attention_entropy(m2, set);
    const double nte = next_token_entropy(m2, set);
    for (size_t l = 0; l < ae.per_layer.size(); ++l) {
        CHECK(combined.report.attention_per_layer[l] == doctest::Approx(ae.per_layer[l]).epsilon(1e-14));
    }
    CHECK(combined.report.next_token == doctest::Approx(nte).epsilon(1e-14));
    CHECK(combined.report.knowledge_total ==
          doctest::Approx(knowledge_entropy(combined.stats).total).epsilon(1e-14));
}
