#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "kelab/resuscitate.hpp"
#include "kelab/rng.hpp"

using namespace kelab;

namespace {

// Stats with one layer whose mean coefficient vector is exactly `mean`.
CoefficientStats stats_of(const std::vector<double>& mean, int n_layers = 1) {
    CoefficientStats stats(n_layers, static_cast<int>(mean.size()), CoeffMode::AbsSwiglu);
    InstrumentationTrace t;
    t.seq_len = 1;
    t.ffn_inner = static_cast<int64_t>(mean.size());
    t.n_heads = 1;
    t.vocab = 2;
    t.layers.resize(static_cast<size_t>(n_layers));
    for (auto& layer : t.layers) {
        layer.coeff = mean;
        layer.attn.assign(1, {1.0});
    }
    t.logits.assign(2, 0.0);
    stats.accumulate(t);
    return stats;
}

ModelConfig small_config(uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.model_dim = 16;
    cfg.ffn_inner = 32;
    cfg.n_heads = 2;
    cfg.vocab_size = 64;
    cfg.max_seq_len = 16;
    cfg.seed = seed;
    return cfg;
}

MeasurementSet random_instances(const ModelConfig& cfg, int count, uint64_t seed) {
    Rng rng(seed);
    MeasurementSet set;
    for (int i = 0; i < count; ++i) {
        std::vector<int> tokens(8);
        for (auto& t : tokens) t = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.vocab_size)));
        set.push_back({tokens, 8});
    }
    return set;
}

}  // namespace

TEST_CASE("plan fixture: nearest-rank threshold and multipliers") {
    CoefficientStats stats = stats_of({0.1, 0.2, 0.3, 0.4});
    ResuscitationSpec spec;
    spec.p = 50.0;
    spec.q = 1.0;
    SurgeryPlan plan = plan_surgery(stats, spec);
    REQUIRE(plan.layers.size() == 1);
    CHECK(plan.layers[0].threshold == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(plan.layers[0].idx == std::vector<int>{0, 1});
    REQUIRE(plan.layers[0].multiplier.size() == 2);
    CHECK(plan.layers[0].multiplier[0] == doctest::Approx(2.5).epsilon(1e-9));
    CHECK(plan.layers[0].multiplier[1] == doctest::Approx(1.25).epsilon(1e-9));

    spec.q = 0.5;
    SurgeryPlan half = plan_surgery(stats, spec);
    CHECK(half.layers[0].multiplier[0] == doctest::Approx(1.25).epsilon(1e-9));
    CHECK(half.layers[0].multiplier[1] == doctest::Approx(0.625).epsilon(1e-9));

    spec.q = 2.0;
    SurgeryPlan twice = plan_surgery(stats, spec);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(twice.layers[0].multiplier[i] ==
              doctest::Approx(4.0 * half.layers[0].multiplier[i]).epsilon(1e-12));
    }
}

TEST_CASE("plan edge cases: p=0, all-equal ties, validation") {
    CoefficientStats stats = stats_of({0.5, 0.5, 0.5, 0.5});
    ResuscitationSpec spec;
    spec.p = 0.0;
    CHECK(plan_surgery(stats, spec).targeted_count() == 0);

    spec.p = 25.0;  // ties via <= widen idx to every position
    SurgeryPlan plan = plan_surgery(stats, spec);
    CHECK(plan.layers[0].idx == std::vector<int>{0, 1, 2, 3});
    for (double u : plan.layers[0].multiplier) CHECK(u == doctest::Approx(1.0).epsilon(1e-12));

    spec.p = 101.0;
    CHECK_THROWS_AS(plan_surgery(stats, spec), ConfigError);
    spec.p = 50.0;
    spec.q = -0.1;
    CHECK_THROWS_AS(plan_surgery(stats, spec), ConfigError);
    spec.q = 1.0;
    spec.epsilon_floor = 0.0;
    CHECK_THROWS_AS(plan_surgery(stats, spec), ConfigError);
}

TEST_CASE("epsilon floor guards dead units and the cap bounds multipliers") {
    CoefficientStats stats = stats_of({0.0, 1.0, 1.0, 2.0});
    ResuscitationSpec spec;
    spec.p = 25.0;
    spec.q = 1.0;
    SurgeryPlan plan = plan_surgery(stats, spec);
    REQUIRE(plan.layers[0].idx == std::vector<int>{0});
    CHECK(plan.layers[0].multiplier[0] == doctest::Approx(1.0 / 1e-8).epsilon(1e-6));

    spec.multiplier_cap = 100.0;
    SurgeryPlan capped = plan_surgery(stats, spec);
    CHECK(capped.layers[0].multiplier[0] == 100.0);
}

TEST_CASE("apply: empty plan leaves the checkpoint bit-identical") {
    Checkpoint ckpt = init_model(small_config(41));
    CoefficientStats stats = stats_of(std::vector<double>(32, 0.3), 2);
    ResuscitationSpec spec;
    spec.p = 0.0;
    Checkpoint out = apply_surgery(ckpt, plan_surgery(stats, spec));
    for (const auto& name : ckpt.order) {
        CHECK(out.at(name).values() == ckpt.at(name).values());
    }
    CHECK(out.step == ckpt.step);
    CHECK(out.extra.at("resusc_p") == "0");
}

TEST_CASE("apply scales only targeted up rows; coefficients scale linearly") {
    const ModelConfig cfg = small_config(42);
    Checkpoint ckpt = init_model(cfg);

    // measure on random inputs
    MeasurementSet set = random_instances(cfg, 6, 43);
    Model model(ckpt.clone());
    MeasureResult measured = measure_entropy(model, set, {}, "pre");

    ResuscitationSpec spec;
    spec.p = 50.0;
    spec.q = 1.5;
    SurgeryPlan plan = plan_surgery(measured.stats, spec);
    Checkpoint modified = apply_surgery(ckpt, plan);

    // non-targeted tensors and rows are bit-identical
    for (const auto& name : ckpt.order) {
        if (name.find(".up") == std::string::npos) {
            CHECK(modified.at(name).values() == ckpt.at(name).values());
        }
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
        const Tensor& orig = ckpt.at("layer" + std::to_string(l) + ".up");
        const Tensor& got = modified.at("layer" + std::to_string(l) + ".up");
        std::vector<bool> targeted(static_cast<size_t>(cfg.ffn_inner), false);
        for (int i : plan.layers[static_cast<size_t>(l)].idx) targeted[static_cast<size_t>(i)] = true;
        for (int i = 0; i < cfg.ffn_inner; ++i) {
            for (int j = 0; j < cfg.model_dim; ++j) {
                if (!targeted[static_cast<size_t>(i)]) {
                    CHECK(got.data()[i * cfg.model_dim + j] == orig.data()[i * cfg.model_dim + j]);
                }
            }
        }
    }

    // re-measured on the same inputs: targeted means equal u_i * old mean
    CoefficientStats remeasured = remeasure_coefficients(model, modified, set);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto before = measured.stats.layer_mean(l);
        const auto after = remeasured.layer_mean(l);
        const LayerSurgery& layer = plan.layers[static_cast<size_t>(l)];
        for (size_t k = 0; k < layer.idx.size(); ++k) {
            const double expect = layer.multiplier[k] * before[static_cast<size_t>(layer.idx[k])];
            CHECK(std::abs(after[static_cast<size_t>(layer.idx[k])] - expect) <=
                  1e-9 * std::max(1e-30, std::abs(expect)));
        }
    }
}

TEST_CASE("resuscitation entropy law on measured statistics") {
    const ModelConfig cfg = small_config(44);
    Checkpoint ckpt = init_model(cfg);
    MeasurementSet set = random_instances(cfg, 8, 45);
    Model model(ckpt.clone());
    MeasureResult base = measure_entropy(model, set, {}, "base");
    KnowledgeEntropy h0 = knowledge_entropy(base.stats);

    auto remeasure = [&](double p, double q) {
        ResuscitationSpec spec;
        spec.p = p;
        spec.q = q;
        Checkpoint modified = apply_surgery(ckpt, plan_surgery(base.stats, spec));
        return knowledge_entropy(remeasure_coefficients(model, modified, set));
    };

    KnowledgeEntropy up = remeasure(50.0, 1.0);
    KnowledgeEntropy down = remeasure(50.0, 0.5);
    KnowledgeEntropy full = remeasure(100.0, 1.0);
    for (int l = 0; l < cfg.n_layers; ++l) {
        CHECK(up.per_layer[static_cast<size_t>(l)] > h0.per_layer[static_cast<size_t>(l)]);
        CHECK(down.per_layer[static_cast<size_t>(l)] < h0.per_layer[static_cast<size_t>(l)]);
        CHECK(std::abs(full.per_layer[static_cast<size_t>(l)] -
                       std::log(static_cast<double>(cfg.ffn_inner))) < 1e-9);
    }
}

TEST_CASE("plan/apply dimension mismatches are rejected") {
    Checkpoint ckpt = init_model(small_config(46));
    CoefficientStats stats = stats_of(std::vector<double>(8, 0.5), 3);  // wrong layer count
    ResuscitationSpec spec;
    CHECK_THROWS_AS(apply_surgery(ckpt, plan_surgery(stats, spec)), ShapeError);
}

TEST_CASE("plan csv audit dump") {
    CoefficientStats stats = stats_of({0.1, 0.2, 0.3, 0.4});
    ResuscitationSpec spec;
    spec.p = 50.0;
    SurgeryPlan plan = plan_surgery(stats, spec);
    write_plan_csv("plan_audit.csv", plan);
    std::ifstream in("plan_audit.csv");
    std::string header, row0, row1;
    std::getline(in, header);
    std::getline(in, row0);
    std::getline(in, row1);
    CHECK(header == "layer,position,old_coeff,threshold,multiplier");
    CHECK(row0.substr(0, 4) == "0,0,");
    CHECK(row1.substr(0, 4) == "0,1,");
    std::filesystem::remove("plan_audit.csv");
}

TEST_CASE("attention temperature: identity, uniform limit, monotone entropy") {
    const ModelConfig cfg = small_config(47);
    Checkpoint ckpt = init_model(cfg);
    std::vector<int> tokens = {3, 9, 27, 50, 12};

    InstrumentationTrace plain = forward(ckpt, tokens);
    InstrumentationTrace tau1 = forward(ckpt, tokens, attention_temperature(1.0));
    CHECK(plain.logits == tau1.logits);
    for (size_t l = 0; l < plain.layers.size(); ++l) {
        CHECK(plain.layers[l].attn == tau1.layers[l].attn);
    }

    InstrumentationTrace hot = forward(ckpt, tokens, attention_temperature(1e7));
    for (const auto& layer : hot.layers) {
        for (const auto& head : layer.attn) {
            for (size_t j = 0; j < tokens.size(); ++j) {
                for (size_t i = 0; i <= j; ++i) {
                    CHECK(std::abs(head[j * tokens.size() + i] - 1.0 / static_cast<double>(j + 1)) <
                          1e-4);
                }
            }
        }
    }

    MeasurementSet set = random_instances(cfg, 4, 48);
    double prev = -1.0;
    for (double tau : {1.0, 1.5, 2.0, 3.0}) {
        const double h = attention_entropy(ckpt, set, attention_temperature(tau)).total;
        CHECK(h >= prev - 1e-12);
        prev = h;
    }
}

TEST_CASE("surgery provenance survives checkpoint io") {
    Checkpoint ckpt = init_model(small_config(49));
    CoefficientStats stats = stats_of(std::vector<double>(32, 0.3), 2);
    stats.source = "stats_fixture";
    ResuscitationSpec spec;
    spec.p = 25.0;
    spec.q = 2.0;
    Checkpoint modified = apply_surgery(ckpt, plan_surgery(stats, spec));
    save_checkpoint(modified, "resusc_prov.kelab");
    Checkpoint loaded = load_checkpoint("resusc_prov.kelab");
    CHECK(loaded.extra.at("resusc_p") == "25");
    CHECK(loaded.extra.at("resusc_q") == "2");
    CHECK(loaded.extra.at("source_stats") == "stats_fixture");
    std::filesystem::remove("resusc_prov.kelab");
}
