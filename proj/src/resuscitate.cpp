#include "kelab/resuscitate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace kelab {

void ResuscitationSpec::validate() const {
    if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("resuscitation: p must be in [0, 100]");
    if (!(q >= 0.0)) throw ConfigError("resuscitation: q must be >= 0");
    if (!(epsilon_floor > 0.0)) throw ConfigError("resuscitation: epsilon_floor must be positive");
    if (multiplier_cap && !(*multiplier_cap > 0.0)) {
        throw ConfigError("resuscitation: multiplier cap must be positive");
    }
}

size_t SurgeryPlan::targeted_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.idx.size();
    return n;
}

SurgeryPlan plan_surgery(const CoefficientStats& stats, const ResuscitationSpec& spec) {
    spec.validate();
    if (stats.n_instances() < 1) throw ValidationError("plan_surgery: stats hold no instances");

    SurgeryPlan plan;
    plan.spec = spec;
    plan.source_stats = stats.source;
    const int m = stats.ffn_inner();
    for (int l = 0; l < stats.n_layers(); ++l) {
        LayerSurgery layer;
        if (spec.p > 0.0) {
            const std::vector<double> mean = stats.layer_mean(l);
            std::vector<double> sorted = mean;
            std::sort(sorted.begin(), sorted.end());
            // nearest-rank percentile: t = sorted[ceil(p/100 * m) - 1]
            int rank = static_cast<int>(std::ceil(spec.p / 100.0 * m));
            rank = std::min(std::max(rank, 1), m);
            layer.threshold = sorted[static_cast<size_t>(rank - 1)];

            double layer_mean = 0.0;
            for (double v : mean) layer_mean += v;
            layer_mean /= static_cast<double>(m);

            for (int i = 0; i < m; ++i) {
                const double c = mean[static_cast<size_t>(i)];
                if (c <= layer.threshold) {
                    double u = spec.q * layer_mean / std::max(c, spec.epsilon_floor);
                    if (spec.multiplier_cap) u = std::min(u, *spec.multiplier_cap);
                    if (!std::isfinite(u) || u < 0.0) {
                        throw NumericError("plan_surgery: non-finite multiplier at layer " +
                                           std::to_string(l) + " position " + std::to_string(i));
                    }
                    layer.idx.push_back(i);
                    layer.multiplier.push_back(u);
                    layer.old_coeff.push_back(c);
                }
            }
        }
        plan.layers.push_back(std::move(layer));
    }
    return plan;
}

Checkpoint apply_surgery(const Checkpoint& ckpt, const SurgeryPlan& plan) {
    if (static_cast<int>(plan.layers.size()) != ckpt.config.n_layers) {
        throw ShapeError("apply_surgery: plan has " + std::to_string(plan.layers.size()) +
                         " layers, checkpoint has " + std::to_string(ckpt.config.n_layers));
    }
    const int64_t m = ckpt.config.ffn_inner;
    const int64_t d = ckpt.config.model_dim;
    Checkpoint out = ckpt.clone();
    for (size_t l = 0; l < plan.layers.size(); ++l) {
        const LayerSurgery& layer = plan.layers[l];
        Tensor& up = out.at("layer" + std::to_string(l) + ".up");
        for (size_t k = 0; k < layer.idx.size(); ++k) {
            const int i = layer.idx[k];
            if (i < 0 || i >= m) {
                throw ShapeError("apply_surgery: position " + std::to_string(i) +
                                 " out of range for ffn_inner " + std::to_string(m));
            }
            double* row = up.data() + static_cast<int64_t>(i) * d;
            const double u = layer.multiplier[k];
            for (int64_t j = 0; j < d; ++j) row[j] *= u;
        }
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", plan.spec.p);
    out.extra["resusc_p"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", plan.spec.q);
    out.extra["resusc_q"] = buf;
    out.extra["source_stats"] = plan.source_stats;
    return out;
}

CoefficientStats remeasure_coefficients(Model& reference, const Checkpoint& modified,
                                        const MeasurementSet& set, CoeffMode mode) {
    if (set.empty()) throw ValidationError("remeasure_coefficients: measurement set is empty");
    const ModelConfig& cfg = reference.config();
    if (modified.config.n_layers != cfg.n_layers || modified.config.ffn_inner != cfg.ffn_inner ||
        modified.config.model_dim != cfg.model_dim) {
        throw ShapeError("remeasure_coefficients: checkpoint does not match the reference model");
    }
    CoefficientStats stats(cfg.n_layers, cfg.ffn_inner, mode);
    ForwardOptions opts;
    opts.record_ffn_inputs = true;
    for (const Instance& inst : set) {
        InstrumentationTrace trace;
        reference.forward_batch(inst.tokens, 1, static_cast<int64_t>(inst.tokens.size()), opts,
                                &trace);
        InstrumentationTrace rebuilt;
        rebuilt.seq_len = trace.seq_len;
        rebuilt.ffn_inner = cfg.ffn_inner;
        rebuilt.n_heads = cfg.n_heads;
        rebuilt.vocab = cfg.vocab_size;
        rebuilt.coeff_mode = mode;
        rebuilt.layers.resize(trace.layers.size());
        for (size_t l = 0; l < trace.layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Tensor x = Tensor::from_values({trace.seq_len, cfg.model_dim},
                                           trace.layers[l].ffn_input);
            Tensor g = matmul_nt(x, modified.at(p + "gate"));
            Tensor u = matmul_nt(x, modified.at(p + "up"));
            if (mode == CoeffMode::AbsSwiglu) {
                Tensor h = swiglu(g, u);
                rebuilt.layers[l].coeff.resize(static_cast<size_t>(h.numel()));
                for (int64_t i = 0; i < h.numel(); ++i) {
                    rebuilt.layers[l].coeff[static_cast<size_t>(i)] = std::abs(h.data()[i]);
                }
            } else {
                Tensor c = relu_gate_coeff(g, u);
                rebuilt.layers[l].coeff.assign(c.data(), c.data() + c.numel());
            }
        }
        stats.accumulate(rebuilt, inst.n_valid);
    }
    return stats;
}

void write_plan_csv(const std::string& path, const SurgeryPlan& plan) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "layer,position,old_coeff,threshold,multiplier\n";
    char buf[160];
    for (size_t l = 0; l < plan.layers.size(); ++l) {
        const LayerSurgery& layer = plan.layers[l];
        for (size_t k = 0; k < layer.idx.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g,%.17g\n", l, layer.idx[k],
                          layer.old_coeff[k], layer.threshold, layer.multiplier[k]);
            out << buf;
        }
    }
}

}  // namespace kelab
