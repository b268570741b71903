#include "kelab/entropy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "kelab/container.hpp"

namespace kelab {

namespace {

double entropy_of(const double* p, int64_t n) {
    double h = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return h;
}

int64_t clamp_valid(const InstrumentationTrace& trace, int64_t n_valid) {
    if (n_valid < 0) return trace.seq_len;
    if (n_valid == 0 || n_valid > trace.seq_len) {
        throw ValidationError("instance valid-token count " + std::to_string(n_valid) +
                              " out of range for sequence of " + std::to_string(trace.seq_len));
    }
    return n_valid;
}

}  // namespace

CoefficientStats::CoefficientStats(int n_layers, int ffn_inner, CoeffMode mode)
    : ffn_inner_(ffn_inner), mode_(mode) {
    if (n_layers < 1 || ffn_inner < 1) throw ConfigError("coefficient stats: bad dimensions");
    sums_.assign(static_cast<size_t>(n_layers), std::vector<double>(static_cast<size_t>(ffn_inner), 0.0));
}

void CoefficientStats::accumulate(const InstrumentationTrace& trace, int64_t n_valid) {
    if (static_cast<int>(trace.layers.size()) != n_layers() || trace.ffn_inner != ffn_inner_) {
        throw ShapeError("coefficient stats: trace has " + std::to_string(trace.layers.size()) +
                         " layers x " + std::to_string(trace.ffn_inner) + ", stats expect " +
                         std::to_string(n_layers()) + " x " + std::to_string(ffn_inner_));
    }
    if (trace.coeff_mode != mode_) {
        throw ValidationError("coefficient stats: trace mode does not match stats mode");
    }
    const int64_t t = clamp_valid(trace, n_valid);
    const int64_t m = ffn_inner_;
    for (size_t l = 0; l < sums_.size(); ++l) {
        const std::vector<double>& coeff = trace.layers[l].coeff;
        std::vector<double>& sum = sums_[l];
        for (int64_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < t; ++j) acc += coeff[static_cast<size_t>(j * m + i)];
            sum[static_cast<size_t>(i)] += acc / static_cast<double>(t);
        }
    }
    ++n_instances_;
}

std::vector<double> CoefficientStats::layer_mean(int layer) const {
    if (n_instances_ < 1) throw ValidationError("coefficient stats: no instances accumulated");
    if (layer < 0 || layer >= n_layers()) throw ValidationError("coefficient stats: layer out of range");
    std::vector<double> mean = sums_[static_cast<size_t>(layer)];
    for (double& v : mean) v /= static_cast<double>(n_instances_);
    return mean;
}

void CoefficientStats::save(const std::string& path) const {
    if (n_instances_ < 1) throw ValidationError("coefficient stats: nothing to save");
    Container c;
    c.kind = "coeff_stats";
    c.meta["n_instances"] = n_instances_;
    c.meta["coefficient_mode"] = coeff_mode_name(mode_);
    c.meta["source"] = source;
    for (int l = 0; l < n_layers(); ++l) {
        c.tensors.push_back(entry_from_tensor(
            "coeff_stats.layer" + std::to_string(l),
            Tensor::from_values({ffn_inner_}, layer_mean(l))));
    }
    write_container(path, c);
}

CoefficientStats CoefficientStats::load(const std::string& path) {
    Container c = read_container(path);
    if (c.kind != "coeff_stats") {
        throw ValidationError("'" + path + "': container kind '" + c.kind + "' is not coefficient stats");
    }
    const int64_t n = c.meta.at("n_instances").get<int64_t>();
    if (n < 1 || c.tensors.empty()) throw ValidationError("'" + path + "': empty coefficient stats");
    const int64_t m = c.tensors[0].shape.at(0);
    CoefficientStats stats(static_cast<int>(c.tensors.size()), static_cast<int>(m),
                           coeff_mode_from_name(c.meta.at("coefficient_mode").get<std::string>()));
    stats.source = c.meta.value("source", "");
    stats.n_instances_ = n;
    for (size_t l = 0; l < c.tensors.size(); ++l) {
        const auto& e = c.tensors[l];
        if (e.name != "coeff_stats.layer" + std::to_string(l) || e.shape != Shape{m}) {
            throw TensorShapeMismatchError("'" + path + "': unexpected stats tensor '" + e.name + "'");
        }
        for (int64_t i = 0; i < m; ++i) {
            stats.sums_[l][static_cast<size_t>(i)] =
                static_cast<double>(e.data[static_cast<size_t>(i)]) * static_cast<double>(n);
        }
    }
    return stats;
}

KnowledgeEntropy knowledge_entropy(const CoefficientStats& stats) {
    if (stats.n_instances() < 1) {
        throw ValidationError("knowledge_entropy: stats hold no instances");
    }
    KnowledgeEntropy result;
    for (int l = 0; l < stats.n_layers(); ++l) {
        std::vector<double> mean = stats.layer_mean(l);
        double total = 0.0;
        for (double v : mean) {
            if (v < 0.0) throw ValidationError("knowledge_entropy: negative mean coefficient");
            total += v;
        }
        if (total <= 0.0) {
            throw ValidationError("knowledge_entropy: layer " + std::to_string(l) +
                                  " has all-zero mean coefficients, cannot normalize");
        }
        for (double& v : mean) v /= total;
        result.per_layer.push_back(entropy_of(mean.data(), static_cast<int64_t>(mean.size())));
    }
    for (double h : result.per_layer) result.total += h;
    return result;
}

namespace {

// Shared per-instance walk. Any of the accumulators may be null.
struct EntropyAccumulators {
    CoefficientStats* stats = nullptr;
    // attention: per (layer, head) sum over instances of per-instance means
    std::vector<std::vector<double>>* attn_sums = nullptr;
    double* next_token_sum = nullptr;
};

void accumulate_instance(const InstrumentationTrace& trace, int64_t n_valid,
                         const EntropyAccumulators& acc) {
    const int64_t t = clamp_valid(trace, n_valid);
    if (acc.stats) acc.stats->accumulate(trace, t);
    if (acc.attn_sums) {
        const int64_t seq = trace.seq_len;
        for (size_t l = 0; l < trace.layers.size(); ++l) {
            for (int h = 0; h < trace.n_heads; ++h) {
                const std::vector<double>& a = trace.layers[l].attn[static_cast<size_t>(h)];
                double inst = 0.0;
                for (int64_t j = 0; j < t; ++j) {
                    inst += entropy_of(a.data() + j * seq, j + 1);
                }
                (*acc.attn_sums)[l][static_cast<size_t>(h)] += inst / static_cast<double>(t);
            }
        }
    }
    if (acc.next_token_sum) {
        const int64_t v = trace.vocab;
        std::vector<double> probs(static_cast<size_t>(v));
        double inst = 0.0;
        for (int64_t j = 0; j < t; ++j) {
            const double* zr = trace.logits.data() + j * v;
            double mx = zr[0];
            for (int64_t i = 1; i < v; ++i) mx = std::max(mx, zr[i]);
            double total = 0.0;
            for (int64_t i = 0; i < v; ++i) {
                probs[static_cast<size_t>(i)] = std::exp(zr[i] - mx);
                total += probs[static_cast<size_t>(i)];
            }
            for (int64_t i = 0; i < v; ++i) probs[static_cast<size_t>(i)] /= total;
            inst += entropy_of(probs.data(), v);
        }
        *acc.next_token_sum += inst / static_cast<double>(t);
    }
}

AttentionEntropy finalize_attention(const std::vector<std::vector<double>>& attn_sums,
                                    int64_t n_instances) {
    AttentionEntropy result;
    for (const auto& heads : attn_sums) {
        double layer = 0.0;
        for (double s : heads) layer += s / static_cast<double>(n_instances);
        layer /= static_cast<double>(heads.size());
        result.per_layer.push_back(layer);
        result.total += layer;
    }
    return result;
}

}  // namespace

AttentionEntropy attention_entropy(Model& model, const MeasurementSet& set,
                                   const ForwardOptions& opts) {
    if (set.empty()) throw ValidationError("attention_entropy: measurement set is empty");
    std::vector<std::vector<double>> sums(
        static_cast<size_t>(model.config().n_layers),
        std::vector<double>(static_cast<size_t>(model.config().n_heads), 0.0));
    EntropyAccumulators acc;
    acc.attn_sums = &sums;
    for (const Instance& inst : set) {
        InstrumentationTrace trace;
        model.forward_batch(inst.tokens, 1, static_cast<int64_t>(inst.tokens.size()), opts, &trace);
        accumulate_instance(trace, inst.n_valid, acc);
    }
    return finalize_attention(sums, static_cast<int64_t>(set.size()));
}

AttentionEntropy attention_entropy(const Checkpoint& ckpt, const MeasurementSet& set,
                                   const ForwardOptions& opts) {
    Model model(ckpt.clone());
    return attention_entropy(model, set, opts);
}

double next_token_entropy(Model& model, const MeasurementSet& set, const ForwardOptions& opts) {
    if (set.empty()) throw ValidationError("next_token_entropy: measurement set is empty");
    double total = 0.0;
    EntropyAccumulators acc;
    acc.next_token_sum = &total;
    for (const Instance& inst : set) {
        InstrumentationTrace trace;
        model.forward_batch(inst.tokens, 1, static_cast<int64_t>(inst.tokens.size()), opts, &trace);
        accumulate_instance(trace, inst.n_valid, acc);
    }
    return total / static_cast<double>(set.size());
}

double next_token_entropy(const Checkpoint& ckpt, const MeasurementSet& set,
                          const ForwardOptions& opts) {
    Model model(ckpt.clone());
    return next_token_entropy(model, set, opts);
}

MeasureResult measure_entropy(Model& model, const MeasurementSet& set, const ForwardOptions& opts,
                              const std::string& measurement_id) {
    if (set.empty()) throw ValidationError("measure_entropy: measurement set is empty");
    const ModelConfig& cfg = model.config();
    MeasureResult result;
    result.stats = CoefficientStats(cfg.n_layers, cfg.ffn_inner, opts.coeff_mode);
    result.stats.source = measurement_id;

    std::vector<std::vector<double>> attn_sums(
        static_cast<size_t>(cfg.n_layers), std::vector<double>(static_cast<size_t>(cfg.n_heads), 0.0));
    double nt_sum = 0.0;
    EntropyAccumulators acc;
    acc.stats = &result.stats;
    acc.attn_sums = &attn_sums;
    acc.next_token_sum = &nt_sum;
    for (const Instance& inst : set) {
        InstrumentationTrace trace;
        model.forward_batch(inst.tokens, 1, static_cast<int64_t>(inst.tokens.size()), opts, &trace);
        accumulate_instance(trace, inst.n_valid, acc);
    }

    EntropyReport& rep = result.report;
    rep.step = model.step();
    rep.measurement_id = measurement_id;
    rep.coeff_mode = opts.coeff_mode;
    KnowledgeEntropy ke = knowledge_entropy(result.stats);
    rep.knowledge_per_layer = std::move(ke.per_layer);
    rep.knowledge_total = ke.total;
    AttentionEntropy ae = finalize_attention(attn_sums, static_cast<int64_t>(set.size()));
    rep.attention_per_layer = std::move(ae.per_layer);
    rep.attention_total = ae.total;
    rep.next_token = nt_sum / static_cast<double>(set.size());
    return result;
}

void append_entropy_csv(const std::string& path, const EntropyReport& report) {
    const bool fresh = !std::ifstream(path).good();
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    if (fresh) out << "step,layer,h_knowledge,h_attention\n";
    char buf[128];
    for (size_t l = 0; l < report.knowledge_per_layer.size(); ++l) {
        std::snprintf(buf, sizeof(buf), "%lld,%zu,%.17g,%.17g\n",
                      static_cast<long long>(report.step), l, report.knowledge_per_layer[l],
                      report.attention_per_layer[l]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%lld,TOTAL,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(report.step), report.knowledge_total,
                  report.attention_total, report.next_token);
    out << buf;
}

}  // namespace kelab
