#pragma once

#include <string>
#include <vector>

#include "kelab/model.hpp"

namespace kelab {

// One measurement sequence: token ids plus the count of leading positions
// that are real data (trailing padding is excluded from every average).
struct Instance {
    std::vector<int> tokens;
    int64_t n_valid = 0;
};
using MeasurementSet = std::vector<Instance>;

// Dataset-averaged memory coefficients: a running two-level mean. Each
// instance contributes its own token mean first; the dataset mean is the
// mean of instance means, so instances of different lengths weigh equally.
class CoefficientStats {
public:
    CoefficientStats() = default;
    CoefficientStats(int n_layers, int ffn_inner, CoeffMode mode);

    void accumulate(const InstrumentationTrace& trace, int64_t n_valid = -1);

    int n_layers() const { return static_cast<int>(sums_.size()); }
    int ffn_inner() const { return ffn_inner_; }
    int64_t n_instances() const { return n_instances_; }
    CoeffMode mode() const { return mode_; }

    // Mean coefficient vector of one layer, length ffn_inner.
    std::vector<double> layer_mean(int layer) const;

    std::string source;  // provenance: which checkpoint/measurement produced this

    void save(const std::string& path) const;
    static CoefficientStats load(const std::string& path);

private:
    std::vector<std::vector<double>> sums_;  // per layer: sum of instance means
    int ffn_inner_ = 0;
    int64_t n_instances_ = 0;
    CoeffMode mode_ = CoeffMode::AbsSwiglu;
};

struct EntropyReport {
    int64_t step = 0;
    std::string measurement_id;
    CoeffMode coeff_mode = CoeffMode::AbsSwiglu;
    std::vector<double> knowledge_per_layer;
    double knowledge_total = 0.0;
    std::vector<double> attention_per_layer;
    double attention_total = 0.0;
    double next_token = 0.0;
};

// Shannon entropy (natural log, 0*ln 0 := 0) of the normalized mean
// coefficients, per layer plus the total over layers. Throws on a layer
// whose mean coefficients are all zero.
struct KnowledgeEntropy {
    std::vector<double> per_layer;
    double total = 0.0;
};
KnowledgeEntropy knowledge_entropy(const CoefficientStats& stats);

// Entropy of causal attention rows, averaged over positions (per instance
// first, then over instances), then over heads; summed over layers.
struct AttentionEntropy {
    std::vector<double> per_layer;
    double total = 0.0;
};
AttentionEntropy attention_entropy(Model& model, const MeasurementSet& set,
                                   const ForwardOptions& opts = {});
AttentionEntropy attention_entropy(const Checkpoint& ckpt, const MeasurementSet& set,
                                   const ForwardOptions& opts = {});

// Mean entropy of the next-token distribution over the vocabulary.
double next_token_entropy(Model& model, const MeasurementSet& set,
                          const ForwardOptions& opts = {});
double next_token_entropy(const Checkpoint& ckpt, const MeasurementSet& set,
                          const ForwardOptions& opts = {});

// Single pass over the measurement set computing all three entropies and
// the coefficient statistics they share.
struct MeasureResult {
    EntropyReport report;
    CoefficientStats stats;
};
MeasureResult measure_entropy(Model& model, const MeasurementSet& set,
                              const ForwardOptions& opts = {},
                              const std::string& measurement_id = "");

// CSV rows `step, layer, h_knowledge, h_attention` per layer plus a summary
// row `step, TOTAL, h_knowledge_total, h_attention_total, h_next_token`.
void append_entropy_csv(const std::string& path, const EntropyReport& report);

}  // namespace kelab
