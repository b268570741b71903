#pragma once

#include <map>
#include <string>
#include <vector>

#include "kelab/data.hpp"
#include "kelab/model.hpp"

namespace kelab {

// Probe scoring. Aggregation order is fixed: probe mean -> item mean ->
// setting mean -> weighted setting combine.
struct ProbeScores {
    double k = 0.0;        // weighted combine of the two settings
    double k_once = 0.0;   // 0 when the setting has no items
    double k_para = 0.0;
    std::map<std::string, double> tier_k;     // same three-level scheme per tier
    std::vector<double> per_probe;            // corpus iteration order, 15 per item
    std::vector<double> per_item;             // mean over the item's probes
};

ProbeScores probe_performance(Model& model, const ProbeCorpus& corpus, const Vocab& vocab,
                              const ForwardOptions& opts = {});

// Aggregation over already-scored probes (corpus iteration order, 15 per
// item); probe_performance is score-then-aggregate.
ProbeScores aggregate_probe_scores(const ProbeCorpus& corpus, const std::vector<double>& per_probe);

// Improvement rate of K from the pretrained to the continually trained
// model, normalized by |K_PT| so that improvement is positive.
double acquisition(double k_pt, double k_cl);

struct RetentionScores {
    double p = 0.0;                             // mean over task accuracies
    std::map<std::string, double> task_p;
};

RetentionScores retention_performance(Model& model, const RetentionSuite& suite, const Vocab& vocab,
                                      const ForwardOptions& opts = {});

// Prediction is the argmax candidate (ties -> lowest index) of each item's
// score vector.
RetentionScores aggregate_retention_scores(const RetentionSuite& suite,
                                           const std::vector<std::vector<double>>& candidate_scores);

// Relative performance degradation; positive when performance dropped.
double forgetting(double p_pt, double p_cl);

struct MetricsReport {
    ProbeScores probes_pt, probes_cl;
    double acquisition = 0.0;
    RetentionScores retention_pt, retention_cl;
    double forgetting = 0.0;
};

// Flat key-value text file.
void write_metrics_report(const std::string& path, const MetricsReport& report);
std::map<std::string, double> read_metrics_report(const std::string& path);

// Per-probe CSV: item_id, setting, tier, probe_idx, logprob_pt, logprob_cl.
void write_probe_csv(const std::string& path, const ProbeCorpus& corpus, const ProbeScores& pt,
                     const ProbeScores& cl);

}  // namespace kelab
