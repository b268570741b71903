#include "kelab/probes.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kelab {

namespace {

std::vector<int> bos_context(const Vocab& vocab, const std::string& text) {
    std::vector<int> ids = {Vocab::kBos};
    std::vector<int> ctx = vocab.encode(text);
    ids.insert(ids.end(), ctx.begin(), ctx.end());
    return ids;
}

struct Welford {
    double sum = 0.0;
    int64_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double mean() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
};

}  // namespace

ProbeScores aggregate_probe_scores(const ProbeCorpus& corpus, const std::vector<double>& per_probe) {
    if (corpus.items.empty()) throw ValidationError("aggregate_probe_scores: corpus is empty");
    corpus.validate();
    if (per_probe.size() != corpus.items.size() * 15) {
        throw ValidationError("aggregate_probe_scores: expected 15 scores per item");
    }

    ProbeScores scores;
    scores.per_probe = per_probe;
    Welford once, para;
    std::map<std::string, Welford> tier_once, tier_para;
    size_t row = 0;
    for (const auto& item : corpus.items) {
        Welford item_mean;
        std::map<std::string, Welford> item_tier;
        for (const auto& probe : item.probes) {
            const double l = per_probe[row++];
            item_mean.add(l);
            item_tier[tier_name(probe.tier)].add(l);
        }
        scores.per_item.push_back(item_mean.mean());
        (item.setting == Setting::Once ? once : para).add(item_mean.mean());
        for (auto& [tier, acc] : item_tier) {
            (item.setting == Setting::Once ? tier_once[tier] : tier_para[tier]).add(acc.mean());
        }
    }
    scores.k_once = once.mean();
    scores.k_para = para.mean();
    const double w_once = static_cast<double>(once.n);
    const double w_para = static_cast<double>(para.n);
    scores.k = (w_once * scores.k_once + w_para * scores.k_para) / (w_once + w_para);
    for (const char* tier : {"memorization", "semantic", "compositional"}) {
        const Welford& to = tier_once[tier];
        const Welford& tp = tier_para[tier];
        const double n = static_cast<double>(to.n + tp.n);
        if (n > 0) {
            scores.tier_k[tier] =
                (static_cast<double>(to.n) * to.mean() + static_cast<double>(tp.n) * tp.mean()) / n;
        }
    }
    return scores;
}

ProbeScores probe_performance(Model& model, const ProbeCorpus& corpus, const Vocab& vocab,
                              const ForwardOptions& opts) {
    if (corpus.items.empty()) throw ValidationError("probe_performance: corpus is empty");
    corpus.validate();
    std::vector<double> per_probe;
    per_probe.reserve(corpus.items.size() * 15);
    for (const auto& item : corpus.items) {
        for (const auto& probe : item.probes) {
            per_probe.push_back(model.span_logprob(bos_context(vocab, probe.context),
                                                   vocab.encode(probe.target), opts));
        }
    }
    return aggregate_probe_scores(corpus, per_probe);
}

double acquisition(double k_pt, double k_cl) {
    if (k_pt == 0.0) throw ValidationError("acquisition: K of the pretrained model is zero");
    return (k_cl - k_pt) / std::abs(k_pt);
}

RetentionScores aggregate_retention_scores(const RetentionSuite& suite,
                                           const std::vector<std::vector<double>>& candidate_scores) {
    if (suite.items.empty()) throw ValidationError("retention suite is empty");
    if (candidate_scores.size() != suite.items.size()) {
        throw ValidationError("aggregate_retention_scores: one score vector per item required");
    }
    std::map<std::string, Welford> per_task;
    for (size_t i = 0; i < suite.items.size(); ++i) {
        const RetentionItem& item = suite.items[i];
        const std::vector<double>& scores = candidate_scores[i];
        if (item.candidates.size() < 2 || scores.size() != item.candidates.size()) {
            throw ValidationError("retention item needs at least 2 scored candidate spans");
        }
        int best = 0;
        for (size_t c = 1; c < scores.size(); ++c) {
            if (scores[c] > scores[static_cast<size_t>(best)]) best = static_cast<int>(c);
        }
        per_task[item.task].add(best == item.correct ? 1.0 : 0.0);
    }
    RetentionScores result;
    for (const auto& [task, acc] : per_task) {
        result.task_p[task] = acc.mean();
        result.p += acc.mean();
    }
    result.p /= static_cast<double>(per_task.size());
    return result;
}

RetentionScores retention_performance(Model& model, const RetentionSuite& suite, const Vocab& vocab,
                                      const ForwardOptions& opts) {
    if (suite.items.empty()) throw ValidationError("retention_performance: suite is empty");
    std::vector<std::vector<double>> candidate_scores;
    candidate_scores.reserve(suite.items.size());
    for (const auto& item : suite.items) {
        if (item.candidates.size() < 2) {
            throw ValidationError("retention item needs at least 2 candidate spans");
        }
        const std::vector<int> context = bos_context(vocab, item.context);
        std::vector<double> scores;
        for (const auto& candidate : item.candidates) {
            scores.push_back(model.span_logprob(context, vocab.encode(candidate), opts));
        }
        candidate_scores.push_back(std::move(scores));
    }
    return aggregate_retention_scores(suite, candidate_scores);
}

double forgetting(double p_pt, double p_cl) {
    if (p_pt == 0.0) throw ValidationError("forgetting: P of the pretrained model is zero");
    return -(p_cl - p_pt) / p_pt;
}

namespace {
void put(std::ofstream& out, const std::string& key, double value) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key.c_str(), value);
    out << buf;
}
}  // namespace

void write_metrics_report(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    put(out, "K_PT", report.probes_pt.k);
    put(out, "K_CL", report.probes_cl.k);
    put(out, "K_once_PT", report.probes_pt.k_once);
    put(out, "K_once_CL", report.probes_cl.k_once);
    put(out, "K_para_PT", report.probes_pt.k_para);
    put(out, "K_para_CL", report.probes_cl.k_para);
    put(out, "A", report.acquisition);
    put(out, "P_PT", report.retention_pt.p);
    put(out, "P_CL", report.retention_cl.p);
    put(out, "F", report.forgetting);
    for (const auto& [tier, k] : report.probes_pt.tier_k) put(out, "K_tier_" + tier + "_PT", k);
    for (const auto& [tier, k] : report.probes_cl.tier_k) put(out, "K_tier_" + tier + "_CL", k);
    for (const auto& [task, p] : report.retention_pt.task_p) put(out, "P_task_" + task + "_PT", p);
    for (const auto& [task, p] : report.retention_cl.task_p) put(out, "P_task_" + task + "_CL", p);
}

std::map<std::string, double> read_metrics_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::map<std::string, double> kv;
    std::string line;
    while (std::getline(in, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
    }
    return kv;
}

void write_probe_csv(const std::string& path, const ProbeCorpus& corpus, const ProbeScores& pt,
                     const ProbeScores& cl) {
    const size_t expected = corpus.items.size() * 15;
    if (pt.per_probe.size() != expected || cl.per_probe.size() != expected) {
        throw ValidationError("write_probe_csv: score vectors do not match corpus");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "item_id,setting,tier,probe_idx,logprob_pt,logprob_cl\n";
    size_t row = 0;
    char buf[192];
    for (const auto& item : corpus.items) {
        for (size_t p = 0; p < item.probes.size(); ++p, ++row) {
            std::snprintf(buf, sizeof(buf), "%d,%s,%s,%zu,%.17g,%.17g\n", item.id,
                          setting_name(item.setting), tier_name(item.probes[p].tier), p,
                          pt.per_probe[row], cl.per_probe[row]);
            out << buf;
        }
    }
}

}  // namespace kelab
