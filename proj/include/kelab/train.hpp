#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kelab/data.hpp"
#include "kelab/model.hpp"
#include "kelab/optim.hpp"

namespace kelab {

// Knowledge-injection schedule: at each of `rounds` evenly spaced step
// boundaries, the current paraphrase of every paraphrase-setting item plus
// one group of once-setting items enters the upcoming batches.
struct InjectionRow {
    int item_id = 0;
    Setting kind = Setting::Paraphrase;
    int round = 0;
    std::vector<int> tokens;  // BOS + paragraph, padded to seq_len
};

struct InjectionPlan {
    int rounds = 10;
    std::vector<std::vector<InjectionRow>> per_round;

    size_t total_rows() const;
};

InjectionPlan build_injection_plan(const ProbeCorpus& corpus, const Vocab& vocab, int64_t seq_len,
                                   int rounds = 10);

struct PretrainOptions {
    int64_t batch_size = 32;
    int epochs = 1;
    double peak_lr = 4e-4;
    double floor_lr = 0.0;
    double warmup_fraction = 0.05;
    OptimizerHyper optimizer;
    std::vector<double> fractions = {0.1, 0.2, 0.5, 1.0};
    uint64_t order_seed = 1;   // batch-order stream
    int64_t start_step = 0;    // resume point; batches are a pure function of (seed, step)
    std::string train_log_path;  // CSV `step, lr, loss`; empty disables
};

struct PretrainResult {
    int64_t total_steps = 0;
    std::vector<std::pair<double, int64_t>> boundaries;  // fraction -> step
    double final_loss = 0.0;
};

// Trains in place. At every requested fraction boundary the parameters and
// optimizer moments are rounded through float32 (matching what a checkpoint
// can store) and `on_fraction` is called; a run resumed from such a
// checkpoint therefore continues bit-exactly.
PretrainResult pretrain(
    Model& model, AdamW& optimizer, const PackedCorpus& corpus, const PretrainOptions& opts,
    const std::function<void(double fraction, int64_t step)>& on_fraction = {});

struct ContinualOptions {
    int64_t batch_size = 32;
    int epochs = 1;
    double peak_lr = 4e-4;
    double floor_lr = 0.0;
    double warmup_fraction = 0.05;
    OptimizerHyper optimizer;
    uint64_t order_seed = 2;
    ForwardOptions forward;  // attention-temperature resuscitation applies here
    std::string train_log_path;
    std::string audit_log_path;  // CSV `step, item_id, kind, round`; empty disables
};

struct ContinualResult {
    int64_t total_steps = 0;
    int64_t injection_interval = 0;
    double final_loss = 0.0;
};

// One pass (times `epochs`) over the new-domain corpus with optional
// knowledge injection. The optimizer starts fresh; plan == nullptr trains
// plainly. When a plan is given the step count is aligned to a multiple of
// its rounds so boundaries land at total_steps / rounds exactly.
ContinualResult continual_train(Model& model, const PackedCorpus& corpus,
                                const InjectionPlan* plan, const ContinualOptions& opts);

}  // namespace kelab
