#include "kelab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <deque>
#include <fstream>

#include "kelab/ops.hpp"
#include "kelab/rng.hpp"

namespace kelab {

namespace {

std::vector<int64_t> epoch_order(int64_t n_rows, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n_rows));
    for (int64_t i = 0; i < n_rows; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(seed, "batch_order", static_cast<uint64_t>(epoch)));
    for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    return order;
}

// One optimizer step over a batch of packed rows. Returns the loss.
double train_step(Model& model, AdamW& optimizer, const std::vector<const std::vector<int>*>& rows,
                  double lr, const ForwardOptions& fwd) {
    const int64_t batch = static_cast<int64_t>(rows.size());
    const int64_t seq_len = static_cast<int64_t>(rows[0]->size());
    std::vector<int> tokens;
    tokens.reserve(static_cast<size_t>(batch * seq_len));
    std::vector<int> targets;
    std::vector<uint8_t> mask;
    std::vector<int> row_t;
    std::vector<uint8_t> row_m;
    for (const auto* row : rows) {
        tokens.insert(tokens.end(), row->begin(), row->end());
        row_targets(*row, row_t, row_m);
        targets.insert(targets.end(), row_t.begin(), row_t.end());
        mask.insert(mask.end(), row_m.begin(), row_m.end());
    }

    Tape tape;
    TapeScope scope(tape);
    Tensor logits = model.forward_batch(tokens, batch, seq_len, fwd);
    Tensor loss = cross_entropy_mean(logits, targets, mask);
    const double loss_value = loss.value();
    if (!std::isfinite(loss_value)) throw NumericError("training loss is not finite");
    model.zero_grads();
    tape.backward(loss);
    optimizer.step(model, lr);
    return loss_value;
}

class CsvLog {
public:
    explicit CsvLog(const std::string& path, const char* header) {
        if (path.empty()) return;
        const bool fresh = !std::ifstream(path).good();
        out_.open(path, std::ios::app);
        if (!out_) throw IoError("cannot open '" + path + "' for writing");
        if (fresh) out_ << header << '\n';
    }
    void line(const char* fmt, ...) __attribute__((format(printf, 2, 3))) {
        if (!out_.is_open()) return;
        char buf[192];
        va_list args;
        va_start(args, fmt);
        std::vsnprintf(buf, sizeof(buf), fmt, args);
        va_end(args);
        out_ << buf << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace

size_t InjectionPlan::total_rows() const {
    size_t n = 0;
    for (const auto& r : per_round) n += r.size();
    return n;
}

InjectionPlan build_injection_plan(const ProbeCorpus& corpus, const Vocab& vocab, int64_t seq_len,
                                   int rounds) {
    if (rounds < 1) throw ConfigError("injection plan: rounds must be >= 1");
    corpus.validate();
    auto tokenize_row = [&](const std::string& text) {
        std::vector<int> row = {Vocab::kBos};
        std::vector<int> ids = vocab.encode(text);
        row.insert(row.end(), ids.begin(), ids.end());
        if (static_cast<int64_t>(row.size()) > seq_len) {
            throw ValidationError("injection plan: paragraph of " + std::to_string(row.size()) +
                                  " tokens does not fit a row of " + std::to_string(seq_len));
        }
        row.resize(static_cast<size_t>(seq_len), Vocab::kPad);
        return row;
    };

    InjectionPlan plan;
    plan.rounds = rounds;
    plan.per_round.assign(static_cast<size_t>(rounds), {});
    // paraphrase items: one distinct paraphrase per round, item id order
    for (int r = 0; r < rounds; ++r) {
        for (const auto& item : corpus.items) {
            if (item.setting != Setting::Paraphrase) continue;
            const auto& text = item.paraphrases[static_cast<size_t>(r) % item.paraphrases.size()];
            plan.per_round[static_cast<size_t>(r)].push_back(
                {item.id, Setting::Paraphrase, r, tokenize_row(text)});
        }
    }
    // once items: split into `rounds` groups round-robin by id order
    int once_index = 0;
    for (const auto& item : corpus.items) {
        if (item.setting != Setting::Once) continue;
        const int r = once_index % rounds;
        plan.per_round[static_cast<size_t>(r)].push_back(
            {item.id, Setting::Once, r, tokenize_row(item.paragraph)});
        ++once_index;
    }
    return plan;
}

PretrainResult pretrain(Model& model, AdamW& optimizer, const PackedCorpus& corpus,
                        const PretrainOptions& opts,
                        const std::function<void(double, int64_t)>& on_fraction) {
    const int64_t n_rows = static_cast<int64_t>(corpus.rows.size());
    const int64_t steps_per_epoch = n_rows / opts.batch_size;
    if (steps_per_epoch < 1) {
        throw ConfigError("pretrain: corpus of " + std::to_string(n_rows) +
                          " rows is shorter than one batch of " + std::to_string(opts.batch_size));
    }
    if (opts.epochs < 1) throw ConfigError("pretrain: epochs must be >= 1");
    const int64_t total = steps_per_epoch * opts.epochs;

    Schedule schedule{total, opts.warmup_fraction, opts.peak_lr, opts.floor_lr};
    schedule.validate();

    // fraction -> 1-based step at which the checkpoint is cut
    std::vector<std::pair<double, int64_t>> boundaries;
    for (double f : opts.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("pretrain: fractions must be in (0, 1]");
        boundaries.emplace_back(f, std::max<int64_t>(1, std::llround(f * static_cast<double>(total))));
    }
    std::sort(boundaries.begin(), boundaries.end());

    CsvLog log(opts.train_log_path, "step,lr,loss");
    model.set_trainable(true);

    PretrainResult result;
    result.total_steps = total;
    result.boundaries = boundaries;

    std::vector<int64_t> order;
    int64_t order_epoch = -1;
    for (int64_t step = opts.start_step; step < total; ++step) {
        const int64_t epoch = step / steps_per_epoch;
        if (epoch != order_epoch) {
            order = epoch_order(n_rows, opts.order_seed, epoch);
            order_epoch = epoch;
        }
        const int64_t i = step % steps_per_epoch;
        std::vector<const std::vector<int>*> batch;
        for (int64_t b = 0; b < opts.batch_size; ++b) {
            batch.push_back(&corpus.rows[static_cast<size_t>(order[static_cast<size_t>(i * opts.batch_size + b)])]);
        }
        const double lr = lr_at(schedule, step);
        result.final_loss = train_step(model, optimizer, batch, lr, {});
        log.line("%lld,%.17g,%.17g", static_cast<long long>(step), lr, result.final_loss);

        const int64_t done = step + 1;
        for (const auto& [fraction, at] : boundaries) {
            if (at == done) {
                quantize_params_f32(model);
                optimizer.quantize_f32();
                model.set_step(done);
                if (on_fraction) on_fraction(fraction, done);
            }
        }
    }
    model.set_step(total);
    return result;
}

ContinualResult continual_train(Model& model, const PackedCorpus& corpus,
                                const InjectionPlan* plan, const ContinualOptions& opts) {
    const int64_t n_rows = static_cast<int64_t>(corpus.rows.size());
    const int64_t steps_per_epoch = n_rows / opts.batch_size;
    if (steps_per_epoch < 1) {
        throw ConfigError("continual: corpus of " + std::to_string(n_rows) +
                          " rows is shorter than one batch of " + std::to_string(opts.batch_size));
    }
    if (opts.epochs < 1) throw ConfigError("continual: epochs must be >= 1");
    int64_t total = steps_per_epoch * opts.epochs;
    int64_t interval = 0;
    if (plan) {
        if (plan->rounds < 1 || plan->rounds > total) {
            throw ConfigError("continual: plan rounds " + std::to_string(plan ? plan->rounds : 0) +
                              " incompatible with " + std::to_string(total) + " steps");
        }
        // align to a whole number of rounds so boundaries sit at total/rounds
        total = std::max<int64_t>((total / plan->rounds) * plan->rounds,
                                  static_cast<int64_t>(plan->rounds));
        interval = total / plan->rounds;
    }

    Schedule schedule{total, opts.warmup_fraction, opts.peak_lr, opts.floor_lr};
    schedule.validate();

    CsvLog log(opts.train_log_path, "step,lr,loss");
    CsvLog audit(opts.audit_log_path, "step,item_id,kind,round");

    model.set_trainable(true);
    AdamW optimizer(model, opts.optimizer);  // fresh state; released checkpoints carry none

    ContinualResult result;
    result.total_steps = total;
    result.injection_interval = interval;

    std::deque<const InjectionRow*> pending;
    std::vector<int64_t> order;
    int64_t order_epoch = -1;
    int64_t cursor = 0;  // corpus rows consumed so far
    for (int64_t step = 0; step < total; ++step) {
        if (plan && interval > 0 && step % interval == 0) {
            const int64_t round = step / interval;
            if (round < plan->rounds) {
                for (const auto& row : plan->per_round[static_cast<size_t>(round)]) {
                    pending.push_back(&row);
                }
            }
        }
        std::vector<const std::vector<int>*> batch;
        std::vector<const InjectionRow*> injected;
        while (!pending.empty() && static_cast<int64_t>(batch.size()) < opts.batch_size) {
            injected.push_back(pending.front());
            batch.push_back(&pending.front()->tokens);
            pending.pop_front();
        }
        while (static_cast<int64_t>(batch.size()) < opts.batch_size) {
            const int64_t epoch = (cursor / n_rows) % (1 << 20);
            if (epoch != order_epoch) {
                order = epoch_order(n_rows, opts.order_seed, epoch);
                order_epoch = epoch;
            }
            batch.push_back(&corpus.rows[static_cast<size_t>(order[static_cast<size_t>(cursor % n_rows)])]);
            ++cursor;
        }
        const double lr = lr_at(schedule, step);
        result.final_loss = train_step(model, optimizer, batch, lr, opts.forward);
        log.line("%lld,%.17g,%.17g", static_cast<long long>(step), lr, result.final_loss);
        for (const InjectionRow* row : injected) {
            audit.line("%lld,%d,%s,%d", static_cast<long long>(step), row->item_id,
                       setting_name(row->kind), row->round);
        }
    }
    if (!pending.empty()) {
        throw ValidationError("continual: " + std::to_string(pending.size()) +
                              " injected rows were never trained");
    }
    return result;
}

}  // namespace kelab
