#include "kelab/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "kelab/entropy.hpp"
#include "kelab/probes.hpp"
#include "kelab/resuscitate.hpp"
#include "kelab/rng.hpp"

namespace fs = std::filesystem;

namespace kelab {

namespace {

std::string fraction_label(double f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", f);
    return buf;
}

void ensure_fresh_dir(const std::string& dir, bool force) {
    if (fs::exists(dir)) {
        if (!force && !fs::is_empty(dir)) {
            throw ConfigError("output directory '" + dir + "' already exists (use --force)");
        }
    }
    fs::create_directories(dir);
}

MeasurementSet measurement_set_from(const PackedCorpus& packed, int instances) {
    MeasurementSet set;
    const size_t n = std::min<size_t>(static_cast<size_t>(instances), packed.rows.size());
    for (size_t i = 0; i < n; ++i) {
        set.push_back({packed.rows[i], count_valid_tokens(packed.rows[i])});
    }
    if (set.empty()) throw ConfigError("measurement set is empty");
    return set;
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    if (data.seq_len < 2 || data.seq_len > model.max_seq_len) {
        throw ConfigError("config: seq_len must be in [2, max_seq_len]");
    }
    if (pretrain.batch_size < 1 || continual.batch_size < 1) {
        throw ConfigError("config: batch sizes must be >= 1");
    }
    if (pretrain.fractions.empty()) throw ConfigError("config: need at least one checkpoint fraction");
    for (double f : pretrain.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: fractions must be in (0, 1]");
    }
    if (continual.rounds < 1) throw ConfigError("config: continual rounds must be >= 1");
    if (!(continual.attn_temperature > 0.0)) {
        throw ConfigError("config: attention temperature must be positive");
    }
    if (pretrain.measure_instances < 1) throw ConfigError("config: measure_instances must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["model"] = {{"n_layers", model.n_layers},     {"model_dim", model.model_dim},
                  {"ffn_inner", model.ffn_inner},   {"n_heads", model.n_heads},
                  {"vocab_size", model.vocab_size}, {"max_seq_len", model.max_seq_len},
                  {"norm_eps", model.norm_eps}};
    j["data"] = {{"seq_len", data.seq_len},
                 {"base_documents", data.base_documents},
                 {"base_entity_pool", data.base_entity_pool},
                 {"shifted_documents", data.shifted_documents},
                 {"shifted_entity_pool", data.shifted_entity_pool},
                 {"fictional_paraphrase", data.fictional_paraphrase},
                 {"fictional_once", data.fictional_once},
                 {"retention_tasks", data.retention_tasks},
                 {"retention_items_per_task", data.retention_items_per_task}};
    j["pretrain"] = {{"batch_size", pretrain.batch_size},
                     {"epochs", pretrain.epochs},
                     {"peak_lr", pretrain.peak_lr},
                     {"floor_lr", pretrain.floor_lr},
                     {"warmup_fraction", pretrain.warmup_fraction},
                     {"fractions", pretrain.fractions},
                     {"measure_instances", pretrain.measure_instances}};
    j["continual"] = {{"batch_size", continual.batch_size},
                      {"epochs", continual.epochs},
                      {"peak_lr", continual.peak_lr},
                      {"floor_lr", continual.floor_lr},
                      {"warmup_fraction", continual.warmup_fraction},
                      {"rounds", continual.rounds},
                      {"attn_temperature", continual.attn_temperature}};
    j["optimizer"] = {{"beta1", optimizer.beta1},
                      {"beta2", optimizer.beta2},
                      {"weight_decay", optimizer.weight_decay},
                      {"eps", optimizer.eps},
                      {"grad_clip", optimizer.grad_clip}};
    return j;
}

namespace {
template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    maybe(j, "seed", c.seed);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        maybe(m, "n_layers", c.model.n_layers);
        maybe(m, "model_dim", c.model.model_dim);
        maybe(m, "ffn_inner", c.model.ffn_inner);
        maybe(m, "n_heads", c.model.n_heads);
        maybe(m, "vocab_size", c.model.vocab_size);
        maybe(m, "max_seq_len", c.model.max_seq_len);
        maybe(m, "norm_eps", c.model.norm_eps);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        maybe(d, "seq_len", c.data.seq_len);
        maybe(d, "base_documents", c.data.base_documents);
        maybe(d, "base_entity_pool", c.data.base_entity_pool);
        maybe(d, "shifted_documents", c.data.shifted_documents);
        maybe(d, "shifted_entity_pool", c.data.shifted_entity_pool);
        maybe(d, "fictional_paraphrase", c.data.fictional_paraphrase);
        maybe(d, "fictional_once", c.data.fictional_once);
        maybe(d, "retention_tasks", c.data.retention_tasks);
        maybe(d, "retention_items_per_task", c.data.retention_items_per_task);
    }
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        maybe(p, "batch_size", c.pretrain.batch_size);
        maybe(p, "epochs", c.pretrain.epochs);
        maybe(p, "peak_lr", c.pretrain.peak_lr);
        maybe(p, "floor_lr", c.pretrain.floor_lr);
        maybe(p, "warmup_fraction", c.pretrain.warmup_fraction);
        maybe(p, "fractions", c.pretrain.fractions);
        maybe(p, "measure_instances", c.pretrain.measure_instances);
    }
    if (j.contains("continual")) {
        const auto& p = j.at("continual");
        maybe(p, "batch_size", c.continual.batch_size);
        maybe(p, "epochs", c.continual.epochs);
        maybe(p, "peak_lr", c.continual.peak_lr);
        maybe(p, "floor_lr", c.continual.floor_lr);
        maybe(p, "warmup_fraction", c.continual.warmup_fraction);
        maybe(p, "rounds", c.continual.rounds);
        maybe(p, "attn_temperature", c.continual.attn_temperature);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        maybe(o, "beta1", c.optimizer.beta1);
        maybe(o, "beta2", c.optimizer.beta2);
        maybe(o, "weight_decay", c.optimizer.weight_decay);
        maybe(o, "eps", c.optimizer.eps);
        maybe(o, "grad_clip", c.optimizer.grad_clip);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
    return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << to_json().dump(1) << '\n';
}

// ---- pretrain --------------------------------------------------------------

void cmd_pretrain(const PretrainCmdOptions& opts) {
    ExperimentConfig cfg = ExperimentConfig::load(opts.config_path);
    ensure_fresh_dir(opts.out_dir, opts.force);
    const std::string dir = opts.out_dir + "/";

    // data generation, all derived from the run seed
    SyntheticCorpusSpec base_spec{derive_seed(cfg.seed, "data/base"), cfg.data.base_documents,
                                  SyntheticCorpusSpec::Domain::Base, 0, cfg.data.base_entity_pool};
    SyntheticCorpusSpec shifted_spec{derive_seed(cfg.seed, "data/shifted"), cfg.data.shifted_documents,
                                     SyntheticCorpusSpec::Domain::Shifted, 0,
                                     cfg.data.shifted_entity_pool};
    const std::vector<std::string> base_docs = gen_pretrain_corpus(base_spec);
    const std::vector<std::string> shifted_docs = gen_pretrain_corpus(shifted_spec);
    const WorldPools pools = base_world_pools(base_spec);
    const ProbeCorpus probes = gen_fictional_knowledge(derive_seed(cfg.seed, "data/fictional"),
                                                       cfg.data.fictional_paraphrase,
                                                       cfg.data.fictional_once, pools);
    check_entities_disjoint(probes, base_docs);
    const RetentionSuite retention =
        gen_retention_suite(base_spec, derive_seed(cfg.seed, "data/retention"),
                            cfg.data.retention_tasks, cfg.data.retention_items_per_task);

    // one vocabulary over everything the pipeline will ever tokenize
    std::vector<std::string> vocab_sources = base_docs;
    vocab_sources.insert(vocab_sources.end(), shifted_docs.begin(), shifted_docs.end());
    for (const auto& item : probes.items) {
        vocab_sources.push_back(item.paragraph);
        for (const auto& para : item.paraphrases) vocab_sources.push_back(para);
        for (const auto& probe : item.probes) {
            vocab_sources.push_back(probe.context + " " + probe.target);
        }
    }
    for (const auto& item : retention.items) {
        std::string all = item.context;
        for (const auto& c : item.candidates) all += " " + c;
        vocab_sources.push_back(all);
    }
    std::set<std::string> types;
    for (const auto& doc : vocab_sources) {
        for (const auto& w : split_words(doc)) types.insert(w);
    }
    if (static_cast<int>(types.size()) + 3 > cfg.model.vocab_size) {
        throw ConfigError("config: corpus has " + std::to_string(types.size()) +
                          " word types; vocab_size " + std::to_string(cfg.model.vocab_size) +
                          " cannot hold them");
    }
    const Vocab vocab = Vocab::build(vocab_sources, cfg.model.vocab_size);

    save_corpus(dir + "corpus_base.txt", base_docs);
    save_corpus(dir + "corpus_shifted.txt", shifted_docs);
    probes.save(dir + "probes.json");
    retention.save(dir + "retention.json");
    vocab.save(dir + "vocab.txt");
    cfg.save(dir + "config.json");

    const PackedCorpus packed = tokenize_and_pack(base_docs, vocab, cfg.data.seq_len);
    const MeasurementSet measure_set = measurement_set_from(packed, cfg.pretrain.measure_instances);

    ModelConfig mc = cfg.model;
    mc.seed = derive_seed(cfg.seed, "model/init");
    Model model(init_model(mc));
    AdamW optimizer(model, cfg.optimizer);

    PretrainOptions popts;
    popts.batch_size = cfg.pretrain.batch_size;
    popts.epochs = cfg.pretrain.epochs;
    popts.peak_lr = cfg.pretrain.peak_lr;
    popts.floor_lr = cfg.pretrain.floor_lr;
    popts.warmup_fraction = cfg.pretrain.warmup_fraction;
    popts.optimizer = cfg.optimizer;
    popts.fractions = cfg.pretrain.fractions;
    popts.order_seed = derive_seed(cfg.seed, "pretrain/order");
    popts.train_log_path = dir + "train_log.csv";

    std::ofstream index(dir + "checkpoints.csv", std::ios::trunc);
    index << "fraction,step,checkpoint,optimizer\n";

    pretrain(model, optimizer, packed, popts, [&](double fraction, int64_t step) {
        const std::string label = fraction_label(fraction);
        const std::string ckpt_path = dir + "ckpt_f" + label + ".kelab";
        const std::string opt_path = dir + "opt_f" + label + ".kelab";
        save_checkpoint(model.to_checkpoint(), ckpt_path);
        optimizer.save(opt_path);
        MeasureResult measured = measure_entropy(model, measure_set, {}, "pretrain_slice");
        append_entropy_csv(dir + "entropy.csv", measured.report);
        measured.stats.source = "step_" + std::to_string(step);
        measured.stats.save(dir + "stats_f" + label + ".kelab");
        index << label << "," << step << ",ckpt_f" << label << ".kelab,opt_f" << label << ".kelab\n";
        index.flush();
    });
}

// ---- measure ----------------------------------------------------------------

void cmd_measure(const MeasureCmdOptions& opts) {
    Checkpoint ckpt = load_checkpoint(opts.ckpt_path);
    const Vocab vocab = Vocab::load(opts.vocab_path);
    if (vocab.size() > ckpt.config.vocab_size) {
        throw ValidationError("vocab of " + std::to_string(vocab.size()) +
                              " entries does not fit checkpoint vocab_size " +
                              std::to_string(ckpt.config.vocab_size));
    }
    const std::vector<std::string> docs = load_corpus(opts.corpus_path);
    const PackedCorpus packed = tokenize_and_pack(docs, vocab, ckpt.config.max_seq_len);
    const MeasurementSet set = measurement_set_from(packed, opts.instances);

    ensure_fresh_dir(opts.out_dir, opts.force);
    ForwardOptions fwd = attention_temperature(opts.attn_temperature);
    fwd.coeff_mode = coeff_mode_from_name(opts.mode);

    Model model(std::move(ckpt));
    MeasureResult measured = measure_entropy(model, set, fwd, opts.corpus_path);
    measured.stats.source = opts.ckpt_path;
    const std::string suffix = opts.mode;
    append_entropy_csv(opts.out_dir + "/entropy_" + suffix + ".csv", measured.report);
    measured.stats.save(opts.out_dir + "/stats_" + suffix + ".kelab");
}

// ---- resuscitate --------------------------------------------------------------

void cmd_resuscitate(const ResuscitateCmdOptions& opts) {
    Checkpoint ckpt = load_checkpoint(opts.ckpt_path);
    CoefficientStats stats = CoefficientStats::load(opts.stats_path);
    if (stats.n_layers() != ckpt.config.n_layers || stats.ffn_inner() != ckpt.config.ffn_inner) {
        throw ValidationError("stats of " + std::to_string(stats.n_layers()) + "x" +
                              std::to_string(stats.ffn_inner()) +
                              " are incompatible with the checkpoint");
    }
    ResuscitationSpec spec;
    spec.p = opts.p;
    spec.q = opts.q;
    spec.multiplier_cap = opts.cap;
    SurgeryPlan plan = plan_surgery(stats, spec);

    ensure_fresh_dir(opts.out_dir, opts.force);
    Checkpoint modified = apply_surgery(ckpt, plan);
    save_checkpoint(modified, opts.out_dir + "/ckpt_resusc.kelab");
    write_plan_csv(opts.out_dir + "/plan.csv", plan);
}

// ---- continual ------------------------------------------------------------------

void cmd_continual(const ContinualCmdOptions& opts) {
    const std::string data = opts.data_dir + "/";
    if (!fs::exists(data + "config.json")) {
        throw ConfigError("data directory '" + opts.data_dir + "' holds no config.json");
    }
    ExperimentConfig cfg = ExperimentConfig::load(data + "config.json");
    Checkpoint ckpt = load_checkpoint(opts.ckpt_path);
    const Vocab vocab = Vocab::load(data + "vocab.txt");
    const std::vector<std::string> shifted_docs = load_corpus(data + "corpus_shifted.txt");
    const ProbeCorpus probes = ProbeCorpus::load(data + "probes.json");
    const RetentionSuite retention = RetentionSuite::load(data + "retention.json");

    ensure_fresh_dir(opts.out_dir, opts.force);
    const std::string dir = opts.out_dir + "/";

    const PackedCorpus packed = tokenize_and_pack(shifted_docs, vocab, cfg.data.seq_len);
    InjectionPlan plan;
    if (opts.inject) plan = build_injection_plan(probes, vocab, cfg.data.seq_len, cfg.continual.rounds);

    ForwardOptions fwd = attention_temperature(opts.attn_temperature);

    const int64_t source_step = ckpt.step;
    Model model(std::move(ckpt));
    MetricsReport report;
    report.probes_pt = probe_performance(model, probes, vocab, fwd);
    report.retention_pt = retention_performance(model, retention, vocab, fwd);

    ContinualOptions copts;
    copts.batch_size = cfg.continual.batch_size;
    copts.epochs = opts.epochs.value_or(cfg.continual.epochs);
    copts.peak_lr = cfg.continual.peak_lr;
    copts.floor_lr = cfg.continual.floor_lr;
    copts.warmup_fraction = cfg.continual.warmup_fraction;
    copts.optimizer = cfg.optimizer;
    copts.order_seed = derive_seed(cfg.seed, "continual/order");
    copts.forward = fwd;
    copts.train_log_path = dir + "train_log.csv";
    copts.audit_log_path = dir + "batch_audit.csv";
    ContinualResult trained = continual_train(model, packed, opts.inject ? &plan : nullptr, copts);

    report.probes_cl = probe_performance(model, probes, vocab, fwd);
    report.retention_cl = retention_performance(model, retention, vocab, fwd);
    report.acquisition = acquisition(report.probes_pt.k, report.probes_cl.k);
    report.forgetting = forgetting(report.retention_pt.p, report.retention_cl.p);

    write_metrics_report(dir + "metrics.txt", report);
    write_probe_csv(dir + "probe_logprobs.csv", probes, report.probes_pt, report.probes_cl);
    save_checkpoint(model.to_checkpoint(), dir + "ckpt_cl.kelab");

    nlohmann::json meta;
    meta["source_ckpt"] = opts.ckpt_path;
    meta["source_step"] = source_step;
    if (opts.source_fraction) meta["source_fraction"] = *opts.source_fraction;
    meta["inject"] = opts.inject;
    meta["attn_temperature"] = opts.attn_temperature;
    meta["total_steps"] = trained.total_steps;
    meta["injection_interval"] = trained.injection_interval;
    for (const auto& [k, v] : model.extra()) meta["ckpt_extra"][k] = v;
    std::ofstream mout(dir + "continual_meta.json", std::ios::trunc);
    mout << meta.dump(1) << '\n';
}

// ---- report ----------------------------------------------------------------------

void cmd_report(const ReportCmdOptions& opts) {
    if (opts.run_dirs.empty()) throw ConfigError("report: need at least one run directory");
    std::vector<std::string> dirs = opts.run_dirs;
    std::sort(dirs.begin(), dirs.end());

    std::ofstream out(opts.out_path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + opts.out_path + "' for writing");
    out << "series,x,y,run_id\n";
    char buf[192];
    std::vector<std::string> missing;

    for (const auto& run : dirs) {
        const std::string run_id = fs::path(run).filename().string();
        const std::string entropy_path = run + "/entropy.csv";
        const std::string index_path = run + "/checkpoints.csv";
        const std::string metrics_path = run + "/metrics.txt";
        const std::string meta_path = run + "/continual_meta.json";

        if (fs::exists(entropy_path) && fs::exists(index_path)) {
            // step -> fraction from the checkpoint index
            std::map<long long, double> fraction_of;
            std::ifstream index(index_path);
            std::string line;
            std::getline(index, line);  // header
            while (std::getline(index, line)) {
                double fraction = 0.0;
                long long step = 0;
                if (std::sscanf(line.c_str(), "%lf,%lld", &fraction, &step) == 2) {
                    fraction_of[step] = fraction;
                }
            }
            std::ifstream entropy(entropy_path);
            std::getline(entropy, line);  // header
            while (std::getline(entropy, line)) {
                long long step = 0;
                double hk = 0.0, ha = 0.0, hn = 0.0;
                if (std::sscanf(line.c_str(), "%lld,TOTAL,%lf,%lf,%lf", &step, &hk, &ha, &hn) == 4) {
                    const double x = fraction_of.count(step) ? fraction_of[step]
                                                             : static_cast<double>(step);
                    std::snprintf(buf, sizeof(buf), "knowledge_entropy,%.17g,%.17g,%s\n", x, hk,
                                  run_id.c_str());
                    out << buf;
                    std::snprintf(buf, sizeof(buf), "attention_entropy,%.17g,%.17g,%s\n", x, ha,
                                  run_id.c_str());
                    out << buf;
                    std::snprintf(buf, sizeof(buf), "next_token_entropy,%.17g,%.17g,%s\n", x, hn,
                                  run_id.c_str());
                    out << buf;
                }
            }
        } else if (fs::exists(metrics_path)) {
            const auto kv = read_metrics_report(metrics_path);
            double x = 0.0;
            double q = -1.0;
            if (fs::exists(meta_path)) {
                std::ifstream min(meta_path);
                nlohmann::json meta = nlohmann::json::parse(min, nullptr, false);
                if (!meta.is_discarded()) {
                    if (meta.contains("source_fraction")) {
                        x = meta["source_fraction"].get<double>();
                    } else if (meta.contains("source_step")) {
                        x = static_cast<double>(meta["source_step"].get<int64_t>());
                    }
                    if (meta.contains("ckpt_extra") && meta["ckpt_extra"].contains("resusc_q")) {
                        q = std::stod(meta["ckpt_extra"]["resusc_q"].get<std::string>());
                    }
                }
            }
            std::snprintf(buf, sizeof(buf), "acquisition,%.17g,%.17g,%s\n", x, kv.at("A"), run_id.c_str());
            out << buf;
            std::snprintf(buf, sizeof(buf), "forgetting,%.17g,%.17g,%s\n", x, kv.at("F"), run_id.c_str());
            out << buf;
            if (q >= 0.0) {
                std::snprintf(buf, sizeof(buf), "acquisition_vs_q,%.17g,%.17g,%s\n", q, kv.at("A"),
                              run_id.c_str());
                out << buf;
                std::snprintf(buf, sizeof(buf), "forgetting_vs_q,%.17g,%.17g,%s\n", q, kv.at("F"),
                              run_id.c_str());
                out << buf;
            }
        } else {
            missing.push_back(run);
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw ConfigError("report: no entropy or metrics files in: " + list);
    }
}

}  // namespace kelab
