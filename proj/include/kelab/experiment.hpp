#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kelab/model.hpp"
#include "kelab/train.hpp"

namespace kelab {

// Resolved experiment configuration; serialized verbatim into every run
// directory so a run is reproducible from its own artifacts.
struct ExperimentConfig {
    uint64_t seed = 1;
    ModelConfig model;

    struct Data {
        int64_t seq_len = 128;
        int base_documents = 46000;
        int base_entity_pool = 1000;
        int shifted_documents = 5000;
        int shifted_entity_pool = 250;
        int fictional_paraphrase = 14;
        int fictional_once = 12;
        int retention_tasks = 4;
        int retention_items_per_task = 250;
    } data;

    struct Pretrain {
        int64_t batch_size = 32;
        int epochs = 1;
        double peak_lr = 4e-4;
        double floor_lr = 0.0;
        double warmup_fraction = 0.05;
        std::vector<double> fractions = {0.1, 0.2, 0.5, 1.0};
        int measure_instances = 256;
    } pretrain;

    struct Continual {
        int64_t batch_size = 32;
        int epochs = 1;
        double peak_lr = 4e-4;
        double floor_lr = 0.0;
        double warmup_fraction = 0.05;
        int rounds = 10;
        double attn_temperature = 1.0;
    } continual;

    OptimizerHyper optimizer;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;
};

// ---- commands (exit codes are mapped by the CLI wrapper) ----

struct PretrainCmdOptions {
    std::string config_path;
    std::string out_dir;
    bool force = false;
};
void cmd_pretrain(const PretrainCmdOptions& opts);

struct MeasureCmdOptions {
    std::string ckpt_path;
    std::string corpus_path;
    std::string vocab_path;
    std::string out_dir;
    std::string mode = "abs-swiglu";
    int instances = 256;
    double attn_temperature = 1.0;
    bool force = false;
};
void cmd_measure(const MeasureCmdOptions& opts);

struct ResuscitateCmdOptions {
    std::string ckpt_path;
    std::string stats_path;
    std::string out_dir;
    double p = 50.0;
    double q = 1.0;
    std::optional<double> cap;
    bool force = false;
};
void cmd_resuscitate(const ResuscitateCmdOptions& opts);

struct ContinualCmdOptions {
    std::string ckpt_path;
    std::string data_dir;  // pretrain run directory with corpus/vocab/probe artifacts
    std::string out_dir;
    bool inject = true;
    double attn_temperature = 1.0;
    std::optional<int> epochs;
    std::optional<double> source_fraction;
    bool force = false;
};
void cmd_continual(const ContinualCmdOptions& opts);

struct ReportCmdOptions {
    std::vector<std::string> run_dirs;
    std::string out_path;
};
void cmd_report(const ReportCmdOptions& opts);

}  // namespace kelab
