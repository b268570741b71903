#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "kelab/experiment.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"kelab: feed-forward memory entropy instrumentation, resuscitation surgery, "
                 "and continual knowledge learning on a toy transformer"};
    app.require_subcommand(1);

    kelab::PretrainCmdOptions pre;
    CLI::App* cmd_pre = app.add_subcommand("pretrain", "generate data and pretrain with fractional checkpoints");
    cmd_pre->add_option("--config", pre.config_path, "experiment config JSON")->required();
    cmd_pre->add_option("--out", pre.out_dir, "run directory")->required();
    cmd_pre->add_flag("--force", pre.force, "allow writing into an existing directory");

    kelab::MeasureCmdOptions mea;
    CLI::App* cmd_mea = app.add_subcommand("measure", "measure entropies of a checkpoint");
    cmd_mea->add_option("--ckpt", mea.ckpt_path)->required();
    cmd_mea->add_option("--corpus", mea.corpus_path)->required();
    cmd_mea->add_option("--vocab", mea.vocab_path)->required();
    cmd_mea->add_option("--out", mea.out_dir)->required();
    cmd_mea->add_option("--mode", mea.mode, "abs-swiglu or relu-gate");
    cmd_mea->add_option("--instances", mea.instances, "measurement instances");
    cmd_mea->add_option("--tau", mea.attn_temperature, "attention temperature");
    cmd_mea->add_flag("--force", mea.force);

    kelab::ResuscitateCmdOptions res;
    double cap = 0.0;
    CLI::App* cmd_res = app.add_subcommand("resuscitate", "up-projection surgery from measured stats");
    cmd_res->add_option("--ckpt", res.ckpt_path)->required();
    cmd_res->add_option("--stats", res.stats_path)->required();
    cmd_res->add_option("--out", res.out_dir)->required();
    cmd_res->add_option("--p", res.p, "resuscitation ratio percentile");
    cmd_res->add_option("--q", res.q, "amplifying factor");
    CLI::Option* cap_opt = cmd_res->add_option("--cap", cap, "multiplier cap");
    cmd_res->add_flag("--force", res.force);

    kelab::ContinualCmdOptions con;
    std::string inject = "plan";
    double source_fraction = -1.0;
    CLI::App* cmd_con = app.add_subcommand("continual", "continual knowledge learning from a checkpoint");
    cmd_con->add_option("--ckpt", con.ckpt_path)->required();
    cmd_con->add_option("--data", con.data_dir, "pretrain run directory with corpus artifacts")->required();
    cmd_con->add_option("--out", con.out_dir)->required();
    cmd_con->add_option("--inject", inject, "plan or none");
    cmd_con->add_option("--tau", con.attn_temperature, "attention temperature during training");
    int epochs = 0;
    CLI::Option* ep_opt = cmd_con->add_option("--epochs", epochs);
    CLI::Option* sf_opt = cmd_con->add_option("--source-fraction", source_fraction,
                                              "pretraining fraction of the source checkpoint");
    cmd_con->add_flag("--force", con.force);

    kelab::ReportCmdOptions rep;
    CLI::App* cmd_rep = app.add_subcommand("report", "merge runs into plot-ready CSV series");
    cmd_rep->add_option("--out", rep.out_path)->required();
    cmd_rep->add_option("dirs", rep.run_dirs, "run directories")->required();

    CLI11_PARSE(app, argc, argv);

    if (cmd_pre->parsed()) {
        kelab::cmd_pretrain(pre);
    } else if (cmd_mea->parsed()) {
        kelab::cmd_measure(mea);
    } else if (cmd_res->parsed()) {
        if (cap_opt->count() > 0) res.cap = cap;
        kelab::cmd_resuscitate(res);
    } else if (cmd_con->parsed()) {
        if (inject != "plan" && inject != "none") {
            throw kelab::ConfigError("--inject must be 'plan' or 'none'");
        }
        con.inject = inject == "plan";
        if (ep_opt->count() > 0) con.epochs = epochs;
        if (sf_opt->count() > 0) con.source_fraction = source_fraction;
        kelab::cmd_continual(con);
    } else if (cmd_rep->parsed()) {
        kelab::cmd_report(rep);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const kelab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const kelab::NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const kelab::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
