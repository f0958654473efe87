// Command-line front end: pretrain, finetune, estimate, rank, probe,
// surgery and experiment subcommands over JSON configs.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"

#include "acnorm/experiment.hpp"
#include "acnorm/plots.hpp"
#include "acnorm/probe.hpp"
#include "acnorm/rng.hpp"

using namespace acnorm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json metrics_json(const MetricsRecord& m) {
    json j;
    if (m.dice) j["dice"] = *m.dice;
    if (m.accuracy) j["accuracy"] = *m.accuracy;
    if (m.auc) j["auc"] = *m.auc;
    if (!m.loss_curve.empty()) {
        j["final_loss"] = m.loss_curve.back();
        j["loss_curve"] = m.loss_curve;
    }
    return j;
}

struct TaskTrainConfig {
    SyntheticTaskSpec task;
    TrainConfig train;
    ArchSpec arch;
    bool has_arch = false;
};

TaskTrainConfig load_task_config(const std::string& path) {
    const json j = load_json_file(path);
    if (j.value("config_version", kConfigVersion) != kConfigVersion)
        throw ConfigError("unsupported config_version in " + path);
    TaskTrainConfig c;
    c.task = task_from_json(j.at("task"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("model")) {
        c.arch = arch_from_json(j.at("model"));
        c.has_arch = true;
    }
    c.train.seed = effective_seed(c.train.seed);
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"AC-Norm transfer-learning toolkit"};
    app.require_subcommand(1);

    // --- pretrain ---
    auto* cmd_pre = app.add_subcommand("pretrain", "train a source model on a synthetic task");
    std::string pre_config, pre_out = "pretrained.acn";
    cmd_pre->add_option("--config", pre_config, "task/train/model config (JSON)")->required();
    cmd_pre->add_option("--out", pre_out, "output checkpoint path");

    // --- finetune ---
    auto* cmd_ft = app.add_subcommand("finetune", "fine-tune a checkpoint on a target task");
    std::string ft_ckpt, ft_config, ft_out = "finetune_out";
    cmd_ft->add_option("--ckpt", ft_ckpt, "source checkpoint")->required();
    cmd_ft->add_option("--config", ft_config, "task/train config (JSON)")->required();
    cmd_ft->add_option("--out-dir", ft_out, "output directory");

    // --- estimate ---
    auto* cmd_est = app.add_subcommand("estimate", "score checkpoints with AC-Corr");
    std::string est_dir, est_task, est_out = "scores.json", est_probe;
    cmd_est->add_option("--ckpt-dir", est_dir, "directory of .acn checkpoints")->required();
    cmd_est->add_option("--task", est_task, "target task/train config (JSON)")->required();
    cmd_est->add_option("--out", est_out, "output scores JSON");
    cmd_est->add_option("--probe-layer", est_probe, "norm layer to probe (default: deepest encoder)");

    // --- rank ---
    auto* cmd_rank = app.add_subcommand("rank", "rank scores against ground truth");
    std::string rank_scores, rank_truth, rank_out = "report.json";
    cmd_rank->add_option("--scores", rank_scores, "scores JSON from estimate")->required();
    cmd_rank->add_option("--truth", rank_truth, "ground-truth JSON")->required();
    cmd_rank->add_option("--out", rank_out, "output report JSON");

    // --- probe ---
    auto* cmd_probe = app.add_subcommand("probe", "dynamics probes");
    auto* cmd_deltas = cmd_probe->add_subcommand("deltas", "per-layer update magnitudes");
    std::string d_before, d_after, d_out = "deltas.csv";
    cmd_deltas->add_option("--before", d_before, "checkpoint before")->required();
    cmd_deltas->add_option("--after", d_after, "checkpoint after")->required();
    cmd_deltas->add_option("--out", d_out, "output CSV");
    auto* cmd_eq5 = cmd_probe->add_subcommand("eq5", "statistics-propagation check");
    std::string eq5_config;
    cmd_eq5->add_option("--config", eq5_config, "probe config (JSON)")->required();

    // --- surgery ---
    auto* cmd_surgery = app.add_subcommand("surgery", "checkpoint manipulations");
    auto* cmd_shuffle = cmd_surgery->add_subcommand("shuffle", "permute conv output channels");
    std::string sh_ckpt, sh_out;
    std::uint64_t sh_seed = 0;
    cmd_shuffle->add_option("--ckpt", sh_ckpt)->required();
    cmd_shuffle->add_option("--seed", sh_seed)->required();
    cmd_shuffle->add_option("--out", sh_out, "output path (default: <ckpt>.shuffled.acn)");
    auto* cmd_mask = cmd_surgery->add_subcommand("mask", "re-initialize a fraction of channels");
    std::string mk_ckpt, mk_out;
    double mk_ratio = 0.0;
    std::uint64_t mk_seed = 0;
    cmd_mask->add_option("--ckpt", mk_ckpt)->required();
    cmd_mask->add_option("--ratio", mk_ratio)->required();
    cmd_mask->add_option("--seed", mk_seed)->required();
    cmd_mask->add_option("--out", mk_out, "output path (default: <ckpt>.masked.acn)");

    // --- experiment ---
    auto* cmd_exp = app.add_subcommand("experiment", "run a full experiment config");
    std::string exp_config, exp_out = "experiment_out";
    cmd_exp->add_option("--config", exp_config, "experiment config (JSON)")->required();
    cmd_exp->add_option("--out-dir", exp_out, "report directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_pre) {
            TaskTrainConfig c = load_task_config(pre_config);
            if (!c.has_arch) throw ConfigError("pretrain config needs a \"model\" section");
            TrainLog log;
            const Checkpoint ckpt = pretrain(c.task, c.arch, c.train, &log);
            save_checkpoint(ckpt, pre_out);
            std::printf("saved %s (final loss %.6f)\n", pre_out.c_str(),
                        log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back());
        } else if (*cmd_ft) {
            TaskTrainConfig c = load_task_config(ft_config);
            const Checkpoint src = load_checkpoint(ft_ckpt);
            fs::create_directories(ft_out);
            const FinetuneResult res = finetune(src, c.task, c.train);
            save_checkpoint(res.initial_ckpt, (fs::path(ft_out) / "ckpt_initial.acn").string());
            save_checkpoint(res.final_ckpt, (fs::path(ft_out) / "ckpt_final.acn").string());
            write_json_file((fs::path(ft_out) / "metrics.json").string(), metrics_json(res.metrics));
            json manifest;
            manifest["config_version"] = kConfigVersion;
            manifest["task"] = to_json(c.task);
            manifest["train"] = to_json(c.train);
            manifest["source_ckpt"] = ft_ckpt;
            write_json_file((fs::path(ft_out) / "run_manifest.json").string(), manifest);
            std::printf("metrics: %s\n", metrics_json(res.metrics).dump().c_str());
        } else if (*cmd_est) {
            TaskTrainConfig c = load_task_config(est_task);
            json out;
            out["config_version"] = kConfigVersion;
            out["task"] = to_json(c.task);
            out["scores"] = json::array();
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(est_dir))
                if (e.path().extension() == ".acn") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            if (files.empty()) throw DataError("no .acn checkpoints in " + est_dir);
            for (const auto& f : files) {
                const Checkpoint ckpt = load_checkpoint(f.string());
                const TransferScore s =
                    estimate_transferability(ckpt, c.task, c.train, est_probe, f.stem().string());
                json js;
                js["checkpoint_id"] = s.checkpoint_id;
                js["ac_corr"] = s.ac_corr_value;
                js["probe_layer"] = s.probe_layer;
                js["epochs_adapted"] = s.epochs_adapted;
                out["scores"].push_back(js);
                std::printf("%s: ac_corr=%.6f (%s)\n", s.checkpoint_id.c_str(), s.ac_corr_value,
                            s.probe_layer.c_str());
            }
            write_json_file(est_out, out);
        } else if (*cmd_rank) {
            const json js = load_json_file(rank_scores);
            const json jt = load_json_file(rank_truth);
            std::map<std::string, double> truth;
            for (const auto& r : jt.at("results"))
                truth[r.at("checkpoint_id").get<std::string>()] = r.at("metric").get<double>();
            std::vector<double> scores, truths;
            std::vector<std::string> ids;
            for (const auto& s : js.at("scores")) {
                const std::string id = s.at("checkpoint_id").get<std::string>();
                if (!truth.count(id)) throw InputError("no ground truth for " + id);
                ids.push_back(id);
                scores.push_back(s.at("ac_corr").get<double>());
                truths.push_back(truth.at(id));
            }
            const RankingReport rep = rank_models(scores, truths);
            json out;
            out["pearson"] = rep.pearson;
            out["kendall_tau"] = rep.kendall_tau;
            out["weighted_tau"] = rep.weighted_tau;
            out["ties_in_truth"] = rep.ties_in_truth;
            out["models"] = json::array();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                json jm;
                jm["checkpoint_id"] = ids[i];
                jm["score"] = scores[i];
                jm["ground_truth"] = truths[i];
                out["models"].push_back(jm);
            }
            write_json_file(rank_out, out);
            char ann[128];
            std::snprintf(ann, sizeof(ann), "Rp=%.3f tauK=%.3f tauW=%.3f", rep.pearson,
                          rep.kendall_tau, rep.weighted_tau);
            const fs::path scatter = fs::path(rank_out).parent_path() / "scatter.svg";
            write_scatter_svg(scatter.string(), scores, truths, ids, "AC-Corr",
                              "fine-tune metric", "transferability vs outcome", ann);
            std::printf("%s\n", ann);
        } else if (*cmd_probe) {
            if (*cmd_deltas) {
                const Checkpoint before = load_checkpoint(d_before);
                const Checkpoint after = load_checkpoint(d_after);
                const auto deltas = layer_deltas(before, after);
                std::ofstream os(d_out, std::ios::trunc);
                os << "layer,type,affine_delta,stats_delta,kernel_delta\n";
                for (const auto& d : deltas) {
                    if (d.is_norm)
                        os << d.layer << ",norm," << d.affine_delta << "," << d.stats_delta << ",\n";
                    else
                        os << d.layer << ",conv,,," << d.kernel_delta << "\n";
                }
                std::printf("wrote %s (%zu layers)\n", d_out.c_str(), deltas.size());
            } else if (*cmd_eq5) {
                const json j = load_json_file(eq5_config);
                const std::size_t n = j.value("n_samples", std::size_t(1000000));
                const std::uint64_t seed = effective_seed(j.value("seed", std::uint64_t(7)));
                int draws = j.value("draws", 1);
                const int k = j.value("k", 4);
                std::vector<double> alpha, beta, gamma;
                const bool explicit_params = j.contains("alpha");
                if (explicit_params) {
                    alpha = j.at("alpha").get<std::vector<double>>();
                    beta = j.at("beta").get<std::vector<double>>();
                    gamma = j.at("gamma").get<std::vector<double>>();
                    draws = 1;
                }
                double worst_mu = 0.0, worst_var = 0.0;
                for (int d = 0; d < draws; ++d) {
                    AffineParams prev;
                    std::vector<double> w;
                    if (explicit_params) {
                        prev.gamma = gamma;
                        prev.beta = beta;
                        w = alpha;
                    } else {
                        Rng rng(derive_seed(seed, "draw:" + std::to_string(d)));
                        for (int i = 0; i < k; ++i) {
                            prev.gamma.push_back(rng.uniform(0.8, 1.6));
                            prev.beta.push_back(rng.uniform(0.8, 1.6));
                            w.push_back(rng.uniform(0.8, 1.6));
                        }
                    }
                    const auto chk = verify_stat_propagation(prev, w, n,
                                                             derive_seed(seed, "samples:" + std::to_string(d)));
                    const double re_mu = std::abs(chk.mu_emp - chk.mu_pred) /
                                         std::max(1e-12, std::abs(chk.mu_pred));
                    const double re_var = std::abs(chk.var_emp - chk.var_pred) /
                                          std::max(1e-12, std::abs(chk.var_pred));
                    worst_mu = std::max(worst_mu, re_mu);
                    worst_var = std::max(worst_var, re_var);
                    std::printf("draw %d: mu pred=%.6f emp=%.6f (rel %.4e)  var pred=%.6f emp=%.6f (rel %.4e)\n",
                                d, chk.mu_pred, chk.mu_emp, re_mu, chk.var_pred, chk.var_emp, re_var);
                }
                std::printf("worst relative error: mu %.4e, var %.4e\n", worst_mu, worst_var);
            } else {
                std::fprintf(stderr, "probe needs a subcommand (deltas|eq5)\n");
                return 2;
            }
        } else if (*cmd_surgery) {
            if (*cmd_shuffle) {
                const Checkpoint ckpt = load_checkpoint(sh_ckpt);
                const Checkpoint out = shuffle_channels(ckpt, sh_seed);
                const std::string path =
                    sh_out.empty() ? (fs::path(sh_ckpt).stem().string() + ".shuffled.acn") : sh_out;
                save_checkpoint(out, path);
                std::printf("wrote %s\n", path.c_str());
            } else if (*cmd_mask) {
                const Checkpoint ckpt = load_checkpoint(mk_ckpt);
                const Checkpoint out = mask_channels(ckpt, mk_ratio, mk_seed);
                const std::string path =
                    mk_out.empty() ? (fs::path(mk_ckpt).stem().string() + ".masked.acn") : mk_out;
                save_checkpoint(out, path);
                std::printf("wrote %s\n", path.c_str());
            } else {
                std::fprintf(stderr, "surgery needs a subcommand (shuffle|mask)\n");
                return 2;
            }
        } else if (*cmd_exp) {
            const json j = load_json_file(exp_config);
            ExperimentConfig cfg = experiment_from_json(j);
            if (const char* env = std::getenv("ACNORM_SEED"); env && *env)
                cfg.seeds = {std::strtoull(env, nullptr, 10)};
            const ExperimentReport rep = run_experiment(cfg, exp_out);
            std::printf("experiment '%s': %zu rows, %d errors -> %s\n", cfg.name.c_str(),
                        rep.rows.size(), rep.n_errors, exp_out.c_str());
            if (rep.n_errors > 0) return 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
