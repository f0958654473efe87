#include "acnorm/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "acnorm/rng.hpp"

namespace acnorm {

double ac_corr(const CalibrationMatrix& c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < c.values.numel(); ++i) sum += c.values[i];
    return sum;
}

TransferScore estimate_transferability(const Checkpoint& ckpt, const SyntheticTaskSpec& target,
                                       const TrainConfig& cfg, const std::string& probe_layer,
                                       const std::string& checkpoint_id) {
    TrainConfig probe_cfg = cfg;
    probe_cfg.epochs = 1; // fixed by the protocol
    probe_cfg.norm_kind = NormKind::acnorm;
    probe_cfg.freeze = FreezePolicy::full_ft();

    const ArchSpec arch = arch_from_checkpoint(ckpt);
    if (arch.task != target.task)
        throw SurgeryError("estimate_transferability: checkpoint head does not fit the task");

    ModelGraph base = build_model(arch, derive_seed(probe_cfg.seed, "ft-init"),
                                  probe_cfg.norm_kind, probe_cfg.norm_config());
    ModelGraph model = swap_norm_layers(base, ckpt, NormKind::acnorm);
    reinit_head(model, derive_seed(probe_cfg.seed, "ft-head"));
    apply_freeze_policy(model, probe_cfg.freeze);

    const Dataset train = generate_split(target, Split::train);
    if (train.samples.empty()) throw DataError("estimate_transferability: empty dataset");
    train_model(model, train, probe_cfg);

    std::string layer = probe_layer.empty() ? deepest_encoder_norm(model) : probe_layer;
    if (!model.has_param(layer + ".gamma"))
        throw ConfigError("estimate_transferability: unknown probe layer " + layer);

    AffineParams tgt, src;
    tgt.gamma = model.param(layer + ".gamma").vec();
    tgt.beta = model.param(layer + ".beta").vec();
    src.gamma = model.param(layer + ".src_gamma").vec();
    src.beta = model.param(layer + ".src_beta").vec();
    const auto z_t = domain_signature(tgt, probe_cfg.eps);
    const auto z_s = domain_signature(src, probe_cfg.eps);
    const auto c = sparsify(calibration_matrix(z_t, z_s, probe_cfg.temperature));

    TransferScore score;
    score.checkpoint_id = checkpoint_id.empty()
                              ? (ckpt.manifest.count("tag") ? ckpt.manifest.at("tag") : "checkpoint")
                              : checkpoint_id;
    score.ac_corr_value = ac_corr(c);
    score.probe_layer = layer;
    score.epochs_adapted = 1;
    return score;
}

double pearson_corr(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(n);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(n);
    double num = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return num / std::sqrt(va * vb);
}

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) {
                ties_a += 1.0;
            } else if (db == 0.0) {
                ties_b += 1.0;
            } else if (da * db > 0.0) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    const double n0 = double(n) * double(n - 1) / 2.0;
    if (ties_a == 0.0 && ties_b == 0.0) return (concordant - discordant) / n0;
    const double denom =
        std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
    if (denom == 0.0) return 0.0;
    return (concordant - discordant) / denom;
}

double weighted_tau(const std::vector<double>& scores, const std::vector<double>& truth) {
    const std::size_t n = scores.size();
    // Ranks by ground truth descending (best -> rank 0), stable for ties.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return truth[x] > truth[y]; });
    std::vector<double> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = double(r);

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double w = 1.0 / (1.0 + rank[i]) + 1.0 / (1.0 + rank[j]);
            const double ds = scores[i] - scores[j];
            const double dt = truth[i] - truth[j];
            const double sign = (ds * dt > 0.0) ? 1.0 : (ds * dt < 0.0 ? -1.0 : 0.0);
            num += w * sign;
            den += w;
        }
    if (den == 0.0) return 0.0;
    return num / den;
}

RankingReport rank_models(const std::vector<double>& scores,
                          const std::vector<double>& ground_truth) {
    if (scores.size() != ground_truth.size())
        throw InputError("rank_models: score/truth length mismatch");
    if (scores.size() < 2) throw InputError("rank_models: need at least 2 models");

    RankingReport rep;
    rep.pearson = pearson_corr(scores, ground_truth);
    rep.kendall_tau = kendall_tau(scores, ground_truth);
    rep.weighted_tau = weighted_tau(scores, ground_truth);
    for (std::size_t i = 0; i < scores.size(); ++i)
        rep.pairs.emplace_back(scores[i], ground_truth[i]);
    for (std::size_t i = 0; i < ground_truth.size() && !rep.ties_in_truth; ++i)
        for (std::size_t j = i + 1; j < ground_truth.size(); ++j)
            if (ground_truth[i] == ground_truth[j]) {
                rep.ties_in_truth = true;
                break;
            }
    return rep;
}

} // namespace acnorm
