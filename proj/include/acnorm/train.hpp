#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "acnorm/data.hpp"
#include "acnorm/surgery.hpp"

namespace acnorm {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 8;
    double learning_rate = 1e-2;
    std::string optimizer = "sgd_momentum";
    double sgd_momentum = 0.9;
    std::uint64_t seed = 0;
    FreezePolicy freeze;
    NormKind norm_kind = NormKind::vanilla_bn;
    double temperature = 1.0;
    double eps = 1e-5;
    double bn_momentum = 0.1;
    bool detach_calibration = false;
    bool balanced_sampling = false;

    void validate() const;
    ACNormConfig norm_config() const;
};

struct MetricsRecord {
    std::optional<double> dice;
    std::optional<double> accuracy;
    std::optional<double> auc;
    std::vector<double> loss_curve;
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

// Called with (epoch, model); epoch 0 fires before the first step.
using EpochCallback = std::function<void(int, ModelGraph&)>;

// Loss of a batch plus the gradient w.r.t. the logits. Segmentation: mean
// binary cross-entropy with logits. Classification: mean softmax CE.
double loss_and_logit_grad(const Tensor& logits, const Batch& batch,
                           const std::string& task, Tensor& dlogits);

// SGD with momentum over the trainable parameters. Aborts with NumericError
// on a non-finite loss. Refuses to train on a test split.
void train_model(ModelGraph& model, const Dataset& train, const TrainConfig& cfg,
                 TrainLog* log = nullptr, const EpochCallback* callback = nullptr);

MetricsRecord evaluate(ModelGraph& model, const Dataset& ds);

// Per-image Dice at threshold 0.5 (logit > 0), empty-vs-empty counts as 1.
double dice_score(const Tensor& pred_logits, const Tensor& truth_mask);

// Rank-statistic AUC with midranks for ties.
double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Pretrain / finetune harness
// ---------------------------------------------------------------------------

Checkpoint pretrain(const SyntheticTaskSpec& task, const ArchSpec& arch,
                    const TrainConfig& cfg, TrainLog* log = nullptr);

struct FinetuneResult {
    Checkpoint final_ckpt;
    Checkpoint initial_ckpt; // post-surgery, pre-training
    MetricsRecord metrics;
    TrainLog log;
};

// Surgery per cfg.norm_kind, fresh head, freeze policy, training on the
// target train split, evaluation on the target test split. probe_callback
// (optional) observes the model at every epoch boundary.
FinetuneResult finetune(const Checkpoint& source, const SyntheticTaskSpec& target,
                        const TrainConfig& cfg, const EpochCallback* probe_callback = nullptr);

} // namespace acnorm
