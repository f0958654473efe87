#include "acnorm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "acnorm/rng.hpp"

namespace acnorm {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
    if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (optimizer != "sgd_momentum" && optimizer != "sgd")
        throw ConfigError("TrainConfig: unknown optimizer " + optimizer);
    norm_config().validate();
}

ACNormConfig TrainConfig::norm_config() const {
    ACNormConfig c;
    c.temperature = temperature;
    c.eps = eps;
    c.momentum = bn_momentum;
    c.detach_calibration = detach_calibration;
    return c;
}

double loss_and_logit_grad(const Tensor& logits, const Batch& batch,
                           const std::string& task, Tensor& dlogits) {
    dlogits = Tensor(logits.shape());
    double loss = 0.0;
    if (task == "segmentation") {
        const std::size_t n = logits.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const double l = logits[i];
            const double y = batch.masks[i];
            // Stable BCE with logits.
            loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
            const double sig = 1.0 / (1.0 + std::exp(-l));
            dlogits[i] = (sig - y) / double(n);
        }
        loss /= double(n);
    } else {
        const std::size_t b_count = logits.dim(0), c_count = logits.dim(1);
        for (std::size_t b = 0; b < b_count; ++b) {
            double max_l = -1e300;
            for (std::size_t c = 0; c < c_count; ++c) max_l = std::max(max_l, logits(b, c));
            double lse = 0.0;
            for (std::size_t c = 0; c < c_count; ++c) lse += std::exp(logits(b, c) - max_l);
            lse = max_l + std::log(lse);
            const int y = batch.labels[b];
            loss += lse - logits(b, std::size_t(y));
            for (std::size_t c = 0; c < c_count; ++c) {
                const double p = std::exp(logits(b, c) - lse);
                dlogits(b, c) = (p - (int(c) == y ? 1.0 : 0.0)) / double(b_count);
            }
        }
        loss /= double(b_count);
    }
    return loss;
}

namespace {

std::vector<std::size_t> epoch_order(const Dataset& ds, const TrainConfig& cfg, int epoch) {
    Rng rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
    std::vector<std::size_t> order;
    if (cfg.balanced_sampling && ds.task == "classification") {
        // Mean-resampling: draw the same number of samples per class.
        std::vector<std::vector<std::size_t>> by_class(std::size_t(ds.n_classes));
        for (std::size_t i = 0; i < ds.size(); ++i)
            by_class.at(std::size_t(ds.samples[i].label)).push_back(i);
        std::size_t total = 0;
        std::size_t present = 0;
        for (const auto& c : by_class) {
            total += c.size();
            if (!c.empty()) ++present;
        }
        const std::size_t per_class = std::max<std::size_t>(1, total / std::max<std::size_t>(1, present));
        for (const auto& c : by_class) {
            if (c.empty()) continue;
            for (std::size_t i = 0; i < per_class; ++i)
                order.push_back(c[rng.uniform_below(c.size())]);
        }
    } else {
        order.resize(ds.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    rng.shuffle(order);
    return order;
}

} // namespace

void train_model(ModelGraph& model, const Dataset& train, const TrainConfig& cfg,
                 TrainLog* log, const EpochCallback* callback) {
    cfg.validate();
    if (train.split == Split::test)
        throw DataError("train_model: refusing to train on a test split");
    if (train.samples.empty()) throw DataError("train_model: empty dataset");

    std::map<std::string, Tensor> velocity;
    const double mu = (cfg.optimizer == "sgd_momentum") ? cfg.sgd_momentum : 0.0;

    if (callback) (*callback)(0, model);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(train, cfg, epoch);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(start),
                                         order.begin() + std::ptrdiff_t(stop));
            const Batch batch = make_batch(train, idx);

            std::vector<LayerCache> caches;
            const Tensor logits = model_forward(model, batch.images, Mode::training, &caches);
            Tensor dlogits;
            const double loss = loss_and_logit_grad(logits, batch, train.task, dlogits);
            if (!std::isfinite(loss))
                throw NumericError("train_model: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(n_batches));
            epoch_loss += loss;
            ++n_batches;

            const ParamGrads grads = model_backward(model, caches, dlogits);
            for (const auto& [name, grad] : grads) {
                if (!model.trainable.at(name)) continue;
                Tensor& param = model.param(name);
                auto [it, fresh] = velocity.try_emplace(name, Tensor(param.shape()));
                Tensor& v = it->second;
                (void)fresh;
                for (std::size_t i = 0; i < param.numel(); ++i) {
                    v[i] = mu * v[i] + grad[i];
                    param[i] -= cfg.learning_rate * v[i];
                }
            }
        }
        if (log) log->epoch_loss.push_back(n_batches ? epoch_loss / double(n_batches) : 0.0);
        if (callback) (*callback)(epoch + 1, model);
    }
}

double dice_score(const Tensor& pred_logits, const Tensor& truth_mask) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < pred_logits.numel(); ++i) {
        const double p = pred_logits[i] > 0.0 ? 1.0 : 0.0;
        const double g = truth_mask[i] > 0.5 ? 1.0 : 0.0;
        inter += p * g;
        psum += p;
        gsum += g;
    }
    if (psum + gsum == 0.0) return 1.0;
    return 2.0 * inter / (psum + gsum);
}

double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (double(i) + double(j)) / 2.0 + 1.0; // 1-based midrank
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] == 1) {
            pos_rank_sum += rank[k];
            ++n_pos;
        }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return 0.5;
    return (pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0) /
           (double(n_pos) * double(n_neg));
}

MetricsRecord evaluate(ModelGraph& model, const Dataset& ds) {
    if (ds.samples.empty()) throw DataError("evaluate: empty dataset");
    MetricsRecord rec;
    const std::size_t batch_size = 8;

    if (ds.task == "segmentation") {
        double dice_sum = 0.0;
        double correct = 0.0, total = 0.0;
        std::vector<double> pixel_scores;
        std::vector<int> pixel_labels;
        for (std::size_t start = 0; start < ds.size(); start += batch_size) {
            const std::size_t stop = std::min(ds.size(), start + batch_size);
            std::vector<std::size_t> idx(stop - start);
            std::iota(idx.begin(), idx.end(), start);
            const Batch batch = make_batch(ds, idx);
            const Tensor logits = model_forward(model, batch.images, Mode::inference);
            const std::size_t hw = std::size_t(ds.image_size) * std::size_t(ds.image_size);
            for (std::size_t b = 0; b < idx.size(); ++b) {
                Tensor pl({1, hw}), tm({1, hw});
                for (std::size_t i = 0; i < hw; ++i) {
                    pl[i] = logits[b * hw + i];
                    tm[i] = batch.masks[b * hw + i];
                }
                dice_sum += dice_score(pl, tm);
                for (std::size_t i = 0; i < hw; ++i) {
                    const int g = tm[i] > 0.5 ? 1 : 0;
                    const int p = pl[i] > 0.0 ? 1 : 0;
                    correct += (g == p) ? 1.0 : 0.0;
                    total += 1.0;
                    pixel_scores.push_back(pl[i]);
                    pixel_labels.push_back(g);
                }
            }
        }
        rec.dice = dice_sum / double(ds.size());
        rec.accuracy = correct / total;
        rec.auc = binary_auc(pixel_scores, pixel_labels);
    } else {
        double correct = 0.0;
        std::vector<std::vector<double>> class_scores(std::size_t(ds.n_classes));
        std::vector<std::vector<int>> class_labels(std::size_t(ds.n_classes));
        for (std::size_t start = 0; start < ds.size(); start += batch_size) {
            const std::size_t stop = std::min(ds.size(), start + batch_size);
            std::vector<std::size_t> idx(stop - start);
            std::iota(idx.begin(), idx.end(), start);
            const Batch batch = make_batch(ds, idx);
            const Tensor logits = model_forward(model, batch.images, Mode::inference);
            for (std::size_t b = 0; b < idx.size(); ++b) {
                std::size_t argmax = 0;
                for (std::size_t c = 1; c < logits.dim(1); ++c)
                    if (logits(b, c) > logits(b, argmax)) argmax = c;
                if (int(argmax) == batch.labels[b]) correct += 1.0;
                for (std::size_t c = 0; c < logits.dim(1); ++c) {
                    class_scores[c].push_back(logits(b, c));
                    class_labels[c].push_back(batch.labels[b] == int(c) ? 1 : 0);
                }
            }
        }
        rec.accuracy = correct / double(ds.size());
        // Macro one-vs-rest AUC over classes present in the data.
        double auc_sum = 0.0;
        int auc_n = 0;
        for (std::size_t c = 0; c < class_scores.size(); ++c) {
            const auto& labels = class_labels[c];
            const int pos = int(std::count(labels.begin(), labels.end(), 1));
            if (pos == 0 || pos == int(labels.size())) continue;
            auc_sum += binary_auc(class_scores[c], labels);
            ++auc_n;
        }
        if (auc_n > 0) rec.auc = auc_sum / double(auc_n);
    }
    return rec;
}

Checkpoint pretrain(const SyntheticTaskSpec& task, const ArchSpec& arch,
                    const TrainConfig& cfg, TrainLog* log) {
    cfg.validate();
    task.validate();
    if (task.task != arch.task)
        throw ConfigError("pretrain: task kind does not match architecture head");
    if (task.head_outputs() != arch.n_classes)
        throw ConfigError("pretrain: head outputs do not match task classes");

    ModelGraph model = build_model(arch, derive_seed(cfg.seed, "pretrain-init"));
    apply_freeze_policy(model, cfg.freeze);
    const Dataset train = generate_split(task, Split::train);
    train_model(model, train, cfg, log);
    return to_checkpoint(model, "pretrain");
}

FinetuneResult finetune(const Checkpoint& source, const SyntheticTaskSpec& target,
                        const TrainConfig& cfg, const EpochCallback* probe_callback) {
    cfg.validate();
    target.validate();
    const ArchSpec arch = arch_from_checkpoint(source);
    if (arch.task != target.task)
        throw SurgeryError("finetune: checkpoint head does not fit the target task");

    ModelGraph base = build_model(arch, derive_seed(cfg.seed, "ft-init"),
                                  cfg.norm_kind, cfg.norm_config());
    ModelGraph model = swap_norm_layers(base, source, cfg.norm_kind);
    reinit_head(model, derive_seed(cfg.seed, "ft-head"));
    apply_freeze_policy(model, cfg.freeze);

    FinetuneResult result;
    result.initial_ckpt = to_checkpoint(model, "finetune-init");

    const Dataset train = generate_split(target, Split::train);
    train_model(model, train, cfg, &result.log, probe_callback);

    const Dataset test = generate_split(target, Split::test);
    result.metrics = evaluate(model, test);
    result.metrics.loss_curve = result.log.epoch_loss;
    result.final_ckpt = to_checkpoint(model, "finetune-final");
    return result;
}

} // namespace acnorm
