#include "hiertax/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hiertax/error.hpp"
#include "hiertax/evaluation.hpp"
#include "hiertax/inference.hpp"

namespace hiertax {

FocalPointValue focal_loss_at(double p_t, const FocalParams& params) {
    if (params.alpha <= 0.0 || params.alpha > 1.0) {
        throw ContractError("focal alpha must be in (0, 1]");
    }
    if (params.gamma < 0.0) {
        throw ContractError("focal gamma must be >= 0");
    }
    if (p_t <= 0.0) {
        throw ContractError("focal_loss: target probability is zero (masked target?)");
    }
    FocalPointValue out;
    double u = 1.0 - p_t;
    if (u <= 0.0) {
        // p_t == 1: loss is exactly 0; the gradient limit is 0 for gamma > 0
        // and -alpha for the cross-entropy case gamma == 0.
        out.loss = 0.0;
        out.dloss_dpt = params.gamma == 0.0 ? -params.alpha : 0.0;
        return out;
    }
    double log_p = std::log(p_t);
    if (params.gamma == 0.0) {
        out.loss = -params.alpha * log_p;
        out.dloss_dpt = -params.alpha / p_t;
        return out;
    }
    double u_pow = std::pow(u, params.gamma);
    out.loss = -params.alpha * u_pow * log_p;
    out.dloss_dpt =
        params.alpha * (params.gamma * std::pow(u, params.gamma - 1.0) * log_p - u_pow / p_t);
    return out;
}

FocalResult focal_loss(const std::vector<double>& probs,
                       const std::vector<std::uint8_t>& mask, int target,
                       const FocalParams& params) {
    if (probs.size() != mask.size()) {
        throw ContractError("focal_loss: probs and mask lengths differ");
    }
    if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) {
        throw ContractError("focal_loss: target index out of range");
    }
    if (!mask[static_cast<std::size_t>(target)]) {
        throw ContractError("focal_loss: target " + std::to_string(target) +
                            " is masked out");
    }
    FocalPointValue point = focal_loss_at(probs[static_cast<std::size_t>(target)], params);
    // Push d(loss)/d(p_target) through the masked softmax to the logits.
    std::vector<double> grad_probs(probs.size(), 0.0);
    grad_probs[static_cast<std::size_t>(target)] = point.dloss_dpt;
    FocalResult out;
    out.loss = point.loss;
    out.grad_logits.resize(probs.size());
    masked_softmax_backward_row(probs.data(), grad_probs.data(), probs.size(),
                                out.grad_logits.data());
    return out;
}

LossWeights LossWeights::defaults(Variant variant) {
    LossWeights w;
    switch (variant) {
        case Variant::FC:
        case Variant::FS:
            w.values = {1.0};
            break;
        case Variant::HCO:
            w.values = {1.0, 1.0};
            break;
        case Variant::HCOF:
            w.values = {1.0, 1.0, 1.0};
            break;
        case Variant::HCOFG:
            w.values = {0.8, 0.9, 1.0, 1.2};
            break;
        case Variant::HCOFGS:
            w.values = {0.8, 0.9, 1.0, 1.2, 1.5};
            break;
    }
    return w;
}

double total_loss(const std::vector<double>& per_level_losses,
                  const LossWeights& weights) {
    if (per_level_losses.size() != weights.values.size()) {
        throw ContractError("total_loss: " + std::to_string(per_level_losses.size()) +
                            " losses vs " + std::to_string(weights.values.size()) +
                            " weights");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < per_level_losses.size(); ++i) {
        total += weights.values[i] * per_level_losses[i];
    }
    return total;
}

TeacherForcingMasks::TeacherForcingMasks(const TaxonomyTree& tree,
                                         const std::vector<LabelPath>& paths)
    : tree_(tree), paths_(paths) {
    for (const LabelPath& path : paths_) {
        if (!tree_.valid_path(path)) {
            throw ContractError("teacher forcing needs valid label paths");
        }
    }
}

const std::vector<std::uint8_t>& TeacherForcingMasks::mask(std::size_t sample,
                                                           Level level, int) const {
    if (level == Level::CLASS) return tree_.ones_mask(level);
    Level parent_level = level_from_ordinal(ordinal(level) - 1);
    int true_parent = paths_.at(sample)[static_cast<std::size_t>(ordinal(parent_level))];
    return tree_.child_mask_bits(parent_level, true_parent);
}

std::optional<std::string> TrainConfig::validate() const {
    if (lr <= 0.0 || weight_decay < 0.0 || batch_size == 0 || max_epochs < 1 ||
        scheduler_factor <= 0.0 || scheduler_factor >= 1.0 || scheduler_patience < 0 ||
        min_lr <= 0.0 || early_stop_patience < 1) {
        throw ContractError("train config fields must be positive "
                            "(factor in (0,1), non-negative decay)");
    }
    if (focal.alpha <= 0.0 || focal.alpha > 1.0 || focal.gamma < 0.0) {
        throw ContractError("focal parameters out of range");
    }
    if (early_stop_patience <= scheduler_patience) {
        return "early_stop_patience (" + std::to_string(early_stop_patience) +
               ") does not exceed scheduler_patience (" +
               std::to_string(scheduler_patience) +
               "); the learning rate will never drop before training stops";
    }
    return std::nullopt;
}

BatchLoss cascade_loss_and_grad(CascadeModel& model, const Matrix& features,
                                const std::vector<LabelPath>& targets,
                                const MaskSource& mask_source,
                                const FocalParams& focal, const LossWeights& weights,
                                bool train, Rng* rng, bool backward) {
    if (features.rows != targets.size()) {
        throw ContractError("cascade_loss_and_grad: feature/target counts differ");
    }
    if (features.rows == 0) {
        throw ContractError("cascade_loss_and_grad: empty batch");
    }
    if (weights.values.size() != model.levels().size()) {
        throw ContractError("loss weights must match the variant's level count");
    }
    ForwardCache cache;
    std::vector<LevelOutput> outputs = cascade_forward(
        model, features, mask_source, train, rng, backward || train ? &cache : nullptr);

    std::size_t batch = features.rows;
    BatchLoss result;
    result.per_level.assign(model.levels().size(), 0.0);
    std::vector<Matrix> grad_probs;
    if (backward) {
        grad_probs.reserve(outputs.size());
        for (const LevelOutput& out : outputs) {
            grad_probs.emplace_back(batch, out.probs.cols, 0.0);
        }
    }
    for (std::size_t li = 0; li < outputs.size(); ++li) {
        const LevelOutput& out = outputs[li];
        std::size_t l = static_cast<std::size_t>(ordinal(out.level));
        double sum = 0.0;
        for (std::size_t r = 0; r < batch; ++r) {
            int target = targets[r][l];
            if (target < 0 || static_cast<std::size_t>(target) >= out.probs.cols) {
                throw ContractError("target index out of range at level " +
                                    level_name(out.level));
            }
            double p_t = out.probs.at(r, static_cast<std::size_t>(target));
            if (p_t <= 0.0) {
                if (out.masks.at(r, static_cast<std::size_t>(target)) == 0.0) {
                    throw ContractError("focal_loss: target masked out for sample " +
                                        std::to_string(r) + " at level " +
                                        level_name(out.level));
                }
                // The mask allows the target but its probability underflowed:
                // the logits have blown past double range.
                throw DivergenceError("target probability underflowed to zero for sample " +
                                      std::to_string(r) + " at level " +
                                      level_name(out.level));
            }
            FocalPointValue point = focal_loss_at(p_t, focal);
            sum += point.loss;
            if (backward) {
                // d(total)/d(p_t) with the batch-mean and level weight folded in.
                grad_probs[li].at(r, static_cast<std::size_t>(target)) =
                    weights.values[li] * point.dloss_dpt / static_cast<double>(batch);
            }
        }
        result.per_level[li] = sum / static_cast<double>(batch);
    }
    result.total = total_loss(result.per_level, weights);
    if (backward) {
        cascade_backward(model, outputs, cache, std::move(grad_probs));
    }
    return result;
}

namespace {

struct ValScores {
    std::vector<double> accuracy;  // per variant level
    std::vector<double> f1;
    double monitored = 0.0;  // deepest-level weighted F1
};

ValScores validate_greedy(const CascadeModel& model, const TaxonomyTree& tree,
                          const Matrix& features, const std::vector<LabelPath>& truths) {
    std::vector<Prediction> preds =
        variant_is_flat(model.variant()) ? flat_lookup(model, tree, features)
                                         : decode_greedy(model, tree, features);
    ValScores scores;
    for (Level level : model.levels()) {
        std::size_t l = static_cast<std::size_t>(ordinal(level));
        std::vector<int> p, t;
        p.reserve(preds.size());
        t.reserve(preds.size());
        for (std::size_t i = 0; i < preds.size(); ++i) {
            p.push_back(preds[i].labels[l]);
            t.push_back(truths[i][l]);
        }
        long correct = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] == t[i]) ++correct;
        }
        scores.accuracy.push_back(static_cast<double>(correct) /
                                  static_cast<double>(p.size()));
        scores.f1.push_back(weighted_f1(p, t, model.level_counts()[l]));
    }
    scores.monitored = scores.f1.back();
    return scores;
}

struct ParamSnapshot {
    std::vector<std::vector<double>> buffers;
};

ParamSnapshot snapshot_params(CascadeModel& model) {
    ParamSnapshot snap;
    for (const ParamBlockRef& block : model.param_blocks()) {
        snap.buffers.push_back(*block.values);
    }
    return snap;
}

void restore_params(CascadeModel& model, const ParamSnapshot& snap) {
    std::vector<ParamBlockRef> blocks = model.param_blocks();
    if (blocks.size() != snap.buffers.size()) {
        throw ContractError("parameter snapshot does not match the model");
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        *blocks[i].values = snap.buffers[i];
    }
}

}  // namespace

FitResult fit(CascadeModel& model, const Dataset& data, const TaxonomyTree& tree,
              const LossWeights& weights, const TrainConfig& config) {
    config.validate();  // warning, if any, is surfaced by the CLI
    if (model.taxonomy_checksum() != tree.checksum()) {
        throw ContractError("fit: model was built against a different taxonomy");
    }
    if (data.taxonomy_checksum != tree.checksum()) {
        throw DataError("fit: dataset taxonomy checksum does not match the tree");
    }
    std::vector<std::size_t> train_idx = data.indices_of(Split::Train);
    std::vector<std::size_t> val_idx = data.indices_of(Split::Val);
    if (train_idx.empty() || val_idx.empty()) {
        throw DataError("fit: dataset needs non-empty train and val splits");
    }

    Matrix val_features = data.feature_matrix(val_idx);
    std::vector<LabelPath> val_truths = data.labels_of(val_idx);

    Rng rng(config.seed);
    AdamWConfig adamw;
    adamw.lr = config.lr;
    adamw.beta1 = config.beta1;
    adamw.beta2 = config.beta2;
    adamw.eps = config.eps;
    adamw.weight_decay = config.weight_decay;

    FitResult result;
    ParamSnapshot best = snapshot_params(model);
    result.best_metric = -std::numeric_limits<double>::infinity();
    long step = 0;
    int epochs_since_best = 0;
    int scheduler_bad = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(train_idx);
        std::vector<double> loss_sums(model.levels().size(), 0.0);
        for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
            std::size_t end = std::min(start + config.batch_size, train_idx.size());
            std::vector<std::size_t> batch_idx(train_idx.begin() + static_cast<long>(start),
                                               train_idx.begin() + static_cast<long>(end));
            Matrix features = data.feature_matrix(batch_idx);
            std::vector<LabelPath> targets = data.labels_of(batch_idx);
            TeacherForcingMasks masks(tree, targets);

            model.zero_grad();
            BatchLoss loss;
            try {
                loss = cascade_loss_and_grad(model, features, targets, masks,
                                             config.focal, weights, true, &rng, true);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ", batch at record " +
                                      std::to_string(start) + ": " + e.what());
            }
            if (!std::isfinite(loss.total)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch at record " + std::to_string(start));
            }
            ++step;
            try {
                model.adamw_step_all(adamw, step);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ", batch at record " +
                                      std::to_string(start) + ": " + e.what());
            }
            double scale = static_cast<double>(end - start);
            for (std::size_t li = 0; li < loss.per_level.size(); ++li) {
                loss_sums[li] += loss.per_level[li] * scale;
            }
        }

        ValScores val = validate_greedy(model, tree, val_features, val_truths);

        EpochLog log;
        log.epoch = epoch;
        for (double s : loss_sums) {
            log.train_loss.push_back(s / static_cast<double>(train_idx.size()));
        }
        log.val_accuracy = val.accuracy;
        log.val_f1 = val.f1;
        log.lr = adamw.lr;

        if (val.monitored > result.best_metric) {
            result.best_metric = val.monitored;
            result.best_epoch = epoch;
            best = snapshot_params(model);
            epochs_since_best = 0;
            scheduler_bad = 0;
            log.is_best = true;
        } else {
            ++epochs_since_best;
            ++scheduler_bad;
            if (scheduler_bad > config.scheduler_patience) {
                adamw.lr = std::max(adamw.lr * config.scheduler_factor, config.min_lr);
                scheduler_bad = 0;
            }
        }
        result.log.push_back(std::move(log));
        if (epochs_since_best >= config.early_stop_patience) {
            result.early_stopped = true;
            break;
        }
    }

    restore_params(model, best);
    return result;
}

ChainResult progressive_chain(const std::vector<StageSpec>& stages,
                              const ModelConfig& base_config,
                              const TrainConfig& config) {
    if (stages.empty()) {
        throw ContractError("progressive_chain: no stages");
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].data == nullptr || stages[i].tree == nullptr) {
            throw ContractError("progressive_chain: stage " + std::to_string(i) +
                                " is missing data or taxonomy");
        }
        std::vector<Level> levels = variant_levels(stages[i].variant);
        if (levels.front() != Level::CLASS ||
            static_cast<std::size_t>(ordinal(levels.back())) != levels.size() - 1) {
            throw ContractError("progressive_chain: stage variant " +
                                variant_name(stages[i].variant) +
                                " is not a contiguous prefix from class");
        }
        if (i > 0) {
            std::size_t prev = variant_levels(stages[i - 1].variant).size();
            if (levels.size() <= prev) {
                throw ContractError("progressive_chain: stage " + std::to_string(i) +
                                    " (" + variant_name(stages[i].variant) +
                                    ") does not extend stage " + std::to_string(i - 1) +
                                    " (" + variant_name(stages[i - 1].variant) + ")");
            }
        }
        if (stages[i].data->feature_dim != base_config.feature_dim) {
            throw DataError("progressive_chain: stage " + std::to_string(i) +
                            " feature width " + std::to_string(stages[i].data->feature_dim) +
                            " does not match the model's " +
                            std::to_string(base_config.feature_dim));
        }
    }

    std::vector<StageResult> results;
    std::optional<CascadeModel> previous;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const StageSpec& stage = stages[i];
        ModelConfig cfg = base_config;
        cfg.variant = stage.variant;
        Rng init_rng(Rng::derive(config.seed, i));
        CascadeModel model = CascadeModel::build(cfg, *stage.tree, init_rng);

        StageResult sr;
        sr.variant = stage.variant;
        if (previous) {
            if (model.has_adapter()) {
                // The adapter's shape is fixed by the base config, so the
                // shared feature transform always carries over.
                model.adapter() = previous->adapter();
                sr.adapter_transferred = true;
            }
            for (Level level : previous->levels()) {
                HeadTransfer transfer;
                transfer.level = level;
                Head& dst = model.head(level);
                const Head& src = previous->head(level);
                if (dst.spec().input_dim() != src.spec().input_dim()) {
                    transfer.transferred = false;
                    transfer.reason = "input width changed " +
                                      std::to_string(src.spec().input_dim()) + " -> " +
                                      std::to_string(dst.spec().input_dim()) +
                                      "; freshly initialized";
                } else if (dst.spec().n_classes() != src.spec().n_classes()) {
                    transfer.transferred = false;
                    transfer.reason = "class count changed " +
                                      std::to_string(src.spec().n_classes()) + " -> " +
                                      std::to_string(dst.spec().n_classes()) +
                                      "; freshly initialized";
                } else {
                    // Copy parameters only; optimizer state starts fresh.
                    for (std::size_t li = 0; li < dst.layers().size(); ++li) {
                        dst.layers()[li].weight = src.layers()[li].weight;
                        dst.layers()[li].bias = src.layers()[li].bias;
                    }
                    transfer.transferred = true;
                    transfer.reason = "shapes unchanged; parameters copied";
                }
                sr.transfers.push_back(std::move(transfer));
            }
        }

        LossWeights weights = stage.weights.values.empty()
                                  ? LossWeights::defaults(stage.variant)
                                  : stage.weights;
        sr.fit = fit(model, *stage.data, *stage.tree, weights, config);
        previous = std::move(model);
        results.push_back(std::move(sr));
    }
    return ChainResult{std::move(results), std::move(*previous)};
}

}  // namespace hiertax
