#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hiertax/dataset.hpp"
#include "hiertax/model.hpp"

namespace hiertax {

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
};

struct FocalResult {
    double loss = 0.0;
    std::vector<double> grad_logits;
};

// Focal loss -alpha * (1 - p_t)^gamma * log(p_t) on one masked distribution,
// with its gradient pushed back through the masked softmax to the logits.
// Throws ContractError when the target carries zero probability (masked out),
// which is unreachable under teacher forcing.
FocalResult focal_loss(const std::vector<double>& probs,
                       const std::vector<std::uint8_t>& mask, int target,
                       const FocalParams& params);

// Loss and d(loss)/d(p_t) alone, for callers that assemble their own VJP.
struct FocalPointValue {
    double loss = 0.0;
    double dloss_dpt = 0.0;
};
FocalPointValue focal_loss_at(double p_t, const FocalParams& params);

struct LossWeights {
    std::vector<double> values;  // coarse -> fine, one per variant level
    static LossWeights defaults(Variant variant);
};

// Sum of w_l * L_l; lengths must match.
double total_loss(const std::vector<double>& per_level_losses,
                  const LossWeights& weights);

// Masks from the ground-truth parent at each level (CLASS is unconstrained).
class TeacherForcingMasks : public MaskSource {
public:
    TeacherForcingMasks(const TaxonomyTree& tree, const std::vector<LabelPath>& paths);
    const std::vector<std::uint8_t>& mask(std::size_t sample, Level level,
                                          int predicted_parent) const override;

private:
    const TaxonomyTree& tree_;
    const std::vector<LabelPath>& paths_;
};

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 32;
    int max_epochs = 80;
    double scheduler_factor = 0.5;
    int scheduler_patience = 5;
    double min_lr = 1e-6;
    int early_stop_patience = 15;
    FocalParams focal;
    std::uint64_t seed = 42;

    // Throws on non-positive fields; returns a warning string when the
    // early-stop patience does not exceed the scheduler patience (the
    // schedule would never get a chance to act before stopping).
    std::optional<std::string> validate() const;
};

struct EpochLog {
    int epoch = 0;
    std::vector<double> train_loss;    // per level, mean over the epoch
    std::vector<double> val_accuracy;  // per level, greedy decoding
    std::vector<double> val_f1;        // per level, support-weighted
    double lr = 0.0;
    bool is_best = false;
};

struct FitResult {
    int best_epoch = -1;
    double best_metric = 0.0;  // deepest-level weighted F1 on validation
    std::vector<EpochLog> log;
    bool early_stopped = false;
};

// One forward/backward pass over a batch under the given mask source.
// Returns the weighted total plus per-level mean focal losses; accumulates
// parameter gradients when backward is requested (cache may be reused across
// calls). Works in eval mode too, which is what the gradient checks use.
struct BatchLoss {
    double total = 0.0;
    std::vector<double> per_level;
};
BatchLoss cascade_loss_and_grad(CascadeModel& model, const Matrix& features,
                                const std::vector<LabelPath>& targets,
                                const MaskSource& mask_source,
                                const FocalParams& focal, const LossWeights& weights,
                                bool train, Rng* rng, bool backward);

// Teacher-forced training with AdamW, per-epoch shuffling, plateau lr
// halving, and early stopping; both monitor the deepest-level weighted F1 of
// greedy validation decoding (flat lookup for flat variants). The model is
// left holding the best-epoch parameters.
FitResult fit(CascadeModel& model, const Dataset& data, const TaxonomyTree& tree,
              const LossWeights& weights, const TrainConfig& config);

struct HeadTransfer {
    Level level = Level::CLASS;
    bool transferred = false;
    std::string reason;
};

struct StageResult {
    Variant variant = Variant::FC;
    bool adapter_transferred = false;
    std::vector<HeadTransfer> transfers;
    FitResult fit;
};

struct ChainResult {
    std::vector<StageResult> stages;
    CascadeModel final_model;
};

struct StageSpec {
    Variant variant = Variant::FC;
    const Dataset* data = nullptr;
    const TaxonomyTree* tree = nullptr;
    LossWeights weights;
};

// Trains the stages in order, warm-starting each stage from the previous
// one: the feature adapter always carries over; a common-level head carries
// over when its input and output widths are unchanged (taxonomy refiltering
// can change either), otherwise it is freshly initialized and the reason is
// recorded. Stage variants must grow a contiguous level prefix (F-C counts
// as the 1-level prefix), all over the same feature width.
ChainResult progressive_chain(const std::vector<StageSpec>& stages,
                              const ModelConfig& base_config,
                              const TrainConfig& config);

}  // namespace hiertax
