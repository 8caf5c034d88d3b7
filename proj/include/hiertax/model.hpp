#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hiertax/gradcheck.hpp"
#include "hiertax/layers.hpp"
#include "hiertax/matrix.hpp"
#include "hiertax/taxonomy.hpp"

namespace hiertax {

// F-C / F-S predict a single level; the H-* variants cover a contiguous
// prefix of levels starting at CLASS.
enum class Variant { FC, FS, HCO, HCOF, HCOFG, HCOFGS };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
bool variant_is_flat(Variant v);
std::vector<Level> variant_levels(Variant v);

struct HeadSpec {
    Level level = Level::CLASS;
    // input width, hidden widths, class count
    std::vector<std::size_t> layer_dims;
    // One rate per linear layer. rates[0] applies to the backbone slice of
    // the fused input; ancestor probability columns are never dropped.
    // rates[i>0] follow the i-th hidden activation.
    std::vector<double> dropout_rates;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t n_classes() const { return layer_dims.back(); }
    std::size_t n_linear() const { return layer_dims.size() - 1; }

    // Depth ladder: flat heads and CLASS use one 512 hidden layer; ORDER and
    // FAMILY add a 256 layer; GENUS and SPECIES use 1024-512-256.
    static HeadSpec make(Level level, bool flat, std::size_t input_dim,
                         std::size_t n_classes);
};

struct HeadCache {
    std::vector<Matrix> layer_inputs;  // input to each linear layer
    std::vector<Matrix> pre_acts;      // hidden pre-activations
    std::vector<Matrix> hidden_drop;   // dropout scale masks per hidden layer
    Matrix input_drop;                 // scale mask over the backbone slice
    std::size_t backbone_len = 0;
};

// One MLP classification head. Parameters are plain LinearParams so the
// optimizer and checkpoint code can treat every layer uniformly.
class Head {
public:
    explicit Head(HeadSpec spec);

    const HeadSpec& spec() const { return spec_; }
    void init(Rng& rng);

    // Logits for a batch. backbone_len gives the leading input columns that
    // receive input dropout. In train mode rng and cache are required.
    Matrix forward(const Matrix& input, std::size_t backbone_len, bool train,
                   Rng* rng, HeadCache* cache) const;

    // Accumulates parameter gradients from a train-mode cache; returns the
    // gradient w.r.t. the fused input.
    Matrix backward(const HeadCache& cache, const Matrix& grad_logits);

    std::vector<LinearParams>& layers() { return layers_; }
    const std::vector<LinearParams>& layers() const { return layers_; }
    void zero_grad();
    std::size_t param_count() const;

private:
    HeadSpec spec_;
    std::vector<LinearParams> layers_;
};

// Softmax over the subset with mask bit 1: masked entries get probability
// exactly 0 and are excluded from the max-subtraction and normalization.
// Throws ContractError("no valid children") on an all-zero mask.
std::vector<double> masked_softmax(const std::vector<double>& logits,
                                   const std::vector<std::uint8_t>& mask);
void masked_softmax_row(const double* logits, const std::uint8_t* mask,
                        std::size_t n, double* probs_out);
// dz = p * (dp - <p, dp>); the zeros in p keep masked entries at zero.
void masked_softmax_backward_row(const double* probs, const double* grad_probs,
                                 std::size_t n, double* grad_logits_out);

// x_level = [backbone; p_class; ...; p_parent], ancestors coarse -> fine.
std::vector<double> fuse_features(
    const std::vector<double>& backbone,
    const std::vector<std::vector<double>>& ancestor_probs);

struct ModelConfig {
    Variant variant = Variant::HCOFGS;
    std::size_t feature_dim = 1280;
    // Optional trainable linear over provider features; this is the shared
    // unit progressive training carries between stages. Absent, heads read
    // the features directly and backbone_dim == feature_dim.
    std::optional<std::size_t> adapter_dim;
};

struct LevelOutput {
    Level level = Level::CLASS;
    Matrix logits;         // raw head outputs
    Matrix masked_logits;  // -inf where masked (reporting only)
    Matrix probs;          // exactly 0 where masked; rows sum to 1
    Matrix masks;          // the applied 0/1 masks
    std::vector<int> argmax;  // post-mask argmax per row, lowest index on ties
};

// Per-sample mask provider for levels below CLASS. predicted_parent is the
// argmax selected at the previous level during the same forward pass (-1 at
// CLASS); teacher-forcing sources ignore it.
class MaskSource {
public:
    virtual ~MaskSource() = default;
    virtual const std::vector<std::uint8_t>& mask(std::size_t sample, Level level,
                                                  int predicted_parent) const = 0;
};

// All-ones masks everywhere: plain softmax per level.
class UnconstrainedMasks : public MaskSource {
public:
    explicit UnconstrainedMasks(const TaxonomyTree& tree) : tree_(tree) {}
    const std::vector<std::uint8_t>& mask(std::size_t sample, Level level,
                                          int predicted_parent) const override;

private:
    const TaxonomyTree& tree_;
};

// Masks from the parent selected at the previous level (greedy decoding).
class PredictedParentMasks : public MaskSource {
public:
    explicit PredictedParentMasks(const TaxonomyTree& tree) : tree_(tree) {}
    const std::vector<std::uint8_t>& mask(std::size_t sample, Level level,
                                          int predicted_parent) const override;

private:
    const TaxonomyTree& tree_;
};

struct ForwardCache {
    Matrix features;
    Matrix backbone;
    std::vector<HeadCache> heads;
};

class CascadeModel {
public:
    static CascadeModel build(const ModelConfig& config, const TaxonomyTree& tree,
                              Rng& rng);

    const ModelConfig& config() const { return config_; }
    Variant variant() const { return config_.variant; }
    const std::vector<Level>& levels() const { return levels_; }
    Level deepest_level() const { return levels_.back(); }
    std::size_t feature_dim() const { return config_.feature_dim; }
    std::size_t backbone_dim() const;
    bool has_adapter() const { return adapter_.has_value(); }
    LinearParams& adapter();
    const LinearParams& adapter() const;
    Head& head_at(std::size_t i) { return heads_.at(i); }
    const Head& head_at(std::size_t i) const { return heads_.at(i); }
    Head& head(Level level);
    const Head& head(Level level) const;
    const std::array<int, kNumLevels>& level_counts() const { return level_counts_; }
    std::uint64_t taxonomy_checksum() const { return taxonomy_checksum_; }

    void zero_grad();
    void adamw_step_all(const AdamWConfig& config, long step_index);
    std::vector<ParamBlockRef> param_blocks();
    std::size_t param_count() const;

private:
    CascadeModel() = default;

    ModelConfig config_;
    std::vector<Level> levels_;
    std::array<int, kNumLevels> level_counts_{};
    std::uint64_t taxonomy_checksum_ = 0;
    std::optional<LinearParams> adapter_;
    std::vector<Head> heads_;

    friend class CheckpointCodec;
};

// Runs every head of the variant coarse -> fine in one pass: each head reads
// the backbone features plus the post-mask probability vectors of all prior
// levels. In train mode rng and cache are required (dropout active).
std::vector<LevelOutput> cascade_forward(const CascadeModel& model,
                                         const Matrix& features,
                                         const MaskSource& mask_source, bool train,
                                         Rng* rng, ForwardCache* cache);

// Backpropagates d(loss)/d(probs) per level through the softmaxes, heads,
// fused inputs, and adapter, accumulating parameter gradients.
void cascade_backward(CascadeModel& model, const std::vector<LevelOutput>& outputs,
                      const ForwardCache& cache, std::vector<Matrix> grad_probs);

}  // namespace hiertax
