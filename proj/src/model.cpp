#include "hiertax/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "hiertax/error.hpp"

namespace hiertax {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::FC: return "f-c";
        case Variant::FS: return "f-s";
        case Variant::HCO: return "h-co";
        case Variant::HCOF: return "h-cof";
        case Variant::HCOFG: return "h-cofg";
        case Variant::HCOFGS: return "h-cofgs";
    }
    throw ContractError("unreachable variant tag");
}

Variant variant_from_name(const std::string& name) {
    std::string lower;
    lower.reserve(name.size());
    for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "f-c") return Variant::FC;
    if (lower == "f-s") return Variant::FS;
    if (lower == "h-co") return Variant::HCO;
    if (lower == "h-cof") return Variant::HCOF;
    if (lower == "h-cofg") return Variant::HCOFG;
    if (lower == "h-cofgs") return Variant::HCOFGS;
    throw DataError("unknown model variant '" + name +
                    "' (expected f-c, f-s, h-co, h-cof, h-cofg, or h-cofgs)");
}

bool variant_is_flat(Variant v) { return v == Variant::FC || v == Variant::FS; }

std::vector<Level> variant_levels(Variant v) {
    switch (v) {
        case Variant::FC: return {Level::CLASS};
        case Variant::FS: return {Level::SPECIES};
        case Variant::HCO: return {Level::CLASS, Level::ORDER};
        case Variant::HCOF: return {Level::CLASS, Level::ORDER, Level::FAMILY};
        case Variant::HCOFG:
            return {Level::CLASS, Level::ORDER, Level::FAMILY, Level::GENUS};
        case Variant::HCOFGS:
            return {Level::CLASS, Level::ORDER, Level::FAMILY, Level::GENUS,
                    Level::SPECIES};
    }
    throw ContractError("unreachable variant tag");
}

HeadSpec HeadSpec::make(Level level, bool flat, std::size_t input_dim,
                        std::size_t n_classes) {
    if (input_dim == 0 || n_classes == 0) {
        throw ContractError("head dimensions must be positive");
    }
    HeadSpec spec;
    spec.level = level;
    int depth;  // count of linear layers
    if (flat || level == Level::CLASS) {
        depth = 2;
    } else if (level == Level::ORDER || level == Level::FAMILY) {
        depth = 3;
    } else {
        depth = 4;
    }
    switch (depth) {
        case 2:
            spec.layer_dims = {input_dim, 512, n_classes};
            spec.dropout_rates = {0.3, 0.2};
            break;
        case 3:
            spec.layer_dims = {input_dim, 512, 256, n_classes};
            spec.dropout_rates = {0.3, 0.2, 0.1};
            break;
        default:
            spec.layer_dims = {input_dim, 1024, 512, 256, n_classes};
            spec.dropout_rates = {0.3, 0.2, 0.2, 0.1};
            break;
    }
    return spec;
}

Head::Head(HeadSpec spec) : spec_(std::move(spec)) {
    if (spec_.layer_dims.size() < 2) {
        throw ContractError("head needs at least input and output dims");
    }
    if (spec_.dropout_rates.size() != spec_.n_linear()) {
        throw ContractError("head dropout rates must match layer count");
    }
    layers_.reserve(spec_.n_linear());
    for (std::size_t i = 0; i + 1 < spec_.layer_dims.size(); ++i) {
        layers_.emplace_back(spec_.layer_dims[i + 1], spec_.layer_dims[i]);
    }
}

void Head::init(Rng& rng) {
    for (LinearParams& layer : layers_) init_glorot(layer, rng);
}

Matrix Head::forward(const Matrix& input, std::size_t backbone_len, bool train,
                     Rng* rng, HeadCache* cache) const {
    if (input.cols != spec_.input_dim()) {
        throw ContractError("head " + level_name(spec_.level) + " expects input width " +
                            std::to_string(spec_.input_dim()) + ", got " +
                            std::to_string(input.cols));
    }
    if (backbone_len > input.cols) {
        throw ContractError("backbone slice exceeds head input width");
    }
    if (train && (rng == nullptr || cache == nullptr)) {
        throw ContractError("train-mode head forward needs rng and cache");
    }
    if (cache) {
        cache->layer_inputs.assign(spec_.n_linear(), Matrix());
        cache->pre_acts.assign(spec_.n_linear() - 1, Matrix());
        cache->hidden_drop.assign(spec_.n_linear() - 1, Matrix());
        cache->input_drop = Matrix();
        cache->backbone_len = backbone_len;
    }

    Matrix h = input;
    double in_rate = spec_.dropout_rates[0];
    if (train && in_rate > 0.0 && backbone_len > 0) {
        Matrix mask(input.rows, backbone_len);
        double scale = 1.0 / (1.0 - in_rate);
        for (std::size_t r = 0; r < input.rows; ++r) {
            for (std::size_t c = 0; c < backbone_len; ++c) {
                double keep = rng->uniform() >= in_rate ? scale : 0.0;
                mask.at(r, c) = keep;
                h.at(r, c) *= keep;
            }
        }
        cache->input_drop = std::move(mask);
    }

    Matrix logits;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        if (cache) cache->layer_inputs[li] = h;
        Matrix z = linear_forward(layers_[li], h);
        if (li + 1 < layers_.size()) {
            if (cache) cache->pre_acts[li] = z;
            Matrix a = relu_forward(z);
            double rate = spec_.dropout_rates[li + 1];
            if (train && rate > 0.0) {
                a = dropout_forward(a, rate, true, *rng, &cache->hidden_drop[li]);
            }
            h = std::move(a);
        } else {
            logits = std::move(z);
        }
    }
    return logits;
}

Matrix Head::backward(const HeadCache& cache, const Matrix& grad_logits) {
    if (cache.layer_inputs.size() != layers_.size()) {
        throw ContractError("head backward needs a cache from a train-mode forward");
    }
    Matrix g = grad_logits;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        Matrix gin = linear_backward(layers_[li], cache.layer_inputs[li], g);
        if (li > 0) {
            if (cache.hidden_drop[li - 1].rows > 0) {
                gin = dropout_backward(cache.hidden_drop[li - 1], gin);
            }
            gin = relu_backward(cache.pre_acts[li - 1], gin);
        }
        g = std::move(gin);
    }
    if (cache.input_drop.rows > 0) {
        for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < cache.backbone_len; ++c) {
                g.at(r, c) *= cache.input_drop.at(r, c);
            }
        }
    }
    return g;
}

void Head::zero_grad() {
    for (LinearParams& layer : layers_) layer.zero_grad();
}

std::size_t Head::param_count() const {
    std::size_t n = 0;
    for (const LinearParams& layer : layers_) {
        n += layer.weight.data.size() + layer.bias.size();
    }
    return n;
}

void masked_softmax_row(const double* logits, const std::uint8_t* mask,
                        std::size_t n, double* probs_out) {
    double max_valid = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] && logits[i] > max_valid) max_valid = logits[i];
    }
    if (max_valid == -std::numeric_limits<double>::infinity()) {
        throw ContractError("masked_softmax: no valid children (all-zero mask)");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) {
            probs_out[i] = std::exp(logits[i] - max_valid);
            sum += probs_out[i];
        } else {
            probs_out[i] = 0.0;
        }
    }
    for (std::size_t i = 0; i < n; ++i) probs_out[i] /= sum;
}

std::vector<double> masked_softmax(const std::vector<double>& logits,
                                   const std::vector<std::uint8_t>& mask) {
    if (logits.size() != mask.size()) {
        throw ContractError("masked_softmax: logits and mask lengths differ");
    }
    if (logits.empty()) {
        throw ContractError("masked_softmax: empty input");
    }
    std::vector<double> probs(logits.size());
    masked_softmax_row(logits.data(), mask.data(), logits.size(), probs.data());
    return probs;
}

void masked_softmax_backward_row(const double* probs, const double* grad_probs,
                                 std::size_t n, double* grad_logits_out) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += probs[i] * grad_probs[i];
    for (std::size_t i = 0; i < n; ++i) {
        grad_logits_out[i] = probs[i] * (grad_probs[i] - dot);
    }
}

std::vector<double> fuse_features(
    const std::vector<double>& backbone,
    const std::vector<std::vector<double>>& ancestor_probs) {
    std::vector<double> fused = backbone;
    for (const auto& p : ancestor_probs) {
        fused.insert(fused.end(), p.begin(), p.end());
    }
    return fused;
}

const std::vector<std::uint8_t>& UnconstrainedMasks::mask(std::size_t, Level level,
                                                          int) const {
    return tree_.ones_mask(level);
}

const std::vector<std::uint8_t>& PredictedParentMasks::mask(std::size_t, Level level,
                                                            int predicted_parent) const {
    if (level == Level::CLASS) return tree_.ones_mask(level);
    return tree_.child_mask_bits(level_from_ordinal(ordinal(level) - 1),
                                 predicted_parent);
}

std::size_t CascadeModel::backbone_dim() const {
    return config_.adapter_dim.value_or(config_.feature_dim);
}

LinearParams& CascadeModel::adapter() {
    if (!adapter_) throw ContractError("model has no feature adapter");
    return *adapter_;
}

const LinearParams& CascadeModel::adapter() const {
    if (!adapter_) throw ContractError("model has no feature adapter");
    return *adapter_;
}

Head& CascadeModel::head(Level level) {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        if (levels_[i] == level) return heads_[i];
    }
    throw ContractError("variant " + variant_name(config_.variant) + " has no " +
                        level_name(level) + " head");
}

const Head& CascadeModel::head(Level level) const {
    return const_cast<CascadeModel*>(this)->head(level);
}

CascadeModel CascadeModel::build(const ModelConfig& config, const TaxonomyTree& tree,
                                 Rng& rng) {
    if (config.feature_dim == 0) {
        throw ContractError("feature_dim must be positive");
    }
    if (config.adapter_dim && *config.adapter_dim == 0) {
        throw ContractError("adapter_dim must be positive when present");
    }
    CascadeModel model;
    model.config_ = config;
    model.levels_ = variant_levels(config.variant);
    for (Level level : all_levels()) {
        model.level_counts_[static_cast<std::size_t>(ordinal(level))] = tree.count(level);
    }
    model.taxonomy_checksum_ = tree.checksum();
    if (config.adapter_dim) {
        model.adapter_.emplace(*config.adapter_dim, config.feature_dim);
        init_glorot(*model.adapter_, rng);
    }
    bool flat = variant_is_flat(config.variant);
    std::size_t backbone = model.backbone_dim();
    for (Level level : model.levels_) {
        std::size_t input = backbone;
        if (!flat) {
            for (int k = 0; k < ordinal(level); ++k) {
                input += static_cast<std::size_t>(model.level_counts_[static_cast<std::size_t>(k)]);
            }
        }
        int n = tree.count(level);
        if (n < 1) {
            throw ContractError("taxonomy has no taxa at level " + level_name(level));
        }
        model.heads_.emplace_back(
            HeadSpec::make(level, flat, input, static_cast<std::size_t>(n)));
        model.heads_.back().init(rng);
    }
    return model;
}

void CascadeModel::zero_grad() {
    if (adapter_) adapter_->zero_grad();
    for (Head& h : heads_) h.zero_grad();
}

void CascadeModel::adamw_step_all(const AdamWConfig& config, long step_index) {
    if (adapter_) adamw_step(*adapter_, config, step_index);
    for (Head& h : heads_) {
        for (LinearParams& layer : h.layers()) adamw_step(layer, config, step_index);
    }
}

std::vector<ParamBlockRef> CascadeModel::param_blocks() {
    std::vector<ParamBlockRef> blocks;
    auto add = [&blocks](const std::string& prefix, LinearParams& layer) {
        blocks.push_back({prefix + ".weight", &layer.weight.data, &layer.grad_weight.data});
        blocks.push_back({prefix + ".bias", &layer.bias, &layer.grad_bias});
    };
    if (adapter_) add("adapter", *adapter_);
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        std::string head_prefix = "head." + level_name(levels_[i]);
        for (std::size_t li = 0; li < heads_[i].layers().size(); ++li) {
            add(head_prefix + ".linear" + std::to_string(li), heads_[i].layers()[li]);
        }
    }
    return blocks;
}

std::size_t CascadeModel::param_count() const {
    std::size_t n = 0;
    if (adapter_) n += adapter_->weight.data.size() + adapter_->bias.size();
    for (const Head& h : heads_) n += h.param_count();
    return n;
}

std::vector<LevelOutput> cascade_forward(const CascadeModel& model,
                                         const Matrix& features,
                                         const MaskSource& mask_source, bool train,
                                         Rng* rng, ForwardCache* cache) {
    if (features.cols != model.feature_dim()) {
        throw ContractError("cascade_forward: features have width " +
                            std::to_string(features.cols) + ", model expects " +
                            std::to_string(model.feature_dim()));
    }
    if (train && (rng == nullptr || cache == nullptr)) {
        throw ContractError("train-mode cascade_forward needs rng and cache");
    }
    std::size_t batch = features.rows;
    std::size_t backbone_dim = model.backbone_dim();

    Matrix backbone =
        model.has_adapter() ? linear_forward(model.adapter(), features) : features;
    if (cache) {
        cache->features = features;
        cache->backbone = backbone;
        cache->heads.assign(model.levels().size(), HeadCache());
    }

    std::vector<LevelOutput> outputs;
    outputs.reserve(model.levels().size());
    bool flat = variant_is_flat(model.variant());
    for (std::size_t li = 0; li < model.levels().size(); ++li) {
        Level level = model.levels()[li];
        const Head& head = model.head_at(li);

        Matrix fused(batch, head.spec().input_dim());
        for (std::size_t r = 0; r < batch; ++r) {
            double* dst = fused.row_ptr(r);
            const double* src = backbone.row_ptr(r);
            std::copy(src, src + backbone_dim, dst);
            dst += backbone_dim;
            if (!flat) {
                for (std::size_t k = 0; k < li; ++k) {
                    const Matrix& p = outputs[k].probs;
                    std::copy(p.row_ptr(r), p.row_ptr(r) + p.cols, dst);
                    dst += p.cols;
                }
            }
        }

        Matrix logits = head.forward(fused, backbone_dim, train, rng,
                                     cache ? &cache->heads[li] : nullptr);

        std::size_t n = head.spec().n_classes();
        LevelOutput out;
        out.level = level;
        out.masked_logits = Matrix(batch, n);
        out.probs = Matrix(batch, n);
        out.masks = Matrix(batch, n);
        out.argmax.resize(batch);
        for (std::size_t r = 0; r < batch; ++r) {
            int parent = li == 0 ? -1 : outputs[li - 1].argmax[r];
            const std::vector<std::uint8_t>& bits = mask_source.mask(r, level, parent);
            if (bits.size() != n) {
                throw ContractError("mask width " + std::to_string(bits.size()) +
                                    " does not match " + level_name(level) +
                                    " class count " + std::to_string(n));
            }
            masked_softmax_row(logits.row_ptr(r), bits.data(), n, out.probs.row_ptr(r));
            int best = -1;
            for (std::size_t c = 0; c < n; ++c) {
                out.masks.at(r, c) = bits[c] ? 1.0 : 0.0;
                out.masked_logits.at(r, c) =
                    bits[c] ? logits.at(r, c) : -std::numeric_limits<double>::infinity();
                if (bits[c] && (best < 0 || logits.at(r, c) > logits.at(r, static_cast<std::size_t>(best)))) {
                    best = static_cast<int>(c);
                }
            }
            out.argmax[r] = best;
        }
        out.logits = std::move(logits);
        outputs.push_back(std::move(out));
    }
    return outputs;
}

void cascade_backward(CascadeModel& model, const std::vector<LevelOutput>& outputs,
                      const ForwardCache& cache, std::vector<Matrix> grad_probs) {
    if (outputs.size() != model.levels().size() ||
        grad_probs.size() != model.levels().size()) {
        throw ContractError("cascade_backward: per-level sequences must match the variant");
    }
    std::size_t batch = cache.features.rows;
    std::size_t backbone_dim = model.backbone_dim();
    Matrix grad_backbone(batch, backbone_dim);
    grad_backbone.fill(0.0);
    bool flat = variant_is_flat(model.variant());

    for (std::size_t li = model.levels().size(); li-- > 0;) {
        const LevelOutput& out = outputs[li];
        std::size_t n = out.probs.cols;
        if (grad_probs[li].rows != batch || grad_probs[li].cols != n) {
            throw ContractError("cascade_backward: grad shape mismatch at level " +
                                level_name(out.level));
        }
        Matrix grad_logits(batch, n);
        for (std::size_t r = 0; r < batch; ++r) {
            masked_softmax_backward_row(out.probs.row_ptr(r), grad_probs[li].row_ptr(r),
                                        n, grad_logits.row_ptr(r));
        }
        Matrix grad_input = model.head_at(li).backward(cache.heads[li], grad_logits);
        for (std::size_t r = 0; r < batch; ++r) {
            const double* src = grad_input.row_ptr(r);
            for (std::size_t c = 0; c < backbone_dim; ++c) {
                grad_backbone.at(r, c) += src[c];
            }
            if (!flat) {
                std::size_t offset = backbone_dim;
                for (std::size_t k = 0; k < li; ++k) {
                    double* dst = grad_probs[k].row_ptr(r);
                    std::size_t nk = grad_probs[k].cols;
                    for (std::size_t c = 0; c < nk; ++c) dst[c] += src[offset + c];
                    offset += nk;
                }
            }
        }
    }
    if (model.has_adapter()) {
        linear_backward(model.adapter(), cache.features, grad_backbone);
    }
}

}  // namespace hiertax
