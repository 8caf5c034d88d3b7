#include "hiertax/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hiertax/error.hpp"

namespace hiertax {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Greedy: return "greedy";
        case Strategy::LevelWise: return "levelwise";
        case Strategy::Beam: return "beam";
        case Strategy::Flat: return "flat";
    }
    throw ContractError("unreachable strategy tag");
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "greedy") return Strategy::Greedy;
    if (name == "levelwise") return Strategy::LevelWise;
    if (name == "beam") return Strategy::Beam;
    if (name == "flat") return Strategy::Flat;
    throw DataError("unknown strategy '" + name +
                    "' (expected greedy, levelwise, beam, or flat)");
}

namespace {

void require_hierarchical(const CascadeModel& model, const char* op) {
    if (variant_is_flat(model.variant())) {
        throw ContractError(std::string(op) + " needs a hierarchical variant, got " +
                            variant_name(model.variant()));
    }
}

int plain_argmax(const double* logits, std::size_t n) {
    int best = 0;
    for (std::size_t c = 1; c < n; ++c) {
        if (logits[c] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    return best;
}

// Parent-child consistency across the levels the variant predicts.
bool chain_valid(const TaxonomyTree& tree, const std::vector<Level>& levels,
                 const std::array<int, kNumLevels>& labels) {
    for (std::size_t i = 1; i < levels.size(); ++i) {
        Level level = levels[i];
        int child = labels[static_cast<std::size_t>(ordinal(level))];
        int parent = labels[static_cast<std::size_t>(ordinal(level) - 1)];
        if (tree.parent(level, child) != parent) return false;
    }
    return true;
}

}  // namespace

std::vector<Prediction> decode_greedy(const CascadeModel& model,
                                      const TaxonomyTree& tree,
                                      const Matrix& features) {
    require_hierarchical(model, "decode_greedy");
    PredictedParentMasks masks(tree);
    std::vector<LevelOutput> outputs =
        cascade_forward(model, features, masks, false, nullptr, nullptr);

    std::vector<Prediction> predictions(features.rows);
    for (std::size_t r = 0; r < features.rows; ++r) {
        Prediction& pred = predictions[r];
        pred.strategy = Strategy::Greedy;
        for (const LevelOutput& out : outputs) {
            std::size_t l = static_cast<std::size_t>(ordinal(out.level));
            int sel = out.argmax[r];
            pred.labels[l] = sel;
            pred.probs[l].assign(out.probs.row_ptr(r), out.probs.row_ptr(r) + out.probs.cols);
            pred.path_score += std::log(pred.probs[l][static_cast<std::size_t>(sel)]);
        }
        pred.path_valid = true;
    }
    return predictions;
}

std::vector<Prediction> decode_levelwise(const CascadeModel& model,
                                         const TaxonomyTree& tree,
                                         const Matrix& features,
                                         bool feed_masked_ancestors) {
    require_hierarchical(model, "decode_levelwise");
    std::size_t batch = features.rows;
    std::size_t backbone_dim = model.backbone_dim();
    Matrix backbone =
        model.has_adapter() ? linear_forward(model.adapter(), features) : features;

    std::vector<Prediction> predictions(batch);
    // Distributions fed to downstream heads, one matrix per level.
    std::vector<Matrix> fed;
    for (std::size_t li = 0; li < model.levels().size(); ++li) {
        Level level = model.levels()[li];
        const Head& head = model.head_at(li);
        std::size_t n = head.spec().n_classes();

        Matrix fused(batch, head.spec().input_dim());
        for (std::size_t r = 0; r < batch; ++r) {
            double* dst = fused.row_ptr(r);
            const double* src = backbone.row_ptr(r);
            std::copy(src, src + backbone_dim, dst);
            dst += backbone_dim;
            for (std::size_t k = 0; k < li; ++k) {
                std::copy(fed[k].row_ptr(r), fed[k].row_ptr(r) + fed[k].cols, dst);
                dst += fed[k].cols;
            }
        }
        Matrix logits = head.forward(fused, backbone_dim, false, nullptr, nullptr);

        Matrix fed_level(batch, n);
        for (std::size_t r = 0; r < batch; ++r) {
            // The strategy itself ignores taxonomic consistency: selection
            // and reported probabilities come from the plain softmax.
            masked_softmax_row(logits.row_ptr(r), tree.ones_mask(level).data(), n,
                               fed_level.row_ptr(r));
            int sel = plain_argmax(logits.row_ptr(r), n);
            Prediction& pred = predictions[r];
            std::size_t l = static_cast<std::size_t>(ordinal(level));
            pred.labels[l] = sel;
            pred.probs[l].assign(fed_level.row_ptr(r), fed_level.row_ptr(r) + n);
            pred.path_score += std::log(pred.probs[l][static_cast<std::size_t>(sel)]);
            if (feed_masked_ancestors) {
                // Alternative feed: downstream heads see the distribution
                // constrained by the level's running selection chain.
                const std::vector<std::uint8_t>& bits =
                    li == 0 ? tree.ones_mask(level)
                            : tree.child_mask_bits(
                                  model.levels()[li - 1],
                                  pred.labels[static_cast<std::size_t>(ordinal(level) - 1)]);
                masked_softmax_row(logits.row_ptr(r), bits.data(), n,
                                   fed_level.row_ptr(r));
            }
        }
        fed.push_back(std::move(fed_level));
    }
    for (Prediction& pred : predictions) {
        pred.strategy = Strategy::LevelWise;
        pred.path_valid = chain_valid(tree, model.levels(), pred.labels);
    }
    return predictions;
}

namespace {

struct BeamCandidate {
    std::vector<int> path;
    double score = 0.0;
    std::vector<std::vector<double>> probs;  // post-mask, one per level so far
};

bool candidate_before(const BeamCandidate& a, const BeamCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.path < b.path;
}

}  // namespace

std::vector<Prediction> decode_beam(const CascadeModel& model,
                                    const TaxonomyTree& tree, const Matrix& features,
                                    int beam_width) {
    require_hierarchical(model, "decode_beam");
    if (beam_width < 1) {
        throw ContractError("beam width must be >= 1, got " + std::to_string(beam_width));
    }
    std::size_t backbone_dim = model.backbone_dim();
    Matrix backbone =
        model.has_adapter() ? linear_forward(model.adapter(), features) : features;

    // A single truncated beam can score WORSE as the width grows: the extra
    // width admits prefixes whose children evict the narrow beam's survivor,
    // and those children may finish badly. Tracking one layer per width w =
    // 1..k and answering with the best completed path across layers makes
    // path_score non-decreasing in k by construction, keeps width 1 exactly
    // greedy, and leaves the saturated layer (never truncated) exhaustive.
    // Once a layer is wide enough to hold every node of the widest level it
    // can never truncate, so wider layers would repeat it verbatim.
    std::size_t max_level_nodes = 1;
    for (Level level : model.levels()) {
        max_level_nodes =
            std::max(max_level_nodes, static_cast<std::size_t>(tree.count(level)));
    }
    std::size_t n_layers =
        std::min(static_cast<std::size_t>(beam_width), max_level_nodes);

    std::vector<Prediction> predictions(features.rows);
    for (std::size_t r = 0; r < features.rows; ++r) {
        std::vector<std::vector<BeamCandidate>> layers(n_layers);
        {
            // CLASS level: unconstrained, so one shared distribution.
            const Head& head = model.head_at(0);
            Matrix fused(1, head.spec().input_dim());
            std::copy(backbone.row_ptr(r), backbone.row_ptr(r) + backbone_dim,
                      fused.row_ptr(0));
            Matrix logits = head.forward(fused, backbone_dim, false, nullptr, nullptr);
            std::size_t n = head.spec().n_classes();
            std::vector<double> probs(n);
            masked_softmax_row(logits.row_ptr(0), tree.ones_mask(Level::CLASS).data(), n,
                               probs.data());
            std::vector<BeamCandidate> pool;
            for (std::size_t c = 0; c < n; ++c) {
                BeamCandidate cand;
                cand.path = {static_cast<int>(c)};
                cand.score = std::log(probs[c]);
                cand.probs = {probs};
                pool.push_back(std::move(cand));
            }
            std::sort(pool.begin(), pool.end(), candidate_before);
            for (std::size_t j = 0; j < n_layers; ++j) {
                layers[j].assign(pool.begin(),
                                 pool.begin() +
                                     static_cast<std::ptrdiff_t>(
                                         std::min(j + 1, pool.size())));
            }
        }

        for (std::size_t li = 1; li < model.levels().size(); ++li) {
            const Head& head = model.head_at(li);
            std::size_t n = head.spec().n_classes();
            // Layers overlap heavily, so expand each distinct survivor once.
            std::map<std::vector<int>, std::vector<BeamCandidate>> children_of;
            for (const std::vector<BeamCandidate>& layer : layers) {
                for (const BeamCandidate& cand : layer) {
                    if (children_of.count(cand.path) != 0) continue;
                    // Child logits depend on this candidate's own ancestor
                    // distributions, so each candidate re-runs the head.
                    Matrix fused(1, head.spec().input_dim());
                    double* dst = fused.row_ptr(0);
                    std::copy(backbone.row_ptr(r), backbone.row_ptr(r) + backbone_dim,
                              dst);
                    dst += backbone_dim;
                    for (const std::vector<double>& p : cand.probs) {
                        std::copy(p.begin(), p.end(), dst);
                        dst += p.size();
                    }
                    Matrix logits =
                        head.forward(fused, backbone_dim, false, nullptr, nullptr);
                    const std::vector<std::uint8_t>& bits = tree.child_mask_bits(
                        model.levels()[li - 1], cand.path.back());
                    std::vector<double> probs(n);
                    masked_softmax_row(logits.row_ptr(0), bits.data(), n, probs.data());
                    std::vector<BeamCandidate> kids;
                    for (std::size_t c = 0; c < n; ++c) {
                        if (!bits[c]) continue;
                        BeamCandidate child;
                        child.path = cand.path;
                        child.path.push_back(static_cast<int>(c));
                        child.score = cand.score + std::log(probs[c]);
                        child.probs = cand.probs;
                        child.probs.push_back(probs);
                        kids.push_back(std::move(child));
                    }
                    children_of.emplace(cand.path, std::move(kids));
                }
            }
            for (std::size_t j = 0; j < n_layers; ++j) {
                std::vector<BeamCandidate> next;
                for (const BeamCandidate& cand : layers[j]) {
                    const std::vector<BeamCandidate>& kids = children_of.at(cand.path);
                    next.insert(next.end(), kids.begin(), kids.end());
                }
                std::sort(next.begin(), next.end(), candidate_before);
                if (next.size() > j + 1) next.resize(j + 1);
                layers[j] = std::move(next);
            }
        }

        const BeamCandidate* best_ptr = nullptr;
        for (const std::vector<BeamCandidate>& layer : layers) {
            for (const BeamCandidate& cand : layer) {
                if (best_ptr == nullptr || candidate_before(cand, *best_ptr)) {
                    best_ptr = &cand;
                }
            }
        }
        const BeamCandidate& best = *best_ptr;
        Prediction& pred = predictions[r];
        pred.strategy = Strategy::Beam;
        pred.path_score = best.score;
        pred.path_valid = true;
        for (std::size_t li = 0; li < model.levels().size(); ++li) {
            std::size_t l = static_cast<std::size_t>(ordinal(model.levels()[li]));
            pred.labels[l] = best.path[li];
            pred.probs[l] = best.probs[li];
        }
    }
    return predictions;
}

std::vector<Prediction> flat_lookup(const CascadeModel& model,
                                    const TaxonomyTree& tree, const Matrix& features) {
    if (!variant_is_flat(model.variant())) {
        throw ContractError("flat_lookup needs a flat variant, got " +
                            variant_name(model.variant()));
    }
    UnconstrainedMasks masks(tree);
    std::vector<LevelOutput> outputs =
        cascade_forward(model, features, masks, false, nullptr, nullptr);
    const LevelOutput& out = outputs.front();
    Level level = model.levels().front();

    std::vector<Prediction> predictions(features.rows);
    for (std::size_t r = 0; r < features.rows; ++r) {
        Prediction& pred = predictions[r];
        pred.strategy = Strategy::Flat;
        pred.path_valid = true;
        int sel = out.argmax[r];
        std::size_t l = static_cast<std::size_t>(ordinal(level));
        if (level == Level::SPECIES) {
            // Ancestors come from the taxonomy, not the model.
            LabelPath path = tree.ancestor_path(sel);
            for (std::size_t i = 0; i < kNumLevels; ++i) pred.labels[i] = path[i];
        } else {
            pred.labels[l] = sel;
        }
        pred.probs[l].assign(out.probs.row_ptr(r), out.probs.row_ptr(r) + out.probs.cols);
        pred.path_score = std::log(pred.probs[l][static_cast<std::size_t>(sel)]);
    }
    return predictions;
}

}  // namespace hiertax
