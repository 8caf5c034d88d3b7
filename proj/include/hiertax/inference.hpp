#pragma once

#include <array>
#include <string>
#include <vector>

#include "hiertax/model.hpp"
#include "hiertax/taxonomy.hpp"

namespace hiertax {

enum class Strategy { Greedy, LevelWise, Beam, Flat };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct Prediction {
    Strategy strategy = Strategy::Greedy;
    // -1 at levels the variant does not predict (F-C below CLASS).
    std::array<int, kNumLevels> labels;
    // Empty at unpredicted levels.
    std::array<std::vector<double>, kNumLevels> probs;
    bool path_valid = true;
    // Sum of log-probabilities of the selected labels.
    double path_score = 0.0;

    Prediction() { labels.fill(-1); }
};

// Argmax at CLASS, then each level masked by the previously selected parent;
// ancestor post-mask distributions feed the child heads.
std::vector<Prediction> decode_greedy(const CascadeModel& model,
                                      const TaxonomyTree& tree,
                                      const Matrix& features);

// Per-level argmax with no masks anywhere; may select an inconsistent path
// (path_valid false). With feed_masked_ancestors, heads instead receive the
// masked distributions induced by the running selections, while the
// selections themselves stay unconstrained.
std::vector<Prediction> decode_levelwise(const CascadeModel& model,
                                         const TaxonomyTree& tree,
                                         const Matrix& features,
                                         bool feed_masked_ancestors = false);

// Level-synchronous beam over root-to-leaf paths, maximizing the sum of
// selected log-probabilities. Each candidate re-runs the downstream heads on
// its own ancestor distributions. Score ties break toward the
// lexicographically smaller index path. Internally one layer per width up to
// beam_width is tracked (sharing expansions) and the best completed path
// across layers is returned, so path_score never decreases as beam_width
// grows; width 1 is exactly greedy and a width covering the widest level is
// exhaustive.
std::vector<Prediction> decode_beam(const CascadeModel& model,
                                    const TaxonomyTree& tree,
                                    const Matrix& features, int beam_width);

// Single-level argmax; F-S fills the ancestors from the taxonomy, F-C
// predicts CLASS only and leaves deeper levels undefined.
std::vector<Prediction> flat_lookup(const CascadeModel& model,
                                    const TaxonomyTree& tree,
                                    const Matrix& features);

}  // namespace hiertax
