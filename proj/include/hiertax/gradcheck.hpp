#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hiertax {

// A named view over one parameter buffer and its gradient accumulator.
struct ParamBlockRef {
    std::string name;
    std::vector<double>* values;
    std::vector<double>* grads;
};

struct GradCheckBlock {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t entries_checked = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_error = 0.0;
    bool pass = true;
};

// Central-difference gradient verification. `loss_fn` must zero gradients,
// run forward + backward, and return the scalar loss; it must be
// deterministic (dropout in eval mode or a fixed stream). Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
//
// Blocks larger than max_entries_per_block are probed on a deterministic
// sample of entries (seeded by sample_seed); 0 means probe every entry.
GradCheckReport gradient_check(const std::function<double()>& loss_fn,
                               const std::vector<ParamBlockRef>& blocks,
                               double tolerance, double step = 1e-5,
                               std::size_t max_entries_per_block = 0,
                               std::uint64_t sample_seed = 0);

}  // namespace hiertax
