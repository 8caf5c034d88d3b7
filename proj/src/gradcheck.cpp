#include "hiertax/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hiertax/error.hpp"
#include "hiertax/rng.hpp"

namespace hiertax {

namespace {

// Distinct indices into [0, n), sorted, at most k of them. Partial
// Fisher-Yates over an index vector keeps the choice deterministic.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (k >= n) return all;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

GradCheckReport gradient_check(const std::function<double()>& loss_fn,
                               const std::vector<ParamBlockRef>& blocks,
                               double tolerance, double step,
                               std::size_t max_entries_per_block,
                               std::uint64_t sample_seed) {
    if (tolerance <= 0.0 || step <= 0.0) {
        throw ContractError("gradient_check: tolerance and step must be positive");
    }
    GradCheckReport report;

    // One analytic pass up front; perturbation passes only need the loss.
    loss_fn();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(blocks.size());
    for (const ParamBlockRef& b : blocks) {
        if (b.values == nullptr || b.grads == nullptr ||
            b.values->size() != b.grads->size()) {
            throw ContractError("gradient_check: block '" + b.name +
                                "' has mismatched value/grad buffers");
        }
        analytic.push_back(*b.grads);
    }

    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const ParamBlockRef& b = blocks[bi];
        GradCheckBlock out;
        out.name = b.name;

        std::size_t n = b.values->size();
        std::vector<std::size_t> probe;
        if (max_entries_per_block == 0 || n <= max_entries_per_block) {
            probe.resize(n);
            for (std::size_t i = 0; i < n; ++i) probe[i] = i;
        } else {
            Rng rng(Rng::derive(sample_seed, static_cast<std::uint64_t>(bi)));
            probe = sample_indices(n, max_entries_per_block, rng);
        }

        for (std::size_t idx : probe) {
            double saved = (*b.values)[idx];
            (*b.values)[idx] = saved + step;
            double up = loss_fn();
            (*b.values)[idx] = saved - step;
            double down = loss_fn();
            (*b.values)[idx] = saved;
            double numeric = (up - down) / (2.0 * step);
            double a = analytic[bi][idx];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            double rel = std::fabs(a - numeric) / denom;
            out.max_rel_error = std::max(out.max_rel_error, rel);
            ++out.entries_checked;
        }
        out.pass = out.max_rel_error <= tolerance;
        report.max_rel_error = std::max(report.max_rel_error, out.max_rel_error);
        report.pass = report.pass && out.pass;
        report.blocks.push_back(std::move(out));
    }

    // Restore gradient buffers to the analytic state for the unperturbed
    // parameters, so callers can keep using them.
    loss_fn();
    return report;
}

}  // namespace hiertax
