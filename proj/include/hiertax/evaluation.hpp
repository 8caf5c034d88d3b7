#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hiertax/inference.hpp"
#include "hiertax/taxonomy.hpp"

namespace hiertax {

struct PerLevelMetrics {
    Level level = Level::CLASS;
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    long support = 0;  // evaluated samples at this level
};

struct DistanceStats {
    std::array<long, 6> histogram{};  // counts per distance 0..5
    double mean_all = 0.0;
    // Over distance >= 1 samples only; absent when there are no errors.
    std::optional<double> mean_errors;
    std::optional<double> std_errors;         // population (divide by n)
    std::optional<double> std_errors_sample;  // divide by n-1; absent when n < 2
    // 1 - mean_errors / baseline.mean_errors, when a baseline is given.
    std::optional<double> severity_reduction;

    long total() const;
    long errors() const;
};

struct ErrorPropagationRow {
    Level level = Level::CLASS;
    double correct_rate = 0.0;  // among deepest-level errors
};

struct ErrorPropagationTable {
    long deepest_errors = 0;
    std::vector<ErrorPropagationRow> rows;  // ancestor levels, coarse -> fine
};

struct MetricsReport {
    std::string model_tag;
    std::string strategy_tag;
    std::string split_tag;
    std::uint64_t taxonomy_checksum = 0;
    std::vector<PerLevelMetrics> per_level;
    std::optional<DistanceStats> distance;
    std::optional<ErrorPropagationTable> propagation;
    // Which std normalization DistanceStats.std_errors uses.
    std::string std_convention = "population";
};

// Support-weighted mean of per-class F1 over `n_classes` label values;
// classes with a zero precision+recall denominator contribute F1 = 0.
double weighted_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                   int n_classes);

// Accuracy and weighted F1 per level. Levels some predictions leave
// undefined (-1) are skipped entirely; support counts evaluated samples.
std::vector<PerLevelMetrics> per_level_metrics(const std::vector<Prediction>& predictions,
                                               const std::vector<LabelPath>& truths,
                                               const std::array<int, kNumLevels>& level_counts);

// Distance histogram and means over species-level predictions.
DistanceStats distance_stats(const TaxonomyTree& tree,
                             const std::vector<Prediction>& predictions,
                             const std::vector<LabelPath>& truths,
                             const DistanceStats* baseline = nullptr);

// Same statistics computed from a published count vector.
DistanceStats distance_stats_from_histogram(const std::array<long, 6>& histogram,
                                            const DistanceStats* baseline = nullptr);

// Ancestor-level correctness among samples whose deepest predicted level is
// wrong; empty optional when there are no such errors.
std::optional<ErrorPropagationTable> error_propagation(
    const std::vector<Prediction>& predictions, const std::vector<LabelPath>& truths,
    Level deepest);

struct Comparison {
    std::string table_csv;  // model x metric grid, fixed column order
    std::string summary;    // human-readable deltas vs the first report
};

// Side-by-side report; refuses reports evaluated against different
// taxonomies or splits.
Comparison compare_models(const std::vector<MetricsReport>& reports);

std::string metrics_report_to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const std::string& text);

}  // namespace hiertax
