#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hiertax/matrix.hpp"
#include "hiertax/taxonomy.hpp"

namespace hiertax {

enum class Split { Train, Val, Test, Unassigned };

std::string split_name(Split split);
Split split_from_name(const std::string& name);

struct Record {
    std::string id;
    std::vector<double> features;
    LabelPath labels{};  // per-level indices into the owning taxonomy
    Split split = Split::Unassigned;
};

struct Dataset {
    std::vector<Record> records;
    std::size_t feature_dim = 0;
    std::uint64_t taxonomy_checksum = 0;

    std::size_t size() const { return records.size(); }
    bool has_splits() const;
    std::vector<std::size_t> indices_of(Split split) const;
    // Dense feature matrix for a subset of records, rows in the given order.
    Matrix feature_matrix(const std::vector<std::size_t>& indices) const;
    std::vector<LabelPath> labels_of(const std::vector<std::size_t>& indices) const;
};

struct SplitSpec {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
    Level stratify_level = Level::SPECIES;
    std::uint64_t seed = 42;
};

// Assigns splits in place, stratified per taxon at the chosen level.
// Within each stratum the fractions are realized by largest-remainder
// rounding (remainder ties go to the earlier split in train/val/test
// order); strata with fewer than 3 records place their 1st record in
// train, 2nd in val, 3rd in test.
void stratified_split(Dataset& dataset, const TaxonomyTree& tree, const SplitSpec& spec);

struct SyntheticSpec {
    std::array<int, kNumLevels> level_counts{3, 6, 9, 12, 24};
    std::size_t feature_dim = 32;
    // Per-level spread of child centers around their parent's center;
    // must decrease with depth so coarse structure dominates.
    std::array<double, kNumLevels> dispersion{8.0, 4.0, 2.0, 1.0, 0.5};
    double noise = 1.0;
    int min_samples_per_species = 40;
    int max_samples_per_species = 40;
    std::uint64_t seed = 42;
};

struct SyntheticResult {
    TaxonomyTree tree;
    Dataset dataset;
};

// Builds a taxonomy with the exact per-level counts (children spread evenly
// across parents, remainder round-robin to the lowest-index parents) and
// samples features from a nested Gaussian center hierarchy.
SyntheticResult generate_synthetic(const SyntheticSpec& spec);

// CSV layout: id,class,order,family,genus,species[,split],f0..fN. When the
// label file has no feature columns, a provider CSV (id,f0..fN) supplies
// them, joined on id.
Dataset load_dataset(const std::filesystem::path& path, const TaxonomyTree& tree,
                     const std::optional<std::filesystem::path>& provider_path = std::nullopt);
void save_dataset(const Dataset& dataset, const TaxonomyTree& tree,
                  const std::filesystem::path& path);

struct FilterOutcome {
    Dataset dataset;     // surviving records, labels remapped to the new tree
    TaxonomyTree tree;   // rebuilt from surviving paths
    FilterReport report;
};

// Drops records whose taxon at any of the given levels has fewer than
// `threshold` records, re-counting until stable, then rebuilds the taxonomy
// from the survivors.
FilterOutcome filter_dataset(const Dataset& dataset, const TaxonomyTree& tree,
                             long threshold, const std::set<Level>& levels);

}  // namespace hiertax
