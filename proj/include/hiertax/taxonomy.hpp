#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiertax/level.hpp"

namespace hiertax {

// Root-to-leaf chain of per-level node indices.
using LabelPath = std::array<int, kNumLevels>;

// One taxon annotation as read from a label file: five names, coarse to fine.
// An empty string marks a missing annotation.
using NamePath = std::array<std::string, kNumLevels>;

struct TaxonNode {
    Level level;
    int index;           // contiguous, 0-based within the level
    std::string name;
    int parent;          // index at level-1; -1 for CLASS nodes
};

// Binary descendant mask: bits[i] = 1 iff child i at child_level descends from
// (parent_level, parent_index).
struct MaskRow {
    Level parent_level;
    int parent_index;
    Level child_level;
    std::vector<std::uint8_t> bits;
};

struct CleanReport {
    long merged = 0;              // records whose class name was remapped
    long removed_incomplete = 0;  // missing class/order/family annotation
    long removed_uncertain = 0;   // species name carrying an uncertainty marker
    long conflicts_resolved = 0;  // (level, taxon) pairs that had multiple parents
    long retained = 0;
};

struct CleanConfig {
    // Class-level merge rules applied before any removal. The shipped default
    // folds Mediophyceae into Coscinodiscophyceae.
    std::vector<std::pair<std::string, std::string>> class_merges = {
        {"Mediophyceae", "Coscinodiscophyceae"}};
    // Case-insensitive substring markers on the species name.
    std::vector<std::string> uncertainty_markers = {"sp.", "cf.", "?"};
};

// Immutable after construction; safe for concurrent reads.
class TaxonomyTree {
public:
    // Builds directly from complete, conflict-free name paths (each child name
    // must map to exactly one parent name). Node indices are assigned in
    // lexicographic name order per level.
    static TaxonomyTree from_paths(const std::vector<NamePath>& paths);

    int count(Level level) const {
        return static_cast<int>(nodes_[static_cast<std::size_t>(ordinal(level))].size());
    }
    const TaxonNode& node(Level level, int index) const;
    const std::string& name(Level level, int index) const { return node(level, index).name; }
    int parent(Level level, int index) const { return node(level, index).parent; }
    std::optional<int> find(Level level, const std::string& name) const;

    // Child indices at level+1, ascending.
    const std::vector<int>& children(Level parent_level, int parent_index) const;

    // Precomputed mask bits over the child level (= parent_level + 1).
    const std::vector<std::uint8_t>& child_mask_bits(Level parent_level,
                                                     int parent_index) const;
    MaskRow child_mask(Level parent_level, int parent_index, Level child_level) const;

    // All-ones mask over a level (used at CLASS and for unconstrained decoding).
    const std::vector<std::uint8_t>& ones_mask(Level level) const;

    // The unique CLASS..SPECIES chain above a species.
    LabelPath ancestor_path(int species_index) const;

    // Index path for a full name path; throws DataError naming the first
    // unknown or inconsistent label.
    LabelPath resolve(const NamePath& names) const;
    NamePath names_of(const LabelPath& path) const;

    bool valid_path(const LabelPath& path) const;

    // Error severity between two species: 0 when identical, otherwise the
    // number of levels to ascend from SPECIES to the lowest common ancestor
    // (1 same genus .. 4 same class, 5 across classes).
    int taxonomic_distance(int species_a, int species_b) const;

    // FNV-1a over the canonical serialization; identifies the taxonomy in
    // datasets, models, and reports.
    std::uint64_t checksum() const { return checksum_; }

    void save(std::ostream& out) const;
    void save_file(const std::string& path) const;
    static TaxonomyTree load(std::istream& in);
    static TaxonomyTree load_file(const std::string& path);

    std::string serialize() const;

private:
    TaxonomyTree() = default;
    void build_indices();
    void check_level_index(Level level, int index, const char* what) const;

    std::array<std::vector<TaxonNode>, kNumLevels> nodes_;
    std::array<std::unordered_map<std::string, int>, kNumLevels> name_index_;
    // children_[l][p]: child indices at level l+1 of parent p at level l
    std::array<std::vector<std::vector<int>>, kNumLevels - 1> children_;
    std::array<std::vector<std::vector<std::uint8_t>>, kNumLevels - 1> masks_;
    std::array<std::vector<std::uint8_t>, kNumLevels> ones_;
    std::uint64_t checksum_ = 0;
};

struct CleanedRecord {
    std::size_t input_index;  // position in the raw input sequence
    LabelPath path;           // indices in the returned tree
};

struct BuildResult {
    TaxonomyTree tree;
    CleanReport report;
    std::vector<CleanedRecord> survivors;
};

// Cleans raw annotations and builds the taxonomy: class merges, removal of
// records with missing class/order/family names, removal of species carrying
// uncertainty markers, then single-parent enforcement by per-level majority
// vote (ties -> lexicographically smallest parent name). Idempotent on its own
// survivors.
BuildResult build_tree(const std::vector<NamePath>& records,
                       const CleanConfig& config = CleanConfig{});

struct LevelFilterReport {
    Level level;
    long taxa_removed = 0;
    long records_removed = 0;
};

struct FilterReport {
    std::vector<LevelFilterReport> per_level;  // one entry per filtered level
    int passes = 0;                            // fixed-point iterations that removed records
};

// Fixed-point minimum-sample filter over label paths. Marks records for
// removal whenever their taxon at a filtered level has fewer than `threshold`
// records, re-checking until stable. Returns a keep flag per input path.
// Throws DataError naming the first exhausted level if nothing survives.
std::vector<bool> filter_min_samples(const std::vector<LabelPath>& paths,
                                     const TaxonomyTree& tree, long threshold,
                                     const std::set<Level>& levels,
                                     FilterReport* report = nullptr);

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64(const std::string& text);

}  // namespace hiertax
