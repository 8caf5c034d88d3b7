#include "hiertax/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "hiertax/error.hpp"

namespace hiertax {

namespace {

std::string to_lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void check_name_serializable(const std::string& name) {
    if (name.find('\t') != std::string::npos || name.find('\n') != std::string::npos ||
        name.find('\r') != std::string::npos) {
        throw DataError("taxon name contains tab or newline: '" + name + "'");
    }
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint64_t fnv1a64(const std::string& text) { return fnv1a64(text.data(), text.size()); }

TaxonomyTree TaxonomyTree::from_paths(const std::vector<NamePath>& paths) {
    if (paths.empty()) throw DataError("empty taxonomy: no label paths supplied");

    // Unique names per level, sorted for reproducible index assignment.
    std::array<std::map<std::string, int>, kNumLevels> names;
    for (const NamePath& path : paths) {
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            check_name_serializable(path[l]);
            names[l].emplace(path[l], 0);
        }
    }
    TaxonomyTree tree;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        int idx = 0;
        for (auto& [name, slot] : names[l]) {
            slot = idx;
            tree.nodes_[l].push_back(
                TaxonNode{level_from_ordinal(static_cast<int>(l)), idx, name, -1});
            ++idx;
        }
    }

    // Parent links, validated for the single-parent property.
    for (const NamePath& path : paths) {
        for (std::size_t l = 1; l < kNumLevels; ++l) {
            const int child = names[l].at(path[l]);
            const int parent = names[l - 1].at(path[l - 1]);
            int& link = tree.nodes_[l][static_cast<std::size_t>(child)].parent;
            if (link == -1) {
                link = parent;
            } else if (link != parent) {
                throw DataError("taxon '" + path[l] + "' at level " +
                                level_name(level_from_ordinal(static_cast<int>(l))) +
                                " maps to multiple parents; clean the input first");
            }
        }
    }
    tree.build_indices();
    return tree;
}

void TaxonomyTree::build_indices() {
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        name_index_[l].clear();
        for (const TaxonNode& n : nodes_[l]) name_index_[l][n.name] = n.index;
        ones_[l].assign(nodes_[l].size(), 1);
    }
    for (std::size_t l = 0; l + 1 < kNumLevels; ++l) {
        children_[l].assign(nodes_[l].size(), {});
        for (const TaxonNode& n : nodes_[l + 1]) {
            children_[l][static_cast<std::size_t>(n.parent)].push_back(n.index);
        }
        masks_[l].assign(nodes_[l].size(),
                         std::vector<std::uint8_t>(nodes_[l + 1].size(), 0));
        for (std::size_t p = 0; p < nodes_[l].size(); ++p) {
            for (int c : children_[l][p]) {
                masks_[l][p][static_cast<std::size_t>(c)] = 1;
            }
        }
    }
    checksum_ = fnv1a64(serialize());
}

void TaxonomyTree::check_level_index(Level level, int index, const char* what) const {
    const auto l = static_cast<std::size_t>(ordinal(level));
    if (index < 0 || index >= static_cast<int>(nodes_[l].size())) {
        throw ContractError(std::string(what) + ": index " + std::to_string(index) +
                            " out of range at " + level_name(level) + " level (count " +
                            std::to_string(nodes_[l].size()) + ")");
    }
}

const TaxonNode& TaxonomyTree::node(Level level, int index) const {
    check_level_index(level, index, "taxonomy node");
    return nodes_[static_cast<std::size_t>(ordinal(level))][static_cast<std::size_t>(index)];
}

std::optional<int> TaxonomyTree::find(Level level, const std::string& name) const {
    const auto& idx = name_index_[static_cast<std::size_t>(ordinal(level))];
    auto it = idx.find(name);
    if (it == idx.end()) return std::nullopt;
    return it->second;
}

const std::vector<int>& TaxonomyTree::children(Level parent_level, int parent_index) const {
    if (parent_level == Level::SPECIES) {
        throw ContractError("species nodes have no children");
    }
    check_level_index(parent_level, parent_index, "child lookup");
    return children_[static_cast<std::size_t>(ordinal(parent_level))]
                    [static_cast<std::size_t>(parent_index)];
}

const std::vector<std::uint8_t>& TaxonomyTree::child_mask_bits(Level parent_level,
                                                               int parent_index) const {
    if (parent_level == Level::SPECIES) {
        throw ContractError("species nodes have no child mask");
    }
    check_level_index(parent_level, parent_index, "child mask");
    return masks_[static_cast<std::size_t>(ordinal(parent_level))]
                 [static_cast<std::size_t>(parent_index)];
}

MaskRow TaxonomyTree::child_mask(Level parent_level, int parent_index,
                                 Level child_level) const {
    if (ordinal(child_level) != ordinal(parent_level) + 1) {
        throw ContractError("child_mask requires child level = parent level + 1, got " +
                            level_name(parent_level) + " -> " + level_name(child_level));
    }
    return MaskRow{parent_level, parent_index, child_level,
                   child_mask_bits(parent_level, parent_index)};
}

const std::vector<std::uint8_t>& TaxonomyTree::ones_mask(Level level) const {
    return ones_[static_cast<std::size_t>(ordinal(level))];
}

LabelPath TaxonomyTree::ancestor_path(int species_index) const {
    check_level_index(Level::SPECIES, species_index, "ancestor path");
    LabelPath path{};
    path[kNumLevels - 1] = species_index;
    for (int l = static_cast<int>(kNumLevels) - 1; l > 0; --l) {
        path[static_cast<std::size_t>(l - 1)] =
            parent(level_from_ordinal(l), path[static_cast<std::size_t>(l)]);
    }
    return path;
}

LabelPath TaxonomyTree::resolve(const NamePath& names) const {
    LabelPath path{};
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        const Level level = level_from_ordinal(static_cast<int>(l));
        auto idx = find(level, names[l]);
        if (!idx) {
            throw DataError("label '" + names[l] + "' not in taxonomy at " +
                            level_name(level) + " level");
        }
        path[l] = *idx;
    }
    for (std::size_t l = 1; l < kNumLevels; ++l) {
        if (parent(level_from_ordinal(static_cast<int>(l)), path[l]) !=
            path[l - 1]) {
            throw DataError("label path inconsistent with taxonomy: '" + names[l] +
                            "' is not a child of '" + names[l - 1] + "'");
        }
    }
    return path;
}

NamePath TaxonomyTree::names_of(const LabelPath& path) const {
    NamePath names;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        names[l] = name(level_from_ordinal(static_cast<int>(l)), path[l]);
    }
    return names;
}

bool TaxonomyTree::valid_path(const LabelPath& path) const {
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (path[l] < 0 || path[l] >= count(level_from_ordinal(static_cast<int>(l)))) {
            return false;
        }
    }
    for (std::size_t l = 1; l < kNumLevels; ++l) {
        if (parent(level_from_ordinal(static_cast<int>(l)), path[l]) != path[l - 1]) {
            return false;
        }
    }
    return true;
}

int TaxonomyTree::taxonomic_distance(int species_a, int species_b) const {
    check_level_index(Level::SPECIES, species_a, "taxonomic distance");
    check_level_index(Level::SPECIES, species_b, "taxonomic distance");
    if (species_a == species_b) return 0;
    const LabelPath a = ancestor_path(species_a);
    const LabelPath b = ancestor_path(species_b);
    for (int ord = static_cast<int>(kNumLevels) - 2; ord >= 0; --ord) {
        if (a[static_cast<std::size_t>(ord)] == b[static_cast<std::size_t>(ord)]) {
            return static_cast<int>(kNumLevels) - 1 - ord;
        }
    }
    return static_cast<int>(kNumLevels);  // no common ancestor below the root
}

std::string TaxonomyTree::serialize() const {
    std::ostringstream out;
    out << "hiertax-taxonomy v1\n";
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        out << "level " << level_name(level_from_ordinal(static_cast<int>(l))) << " "
            << nodes_[l].size() << "\n";
        for (const TaxonNode& n : nodes_[l]) {
            out << n.name << "\t" << n.parent << "\n";
        }
    }
    return out.str();
}

void TaxonomyTree::save(std::ostream& out) const { out << serialize(); }

void TaxonomyTree::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    save(out);
    if (!out) throw DataError("failed writing taxonomy to '" + path + "'");
}

TaxonomyTree TaxonomyTree::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "hiertax-taxonomy v1") {
        throw DataError("not a taxonomy file (bad header)");
    }
    TaxonomyTree tree;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (!std::getline(in, line)) throw DataError("taxonomy file truncated");
        std::istringstream header(line);
        std::string tag, lname;
        std::size_t count = 0;
        header >> tag >> lname >> count;
        const Level level = level_from_ordinal(static_cast<int>(l));
        if (tag != "level" || lname != level_name(level)) {
            throw DataError("taxonomy file: expected level " + level_name(level) +
                            ", got '" + line + "'");
        }
        for (std::size_t i = 0; i < count; ++i) {
            if (!std::getline(in, line)) throw DataError("taxonomy file truncated");
            const auto tab = line.rfind('\t');
            if (tab == std::string::npos) {
                throw DataError("taxonomy file: malformed node line '" + line + "'");
            }
            const std::string name = line.substr(0, tab);
            const int parent = std::stoi(line.substr(tab + 1));
            if (l == 0 && parent != -1) {
                throw DataError("taxonomy file: class node with a parent");
            }
            if (l > 0 && (parent < 0 ||
                          parent >= static_cast<int>(tree.nodes_[l - 1].size()))) {
                throw DataError("taxonomy file: parent index out of range in '" + line +
                                "'");
            }
            tree.nodes_[l].push_back(
                TaxonNode{level, static_cast<int>(i), name, parent});
        }
        // index order must be lexicographic, the construction invariant
        for (std::size_t i = 1; i < tree.nodes_[l].size(); ++i) {
            if (!(tree.nodes_[l][i - 1].name < tree.nodes_[l][i].name)) {
                throw DataError("taxonomy file: names at " + level_name(level) +
                                " level not in sorted order");
            }
        }
    }
    if (tree.nodes_[0].empty()) throw DataError("empty taxonomy file");
    tree.build_indices();
    return tree;
}

TaxonomyTree TaxonomyTree::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open taxonomy file '" + path + "'");
    return load(in);
}

BuildResult build_tree(const std::vector<NamePath>& records, const CleanConfig& config) {
    CleanReport report;
    std::vector<std::string> markers;
    markers.reserve(config.uncertainty_markers.size());
    for (const auto& m : config.uncertainty_markers) markers.push_back(to_lower(m));

    struct Survivor {
        std::size_t input_index;
        NamePath names;
    };
    std::vector<Survivor> survivors;
    for (std::size_t i = 0; i < records.size(); ++i) {
        NamePath names = records[i];
        for (const auto& [from, to] : config.class_merges) {
            if (names[0] == from) {
                names[0] = to;
                ++report.merged;
                break;
            }
        }
        if (names[0].empty() || names[1].empty() || names[2].empty()) {
            ++report.removed_incomplete;
            continue;
        }
        const std::string species_lower = to_lower(names[kNumLevels - 1]);
        bool uncertain = false;
        for (const auto& marker : markers) {
            if (!marker.empty() && species_lower.find(marker) != std::string::npos) {
                uncertain = true;
                break;
            }
        }
        if (uncertain) {
            ++report.removed_uncertain;
            continue;
        }
        survivors.push_back(Survivor{i, std::move(names)});
    }
    if (survivors.empty()) {
        throw DataError("empty taxonomy: no records survived cleaning");
    }

    // Majority vote per level: child name -> (parent name -> record count).
    // std::map keeps iteration lexicographic, which is also the tie-break.
    std::array<std::map<std::string, std::map<std::string, long>>, kNumLevels> votes;
    for (const Survivor& s : survivors) {
        for (std::size_t l = 1; l < kNumLevels; ++l) {
            ++votes[l][s.names[l]][s.names[l - 1]];
        }
    }
    std::array<std::map<std::string, std::string>, kNumLevels> parent_of;
    for (std::size_t l = 1; l < kNumLevels; ++l) {
        for (const auto& [child, tally] : votes[l]) {
            if (tally.size() > 1) ++report.conflicts_resolved;
            long best_count = -1;
            const std::string* best = nullptr;
            for (const auto& [parent, n] : tally) {
                if (n > best_count) {  // ties keep the lexicographically first parent
                    best_count = n;
                    best = &parent;
                }
            }
            parent_of[l][child] = *best;
        }
    }

    // Canonical path: each record keeps its species and follows the resolved
    // parent chain upward, overriding any conflicting upper annotations.
    std::vector<NamePath> canonical(survivors.size());
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        NamePath path;
        path[kNumLevels - 1] = survivors[i].names[kNumLevels - 1];
        for (int l = static_cast<int>(kNumLevels) - 1; l > 0; --l) {
            path[static_cast<std::size_t>(l - 1)] =
                parent_of[static_cast<std::size_t>(l)].at(path[static_cast<std::size_t>(l)]);
        }
        canonical[i] = std::move(path);
    }

    BuildResult result{TaxonomyTree::from_paths(canonical), report, {}};
    result.survivors.reserve(survivors.size());
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        result.survivors.push_back(
            CleanedRecord{survivors[i].input_index, result.tree.resolve(canonical[i])});
    }
    result.report.retained = static_cast<long>(survivors.size());
    return result;
}

std::vector<bool> filter_min_samples(const std::vector<LabelPath>& paths,
                                     const TaxonomyTree& tree, long threshold,
                                     const std::set<Level>& levels,
                                     FilterReport* report) {
    if (threshold < 1) throw ContractError("min-sample threshold must be >= 1");
    if (levels.count(Level::CLASS) > 0) {
        throw ContractError("min-sample filtering applies to order..species, not class");
    }
    FilterReport local;
    for (Level level : levels) local.per_level.push_back(LevelFilterReport{level, 0, 0});
    auto level_report = [&local](Level level) -> LevelFilterReport& {
        for (auto& r : local.per_level) {
            if (r.level == level) return r;
        }
        throw ContractError("internal: level report missing");
    };

    auto recount = [&](const std::vector<bool>& keep) {
        std::map<Level, std::vector<long>> counts;
        for (Level level : levels) {
            counts[level].assign(static_cast<std::size_t>(tree.count(level)), 0);
        }
        for (std::size_t i = 0; i < paths.size(); ++i) {
            if (!keep[i]) continue;
            for (Level level : levels) {
                ++counts[level][static_cast<std::size_t>(
                    paths[i][static_cast<std::size_t>(ordinal(level))])];
            }
        }
        return counts;
    };

    std::vector<bool> keep(paths.size(), true);
    long remaining = static_cast<long>(paths.size());

    // A taxon is "active" while it still counts as present; taxa the input
    // tree carries without any records are never the filter's doing.
    std::map<Level, std::vector<bool>> active;
    {
        auto initial = recount(keep);
        for (Level level : levels) {
            auto& a = active[level];
            a.assign(initial[level].size(), false);
            for (std::size_t t = 0; t < a.size(); ++t) a[t] = initial[level][t] > 0;
        }
    }

    // Each pass marks every active under-threshold taxon against the current
    // survivor counts and removes its records. Ancestors that a pass empties
    // out entirely are picked up (and reported) by the next pass, which is
    // how a sparse species can take its whole genus down one pass later.
    while (true) {
        auto counts = recount(keep);
        std::map<Level, std::vector<bool>> drop_taxon;
        Level first_dropping_level = Level::SPECIES;
        bool any_drop = false;
        for (Level level : levels) {
            auto& drops = drop_taxon[level];
            drops.assign(counts[level].size(), false);
            for (std::size_t t = 0; t < counts[level].size(); ++t) {
                if (active[level][t] && counts[level][t] < threshold) {
                    drops[t] = true;
                    active[level][t] = false;
                    ++level_report(level).taxa_removed;
                    if (!any_drop || ordinal(level) < ordinal(first_dropping_level)) {
                        first_dropping_level = level;
                    }
                    any_drop = true;
                }
            }
        }
        if (!any_drop) break;
        ++local.passes;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            if (!keep[i]) continue;
            for (Level level : levels) {
                const auto taxon = static_cast<std::size_t>(
                    paths[i][static_cast<std::size_t>(ordinal(level))]);
                if (drop_taxon[level][taxon]) {
                    keep[i] = false;
                    ++level_report(level).records_removed;
                    --remaining;
                    break;  // attribute to the coarsest responsible level
                }
            }
        }
        if (remaining == 0) {
            throw DataError("empty after filtering: " + level_name(first_dropping_level) +
                            " level exhausted the dataset at threshold " +
                            std::to_string(threshold));
        }
    }
    if (report != nullptr) *report = local;
    return keep;
}

}  // namespace hiertax
