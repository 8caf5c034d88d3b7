#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hiertax/error.hpp"
#include "hiertax/rng.hpp"
#include "hiertax/taxonomy.hpp"

using namespace hiertax;

namespace {

NamePath path(std::string c, std::string o, std::string f, std::string g,
              std::string s) {
    return NamePath{std::move(c), std::move(o), std::move(f), std::move(g),
                    std::move(s)};
}

// The masking-example taxonomy: 3 diatom classes, 9 orders; deeper levels get
// one placeholder lineage per order so paths are complete.
std::vector<NamePath> diatom_paths() {
    std::vector<std::pair<std::string, std::string>> orders = {
        {"Naviculales", "Bacillariophyceae"},
        {"Eunotiales", "Bacillariophyceae"},
        {"Cymbellales", "Bacillariophyceae"},
        {"Mastogloiales", "Bacillariophyceae"},
        {"Cocconeidales", "Bacillariophyceae"},
        {"Thalassiosirales", "Coscinodiscophyceae"},
        {"Melosirales", "Coscinodiscophyceae"},
        {"Fragilariales", "Fragilariophyceae"},
        {"Tabellariales", "Fragilariophyceae"},
    };
    std::vector<NamePath> paths;
    for (const auto& [order, cls] : orders) {
        paths.push_back(path(cls, order, "F_" + order, "G_" + order, "S_" + order));
    }
    return paths;
}

// Single-parent-consistent random taxonomy: fixed random child->parent maps.
TaxonomyTree random_tree(Rng& rng, int n_class, int n_order, int n_family,
                         int n_genus, int n_species) {
    std::vector<int> genus_of(n_species), family_of(n_genus), order_of(n_family),
        class_of(n_order);
    for (int& v : genus_of) v = static_cast<int>(rng.below(n_genus));
    for (int& v : family_of) v = static_cast<int>(rng.below(n_family));
    for (int& v : order_of) v = static_cast<int>(rng.below(n_order));
    for (int& v : class_of) v = static_cast<int>(rng.below(n_class));
    auto name = [](char prefix, int i) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "%c%03d", prefix, i);
        return std::string(buf);
    };
    std::vector<NamePath> paths;
    for (int s = 0; s < n_species; ++s) {
        int g = genus_of[s], f = family_of[g], o = order_of[f], c = class_of[o];
        paths.push_back(path(name('C', c), name('O', o), name('F', f), name('G', g),
                             name('S', s)));
    }
    return TaxonomyTree::from_paths(paths);
}

// Runs fn, expecting it to throw E; returns the message (empty if nothing
// was thrown, which then fails the caller's content check).
template <typename E, typename Fn>
std::string thrown_message(Fn&& fn) {
    try {
        fn();
    } catch (const E& e) {
        return e.what();
    }
    return "";
}

// Independent severity oracle: compare ancestor paths from the bottom up.
int oracle_distance(const TaxonomyTree& tree, int a, int b) {
    if (a == b) return 0;
    LabelPath pa = tree.ancestor_path(a);
    LabelPath pb = tree.ancestor_path(b);
    for (int l = static_cast<int>(kNumLevels) - 2; l >= 0; --l) {
        if (pa[static_cast<std::size_t>(l)] == pb[static_cast<std::size_t>(l)]) {
            return static_cast<int>(kNumLevels) - 1 - l;
        }
    }
    return static_cast<int>(kNumLevels);
}

}  // namespace

TEST_CASE("node indices follow lexicographic name order per level") {
    TaxonomyTree tree = TaxonomyTree::from_paths(diatom_paths());
    CHECK(tree.count(Level::CLASS) == 3);
    CHECK(tree.count(Level::ORDER) == 9);
    CHECK(tree.count(Level::SPECIES) == 9);
    CHECK(tree.name(Level::CLASS, 0) == "Bacillariophyceae");
    CHECK(tree.name(Level::CLASS, 1) == "Coscinodiscophyceae");
    CHECK(tree.name(Level::CLASS, 2) == "Fragilariophyceae");
    // Orders sorted by name regardless of input order.
    std::vector<std::string> order_names;
    for (int i = 0; i < 9; ++i) order_names.push_back(tree.name(Level::ORDER, i));
    std::vector<std::string> sorted_names = order_names;
    std::sort(sorted_names.begin(), sorted_names.end());
    CHECK(order_names == sorted_names);
    CHECK(tree.find(Level::ORDER, "Naviculales").has_value());
    CHECK_FALSE(tree.find(Level::ORDER, "NoSuchOrder").has_value());
}

TEST_CASE("class mask covers exactly the descendant orders") {
    TaxonomyTree tree = TaxonomyTree::from_paths(diatom_paths());
    int bacillario = *tree.find(Level::CLASS, "Bacillariophyceae");
    const auto& bits = tree.child_mask_bits(Level::CLASS, bacillario);
    REQUIRE(bits.size() == 9);
    std::set<std::string> expected = {"Naviculales", "Eunotiales", "Cymbellales",
                                      "Mastogloiales", "Cocconeidales"};
    for (int i = 0; i < 9; ++i) {
        bool should = expected.count(tree.name(Level::ORDER, i)) > 0;
        CHECK(bits[static_cast<std::size_t>(i)] == (should ? 1 : 0));
    }
    MaskRow row = tree.child_mask(Level::CLASS, bacillario, Level::ORDER);
    CHECK(row.bits == bits);
    CHECK(row.parent_index == bacillario);
    const auto& ones = tree.ones_mask(Level::ORDER);
    CHECK(std::count(ones.begin(), ones.end(), 1) == 9);
}

TEST_CASE("masks partition each level across parents") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        TaxonomyTree tree = random_tree(rng, 2, 4, 6, 9, 15);
        for (std::size_t l = 0; l + 1 < kNumLevels; ++l) {
            Level parent_level = level_from_ordinal(static_cast<int>(l));
            Level child_level = level_from_ordinal(static_cast<int>(l) + 1);
            std::vector<int> covered(static_cast<std::size_t>(tree.count(child_level)), 0);
            for (int p = 0; p < tree.count(parent_level); ++p) {
                const auto& bits = tree.child_mask_bits(parent_level, p);
                long set = 0;
                for (std::size_t c = 0; c < bits.size(); ++c) {
                    if (bits[c]) {
                        ++covered[c];
                        ++set;
                    }
                }
                CHECK(set >= 1);  // every parent that exists has a child
            }
            for (int c : covered) CHECK(c == 1);  // every child exactly once
        }
    }
}

TEST_CASE("from_paths rejects a child with two parents") {
    std::vector<NamePath> paths = {
        path("C1", "O1", "F1", "G1", "S1"),
        path("C1", "O2", "F1", "G2", "S2"),  // family F1 under both O1 and O2
    };
    CHECK_THROWS_AS(TaxonomyTree::from_paths(paths), DataError);
}

TEST_CASE("resolve and names_of round trip") {
    TaxonomyTree tree = TaxonomyTree::from_paths(diatom_paths());
    for (const NamePath& names : diatom_paths()) {
        LabelPath ids = tree.resolve(names);
        CHECK(tree.names_of(ids) == names);
        CHECK(tree.valid_path(ids));
        int species = ids[kNumLevels - 1];
        CHECK(tree.ancestor_path(species) == ids);
    }
}

TEST_CASE("resolve names the offending label") {
    TaxonomyTree tree = TaxonomyTree::from_paths(diatom_paths());
    std::string msg = thrown_message<DataError>([&] {
        tree.resolve(path("Bacillariophyceae", "NoSuchOrder", "F_Naviculales",
                          "G_Naviculales", "S_Naviculales"));
    });
    CHECK(msg.find("NoSuchOrder") != std::string::npos);
    // All names exist but the order sits under the wrong class.
    CHECK_THROWS_AS(tree.resolve(path("Fragilariophyceae", "Naviculales",
                                      "F_Naviculales", "G_Naviculales",
                                      "S_Naviculales")),
                    DataError);
}

TEST_CASE("valid_path detects broken ancestor chains") {
    TaxonomyTree tree = TaxonomyTree::from_paths(diatom_paths());
    LabelPath good = tree.resolve(diatom_paths()[0]);
    CHECK(tree.valid_path(good));
    LabelPath broken = good;
    // Point the class at a different node than the order's real parent.
    broken[0] = (good[0] + 1) % tree.count(Level::CLASS);
    CHECK_FALSE(tree.valid_path(broken));
}

TEST_CASE("severity ladder on a hand-built tree") {
    // Two classes; within class A: two orders; etc. Exercise every distance.
    std::vector<NamePath> paths = {
        path("A", "AO1", "AF1", "AG1", "AS1"),
        path("A", "AO1", "AF1", "AG1", "AS2"),  // same genus as AS1
        path("A", "AO1", "AF1", "AG2", "AS3"),  // same family
        path("A", "AO1", "AF2", "AG3", "AS4"),  // same order
        path("A", "AO2", "AF3", "AG4", "AS5"),  // same class
        path("B", "BO1", "BF1", "BG1", "BS1"),  // different class
    };
    TaxonomyTree tree = TaxonomyTree::from_paths(paths);
    auto species = [&](const char* name) { return *tree.find(Level::SPECIES, name); };
    int s1 = species("AS1");
    CHECK(tree.taxonomic_distance(s1, s1) == 0);
    CHECK(tree.taxonomic_distance(s1, species("AS2")) == 1);
    CHECK(tree.taxonomic_distance(s1, species("AS3")) == 2);
    CHECK(tree.taxonomic_distance(s1, species("AS4")) == 3);
    CHECK(tree.taxonomic_distance(s1, species("AS5")) == 4);
    CHECK(tree.taxonomic_distance(s1, species("BS1")) == 5);
}

TEST_CASE("severity matches the ancestor-path oracle on random trees") {
    Rng rng(32);
    int pairs_checked = 0;
    while (pairs_checked < 10000) {
        TaxonomyTree tree = random_tree(rng, 3, 5, 8, 12, 20);
        int n = tree.count(Level::SPECIES);
        for (int k = 0; k < 500; ++k) {
            int a = static_cast<int>(rng.below(n));
            int b = static_cast<int>(rng.below(n));
            REQUIRE(tree.taxonomic_distance(a, b) == oracle_distance(tree, a, b));
            ++pairs_checked;
        }
    }
}

TEST_CASE("severity is a metric: symmetry, identity, triangle") {
    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        TaxonomyTree tree = random_tree(rng, 2, 4, 7, 11, 18);
        int n = tree.count(Level::SPECIES);
        for (int k = 0; k < 300; ++k) {
            int a = static_cast<int>(rng.below(n));
            int b = static_cast<int>(rng.below(n));
            int c = static_cast<int>(rng.below(n));
            int dab = tree.taxonomic_distance(a, b);
            CHECK(dab == tree.taxonomic_distance(b, a));
            CHECK((dab == 0) == (a == b));
            CHECK(dab <= tree.taxonomic_distance(a, c) + tree.taxonomic_distance(c, b));
        }
    }
}

TEST_CASE("checksum identifies the logical tree, not input order") {
    std::vector<NamePath> paths = diatom_paths();
    TaxonomyTree a = TaxonomyTree::from_paths(paths);
    Rng rng(34);
    rng.shuffle(paths);
    TaxonomyTree b = TaxonomyTree::from_paths(paths);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.serialize() == b.serialize());

    paths.push_back(path("A", "AO", "AF", "AG", "AS"));
    TaxonomyTree c = TaxonomyTree::from_paths(paths);
    CHECK(a.checksum() != c.checksum());
}

TEST_CASE("save and load round trip") {
    Rng rng(35);
    TaxonomyTree tree = random_tree(rng, 2, 4, 6, 9, 14);
    std::stringstream buffer;
    tree.save(buffer);
    TaxonomyTree loaded = TaxonomyTree::load(buffer);
    CHECK(loaded.checksum() == tree.checksum());
    CHECK(loaded.serialize() == tree.serialize());
    for (Level level : all_levels()) {
        REQUIRE(loaded.count(level) == tree.count(level));
        for (int i = 0; i < tree.count(level); ++i) {
            CHECK(loaded.name(level, i) == tree.name(level, i));
            CHECK(loaded.parent(level, i) == tree.parent(level, i));
        }
    }
    std::stringstream bad("not a taxonomy file\n");
    CHECK_THROWS_AS(TaxonomyTree::load(bad), DataError);
}

TEST_CASE("cleaning applies class merges before anything else") {
    CleanConfig config;
    config.class_merges = {{"OldClass", "NewClass"}};
    std::vector<NamePath> records = {
        path("OldClass", "O1", "F1", "G1", "S1"),
        path("NewClass", "O1", "F1", "G1", "S2"),
    };
    BuildResult result = build_tree(records, config);
    CHECK(result.report.merged == 1);
    CHECK(result.report.retained == 2);
    CHECK(result.tree.count(Level::CLASS) == 1);
    CHECK(result.tree.name(Level::CLASS, 0) == "NewClass");
}

TEST_CASE("cleaning drops records missing class, order, or family") {
    CleanConfig config;
    config.class_merges.clear();
    std::vector<NamePath> records = {
        path("C", "O", "F", "G", "S1"),
        path("", "O", "F", "G", "S2"),
        path("C", "", "F", "G", "S3"),
        path("C", "O", "", "G", "S4"),
        path("C", "O", "F", "", ""),  // missing genus+species is allowed
    };
    BuildResult result = build_tree(records, config);
    CHECK(result.report.removed_incomplete == 3);
    CHECK(result.report.retained == 2);
    // The empty genus and species become regular (empty-named) taxa.
    CHECK(result.tree.find(Level::GENUS, "").has_value());
    CHECK(result.tree.find(Level::SPECIES, "").has_value());
}

TEST_CASE("cleaning drops species with uncertainty markers, case-insensitive") {
    CleanConfig config;
    config.class_merges.clear();
    std::vector<NamePath> records = {
        path("C", "O", "F", "G", "Navicula certain"),
        path("C", "O", "F", "G", "Navicula sp."),
        path("C", "O", "F", "G", "Navicula CF. lanceolata"),
        path("C", "O", "F", "G", "Navicula dubious?"),
    };
    BuildResult result = build_tree(records, config);
    CHECK(result.report.removed_uncertain == 3);
    CHECK(result.report.retained == 1);
    CHECK(result.tree.count(Level::SPECIES) == 1);

    config.uncertainty_markers = {"weird"};
    BuildResult custom = build_tree(records, config);
    CHECK(custom.report.removed_uncertain == 0);
    CHECK(custom.report.retained == 4);
}

TEST_CASE("conflicting parents resolve by majority vote") {
    CleanConfig config;
    config.class_merges.clear();
    std::vector<NamePath> records = {
        path("C", "O", "F1", "G", "S1"),
        path("C", "O", "F1", "G", "S2"),
        path("C", "O", "F1", "G", "S3"),
        path("C", "O", "F2", "G", "S4"),  // minority family for genus G
    };
    BuildResult result = build_tree(records, config);
    CHECK(result.report.conflicts_resolved == 1);
    int g = *result.tree.find(Level::GENUS, "G");
    CHECK(result.tree.name(Level::FAMILY, result.tree.parent(Level::GENUS, g)) == "F1");
    // The minority record is re-homed, not dropped.
    CHECK(result.report.retained == 4);
    CHECK(result.tree.count(Level::FAMILY) == 1);
}

TEST_CASE("parent-vote ties go to the lexicographically smaller name") {
    CleanConfig config;
    config.class_merges.clear();
    std::vector<NamePath> records = {
        path("C", "O", "Fb", "G", "S1"),
        path("C", "O", "Fa", "G", "S2"),
    };
    BuildResult result = build_tree(records, config);
    int g = *result.tree.find(Level::GENUS, "G");
    CHECK(result.tree.name(Level::FAMILY, result.tree.parent(Level::GENUS, g)) == "Fa");
}

TEST_CASE("cleaning is idempotent on its own survivors") {
    CleanConfig config;
    config.class_merges = {{"X", "C"}};
    std::vector<NamePath> records = {
        path("X", "O", "F1", "G", "S1"), path("C", "O", "F1", "G", "S2"),
        path("C", "O", "F2", "G", "S3"), path("C", "O", "F1", "G", "S4"),
        path("", "O", "F1", "G", "S5"),  path("C", "O", "F1", "G", "Bad sp."),
    };
    BuildResult first = build_tree(records, config);
    std::vector<NamePath> cleaned;
    for (const CleanedRecord& r : first.survivors) {
        cleaned.push_back(first.tree.names_of(r.path));
    }
    BuildResult second = build_tree(cleaned, config);
    CHECK(second.tree.serialize() == first.tree.serialize());
    CHECK(second.report.merged == 0);
    CHECK(second.report.removed_incomplete == 0);
    CHECK(second.report.removed_uncertain == 0);
    CHECK(second.report.conflicts_resolved == 0);
    CHECK(second.report.retained == first.report.retained);
}

TEST_CASE("cleaning with no survivors reports an error") {
    std::vector<NamePath> records = {path("", "O", "F", "G", "S")};
    CHECK_THROWS_AS(build_tree(records), DataError);
}

namespace {

// Exhaustive filtering oracle: recompute counts from scratch and re-mark
// until stable, with no incremental bookkeeping shared with the library.
std::vector<bool> oracle_filter(const std::vector<LabelPath>& paths,
                                const TaxonomyTree& tree, long threshold,
                                const std::set<Level>& levels) {
    std::vector<bool> keep(paths.size(), true);
    while (true) {
        bool removed = false;
        for (Level level : levels) {
            std::vector<long> counts(static_cast<std::size_t>(tree.count(level)), 0);
            for (std::size_t i = 0; i < paths.size(); ++i) {
                if (keep[i]) ++counts[static_cast<std::size_t>(
                    paths[i][static_cast<std::size_t>(ordinal(level))])];
            }
            for (std::size_t i = 0; i < paths.size(); ++i) {
                long c = counts[static_cast<std::size_t>(
                    paths[i][static_cast<std::size_t>(ordinal(level))])];
                if (keep[i] && c < threshold) {
                    keep[i] = false;
                    removed = true;
                }
            }
        }
        if (!removed) return keep;
    }
}

}  // namespace

TEST_CASE("under-threshold order is removed with its records") {
    // 25 records: one order holds 9, the other 16.
    std::vector<NamePath> records;
    for (int i = 0; i < 9; ++i)
        records.push_back(path("C", "Osparse", "F1", "G1", "S" + std::to_string(i)));
    for (int i = 0; i < 16; ++i)
        records.push_back(path("C", "Obig", "F2", "G2", "T" + std::to_string(i)));
    TaxonomyTree tree = build_tree(records, CleanConfig{{}, {}}).tree;
    std::vector<LabelPath> paths;
    for (const NamePath& r : records) paths.push_back(tree.resolve(r));

    FilterReport report;
    std::vector<bool> keep =
        filter_min_samples(paths, tree, 10, {Level::ORDER}, &report);
    CHECK(std::count(keep.begin(), keep.end(), true) == 16);
    CHECK(keep == oracle_filter(paths, tree, 10, {Level::ORDER}));
    REQUIRE(report.per_level.size() == 1);
    CHECK(report.per_level[0].level == Level::ORDER);
    CHECK(report.per_level[0].taxa_removed == 1);
    CHECK(report.per_level[0].records_removed == 9);
    CHECK(report.passes == 1);
}

TEST_CASE("threshold one keeps everything") {
    Rng rng(36);
    TaxonomyTree tree = random_tree(rng, 2, 3, 5, 8, 12);
    std::vector<LabelPath> paths;
    for (int s = 0; s < tree.count(Level::SPECIES); ++s) {
        paths.push_back(tree.ancestor_path(s));
    }
    std::vector<bool> keep = filter_min_samples(
        paths, tree, 1, {Level::ORDER, Level::FAMILY, Level::GENUS, Level::SPECIES});
    CHECK(std::count(keep.begin(), keep.end(), false) == 0);
}

TEST_CASE("sparse species can empty their genus one pass later") {
    // Genus Gpoor clears the bar on its own (12 records) but both its species
    // are sparse: pass 1 removes the species records, leaving the genus at
    // zero; pass 2 retires the genus.
    std::vector<NamePath> records;
    for (int i = 0; i < 6; ++i) records.push_back(path("C", "O", "F", "Gpoor", "S1"));
    for (int i = 0; i < 6; ++i) records.push_back(path("C", "O", "F", "Gpoor", "S2"));
    for (int i = 0; i < 12; ++i) records.push_back(path("C", "O", "F", "Grich", "S3"));
    TaxonomyTree tree = build_tree(records, CleanConfig{{}, {}}).tree;
    std::vector<LabelPath> paths;
    for (const NamePath& r : records) paths.push_back(tree.resolve(r));

    FilterReport report;
    std::vector<bool> keep = filter_min_samples(
        paths, tree, 10, {Level::GENUS, Level::SPECIES}, &report);
    CHECK(std::count(keep.begin(), keep.end(), true) == 12);
    CHECK(keep == oracle_filter(paths, tree, 10, {Level::GENUS, Level::SPECIES}));
    CHECK(report.passes == 2);
    for (const LevelFilterReport& r : report.per_level) {
        if (r.level == Level::SPECIES) {
            CHECK(r.taxa_removed == 2);
            CHECK(r.records_removed == 12);
        }
        if (r.level == Level::GENUS) {
            CHECK(r.taxa_removed == 1);   // Gpoor, emptied by the species pass
            CHECK(r.records_removed == 0);
        }
    }
}

TEST_CASE("filtered survivors always meet the threshold") {
    Rng rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        TaxonomyTree tree = random_tree(rng, 2, 3, 4, 6, 10);
        std::vector<LabelPath> paths;
        int n_records = 30 + static_cast<int>(rng.below(40));
        for (int i = 0; i < n_records; ++i) {
            int s = static_cast<int>(rng.below(tree.count(Level::SPECIES)));
            paths.push_back(tree.ancestor_path(s));
        }
        long threshold = 2 + static_cast<long>(rng.below(4));
        std::set<Level> levels = {Level::GENUS, Level::SPECIES};
        std::vector<bool> keep;
        try {
            keep = filter_min_samples(paths, tree, threshold, levels);
        } catch (const DataError&) {
            // Everything filtered out: also a valid outcome for this check.
            continue;
        }
        CHECK(keep == oracle_filter(paths, tree, threshold, levels));
        for (Level level : levels) {
            std::vector<long> counts(static_cast<std::size_t>(tree.count(level)), 0);
            for (std::size_t i = 0; i < paths.size(); ++i) {
                if (keep[i]) ++counts[static_cast<std::size_t>(
                    paths[i][static_cast<std::size_t>(ordinal(level))])];
            }
            for (long c : counts) CHECK((c == 0 || c >= threshold));
        }
    }
}

TEST_CASE("filtering everything away names the exhausted level") {
    std::vector<NamePath> records = {
        path("C", "O", "F", "G", "S1"),
        path("C", "O", "F", "G", "S2"),
    };
    TaxonomyTree tree = build_tree(records, CleanConfig{{}, {}}).tree;
    std::vector<LabelPath> paths = {tree.resolve(records[0]), tree.resolve(records[1])};
    std::string msg = thrown_message<DataError>(
        [&] { filter_min_samples(paths, tree, 5, {Level::SPECIES}); });
    CHECK(msg.find("species") != std::string::npos);
}

TEST_CASE("filter rejects invalid arguments") {
    TaxonomyTree tree = TaxonomyTree::from_paths({path("C", "O", "F", "G", "S")});
    std::vector<LabelPath> paths = {tree.ancestor_path(0)};
    CHECK_THROWS_AS(filter_min_samples(paths, tree, 0, {Level::SPECIES}), ContractError);
    CHECK_THROWS_AS(filter_min_samples(paths, tree, 1, {Level::CLASS}), ContractError);
}
