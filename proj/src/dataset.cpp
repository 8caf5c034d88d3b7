#include "hiertax/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "hiertax/error.hpp"
#include "hiertax/io_util.hpp"
#include "hiertax/rng.hpp"

namespace hiertax {

std::string split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unassigned: return "unassigned";
    }
    throw ContractError("unreachable split tag");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name == "unassigned") return Split::Unassigned;
    throw DataError("unknown split name '" + name + "'");
}

bool Dataset::has_splits() const {
    for (const Record& r : records) {
        if (r.split != Split::Unassigned) return true;
    }
    return false;
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) out.push_back(i);
    }
    return out;
}

Matrix Dataset::feature_matrix(const std::vector<std::size_t>& indices) const {
    Matrix out(indices.size(), feature_dim);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Record& rec = records.at(indices[r]);
        if (rec.features.size() != feature_dim) {
            throw ContractError("record '" + rec.id + "' has " +
                                std::to_string(rec.features.size()) +
                                " features, dataset declares " + std::to_string(feature_dim));
        }
        std::copy(rec.features.begin(), rec.features.end(), out.row_ptr(r));
    }
    return out;
}

std::vector<LabelPath> Dataset::labels_of(const std::vector<std::size_t>& indices) const {
    std::vector<LabelPath> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(records.at(i).labels);
    return out;
}

namespace {

void check_dataset_tree(const Dataset& dataset, const TaxonomyTree& tree, const char* op) {
    if (dataset.taxonomy_checksum != tree.checksum()) {
        throw DataError(std::string(op) + ": dataset taxonomy checksum " +
                        std::to_string(dataset.taxonomy_checksum) +
                        " does not match tree checksum " + std::to_string(tree.checksum()));
    }
}

}  // namespace

void stratified_split(Dataset& dataset, const TaxonomyTree& tree, const SplitSpec& spec) {
    if (dataset.records.empty()) {
        throw DataError("stratified_split: empty dataset");
    }
    check_dataset_tree(dataset, tree, "stratified_split");
    if (spec.train <= 0.0 || spec.val <= 0.0 || spec.test <= 0.0) {
        throw ContractError("stratified_split: fractions must be positive");
    }
    if (std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
        throw ContractError("stratified_split: fractions must sum to 1");
    }

    // Strata in ascending taxon index, records in dataset order within each.
    std::map<int, std::vector<std::size_t>> strata;
    std::size_t level_idx = static_cast<std::size_t>(ordinal(spec.stratify_level));
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        int taxon = dataset.records[i].labels[level_idx];
        if (taxon < 0 || taxon >= tree.count(spec.stratify_level)) {
            throw DataError("stratified_split: record '" + dataset.records[i].id +
                            "' has invalid " + level_name(spec.stratify_level) +
                            " index " + std::to_string(taxon));
        }
        strata[taxon].push_back(i);
    }

    Rng rng(spec.seed);
    const double fractions[3] = {spec.train, spec.val, spec.test};
    const Split splits[3] = {Split::Train, Split::Val, Split::Test};
    for (auto& [taxon, members] : strata) {
        (void)taxon;
        rng.shuffle(members);
        std::size_t n = members.size();
        if (n < 3) {
            // Too few records to honor the fractions: fill by priority.
            for (std::size_t i = 0; i < n; ++i) {
                dataset.records[members[i]].split = splits[i];
            }
            continue;
        }
        // Largest-remainder apportionment; remainder ties favor the
        // earlier split (train before val before test).
        std::size_t counts[3];
        double remainders[3];
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            double exact = static_cast<double>(n) * fractions[s];
            counts[s] = static_cast<std::size_t>(std::floor(exact));
            remainders[s] = exact - static_cast<double>(counts[s]);
            assigned += counts[s];
        }
        for (std::size_t left = n - assigned; left > 0; --left) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (remainders[s] > remainders[best]) best = s;
            }
            ++counts[best];
            remainders[best] = -1.0;
        }
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t i = 0; i < counts[s]; ++i, ++pos) {
                dataset.records[members[pos]].split = splits[s];
            }
        }
    }
}

SyntheticResult generate_synthetic(const SyntheticSpec& spec) {
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (spec.level_counts[l] < 1) {
            throw DataError("generate_synthetic: degenerate shape, level " +
                            level_name(level_from_ordinal(static_cast<int>(l))) +
                            " has count " + std::to_string(spec.level_counts[l]));
        }
        if (l > 0 && spec.level_counts[l] < spec.level_counts[l - 1]) {
            throw DataError(
                "generate_synthetic: degenerate shape, level counts must be "
                "non-decreasing with depth (every parent needs a child)");
        }
        if (spec.dispersion[l] <= 0.0) {
            throw DataError("generate_synthetic: dispersions must be positive");
        }
    }
    if (spec.feature_dim == 0) {
        throw DataError("generate_synthetic: feature_dim must be >= 1");
    }
    if (spec.noise < 0.0) {
        throw DataError("generate_synthetic: noise must be non-negative");
    }
    if (spec.min_samples_per_species < 1 ||
        spec.max_samples_per_species < spec.min_samples_per_species) {
        throw DataError("generate_synthetic: samples-per-species range invalid");
    }

    // Zero-padded numeric names keep lexicographic tree order equal to the
    // generation order, so node indices line up with the arrays below.
    static const char* kPrefix[kNumLevels] = {"C", "O", "F", "G", "S"};
    auto node_name = [](std::size_t level, int idx) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%s%04d", kPrefix[level], idx);
        return std::string(buf);
    };

    // Spread children evenly: with n children over p parents, the first
    // n % p parents get one extra. Children are numbered in parent order.
    std::array<std::vector<int>, kNumLevels> parent_of;
    parent_of[0].assign(static_cast<std::size_t>(spec.level_counts[0]), -1);
    for (std::size_t l = 1; l < kNumLevels; ++l) {
        int parents = spec.level_counts[l - 1];
        int children = spec.level_counts[l];
        int base = children / parents;
        int extra = children % parents;
        parent_of[l].reserve(static_cast<std::size_t>(children));
        for (int p = 0; p < parents; ++p) {
            int share = base + (p < extra ? 1 : 0);
            for (int c = 0; c < share; ++c) parent_of[l].push_back(p);
        }
    }

    std::vector<NamePath> paths;
    paths.reserve(static_cast<std::size_t>(spec.level_counts[kNumLevels - 1]));
    for (int s = 0; s < spec.level_counts[kNumLevels - 1]; ++s) {
        NamePath path;
        int idx = s;
        for (std::size_t l = kNumLevels; l-- > 0;) {
            path[l] = node_name(l, idx);
            idx = parent_of[l][static_cast<std::size_t>(idx)];
        }
        paths.push_back(std::move(path));
    }
    TaxonomyTree tree = TaxonomyTree::from_paths(paths);

    Rng rng(spec.seed);
    // Center ladder: class centers at the widest dispersion, each child
    // centered on its parent with a tighter per-level offset.
    std::array<std::vector<std::vector<double>>, kNumLevels> centers;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        centers[l].assign(static_cast<std::size_t>(spec.level_counts[l]),
                          std::vector<double>(spec.feature_dim, 0.0));
        for (int i = 0; i < spec.level_counts[l]; ++i) {
            for (std::size_t d = 0; d < spec.feature_dim; ++d) {
                double offset = rng.normal() * spec.dispersion[l];
                if (l == 0) {
                    centers[l][static_cast<std::size_t>(i)][d] = offset;
                } else {
                    int p = parent_of[l][static_cast<std::size_t>(i)];
                    centers[l][static_cast<std::size_t>(i)][d] =
                        centers[l - 1][static_cast<std::size_t>(p)][d] + offset;
                }
            }
        }
    }

    SyntheticResult result{std::move(tree), Dataset{}};
    result.dataset.feature_dim = spec.feature_dim;
    result.dataset.taxonomy_checksum = result.tree.checksum();
    long counter = 0;
    for (int s = 0; s < spec.level_counts[kNumLevels - 1]; ++s) {
        int count = spec.min_samples_per_species;
        if (spec.max_samples_per_species > spec.min_samples_per_species) {
            count = static_cast<int>(rng.range(spec.min_samples_per_species,
                                               spec.max_samples_per_species));
        }
        LabelPath labels = result.tree.ancestor_path(s);
        for (int k = 0; k < count; ++k) {
            Record rec;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "r%06ld", counter++);
            rec.id = buf;
            rec.labels = labels;
            rec.features.resize(spec.feature_dim);
            const auto& center = centers[kNumLevels - 1][static_cast<std::size_t>(s)];
            for (std::size_t d = 0; d < spec.feature_dim; ++d) {
                rec.features[d] = center[d] + rng.normal() * spec.noise;
            }
            result.dataset.records.push_back(std::move(rec));
        }
    }
    return result;
}

namespace {

struct Header {
    bool has_split = false;
    std::size_t feature_count = 0;  // embedded feature columns
};

Header parse_header(const std::vector<std::string>& fields,
                    const std::filesystem::path& path) {
    static const char* kLabels[6] = {"id", "class", "order", "family", "genus", "species"};
    if (fields.size() < 6) {
        throw DataError(path.string() + " line 1: header needs at least id + 5 label columns");
    }
    for (std::size_t i = 0; i < 6; ++i) {
        if (fields[i] != kLabels[i]) {
            throw DataError(path.string() + " line 1: expected column '" +
                            kLabels[i] + "', got '" + fields[i] + "'");
        }
    }
    Header h;
    std::size_t next = 6;
    if (next < fields.size() && fields[next] == "split") {
        h.has_split = true;
        ++next;
    }
    for (std::size_t f = 0; next < fields.size(); ++next, ++f) {
        std::string expect = "f" + std::to_string(f);
        if (fields[next] != expect) {
            throw DataError(path.string() + " line 1: expected feature column '" +
                            expect + "', got '" + fields[next] + "'");
        }
        ++h.feature_count;
    }
    return h;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            if (!cur.empty() && cur.back() == '\r') cur.pop_back();
            lines.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        if (cur.back() == '\r') cur.pop_back();
        lines.push_back(std::move(cur));
    }
    return lines;
}

// Provider file: id,f0..fN with precomputed feature vectors keyed by id.
std::unordered_map<std::string, std::vector<double>> load_provider(
    const std::filesystem::path& path) {
    std::vector<std::string> lines = split_lines(read_file(path));
    if (lines.empty()) {
        throw DataError("provider file " + path.string() + " is empty");
    }
    std::vector<std::string> header = csv_split(lines[0]);
    if (header.empty() || header[0] != "id") {
        throw DataError(path.string() + " line 1: provider header must start with 'id'");
    }
    for (std::size_t i = 1; i < header.size(); ++i) {
        std::string expect = "f" + std::to_string(i - 1);
        if (header[i] != expect) {
            throw DataError(path.string() + " line 1: expected feature column '" +
                            expect + "', got '" + header[i] + "'");
        }
    }
    std::size_t dim = header.size() - 1;
    if (dim == 0) {
        throw DataError(path.string() + ": provider has no feature columns");
    }
    std::unordered_map<std::string, std::vector<double>> out;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        std::string where = path.string() + " line " + std::to_string(li + 1);
        std::vector<std::string> fields = csv_split(lines[li]);
        if (fields.size() != header.size()) {
            throw DataError(where + ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(fields.size()));
        }
        std::vector<double> feats(dim);
        for (std::size_t f = 0; f < dim; ++f) {
            feats[f] = parse_double(fields[f + 1], where + " column f" + std::to_string(f));
        }
        if (!out.emplace(fields[0], std::move(feats)).second) {
            throw DataError(where + ": duplicate provider id '" + fields[0] + "'");
        }
    }
    return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, const TaxonomyTree& tree,
                     const std::optional<std::filesystem::path>& provider_path) {
    std::vector<std::string> lines = split_lines(read_file(path));
    if (lines.empty()) {
        throw DataError("dataset file " + path.string() + " is empty");
    }
    Header header = parse_header(csv_split(lines[0]), path);

    std::unordered_map<std::string, std::vector<double>> provider;
    if (header.feature_count == 0) {
        if (!provider_path) {
            throw DataError(path.string() +
                            ": no embedded feature columns and no provider file given");
        }
        provider = load_provider(*provider_path);
    } else if (provider_path) {
        throw DataError(path.string() +
                        ": has embedded feature columns; a provider file is not allowed");
    }

    Dataset dataset;
    std::unordered_set<std::string> seen_ids;
    std::size_t expected_fields = 6 + (header.has_split ? 1 : 0) + header.feature_count;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        std::string where = path.string() + " line " + std::to_string(li + 1);
        std::vector<std::string> fields = csv_split(lines[li]);
        if (fields.size() != expected_fields) {
            throw DataError(where + ": expected " + std::to_string(expected_fields) +
                            " fields, got " + std::to_string(fields.size()));
        }
        Record rec;
        rec.id = fields[0];
        if (!seen_ids.insert(rec.id).second) {
            throw DataError(where + ": duplicate record id '" + rec.id + "'");
        }
        NamePath names;
        for (std::size_t l = 0; l < kNumLevels; ++l) names[l] = fields[l + 1];
        try {
            rec.labels = tree.resolve(names);
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
        std::size_t next = 6;
        if (header.has_split) {
            try {
                rec.split = split_from_name(fields[next]);
            } catch (const DataError& e) {
                throw DataError(where + ": " + e.what());
            }
            ++next;
        }
        if (header.feature_count > 0) {
            rec.features.resize(header.feature_count);
            for (std::size_t f = 0; f < header.feature_count; ++f) {
                rec.features[f] =
                    parse_double(fields[next + f], where + " column f" + std::to_string(f));
            }
        } else {
            auto it = provider.find(rec.id);
            if (it == provider.end()) {
                throw DataError(where + ": no provider features for id '" + rec.id + "'");
            }
            rec.features = it->second;
        }
        dataset.records.push_back(std::move(rec));
    }
    if (dataset.records.empty()) {
        throw DataError("dataset file " + path.string() + " has no records");
    }
    dataset.feature_dim = dataset.records[0].features.size();
    for (const Record& r : dataset.records) {
        if (r.features.size() != dataset.feature_dim) {
            throw DataError(path.string() + ": record '" + r.id + "' has " +
                            std::to_string(r.features.size()) +
                            " features, expected " + std::to_string(dataset.feature_dim));
        }
    }
    dataset.taxonomy_checksum = tree.checksum();
    return dataset;
}

void save_dataset(const Dataset& dataset, const TaxonomyTree& tree,
                  const std::filesystem::path& path) {
    check_dataset_tree(dataset, tree, "save_dataset");
    bool with_split = dataset.has_splits();
    std::string out;
    {
        std::vector<std::string> header = {"id", "class", "order", "family", "genus", "species"};
        if (with_split) header.push_back("split");
        for (std::size_t f = 0; f < dataset.feature_dim; ++f) {
            header.push_back("f" + std::to_string(f));
        }
        out += csv_join(header);
        out += '\n';
    }
    for (const Record& rec : dataset.records) {
        std::vector<std::string> fields;
        fields.reserve(6 + (with_split ? 1 : 0) + dataset.feature_dim);
        fields.push_back(rec.id);
        NamePath names = tree.names_of(rec.labels);
        for (std::size_t l = 0; l < kNumLevels; ++l) fields.push_back(names[l]);
        if (with_split) fields.push_back(split_name(rec.split));
        for (double v : rec.features) fields.push_back(format_double(v));
        out += csv_join(fields);
        out += '\n';
    }
    write_file_atomic(path, out);
}

FilterOutcome filter_dataset(const Dataset& dataset, const TaxonomyTree& tree,
                             long threshold, const std::set<Level>& levels) {
    check_dataset_tree(dataset, tree, "filter_dataset");
    std::vector<LabelPath> paths;
    paths.reserve(dataset.records.size());
    for (const Record& r : dataset.records) paths.push_back(r.labels);

    FilterReport report;
    std::vector<bool> keep = filter_min_samples(paths, tree, threshold, levels, &report);

    std::vector<NamePath> surviving_paths;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (keep[i]) surviving_paths.push_back(tree.names_of(paths[i]));
    }
    TaxonomyTree new_tree = TaxonomyTree::from_paths(surviving_paths);
    Dataset new_dataset;
    new_dataset.feature_dim = dataset.feature_dim;
    new_dataset.taxonomy_checksum = new_tree.checksum();
    std::size_t next_path = 0;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        if (!keep[i]) continue;
        Record rec = dataset.records[i];
        rec.labels = new_tree.resolve(surviving_paths[next_path++]);
        new_dataset.records.push_back(std::move(rec));
    }
    return FilterOutcome{std::move(new_dataset), std::move(new_tree), std::move(report)};
}

}  // namespace hiertax
