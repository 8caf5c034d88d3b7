#include "hiertax/cli.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "hiertax/checkpoint.hpp"
#include "hiertax/dataset.hpp"
#include "hiertax/error.hpp"
#include "hiertax/evaluation.hpp"
#include "hiertax/inference.hpp"
#include "hiertax/io_util.hpp"
#include "hiertax/model.hpp"
#include "hiertax/taxonomy.hpp"
#include "hiertax/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace hiertax {

namespace {

namespace fs = std::filesystem;

constexpr const char* kToolVersion = "0.1.0";

struct GlobalOpts {
    std::uint64_t seed = 42;
    int threads = 1;
    std::string out_dir = ".";
};

fs::path resolve_out(const GlobalOpts& g, const std::string& name) {
    fs::path p(name);
    if (p.is_absolute()) return p;
    return fs::path(g.out_dir) / p;
}

// Every artifact-producing run records what it consumed and produced.
void write_manifest(const GlobalOpts& g, const std::string& command,
                    const nlohmann::json& config,
                    const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    nlohmann::json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["seed"] = g.seed;
    m["config"] = config;
    m["config_checksum"] = fnv1a64(config.dump());
    nlohmann::json in = nlohmann::json::object();
    for (const fs::path& p : inputs) in[p.string()] = file_checksum(p);
    m["inputs"] = in;
    nlohmann::json outs = nlohmann::json::array();
    for (const fs::path& p : outputs) outs.push_back(p.string());
    m["outputs"] = outs;
    write_file_atomic(resolve_out(g, command + ".manifest.json"), m.dump(2) + "\n");
}

std::uint64_t config_checksum(const nlohmann::json& config) {
    return fnv1a64(config.dump());
}

// Raw annotation file for taxonomy building: class,order,family,genus,species
// per row (no ids, no features).
std::vector<NamePath> load_raw_records(const fs::path& path) {
    std::string text = read_file(path);
    std::vector<std::string> lines;
    {
        std::string cur;
        for (char c : text) {
            if (c == '\n') {
                if (!cur.empty() && cur.back() == '\r') cur.pop_back();
                lines.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) {
            if (cur.back() == '\r') cur.pop_back();
            lines.push_back(cur);
        }
    }
    if (lines.empty()) {
        throw DataError("annotation file " + path.string() + " is empty");
    }
    static const char* kCols[5] = {"class", "order", "family", "genus", "species"};
    std::vector<std::string> header = csv_split(lines[0]);
    if (header.size() != 5) {
        throw DataError(path.string() + " line 1: expected 5 label columns");
    }
    for (std::size_t i = 0; i < 5; ++i) {
        if (header[i] != kCols[i]) {
            throw DataError(path.string() + " line 1: expected column '" +
                            std::string(kCols[i]) + "', got '" + header[i] + "'");
        }
    }
    std::vector<NamePath> records;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        std::vector<std::string> fields = csv_split(lines[li]);
        if (fields.size() != 5) {
            throw DataError(path.string() + " line " + std::to_string(li + 1) +
                            ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        NamePath rec;
        for (std::size_t i = 0; i < 5; ++i) rec[i] = fields[i];
        records.push_back(std::move(rec));
    }
    if (records.empty()) {
        throw DataError("annotation file " + path.string() + " has no records");
    }
    return records;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_double(item, std::string(what)));
    }
    if (out.empty()) throw DataError(std::string(what) + ": empty list");
    return out;
}

std::string epochs_csv(const std::vector<Level>& levels, const FitResult& fit) {
    std::vector<std::string> header = {"epoch"};
    for (Level l : levels) header.push_back("train_loss_" + level_name(l));
    for (Level l : levels) header.push_back("val_accuracy_" + level_name(l));
    for (Level l : levels) header.push_back("val_f1_" + level_name(l));
    header.push_back("lr");
    header.push_back("is_best");
    std::string out = csv_join(header) + "\n";
    for (const EpochLog& log : fit.log) {
        std::vector<std::string> row = {std::to_string(log.epoch)};
        for (double v : log.train_loss) row.push_back(format_double(v));
        for (double v : log.val_accuracy) row.push_back(format_double(v));
        for (double v : log.val_f1) row.push_back(format_double(v));
        row.push_back(format_double(log.lr));
        row.push_back(log.is_best ? "true" : "false");
        out += csv_join(row) + "\n";
    }
    return out;
}

const std::vector<std::string> kPredHeader = {
    "id", "strategy", "class", "order", "family", "genus", "species",
    "class_idx", "order_idx", "family_idx", "genus_idx", "species_idx",
    "path_valid", "path_score",
    "p_class", "p_order", "p_family", "p_genus", "p_species"};

std::string predictions_to_csv(const std::vector<std::string>& ids,
                               const std::vector<Prediction>& preds,
                               const TaxonomyTree& tree) {
    std::string out = csv_join(kPredHeader) + "\n";
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Prediction& p = preds[i];
        std::vector<std::string> row;
        row.push_back(ids[i]);
        row.push_back(strategy_name(p.strategy));
        for (Level level : all_levels()) {
            std::size_t l = static_cast<std::size_t>(ordinal(level));
            row.push_back(p.labels[l] >= 0 ? tree.name(level, p.labels[l]) : "");
        }
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            row.push_back(std::to_string(p.labels[l]));
        }
        row.push_back(p.path_valid ? "true" : "false");
        row.push_back(format_double(p.path_score));
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            // Flat species predictions carry taxonomy-derived ancestor labels
            // without model probabilities; leave those fields empty.
            bool scored = p.labels[l] >= 0 &&
                          static_cast<std::size_t>(p.labels[l]) < p.probs[l].size();
            row.push_back(scored
                              ? format_double(p.probs[l][static_cast<std::size_t>(p.labels[l])])
                              : "");
        }
        out += csv_join(row) + "\n";
    }
    return out;
}

struct LoadedPredictions {
    std::vector<std::string> ids;
    std::vector<Prediction> preds;
    std::string strategy_tag;
};

LoadedPredictions load_predictions(const fs::path& path) {
    std::string text = read_file(path);
    std::vector<std::string> lines;
    {
        std::string cur;
        for (char c : text) {
            if (c == '\n') {
                if (!cur.empty() && cur.back() == '\r') cur.pop_back();
                lines.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) {
            if (cur.back() == '\r') cur.pop_back();
            lines.push_back(cur);
        }
    }
    if (lines.empty()) throw DataError("prediction file " + path.string() + " is empty");
    std::vector<std::string> header = csv_split(lines[0]);
    if (header != kPredHeader) {
        throw DataError(path.string() + " line 1: unexpected prediction header");
    }
    LoadedPredictions out;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        std::string where = path.string() + " line " + std::to_string(li + 1);
        std::vector<std::string> f = csv_split(lines[li]);
        if (f.size() != kPredHeader.size()) {
            throw DataError(where + ": expected " + std::to_string(kPredHeader.size()) +
                            " fields, got " + std::to_string(f.size()));
        }
        Prediction p;
        p.strategy = strategy_from_name(f[1]);
        if (out.preds.empty()) {
            out.strategy_tag = f[1];
        } else if (out.strategy_tag != f[1]) {
            throw DataError(where + ": mixed strategies in one prediction file");
        }
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            long idx = 0;
            const std::string& field = f[7 + l];
            if (field == "-1") {
                idx = -1;
            } else {
                idx = parse_long(field, where);
            }
            p.labels[l] = static_cast<int>(idx);
        }
        if (f[12] != "true" && f[12] != "false") {
            throw DataError(where + ": path_valid must be true or false");
        }
        p.path_valid = f[12] == "true";
        p.path_score = parse_double(f[13], where);
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            if (p.labels[l] >= 0 && !f[14 + l].empty()) {
                // Only the selected label's probability survives the round
                // trip; that is all the evaluation metrics need.
                p.probs[l].assign(static_cast<std::size_t>(p.labels[l]) + 1, 0.0);
                p.probs[l].back() = parse_double(f[14 + l], where);
            }
        }
        out.ids.push_back(f[0]);
        out.preds.push_back(std::move(p));
    }
    if (out.preds.empty()) {
        throw DataError("prediction file " + path.string() + " has no rows");
    }
    return out;
}

void add_global_opts(CLI::App& app, GlobalOpts& g) {
    app.add_option("--seed", g.seed, "Root random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads (deterministic mode uses 1)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "Directory for output artifacts")
        ->capture_default_str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
    CLI::App app{"Hierarchy-aware taxonomic classification toolkit", "hiertax"};
    app.require_subcommand(1);
    GlobalOpts g;
    add_global_opts(app, g);
    app.parse_complete_callback([&]() {
        if (g.threads > 1) {
            err << "note: deterministic mode runs single-threaded; ignoring --threads "
                << g.threads << "\n";
        }
    });

    // ---- taxonomy-build ----------------------------------------------------
    struct {
        std::string records, out = "taxonomy.txt";
        std::vector<std::string> merges, markers;
        bool no_default_merges = false, no_default_markers = false;
    } tb;
    {
        CLI::App* sub = app.add_subcommand(
            "taxonomy-build", "Clean raw annotations and build the taxonomy");
        sub->fallthrough();
        sub->add_option("--records", tb.records, "Raw annotation CSV (5 label columns)")
            ->required();
        sub->add_option("--out", tb.out, "Output taxonomy file")->capture_default_str();
        sub->add_option("--merge", tb.merges, "Extra class merge FROM=TO (repeatable)");
        sub->add_option("--marker", tb.markers,
                        "Extra uncertainty substring (repeatable)");
        sub->add_flag("--no-default-merges", tb.no_default_merges,
                      "Drop the built-in class merge list");
        sub->add_flag("--no-default-markers", tb.no_default_markers,
                      "Drop the built-in uncertainty markers");
        sub->callback([&]() {
            CleanConfig config;
            if (tb.no_default_merges) config.class_merges.clear();
            for (const std::string& m : tb.merges) {
                std::size_t eq = m.find('=');
                if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
                    throw DataError("--merge expects FROM=TO, got '" + m + "'");
                }
                config.class_merges.emplace_back(m.substr(0, eq), m.substr(eq + 1));
            }
            if (tb.no_default_markers) config.uncertainty_markers.clear();
            for (const std::string& m : tb.markers) config.uncertainty_markers.push_back(m);

            std::vector<NamePath> records = load_raw_records(tb.records);
            BuildResult result = build_tree(records, config);
            fs::path out_path = resolve_out(g, tb.out);
            result.tree.save_file(out_path.string());

            nlohmann::json report;
            report["merged"] = result.report.merged;
            report["removed_incomplete"] = result.report.removed_incomplete;
            report["removed_uncertain"] = result.report.removed_uncertain;
            report["conflicts_resolved"] = result.report.conflicts_resolved;
            report["retained"] = result.report.retained;
            report["taxonomy_checksum"] = result.tree.checksum();
            fs::path report_path = out_path;
            report_path += ".report.json";
            write_file_atomic(report_path, report.dump(2) + "\n");

            nlohmann::json config_json;
            config_json["records"] = tb.records;
            config_json["merges"] = config.class_merges;
            config_json["markers"] = config.uncertainty_markers;
            write_manifest(g, "taxonomy-build", config_json, {tb.records},
                           {out_path, report_path});
            out << "taxonomy written to " << out_path.string() << " (checksum "
                << result.tree.checksum() << ")\n"
                << "records: " << records.size() << " in, " << result.report.retained
                << " retained (" << result.report.merged << " merged, "
                << result.report.removed_incomplete << " incomplete, "
                << result.report.removed_uncertain << " uncertain, "
                << result.report.conflicts_resolved << " parent conflicts resolved)\n";
        });
    }

    // ---- taxonomy-inspect --------------------------------------------------
    struct {
        std::string taxonomy;
        std::string level;
    } ti;
    {
        CLI::App* sub =
            app.add_subcommand("taxonomy-inspect", "Print taxonomy summary or level listing");
        sub->fallthrough();
        sub->add_option("--taxonomy", ti.taxonomy, "Taxonomy file")->required();
        sub->add_option("--level", ti.level, "List all taxa at this level");
        sub->callback([&]() {
            TaxonomyTree tree = TaxonomyTree::load_file(ti.taxonomy);
            out << "taxonomy checksum " << tree.checksum() << "\n";
            for (Level level : all_levels()) {
                out << "  " << level_name(level) << ": " << tree.count(level) << "\n";
            }
            if (!ti.level.empty()) {
                Level level = level_from_name(ti.level);
                for (int i = 0; i < tree.count(level); ++i) {
                    out << i << "\t" << tree.name(level, i);
                    if (level != Level::CLASS) {
                        Level parent_level = level_from_ordinal(ordinal(level) - 1);
                        out << "\t(parent "
                            << tree.name(parent_level, tree.parent(level, i)) << ")";
                    }
                    out << "\n";
                }
            }
        });
    }

    // ---- data-synth --------------------------------------------------------
    struct {
        std::string level_counts = "3,6,9,12,24";
        std::size_t feature_dim = 32;
        std::string dispersion = "8,4,2,1,0.5";
        double noise = 1.0;
        int samples_min = 40, samples_max = 40;
        std::string out_taxonomy = "taxonomy.txt", out_data = "data.csv";
    } ds;
    {
        CLI::App* sub = app.add_subcommand(
            "data-synth", "Generate a synthetic taxonomy and feature dataset");
        sub->fallthrough();
        sub->add_option("--level-counts", ds.level_counts, "Taxa per level, coarse to fine")
            ->capture_default_str();
        sub->add_option("--feature-dim", ds.feature_dim, "Feature width")
            ->capture_default_str();
        sub->add_option("--dispersion", ds.dispersion,
                        "Per-level center spread, coarse to fine")
            ->capture_default_str();
        sub->add_option("--noise", ds.noise, "Within-species noise")->capture_default_str();
        sub->add_option("--samples-min", ds.samples_min, "Min records per species")
            ->capture_default_str();
        sub->add_option("--samples-max", ds.samples_max, "Max records per species")
            ->capture_default_str();
        sub->add_option("--out-taxonomy", ds.out_taxonomy, "Output taxonomy file")
            ->capture_default_str();
        sub->add_option("--out-data", ds.out_data, "Output dataset CSV")
            ->capture_default_str();
        sub->callback([&]() {
            SyntheticSpec spec;
            std::vector<double> counts = parse_double_list(ds.level_counts, "--level-counts");
            std::vector<double> disp = parse_double_list(ds.dispersion, "--dispersion");
            if (counts.size() != kNumLevels || disp.size() != kNumLevels) {
                throw DataError("--level-counts and --dispersion need 5 entries");
            }
            for (std::size_t i = 0; i < kNumLevels; ++i) {
                spec.level_counts[i] = static_cast<int>(counts[i]);
                spec.dispersion[i] = disp[i];
            }
            spec.feature_dim = ds.feature_dim;
            spec.noise = ds.noise;
            spec.min_samples_per_species = ds.samples_min;
            spec.max_samples_per_species = ds.samples_max;
            spec.seed = g.seed;
            SyntheticResult result = generate_synthetic(spec);
            fs::path tax_path = resolve_out(g, ds.out_taxonomy);
            fs::path data_path = resolve_out(g, ds.out_data);
            result.tree.save_file(tax_path.string());
            save_dataset(result.dataset, result.tree, data_path);

            nlohmann::json config;
            config["level_counts"] = spec.level_counts;
            config["feature_dim"] = spec.feature_dim;
            config["dispersion"] = spec.dispersion;
            config["noise"] = spec.noise;
            config["samples_min"] = spec.min_samples_per_species;
            config["samples_max"] = spec.max_samples_per_species;
            config["seed"] = spec.seed;
            write_manifest(g, "data-synth", config, {}, {tax_path, data_path});
            out << "generated " << result.dataset.size() << " records over "
                << result.tree.count(Level::SPECIES) << " species -> "
                << data_path.string() << "\n";
        });
    }

    // ---- data-filter -------------------------------------------------------
    struct {
        std::string data, taxonomy;
        long threshold = 10;
        std::string levels = "genus,species";
        std::string out_data = "filtered.csv", out_taxonomy = "filtered-taxonomy.txt";
    } df;
    {
        CLI::App* sub = app.add_subcommand(
            "data-filter", "Drop under-sampled taxa and rebuild the taxonomy");
        sub->fallthrough();
        sub->add_option("--data", df.data, "Dataset CSV")->required();
        sub->add_option("--taxonomy", df.taxonomy, "Taxonomy file")->required();
        sub->add_option("--threshold", df.threshold, "Minimum records per taxon")
            ->capture_default_str();
        sub->add_option("--levels", df.levels, "Comma-separated levels to filter")
            ->capture_default_str();
        sub->add_option("--out-data", df.out_data, "Output dataset CSV")
            ->capture_default_str();
        sub->add_option("--out-taxonomy", df.out_taxonomy, "Output taxonomy file")
            ->capture_default_str();
        sub->callback([&]() {
            TaxonomyTree tree = TaxonomyTree::load_file(df.taxonomy);
            Dataset dataset = load_dataset(df.data, tree);
            std::set<Level> levels;
            std::stringstream ss(df.levels);
            std::string item;
            while (std::getline(ss, item, ',')) levels.insert(level_from_name(item));
            FilterOutcome outcome = filter_dataset(dataset, tree, df.threshold, levels);

            fs::path data_path = resolve_out(g, df.out_data);
            fs::path tax_path = resolve_out(g, df.out_taxonomy);
            outcome.tree.save_file(tax_path.string());
            save_dataset(outcome.dataset, outcome.tree, data_path);

            nlohmann::json report;
            report["passes"] = outcome.report.passes;
            report["per_level"] = nlohmann::json::array();
            for (const LevelFilterReport& r : outcome.report.per_level) {
                report["per_level"].push_back({{"level", level_name(r.level)},
                                               {"taxa_removed", r.taxa_removed},
                                               {"records_removed", r.records_removed}});
            }
            report["records_in"] = dataset.size();
            report["records_out"] = outcome.dataset.size();
            fs::path report_path = data_path;
            report_path += ".report.json";
            write_file_atomic(report_path, report.dump(2) + "\n");

            nlohmann::json config;
            config["threshold"] = df.threshold;
            config["levels"] = df.levels;
            write_manifest(g, "data-filter", config, {df.data, df.taxonomy},
                           {data_path, tax_path, report_path});
            out << "kept " << outcome.dataset.size() << " of " << dataset.size()
                << " records in " << outcome.report.passes << " passes\n";
        });
    }

    // ---- data-split --------------------------------------------------------
    struct {
        std::string data, taxonomy;
        double train = 0.70, val = 0.15, test = 0.15;
        std::string stratify = "species";
        std::string out_data = "split.csv";
    } dsp;
    {
        CLI::App* sub = app.add_subcommand(
            "data-split", "Assign stratified train/val/test splits");
        sub->fallthrough();
        sub->add_option("--data", dsp.data, "Dataset CSV")->required();
        sub->add_option("--taxonomy", dsp.taxonomy, "Taxonomy file")->required();
        sub->add_option("--train", dsp.train, "Train fraction")->capture_default_str();
        sub->add_option("--val", dsp.val, "Validation fraction")->capture_default_str();
        sub->add_option("--test", dsp.test, "Test fraction")->capture_default_str();
        sub->add_option("--stratify-level", dsp.stratify, "Stratification level")
            ->capture_default_str();
        sub->add_option("--out", dsp.out_data, "Output dataset CSV")->capture_default_str();
        sub->callback([&]() {
            TaxonomyTree tree = TaxonomyTree::load_file(dsp.taxonomy);
            Dataset dataset = load_dataset(dsp.data, tree);
            SplitSpec spec;
            spec.train = dsp.train;
            spec.val = dsp.val;
            spec.test = dsp.test;
            spec.stratify_level = level_from_name(dsp.stratify);
            spec.seed = g.seed;
            stratified_split(dataset, tree, spec);
            fs::path data_path = resolve_out(g, dsp.out_data);
            save_dataset(dataset, tree, data_path);

            nlohmann::json config;
            config["train"] = spec.train;
            config["val"] = spec.val;
            config["test"] = spec.test;
            config["stratify_level"] = dsp.stratify;
            config["seed"] = spec.seed;
            write_manifest(g, "data-split", config, {dsp.data, dsp.taxonomy}, {data_path});
            out << "split " << dataset.size() << " records: "
                << dataset.indices_of(Split::Train).size() << " train, "
                << dataset.indices_of(Split::Val).size() << " val, "
                << dataset.indices_of(Split::Test).size() << " test\n";
        });
    }

    // ---- train -------------------------------------------------------------
    struct {
        std::string variant, data, taxonomy;
        std::size_t adapter_dim = 0;
        std::string loss_weights;
        TrainConfig tc;
        std::string out_checkpoint = "checkpoint.ckpt", out_epochs = "epochs.csv";
    } tr;
    {
        CLI::App* sub = app.add_subcommand("train", "Train one model variant");
        sub->fallthrough();
        sub->set_config("--config", "", "Read options from an INI/TOML file");
        sub->add_option("--variant", tr.variant,
                        "Model variant (f-c, f-s, h-co, h-cof, h-cofg, h-cofgs)")
            ->required();
        sub->add_option("--data", tr.data, "Dataset CSV with split assignments")
            ->required();
        sub->add_option("--taxonomy", tr.taxonomy, "Taxonomy file")->required();
        sub->add_option("--adapter-dim", tr.adapter_dim,
                        "Width of the shared feature adapter (0 = none)")
            ->capture_default_str();
        sub->add_option("--loss-weights", tr.loss_weights,
                        "Per-level weights, coarse to fine (default per variant)");
        sub->add_option("--lr", tr.tc.lr, "Initial learning rate")->capture_default_str();
        sub->add_option("--weight-decay", tr.tc.weight_decay, "Decoupled weight decay")
            ->capture_default_str();
        sub->add_option("--batch-size", tr.tc.batch_size, "Mini-batch size")
            ->capture_default_str();
        sub->add_option("--max-epochs", tr.tc.max_epochs, "Epoch cap")
            ->capture_default_str();
        sub->add_option("--scheduler-factor", tr.tc.scheduler_factor,
                        "Learning-rate reduction factor")
            ->capture_default_str();
        sub->add_option("--scheduler-patience", tr.tc.scheduler_patience,
                        "Non-improving epochs before reducing the rate")
            ->capture_default_str();
        sub->add_option("--min-lr", tr.tc.min_lr, "Learning-rate floor")
            ->capture_default_str();
        sub->add_option("--early-stop-patience", tr.tc.early_stop_patience,
                        "Non-improving epochs before stopping")
            ->capture_default_str();
        sub->add_option("--focal-alpha", tr.tc.focal.alpha, "Focal loss alpha")
            ->capture_default_str();
        sub->add_option("--focal-gamma", tr.tc.focal.gamma, "Focal loss gamma")
            ->capture_default_str();
        sub->callback([&]() {
            TaxonomyTree tree = TaxonomyTree::load_file(tr.taxonomy);
            Dataset dataset = load_dataset(tr.data, tree);
            Variant variant = variant_from_name(tr.variant);
            tr.tc.seed = g.seed;
            if (auto warning = tr.tc.validate()) err << "warning: " << *warning << "\n";

            LossWeights weights = LossWeights::defaults(variant);
            if (!tr.loss_weights.empty()) {
                weights.values = parse_double_list(tr.loss_weights, "--loss-weights");
            }
            ModelConfig mc;
            mc.variant = variant;
            mc.feature_dim = dataset.feature_dim;
            if (tr.adapter_dim > 0) mc.adapter_dim = tr.adapter_dim;

            nlohmann::json config;
            config["variant"] = tr.variant;
            config["adapter_dim"] = tr.adapter_dim;
            config["loss_weights"] = weights.values;
            config["lr"] = tr.tc.lr;
            config["weight_decay"] = tr.tc.weight_decay;
            config["batch_size"] = tr.tc.batch_size;
            config["max_epochs"] = tr.tc.max_epochs;
            config["scheduler_factor"] = tr.tc.scheduler_factor;
            config["scheduler_patience"] = tr.tc.scheduler_patience;
            config["min_lr"] = tr.tc.min_lr;
            config["early_stop_patience"] = tr.tc.early_stop_patience;
            config["focal_alpha"] = tr.tc.focal.alpha;
            config["focal_gamma"] = tr.tc.focal.gamma;
            config["seed"] = tr.tc.seed;

            Rng init_rng(Rng::derive(g.seed, 0));
            CascadeModel model = CascadeModel::build(mc, tree, init_rng);
            FitResult fit_result = fit(model, dataset, tree, weights, tr.tc);

            fs::path ckpt_path = resolve_out(g, tr.out_checkpoint);
            fs::path epochs_path = resolve_out(g, tr.out_epochs);
            save_checkpoint(model, ckpt_path, config_checksum(config));
            write_file_atomic(epochs_path, epochs_csv(model.levels(), fit_result));
            write_manifest(g, "train", config, {tr.data, tr.taxonomy},
                           {ckpt_path, epochs_path});
            out << "trained " << tr.variant << " (" << model.param_count()
                << " parameters): best deepest-level weighted F1 "
                << format_double(fit_result.best_metric) << " at epoch "
                << fit_result.best_epoch
                << (fit_result.early_stopped ? " (early stop)" : "") << "\n"
                << "checkpoint: " << ckpt_path.string() << "\n";
        });
        sub->add_option("--out-checkpoint", tr.out_checkpoint, "Checkpoint file name")
            ->capture_default_str();
        sub->add_option("--out-epochs", tr.out_epochs, "Epoch log file name")
            ->capture_default_str();
    }

    // ---- train-progressive -------------------------------------------------
    struct {
        std::vector<std::string> stages;
        std::size_t adapter_dim = 0;
        TrainConfig tc;
        std::string out_checkpoint = "checkpoint.ckpt";
        std::string out_report = "chain-report.json";
    } tp;
    {
        CLI::App* sub = app.add_subcommand(
            "train-progressive", "Train a coarse-to-fine chain of variants");
        sub->fallthrough();
        sub->set_config("--config", "", "Read options from an INI/TOML file");
        sub->add_option("--stage", tp.stages,
                        "Stage as VARIANT:DATA_CSV:TAXONOMY (ordered, repeatable)")
            ->required()
            ->expected(-1);
        sub->add_option("--adapter-dim", tp.adapter_dim,
                        "Width of the shared feature adapter (0 = none)")
            ->capture_default_str();
        sub->add_option("--lr", tp.tc.lr, "Initial learning rate")->capture_default_str();
        sub->add_option("--weight-decay", tp.tc.weight_decay, "Decoupled weight decay")
            ->capture_default_str();
        sub->add_option("--batch-size", tp.tc.batch_size, "Mini-batch size")
            ->capture_default_str();
        sub->add_option("--max-epochs", tp.tc.max_epochs, "Epoch cap per stage")
            ->capture_default_str();
        sub->add_option("--scheduler-factor", tp.tc.scheduler_factor,
                        "Learning-rate reduction factor")
            ->capture_default_str();
        sub->add_option("--scheduler-patience", tp.tc.scheduler_patience,
                        "Non-improving epochs before reducing the rate")
            ->capture_default_str();
        sub->add_option("--min-lr", tp.tc.min_lr, "Learning-rate floor")
            ->capture_default_str();
        sub->add_option("--early-stop-patience", tp.tc.early_stop_patience,
                        "Non-improving epochs before stopping")
            ->capture_default_str();
        sub->add_option("--focal-alpha", tp.tc.focal.alpha, "Focal loss alpha")
            ->capture_default_str();
        sub->add_option("--focal-gamma", tp.tc.focal.gamma, "Focal loss gamma")
            ->capture_default_str();
        sub->callback([&]() {
            struct StageFiles {
                Variant variant;
                TaxonomyTree tree;
                Dataset data;
                std::string data_path, tax_path;
            };
            std::vector<StageFiles> stage_files;
            for (const std::string& s : tp.stages) {
                std::size_t c1 = s.find(':');
                std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                         : s.find(':', c1 + 1);
                if (c1 == std::string::npos || c2 == std::string::npos) {
                    throw DataError("--stage expects VARIANT:DATA_CSV:TAXONOMY, got '" +
                                    s + "'");
                }
                StageFiles sf{variant_from_name(s.substr(0, c1)),
                              TaxonomyTree::load_file(s.substr(c2 + 1)),
                              Dataset{},
                              s.substr(c1 + 1, c2 - c1 - 1),
                              s.substr(c2 + 1)};
                sf.data = load_dataset(sf.data_path, sf.tree);
                stage_files.push_back(std::move(sf));
            }
            tp.tc.seed = g.seed;
            if (auto warning = tp.tc.validate()) err << "warning: " << *warning << "\n";

            std::vector<StageSpec> specs;
            for (StageFiles& sf : stage_files) {
                StageSpec spec;
                spec.variant = sf.variant;
                spec.data = &sf.data;
                spec.tree = &sf.tree;
                specs.push_back(spec);
            }
            ModelConfig mc;
            mc.feature_dim = stage_files.front().data.feature_dim;
            if (tp.adapter_dim > 0) mc.adapter_dim = tp.adapter_dim;

            nlohmann::json config;
            config["stages"] = tp.stages;
            config["adapter_dim"] = tp.adapter_dim;
            config["lr"] = tp.tc.lr;
            config["batch_size"] = tp.tc.batch_size;
            config["max_epochs"] = tp.tc.max_epochs;
            config["seed"] = tp.tc.seed;

            ChainResult chain = progressive_chain(specs, mc, tp.tc);

            std::vector<fs::path> outputs;
            nlohmann::json report;
            report["stages"] = nlohmann::json::array();
            for (std::size_t i = 0; i < chain.stages.size(); ++i) {
                const StageResult& sr = chain.stages[i];
                nlohmann::json js;
                js["variant"] = variant_name(sr.variant);
                js["adapter_transferred"] = sr.adapter_transferred;
                js["best_epoch"] = sr.fit.best_epoch;
                js["best_metric"] = sr.fit.best_metric;
                js["transfers"] = nlohmann::json::array();
                for (const HeadTransfer& t : sr.transfers) {
                    js["transfers"].push_back({{"level", level_name(t.level)},
                                               {"transferred", t.transferred},
                                               {"reason", t.reason}});
                    out << "stage " << i << " (" << variant_name(sr.variant) << "): "
                        << level_name(t.level) << " head "
                        << (t.transferred ? "transferred" : "fresh") << " - " << t.reason
                        << "\n";
                }
                report["stages"].push_back(js);

                fs::path stage_epochs = resolve_out(
                    g, "epochs-stage" + std::to_string(i) + "-" +
                           variant_name(sr.variant) + ".csv");
                write_file_atomic(stage_epochs,
                                  epochs_csv(variant_levels(sr.variant), sr.fit));
                outputs.push_back(stage_epochs);
            }
            fs::path ckpt_path = resolve_out(g, tp.out_checkpoint);
            save_checkpoint(chain.final_model, ckpt_path, config_checksum(config));
            outputs.push_back(ckpt_path);
            fs::path report_path = resolve_out(g, tp.out_report);
            write_file_atomic(report_path, report.dump(2) + "\n");
            outputs.push_back(report_path);

            std::vector<fs::path> inputs;
            for (const StageFiles& sf : stage_files) {
                inputs.push_back(sf.data_path);
                inputs.push_back(sf.tax_path);
            }
            write_manifest(g, "train-progressive", config, inputs, outputs);
            for (std::size_t i = 0; i < chain.stages.size(); ++i) {
                out << "stage " << i << " (" << variant_name(chain.stages[i].variant)
                    << "): best F1 " << format_double(chain.stages[i].fit.best_metric)
                    << " at epoch " << chain.stages[i].fit.best_epoch << "\n";
            }
            out << "final checkpoint: " << ckpt_path.string() << "\n";
        });
        sub->add_option("--out-checkpoint", tp.out_checkpoint, "Final checkpoint name")
            ->capture_default_str();
        sub->add_option("--out-report", tp.out_report, "Chain report name")
            ->capture_default_str();
    }

    // ---- infer -------------------------------------------------------------
    struct {
        std::string model, taxonomy, data, strategy = "greedy", split;
        int beam_width = 3;
        bool masked_ancestors = false;
        std::string out_pred = "predictions.csv";
    } in;
    {
        CLI::App* sub = app.add_subcommand("infer", "Decode predictions for a dataset");
        sub->fallthrough();
        sub->add_option("--model", in.model, "Checkpoint file")->required();
        sub->add_option("--taxonomy", in.taxonomy, "Taxonomy file")->required();
        sub->add_option("--data", in.data, "Dataset CSV")->required();
        sub->add_option("--strategy", in.strategy,
                        "greedy | levelwise | beam | flat")
            ->capture_default_str();
        sub->add_option("--beam-width", in.beam_width, "Beam width for --strategy beam")
            ->capture_default_str();
        sub->add_flag("--masked-ancestors", in.masked_ancestors,
                      "Level-wise only: feed masked ancestor distributions");
        sub->add_option("--split", in.split, "Restrict to one split (train/val/test)");
        sub->add_option("--out", in.out_pred, "Prediction CSV name")->capture_default_str();
        sub->callback([&]() {
            TaxonomyTree tree = TaxonomyTree::load_file(in.taxonomy);
            LoadedCheckpoint ckpt = load_checkpoint(in.model);
            check_model_tree(ckpt.model, tree);
            Dataset dataset = load_dataset(in.data, tree);
            std::vector<std::size_t> indices;
            if (in.split.empty()) {
                indices.resize(dataset.size());
                for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
            } else {
                indices = dataset.indices_of(split_from_name(in.split));
                if (indices.empty()) {
                    throw DataError("no records in split '" + in.split + "'");
                }
            }
            Matrix features = dataset.feature_matrix(indices);
            Strategy strategy = strategy_from_name(in.strategy);
            std::vector<Prediction> preds;
            switch (strategy) {
                case Strategy::Greedy:
                    preds = decode_greedy(ckpt.model, tree, features);
                    break;
                case Strategy::LevelWise:
                    preds = decode_levelwise(ckpt.model, tree, features,
                                             in.masked_ancestors);
                    break;
                case Strategy::Beam:
                    preds = decode_beam(ckpt.model, tree, features, in.beam_width);
                    break;
                case Strategy::Flat:
                    preds = flat_lookup(ckpt.model, tree, features);
                    break;
            }
            std::vector<std::string> ids;
            for (std::size_t i : indices) ids.push_back(dataset.records[i].id);
            fs::path pred_path = resolve_out(g, in.out_pred);
            write_file_atomic(pred_path, predictions_to_csv(ids, preds, tree));

            nlohmann::json config;
            config["strategy"] = in.strategy;
            config["beam_width"] = in.beam_width;
            config["masked_ancestors"] = in.masked_ancestors;
            config["split"] = in.split;
            write_manifest(g, "infer", config, {in.model, in.taxonomy, in.data},
                           {pred_path});
            out << "wrote " << preds.size() << " predictions (" << in.strategy
                << ") to " << pred_path.string() << "\n";
        });
    }

    // ---- eval --------------------------------------------------------------
    struct {
        std::string pred, truth, taxonomy, baseline, split;
        std::string model_tag = "model";
        std::string out_report = "report.json";
    } ev;
    {
        CLI::App* sub =
            app.add_subcommand("eval", "Score predictions against ground truth");
        sub->fallthrough();
        sub->add_option("--pred", ev.pred, "Prediction CSV")->required();
        sub->add_option("--truth", ev.truth, "Dataset CSV with true labels")->required();
        sub->add_option("--taxonomy", ev.taxonomy, "Taxonomy file")->required();
        sub->add_option("--baseline", ev.baseline,
                        "Metrics report JSON supplying the baseline error distance");
        sub->add_option("--split", ev.split, "Restrict truth records to one split");
        sub->add_option("--model-tag", ev.model_tag, "Model tag for the report")
            ->capture_default_str();
        sub->add_option("--out", ev.out_report, "Report JSON name")->capture_default_str();
        sub->callback([&]() {
            TaxonomyTree tree = TaxonomyTree::load_file(ev.taxonomy);
            Dataset truth = load_dataset(ev.truth, tree);
            LoadedPredictions lp = load_predictions(ev.pred);

            std::unordered_map<std::string, std::size_t> by_id;
            for (std::size_t i = 0; i < lp.ids.size(); ++i) by_id[lp.ids[i]] = i;
            std::vector<Prediction> preds;
            std::vector<LabelPath> truths;
            for (const Record& rec : truth.records) {
                if (!ev.split.empty() && rec.split != split_from_name(ev.split)) continue;
                auto it = by_id.find(rec.id);
                if (it == by_id.end()) {
                    throw DataError("no prediction for record id '" + rec.id + "'");
                }
                preds.push_back(lp.preds[it->second]);
                truths.push_back(rec.labels);
            }
            if (preds.empty()) {
                throw DataError("no truth records matched the requested split");
            }

            MetricsReport report;
            report.model_tag = ev.model_tag;
            report.strategy_tag = lp.strategy_tag;
            report.split_tag = ev.split.empty() ? "all" : ev.split;
            report.taxonomy_checksum = tree.checksum();
            std::array<int, kNumLevels> counts{};
            for (Level level : all_levels()) {
                counts[static_cast<std::size_t>(ordinal(level))] = tree.count(level);
            }
            report.per_level = per_level_metrics(preds, truths, counts);

            bool species_everywhere = true;
            for (const Prediction& p : preds) {
                species_everywhere &=
                    p.labels[static_cast<std::size_t>(ordinal(Level::SPECIES))] >= 0;
            }
            if (species_everywhere) {
                std::optional<DistanceStats> baseline;
                if (!ev.baseline.empty()) {
                    MetricsReport base = metrics_report_from_json(read_file(ev.baseline));
                    if (base.taxonomy_checksum != tree.checksum()) {
                        throw DataError("baseline report uses a different taxonomy");
                    }
                    baseline = base.distance;
                }
                report.distance = distance_stats(tree, preds, truths,
                                                 baseline ? &*baseline : nullptr);
            }
            // Propagation over the deepest level every prediction defines.
            std::optional<Level> deepest;
            for (Level level : all_levels()) {
                bool defined = true;
                for (const Prediction& p : preds) {
                    defined &= p.labels[static_cast<std::size_t>(ordinal(level))] >= 0;
                }
                if (defined) deepest = level;
            }
            if (deepest && *deepest != Level::CLASS) {
                report.propagation = error_propagation(preds, truths, *deepest);
            }

            fs::path report_path = resolve_out(g, ev.out_report);
            write_file_atomic(report_path, metrics_report_to_json(report));
            std::vector<fs::path> inputs = {ev.pred, ev.truth, ev.taxonomy};
            if (!ev.baseline.empty()) inputs.push_back(ev.baseline);
            nlohmann::json config;
            config["model_tag"] = ev.model_tag;
            config["split"] = report.split_tag;
            write_manifest(g, "eval", config, inputs, {report_path});

            for (const PerLevelMetrics& m : report.per_level) {
                out << level_name(m.level) << ": accuracy "
                    << format_double(m.accuracy) << ", weighted F1 "
                    << format_double(m.weighted_f1) << "\n";
            }
            if (report.distance) {
                out << "mean taxonomic distance " << format_double(report.distance->mean_all);
                if (report.distance->mean_errors) {
                    out << " (errors only " << format_double(*report.distance->mean_errors)
                        << ")";
                }
                if (report.distance->severity_reduction) {
                    out << ", severity reduction "
                        << format_double(*report.distance->severity_reduction * 100.0)
                        << "%";
                }
                out << "\n";
            }
            out << "report: " << report_path.string() << "\n";
        });
    }

    // ---- compare -----------------------------------------------------------
    struct {
        std::vector<std::string> reports;
        std::string out_table = "comparison.csv";
    } cp;
    {
        CLI::App* sub =
            app.add_subcommand("compare", "Side-by-side comparison of metric reports");
        sub->fallthrough();
        sub->add_option("--report", cp.reports, "Metrics report JSON (repeatable)")
            ->required()
            ->expected(-1);
        sub->add_option("--out", cp.out_table, "Comparison table CSV name")
            ->capture_default_str();
        sub->callback([&]() {
            std::vector<MetricsReport> reports;
            for (const std::string& p : cp.reports) {
                reports.push_back(metrics_report_from_json(read_file(p)));
            }
            Comparison cmp = compare_models(reports);
            fs::path table_path = resolve_out(g, cp.out_table);
            write_file_atomic(table_path, cmp.table_csv);
            std::vector<fs::path> inputs(cp.reports.begin(), cp.reports.end());
            nlohmann::json config;
            config["reports"] = cp.reports;
            write_manifest(g, "compare", config, inputs, {table_path});
            out << cmp.summary;
            out << "table: " << table_path.string() << "\n";
        });
    }

    // ---- parse and dispatch ------------------------------------------------
    std::vector<std::string> argv_store;
    argv_store.push_back("hiertax");
    for (const std::string& a : args) argv_store.push_back(a);
    std::vector<const char*> argv;
    for (const std::string& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    } catch (const DivergenceError& e) {
        err << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace hiertax
