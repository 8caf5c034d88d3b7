#include "hiertax/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "hiertax/error.hpp"
#include "hiertax/io_util.hpp"

#include "json.hpp"

namespace hiertax {

long DistanceStats::total() const {
    long n = 0;
    for (long c : histogram) n += c;
    return n;
}

long DistanceStats::errors() const { return total() - histogram[0]; }

double weighted_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                   int n_classes) {
    if (predicted.size() != truth.size()) {
        throw ContractError("weighted_f1: prediction/truth lengths differ");
    }
    if (predicted.empty()) {
        throw ContractError("weighted_f1: empty input");
    }
    std::vector<long> tp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long> fp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long> fn(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        int p = predicted[i];
        int t = truth[i];
        if (p < 0 || p >= n_classes || t < 0 || t >= n_classes) {
            throw ContractError("weighted_f1: label out of range");
        }
        if (p == t) {
            ++tp[static_cast<std::size_t>(t)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(t)];
        }
    }
    double weighted = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        std::size_t ci = static_cast<std::size_t>(c);
        long support = tp[ci] + fn[ci];
        if (support == 0) continue;  // zero weight
        double precision = tp[ci] + fp[ci] > 0
                               ? static_cast<double>(tp[ci]) / static_cast<double>(tp[ci] + fp[ci])
                               : 0.0;
        double recall = static_cast<double>(tp[ci]) / static_cast<double>(support);
        double f1 = precision + recall > 0.0
                        ? 2.0 * precision * recall / (precision + recall)
                        : 0.0;
        weighted += static_cast<double>(support) * f1;
    }
    return weighted / static_cast<double>(predicted.size());
}

std::vector<PerLevelMetrics> per_level_metrics(const std::vector<Prediction>& predictions,
                                               const std::vector<LabelPath>& truths,
                                               const std::array<int, kNumLevels>& level_counts) {
    if (predictions.size() != truths.size()) {
        throw ContractError("per_level_metrics: prediction/truth lengths differ");
    }
    if (predictions.empty()) {
        throw ContractError("per_level_metrics: empty input");
    }
    std::vector<PerLevelMetrics> out;
    for (Level level : all_levels()) {
        std::size_t l = static_cast<std::size_t>(ordinal(level));
        std::vector<int> pred, truth;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            if (predictions[i].labels[l] < 0) continue;  // level not predicted
            pred.push_back(predictions[i].labels[l]);
            truth.push_back(truths[i][l]);
        }
        if (pred.empty()) continue;
        long correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == truth[i]) ++correct;
        }
        PerLevelMetrics m;
        m.level = level;
        m.support = static_cast<long>(pred.size());
        m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
        m.weighted_f1 = weighted_f1(pred, truth, level_counts[l]);
        out.push_back(m);
    }
    return out;
}

DistanceStats distance_stats(const TaxonomyTree& tree,
                             const std::vector<Prediction>& predictions,
                             const std::vector<LabelPath>& truths,
                             const DistanceStats* baseline) {
    if (predictions.size() != truths.size()) {
        throw ContractError("distance_stats: prediction/truth lengths differ");
    }
    std::size_t species = static_cast<std::size_t>(ordinal(Level::SPECIES));
    std::array<long, 6> histogram{};
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        int p = predictions[i].labels[species];
        if (p < 0) {
            throw ContractError("distance_stats: prediction " + std::to_string(i) +
                                " has no species-level label");
        }
        int d = tree.taxonomic_distance(p, truths[i][species]);
        ++histogram[static_cast<std::size_t>(d)];
    }
    return distance_stats_from_histogram(histogram, baseline);
}

DistanceStats distance_stats_from_histogram(const std::array<long, 6>& histogram,
                                            const DistanceStats* baseline) {
    DistanceStats stats;
    stats.histogram = histogram;
    long total = stats.total();
    if (total <= 0) {
        throw ContractError("distance_stats: empty histogram");
    }
    double weighted = 0.0;
    for (int d = 0; d <= 5; ++d) {
        weighted += static_cast<double>(d) * static_cast<double>(histogram[static_cast<std::size_t>(d)]);
    }
    stats.mean_all = weighted / static_cast<double>(total);
    long errors = stats.errors();
    if (errors > 0) {
        double mean_err = weighted / static_cast<double>(errors);
        stats.mean_errors = mean_err;
        double ss = 0.0;
        for (int d = 1; d <= 5; ++d) {
            double delta = static_cast<double>(d) - mean_err;
            ss += static_cast<double>(histogram[static_cast<std::size_t>(d)]) * delta * delta;
        }
        stats.std_errors = std::sqrt(ss / static_cast<double>(errors));
        if (errors >= 2) {
            stats.std_errors_sample = std::sqrt(ss / static_cast<double>(errors - 1));
        }
    }
    if (baseline != nullptr && baseline->mean_errors && stats.mean_errors) {
        stats.severity_reduction = 1.0 - *stats.mean_errors / *baseline->mean_errors;
    }
    return stats;
}

std::optional<ErrorPropagationTable> error_propagation(
    const std::vector<Prediction>& predictions, const std::vector<LabelPath>& truths,
    Level deepest) {
    if (predictions.size() != truths.size()) {
        throw ContractError("error_propagation: prediction/truth lengths differ");
    }
    std::size_t deep = static_cast<std::size_t>(ordinal(deepest));
    std::vector<std::size_t> error_samples;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].labels[deep] < 0) {
            throw ContractError("error_propagation: prediction " + std::to_string(i) +
                                " has no " + level_name(deepest) + "-level label");
        }
        if (predictions[i].labels[deep] != truths[i][deep]) error_samples.push_back(i);
    }
    if (error_samples.empty()) return std::nullopt;

    ErrorPropagationTable table;
    table.deepest_errors = static_cast<long>(error_samples.size());
    for (int l = 0; l < ordinal(deepest); ++l) {
        std::size_t li = static_cast<std::size_t>(l);
        long correct = 0;
        for (std::size_t i : error_samples) {
            if (predictions[i].labels[li] < 0) {
                throw ContractError("error_propagation: prediction " + std::to_string(i) +
                                    " lacks an ancestor label at " +
                                    level_name(level_from_ordinal(l)));
            }
            if (predictions[i].labels[li] == truths[i][li]) ++correct;
        }
        ErrorPropagationRow row;
        row.level = level_from_ordinal(l);
        row.correct_rate =
            static_cast<double>(correct) / static_cast<double>(error_samples.size());
        table.rows.push_back(row);
    }
    return table;
}

namespace {

std::string report_tag(const MetricsReport& r) {
    return r.model_tag + "/" + r.strategy_tag;
}

}  // namespace

Comparison compare_models(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) {
        throw ContractError("compare_models: no reports");
    }
    for (const MetricsReport& r : reports) {
        if (r.taxonomy_checksum != reports[0].taxonomy_checksum) {
            throw DataError("compare_models: report '" + report_tag(r) +
                            "' was evaluated against a different taxonomy "
                            "(checksum mismatch); comparison refused");
        }
        if (r.split_tag != reports[0].split_tag) {
            throw DataError("compare_models: report '" + report_tag(r) +
                            "' covers split '" + r.split_tag + "', expected '" +
                            reports[0].split_tag + "'");
        }
    }

    // Metric rows in fixed order; one column per report. Missing metrics
    // leave empty fields.
    struct Row {
        std::string name;
        std::vector<std::optional<double>> values;
    };
    std::vector<Row> rows;
    auto add_row = [&](const std::string& name) -> Row& {
        rows.push_back(Row{name, std::vector<std::optional<double>>(reports.size())});
        return rows.back();
    };

    std::set<int> level_set;
    for (const MetricsReport& r : reports) {
        for (const PerLevelMetrics& m : r.per_level) level_set.insert(ordinal(m.level));
    }
    for (int l : level_set) {
        Level level = level_from_ordinal(l);
        Row& acc = add_row(level_name(level) + "_accuracy");
        Row& f1 = add_row(level_name(level) + "_weighted_f1");
        for (std::size_t i = 0; i < reports.size(); ++i) {
            for (const PerLevelMetrics& m : reports[i].per_level) {
                if (m.level == level) {
                    acc.values[i] = m.accuracy;
                    f1.values[i] = m.weighted_f1;
                }
            }
        }
    }
    bool any_distance = false;
    for (const MetricsReport& r : reports) any_distance |= r.distance.has_value();
    if (any_distance) {
        Row& mean_all = add_row("distance_mean_all");
        Row& mean_err = add_row("distance_mean_errors");
        Row& std_err = add_row("distance_std_errors");
        for (std::size_t i = 0; i < reports.size(); ++i) {
            if (!reports[i].distance) continue;
            const DistanceStats& d = *reports[i].distance;
            mean_all.values[i] = d.mean_all;
            mean_err.values[i] = d.mean_errors;
            std_err.values[i] = d.std_errors;
        }
    }
    std::set<int> prop_levels;
    for (const MetricsReport& r : reports) {
        if (!r.propagation) continue;
        for (const ErrorPropagationRow& row : r.propagation->rows) {
            prop_levels.insert(ordinal(row.level));
        }
    }
    for (int l : prop_levels) {
        Level level = level_from_ordinal(l);
        Row& row = add_row(level_name(level) + "_correct_given_deepest_error");
        for (std::size_t i = 0; i < reports.size(); ++i) {
            if (!reports[i].propagation) continue;
            for (const ErrorPropagationRow& pr : reports[i].propagation->rows) {
                if (pr.level == level) row.values[i] = pr.correct_rate;
            }
        }
    }

    Comparison out;
    {
        std::vector<std::string> header = {"metric"};
        for (const MetricsReport& r : reports) header.push_back(report_tag(r));
        out.table_csv = csv_join(header) + "\n";
        for (const Row& row : rows) {
            std::vector<std::string> fields = {row.name};
            for (const auto& v : row.values) {
                fields.push_back(v ? format_double(*v) : "");
            }
            out.table_csv += csv_join(fields) + "\n";
        }
    }
    {
        std::ostringstream s;
        s << "comparison on split '" << reports[0].split_tag << "' ("
          << reports.size() << " reports, reference " << report_tag(reports[0])
          << ")\n";
        for (const Row& row : rows) {
            s << "  " << row.name << ":";
            for (std::size_t i = 0; i < reports.size(); ++i) {
                s << " " << report_tag(reports[i]) << "=";
                if (row.values[i]) {
                    s << format_double(*row.values[i]);
                    if (i > 0 && row.values[0]) {
                        double delta = *row.values[i] - *row.values[0];
                        s << " (" << (delta >= 0 ? "+" : "") << format_double(delta) << ")";
                    }
                } else {
                    s << "n/a";
                }
            }
            s << "\n";
        }
        out.summary = s.str();
    }
    return out;
}

namespace {

nlohmann::json distance_to_json(const DistanceStats& d) {
    nlohmann::json j;
    j["histogram"] = d.histogram;
    j["mean_all"] = d.mean_all;
    if (d.mean_errors) j["mean_errors"] = *d.mean_errors;
    if (d.std_errors) j["std_errors"] = *d.std_errors;
    if (d.std_errors_sample) j["std_errors_sample"] = *d.std_errors_sample;
    if (d.severity_reduction) j["severity_reduction"] = *d.severity_reduction;
    return j;
}

DistanceStats distance_from_json(const nlohmann::json& j) {
    DistanceStats d;
    auto hist = j.at("histogram");
    for (std::size_t i = 0; i < 6; ++i) d.histogram[i] = hist.at(i).get<long>();
    d.mean_all = j.at("mean_all").get<double>();
    if (j.contains("mean_errors")) d.mean_errors = j["mean_errors"].get<double>();
    if (j.contains("std_errors")) d.std_errors = j["std_errors"].get<double>();
    if (j.contains("std_errors_sample")) {
        d.std_errors_sample = j["std_errors_sample"].get<double>();
    }
    if (j.contains("severity_reduction")) {
        d.severity_reduction = j["severity_reduction"].get<double>();
    }
    return d;
}

}  // namespace

std::string metrics_report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["model"] = report.model_tag;
    j["strategy"] = report.strategy_tag;
    j["split"] = report.split_tag;
    j["taxonomy_checksum"] = report.taxonomy_checksum;
    j["std_convention"] = report.std_convention;
    j["per_level"] = nlohmann::json::array();
    for (const PerLevelMetrics& m : report.per_level) {
        j["per_level"].push_back({{"level", level_name(m.level)},
                                  {"accuracy", m.accuracy},
                                  {"weighted_f1", m.weighted_f1},
                                  {"support", m.support}});
    }
    if (report.distance) j["distance"] = distance_to_json(*report.distance);
    if (report.propagation) {
        nlohmann::json p;
        p["deepest_errors"] = report.propagation->deepest_errors;
        p["rows"] = nlohmann::json::array();
        for (const ErrorPropagationRow& row : report.propagation->rows) {
            p["rows"].push_back(
                {{"level", level_name(row.level)}, {"correct_rate", row.correct_rate}});
        }
        j["propagation"] = p;
    }
    return j.dump(2) + "\n";
}

MetricsReport metrics_report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("metrics report parse error: ") + e.what());
    }
    try {
        MetricsReport report;
        report.model_tag = j.at("model").get<std::string>();
        report.strategy_tag = j.at("strategy").get<std::string>();
        report.split_tag = j.at("split").get<std::string>();
        report.taxonomy_checksum = j.at("taxonomy_checksum").get<std::uint64_t>();
        report.std_convention = j.at("std_convention").get<std::string>();
        for (const auto& m : j.at("per_level")) {
            PerLevelMetrics plm;
            plm.level = level_from_name(m.at("level").get<std::string>());
            plm.accuracy = m.at("accuracy").get<double>();
            plm.weighted_f1 = m.at("weighted_f1").get<double>();
            plm.support = m.at("support").get<long>();
            report.per_level.push_back(plm);
        }
        if (j.contains("distance")) report.distance = distance_from_json(j["distance"]);
        if (j.contains("propagation")) {
            ErrorPropagationTable table;
            table.deepest_errors = j["propagation"].at("deepest_errors").get<long>();
            for (const auto& row : j["propagation"].at("rows")) {
                ErrorPropagationRow pr;
                pr.level = level_from_name(row.at("level").get<std::string>());
                pr.correct_rate = row.at("correct_rate").get<double>();
                table.rows.push_back(pr);
            }
            report.propagation = table;
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metrics report field error: ") + e.what());
    }
}

}  // namespace hiertax
