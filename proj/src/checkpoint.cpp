#include "hiertax/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "hiertax/error.hpp"
#include "hiertax/io_util.hpp"

#include "json.hpp"

namespace hiertax {

namespace {

constexpr const char* kFormat = "hiertax-checkpoint";
constexpr int kVersion = 1;

nlohmann::json::binary_t doubles_to_binary(const std::vector<double>& values) {
    std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
    std::memcpy(bytes.data(), values.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::reverse(bytes.begin() + static_cast<long>(i * 8),
                         bytes.begin() + static_cast<long>(i * 8 + 8));
        }
    }
    return nlohmann::json::binary_t(std::move(bytes));
}

std::vector<double> binary_to_doubles(const nlohmann::json& j, std::size_t expected,
                                      const std::string& name) {
    if (!j.is_binary()) {
        throw DataError("checkpoint buffer '" + name + "' is not binary data");
    }
    const auto& bytes = j.get_binary();
    if (bytes.size() != expected * sizeof(double)) {
        throw DataError("checkpoint buffer '" + name + "' holds " +
                        std::to_string(bytes.size() / sizeof(double)) +
                        " values, expected " + std::to_string(expected));
    }
    std::vector<double> values(expected);
    if constexpr (std::endian::native == std::endian::big) {
        std::vector<std::uint8_t> swapped(bytes.begin(), bytes.end());
        for (std::size_t i = 0; i < expected; ++i) {
            std::reverse(swapped.begin() + static_cast<long>(i * 8),
                         swapped.begin() + static_cast<long>(i * 8 + 8));
        }
        std::memcpy(values.data(), swapped.data(), swapped.size());
    } else {
        std::memcpy(values.data(), bytes.data(), bytes.size());
    }
    return values;
}

void store_layer(nlohmann::json& params, const std::string& prefix,
                 const LinearParams& layer) {
    params[prefix + ".weight"] = {
        {"shape", {layer.out_dim(), layer.in_dim()}},
        {"raw", doubles_to_binary(layer.weight.data)},
    };
    params[prefix + ".bias"] = {
        {"shape", {layer.out_dim()}},
        {"raw", doubles_to_binary(layer.bias)},
    };
}

void load_layer(const nlohmann::json& params, const std::string& prefix,
                LinearParams& layer) {
    for (const char* part : {".weight", ".bias"}) {
        if (!params.contains(prefix + part)) {
            throw DataError("checkpoint is missing buffer '" + prefix + part + "'");
        }
    }
    const nlohmann::json& w = params.at(prefix + ".weight");
    const auto& wshape = w.at("shape");
    if (wshape.size() != 2 || wshape.at(0).get<std::size_t>() != layer.out_dim() ||
        wshape.at(1).get<std::size_t>() != layer.in_dim()) {
        throw DataError("checkpoint buffer '" + prefix + ".weight' has shape " +
                        w.at("shape").dump() + ", model expects [" +
                        std::to_string(layer.out_dim()) + "," +
                        std::to_string(layer.in_dim()) + "]");
    }
    layer.weight.data = binary_to_doubles(w.at("raw"), layer.weight.data.size(),
                                          prefix + ".weight");
    const nlohmann::json& b = params.at(prefix + ".bias");
    if (b.at("shape").size() != 1 ||
        b.at("shape").at(0).get<std::size_t>() != layer.out_dim()) {
        throw DataError("checkpoint buffer '" + prefix + ".bias' has shape " +
                        b.at("shape").dump() + ", model expects [" +
                        std::to_string(layer.out_dim()) + "]");
    }
    layer.bias = binary_to_doubles(b.at("raw"), layer.bias.size(), prefix + ".bias");
}

}  // namespace

class CheckpointCodec {
public:
    static std::vector<std::uint8_t> encode(const CascadeModel& model,
                                            std::uint64_t config_checksum) {
        nlohmann::json j;
        j["format"] = kFormat;
        j["version"] = kVersion;
        j["variant"] = variant_name(model.variant());
        j["feature_dim"] = model.feature_dim();
        if (model.config().adapter_dim) {
            j["adapter_dim"] = *model.config().adapter_dim;
        }
        j["level_counts"] = model.level_counts();
        j["taxonomy_checksum"] = model.taxonomy_checksum();
        j["config_checksum"] = config_checksum;
        nlohmann::json params = nlohmann::json::object();
        if (model.has_adapter()) store_layer(params, "adapter", model.adapter());
        for (std::size_t i = 0; i < model.levels().size(); ++i) {
            const Head& head = model.head_at(i);
            std::string head_prefix = "head." + level_name(model.levels()[i]);
            for (std::size_t li = 0; li < head.layers().size(); ++li) {
                store_layer(params, head_prefix + ".linear" + std::to_string(li),
                            head.layers()[li]);
            }
        }
        j["params"] = std::move(params);
        return nlohmann::json::to_cbor(j);
    }

    static LoadedCheckpoint decode(const std::vector<std::uint8_t>& bytes) {
        nlohmann::json j;
        try {
            j = nlohmann::json::from_cbor(bytes);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("checkpoint parse error: ") + e.what());
        }
        try {
            if (j.at("format").get<std::string>() != kFormat) {
                throw DataError("not a checkpoint file (format tag '" +
                                j.at("format").get<std::string>() + "')");
            }
            if (j.at("version").get<int>() != kVersion) {
                throw DataError("unsupported checkpoint version " +
                                std::to_string(j.at("version").get<int>()));
            }
            CascadeModel model;
            model.config_.variant = variant_from_name(j.at("variant").get<std::string>());
            model.config_.feature_dim = j.at("feature_dim").get<std::size_t>();
            if (j.contains("adapter_dim")) {
                model.config_.adapter_dim = j["adapter_dim"].get<std::size_t>();
            }
            model.levels_ = variant_levels(model.config_.variant);
            const auto& counts = j.at("level_counts");
            if (counts.size() != kNumLevels) {
                throw DataError("checkpoint level_counts must have 5 entries");
            }
            for (std::size_t l = 0; l < kNumLevels; ++l) {
                model.level_counts_[l] = counts.at(l).get<int>();
                if (model.level_counts_[l] < 1) {
                    throw DataError("checkpoint level_counts must be positive");
                }
            }
            model.taxonomy_checksum_ = j.at("taxonomy_checksum").get<std::uint64_t>();

            const nlohmann::json& params = j.at("params");
            if (model.config_.adapter_dim) {
                model.adapter_.emplace(*model.config_.adapter_dim,
                                       model.config_.feature_dim);
                load_layer(params, "adapter", *model.adapter_);
            }
            bool flat = variant_is_flat(model.config_.variant);
            std::size_t backbone = model.backbone_dim();
            for (Level level : model.levels_) {
                std::size_t input = backbone;
                if (!flat) {
                    for (int k = 0; k < ordinal(level); ++k) {
                        input += static_cast<std::size_t>(
                            model.level_counts_[static_cast<std::size_t>(k)]);
                    }
                }
                std::size_t n = static_cast<std::size_t>(
                    model.level_counts_[static_cast<std::size_t>(ordinal(level))]);
                model.heads_.emplace_back(HeadSpec::make(level, flat, input, n));
                std::string head_prefix = "head." + level_name(level);
                Head& head = model.heads_.back();
                for (std::size_t li = 0; li < head.layers().size(); ++li) {
                    load_layer(params, head_prefix + ".linear" + std::to_string(li),
                               head.layers()[li]);
                }
            }
            LoadedCheckpoint out{std::move(model),
                                 j.at("config_checksum").get<std::uint64_t>()};
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("checkpoint field error: ") + e.what());
        }
    }
};

std::vector<std::uint8_t> checkpoint_to_bytes(const CascadeModel& model,
                                              std::uint64_t config_checksum) {
    return CheckpointCodec::encode(model, config_checksum);
}

LoadedCheckpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
    return CheckpointCodec::decode(bytes);
}

void save_checkpoint(const CascadeModel& model, const std::filesystem::path& path,
                     std::uint64_t config_checksum) {
    std::vector<std::uint8_t> bytes = checkpoint_to_bytes(model, config_checksum);
    write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::string content = read_file(path);
    return checkpoint_from_bytes(
        std::vector<std::uint8_t>(content.begin(), content.end()));
}

void check_model_tree(const CascadeModel& model, const TaxonomyTree& tree) {
    if (model.taxonomy_checksum() != tree.checksum()) {
        throw DataError("model was built against taxonomy checksum " +
                        std::to_string(model.taxonomy_checksum()) +
                        ", but the given taxonomy has checksum " +
                        std::to_string(tree.checksum()));
    }
    for (Level level : all_levels()) {
        if (model.level_counts()[static_cast<std::size_t>(ordinal(level))] !=
            tree.count(level)) {
            throw DataError("model level counts do not match the taxonomy at " +
                            level_name(level));
        }
    }
}

}  // namespace hiertax
