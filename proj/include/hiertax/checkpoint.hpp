#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hiertax/model.hpp"

namespace hiertax {

// Checkpoints carry the variant, dimensions, level counts, taxonomy
// checksum, run-config checksum, and every parameter buffer keyed by
// "<module>.<layer>.<name>". Serialized as CBOR with raw little-endian
// doubles, so equal parameters give byte-identical files.
std::vector<std::uint8_t> checkpoint_to_bytes(const CascadeModel& model,
                                              std::uint64_t config_checksum = 0);

struct LoadedCheckpoint {
    CascadeModel model;
    std::uint64_t config_checksum = 0;
};

// Fails loudly on unknown format, version drift, or any shape mismatch
// between the stored buffers and the dimensions the metadata implies.
LoadedCheckpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const CascadeModel& model, const std::filesystem::path& path,
                     std::uint64_t config_checksum = 0);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Refuses a model built against a different taxonomy than `tree`.
void check_model_tree(const CascadeModel& model, const TaxonomyTree& tree);

}  // namespace hiertax
