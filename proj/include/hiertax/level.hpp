#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "hiertax/error.hpp"

namespace hiertax {

// The five taxonomic ranks, coarse to fine. Ordinals are contiguous and the
// ordering CLASS < ORDER < FAMILY < GENUS < SPECIES is total.
enum class Level : int {
    CLASS = 0,
    ORDER = 1,
    FAMILY = 2,
    GENUS = 3,
    SPECIES = 4,
};

inline constexpr std::size_t kNumLevels = 5;

constexpr int ordinal(Level level) { return static_cast<int>(level); }

constexpr Level level_from_ordinal(int ord) {
    if (ord < 0 || ord >= static_cast<int>(kNumLevels)) {
        throw ContractError("level ordinal out of range: " + std::to_string(ord));
    }
    return static_cast<Level>(ord);
}

inline const std::string& level_name(Level level) {
    static const std::array<std::string, kNumLevels> names = {
        "class", "order", "family", "genus", "species"};
    return names[static_cast<std::size_t>(ordinal(level))];
}

Level level_from_name(const std::string& name);

inline constexpr std::array<Level, kNumLevels> all_levels() {
    return {Level::CLASS, Level::ORDER, Level::FAMILY, Level::GENUS, Level::SPECIES};
}

}  // namespace hiertax
