#include "hiertax/level.hpp"

#include <algorithm>

namespace hiertax {

Level level_from_name(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (Level level : all_levels()) {
        if (level_name(level) == lower) return level;
    }
    throw ContractError("unknown level name: '" + name + "'");
}

}  // namespace hiertax
