#pragma once

// Internal JSON helpers shared by the serialization code in forest.cpp,
// context_trainer.cpp and compiler.cpp.

#include <nlohmann/json.hpp>

#include "flowforest/forest.hpp"

namespace flowforest {

nlohmann::json forest_to_json_obj(const RandomForest& forest);
RandomForest forest_from_json_obj(const nlohmann::json& j);

} // namespace flowforest
