#pragma once

#include <string>

#include "json.hpp"
#include "milsurv/model.hpp"

namespace milsurv::model {

inline constexpr int kCheckpointVersion = 1;

// Architecture, normalization statistics and every parameter tensor
// (column-major values). Parameters must be finite.
nlohmann::json checkpoint_to_json(const RiskModel& model);
// Throws FormatError on a missing field, unknown version or shape mismatch.
RiskModel checkpoint_from_json(const nlohmann::json& j);

std::string encode_checkpoint(const RiskModel& model);
RiskModel decode_checkpoint(const std::string& text);

void save_checkpoint(const std::string& path, const RiskModel& model);
RiskModel load_checkpoint(const std::string& path);

}  // namespace milsurv::model
