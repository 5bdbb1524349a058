#pragma once

#include <json.hpp>

#include "dadee/model.hpp"

namespace dadee {

using Json = nlohmann::ordered_json;

EncoderConfig encoder_config_from_json(const Json& j);
Json encoder_config_to_json(const EncoderConfig& config, bool with_vocab);

}  // namespace dadee
