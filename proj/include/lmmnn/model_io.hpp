#pragma once

#include <string>

#include "json.hpp"
#include "lmmnn/neuralnet.hpp"

namespace lmmnn {

nlohmann::json net_to_json(const FeedForwardNet& net);
FeedForwardNet net_from_json(const nlohmann::json& j);

void write_json(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json(const std::string& path);

}  // namespace lmmnn
