#pragma once

#include <string>

#include "json.hpp"
#include "lmmnn/simgen.hpp"

namespace lmmnn {

// CSV: X_0..X_{p-1}, scenario columns, y. Sidecar `<csv>.json` carries the
// scenario, cardinalities, ground truth theta, seeds, location table and split.
void write_dataset(const MixedDataset& ds, const std::string& csv_path);
MixedDataset read_dataset(const std::string& csv_path);

std::string format_double(double v);  // shortest round-trip text

nlohmann::json to_json(const SimSpec& s);
SimSpec sim_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CovarianceSpec& s);
CovarianceSpec covariance_spec_from_json(const nlohmann::json& j);

// Scenario columns written between the X block and y.
std::vector<std::string> scenario_columns(const std::string& scenario, std::size_t id_columns);

}  // namespace lmmnn
