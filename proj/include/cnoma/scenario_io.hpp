#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cnoma/core_model.hpp"

namespace cnoma {

/// JSON scenario files; the schema lives in docs/scenario.schema.json.
/// File indices are 0-based. The library may be given as an explicit
/// "thresholds" array or as {"count", "first", "step"}.
nlohmann::json scenario_to_json(const SystemScenario& scenario);
SystemScenario scenario_from_json(const nlohmann::json& j);

SystemScenario load_scenario(const std::filesystem::path& path);
void save_scenario(const SystemScenario& scenario, const std::filesystem::path& path);

FileLibrary library_from_json(const nlohmann::json& j);
nlohmann::json library_to_json(const FileLibrary& lib);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace cnoma
