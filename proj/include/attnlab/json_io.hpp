#pragma once

#include "attnlab/dataset.hpp"

#include <json.hpp>

#include <string>

namespace attnlab {

using Json = nlohmann::json;

Json matrix_to_json(const Mat& m);
// `path` names the field in error messages.
Mat matrix_from_json(const Json& j, const std::string& path);

Json dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const Json& j);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace attnlab
