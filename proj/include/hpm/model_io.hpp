#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hpm/model.hpp"

namespace hpm {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const Model& m);
// Throws FormatError naming the offending JSON path.
Model model_from_json(const nlohmann::json& j);

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// A detector bundles the full model with an optional low-resolution component.
struct Detector {
    std::vector<Model> components;
};
void save_detector(const Detector& d, const std::string& path);
Detector load_detector(const std::string& path);

std::string base64_encode(const unsigned char* data, size_t n);
std::vector<unsigned char> base64_decode(const std::string& s);

ModelSpec spec_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json spec_to_json(const ModelSpec& s);

}  // namespace hpm
