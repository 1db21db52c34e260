#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hpm {

struct Point {
    double x = 0, y = 0;
    bool operator==(const Point&) const = default;
};

struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
    bool operator==(const Box&) const = default;
};

double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);
// Fraction of `ref` covered by `a`.
double overlap_of(const Box& a, const Box& ref);

// Tight box around the points, grown by `pad` times its height on every side.
Box landmark_box(const std::vector<Point>& pts, double pad = 0.1);

struct AnnotatedFace {
    std::string image;  // resolved path
    std::vector<Point> landmarks;
    std::vector<bool> occluded;  // empty when not annotated
    std::optional<Box> box;
};

struct DatasetManifest {
    std::vector<AnnotatedFace> faces;
};

// Relative image paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::string& path, int expected_landmarks = 68);
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& base_dir, int expected_landmarks);
nlohmann::json manifest_to_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::string& path);

nlohmann::json points_to_json(const std::vector<Point>& pts);
std::vector<Point> points_from_json(const nlohmann::json& j);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
uint64_t fnv1a(const std::string& data);
std::string hex_digest(uint64_t h);

}  // namespace hpm
