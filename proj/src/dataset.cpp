#include "hpm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <cstdio>

#include "hpm/common.hpp"

namespace hpm {

using nlohmann::json;
namespace fs = std::filesystem;

double intersection_area(const Box& a, const Box& b) {
    double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    return w > 0 && h > 0 ? w * h : 0.0;
}

double iou(const Box& a, const Box& b) {
    double i = intersection_area(a, b);
    double u = a.area() + b.area() - i;
    return u > 0 ? i / u : 0.0;
}

double overlap_of(const Box& a, const Box& ref) {
    double r = ref.area();
    return r > 0 ? intersection_area(a, ref) / r : 0.0;
}

Box landmark_box(const std::vector<Point>& pts, double pad) {
    if (pts.empty()) throw DomainError("landmark_box: no points");
    Box b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
    for (const auto& p : pts) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    double m = pad * b.height();
    return {b.x0 - m, b.y0 - m, b.x1 + m, b.y1 + m};
}

json points_to_json(const std::vector<Point>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back({p.x, p.y});
    return a;
}

std::vector<Point> points_from_json(const json& j) {
    std::vector<Point> r;
    if (!j.is_array()) throw DataError("expected an array of [x, y] points");
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
            throw DataError("expected [x, y] point");
        Point p{e[0].get<double>(), e[1].get<double>()};
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("non-finite landmark coordinate");
        r.push_back(p);
    }
    return r;
}

DatasetManifest manifest_from_json(const json& j, const std::string& base_dir, int expected) {
    DatasetManifest m;
    if (!j.is_object() || !j.contains("images") || !j["images"].is_array())
        throw DataError("manifest: expected {\"images\": [...]}");
    std::vector<std::string> bad;
    const auto& items = j["images"];
    for (size_t i = 0; i < items.size(); ++i) {
        const auto& e = items[i];
        try {
            AnnotatedFace f;
            if (!e.is_object() || !e.contains("image") || !e["image"].is_string()) throw DataError("missing image path");
            fs::path p = e["image"].get<std::string>();
            f.image = p.is_absolute() || base_dir.empty() ? p.string() : (fs::path(base_dir) / p).string();
            if (!e.contains("landmarks")) throw DataError("missing landmarks");
            f.landmarks = points_from_json(e["landmarks"]);
            if (expected > 0 && int(f.landmarks.size()) != expected)
                throw DataError("expected " + std::to_string(expected) + " landmarks, got " + std::to_string(f.landmarks.size()));
            if (e.contains("occluded") && !e["occluded"].is_null()) {
                const auto& o = e["occluded"];
                if (!o.is_array() || o.size() != f.landmarks.size()) throw DataError("occluded length mismatch");
                for (const auto& b : o) {
                    if (!b.is_boolean() && !b.is_number_integer()) throw DataError("occluded flags must be booleans");
                    f.occluded.push_back(b.is_boolean() ? b.get<bool>() : b.get<int>() != 0);
                }
            }
            if (e.contains("box") && !e["box"].is_null()) {
                const auto& b = e["box"];
                if (!b.is_array() || b.size() != 4) throw DataError("box must be [x0, y0, x1, y1]");
                f.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            }
            m.faces.push_back(std::move(f));
        } catch (const std::exception& ex) {
            bad.push_back("entry " + std::to_string(i) + ": " + ex.what());
        }
    }
    if (!bad.empty()) {
        std::string msg = "manifest has " + std::to_string(bad.size()) + " invalid entries";
        for (const auto& b : bad) msg += "\n  " + b;
        throw DataError(msg);
    }
    return m;
}

DatasetManifest load_manifest(const std::string& path, int expected) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw DataError("manifest " + path + ": " + e.what());
    }
    return manifest_from_json(j, fs::path(path).parent_path().string(), expected);
}

json manifest_to_json(const DatasetManifest& m) {
    json items = json::array();
    for (const auto& f : m.faces) {
        json e;
        e["image"] = f.image;
        e["landmarks"] = points_to_json(f.landmarks);
        if (!f.occluded.empty()) {
            json o = json::array();
            for (bool b : f.occluded) o.push_back(b);
            e["occluded"] = o;
        }
        if (f.box) e["box"] = {f.box->x0, f.box->y0, f.box->x1, f.box->y1};
        items.push_back(e);
    }
    return json{{"images", items}};
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    write_text_file(path, manifest_to_json(m).dump(1));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
    if (!text.empty() && text.back() != '\n') out << "\n";
    if (!out) throw DataError("write failed: " + path);
}

uint64_t fnv1a(const std::string& data) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex_digest(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

}  // namespace hpm
