#include "hpm/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <type_traits>

#include "hpm/parallel.hpp"

namespace hpm {

using nlohmann::json;

namespace {

template <class F>
void visit_fields(RunConfig& c, F&& f) {
    f("topology", c.topology);
    f("lowres_topology", c.lowres_topology);
    f("reference_shapes", c.reference_shapes);
    f("views", c.views);
    f("view_step", c.view_step);
    f("ipd", c.ipd);
    f("shapes", c.shapes);
    f("occlusions", c.occlusions);
    f("virtual_positives", c.virtual_positives);
    f("cell_size", c.cell_size);
    f("template_size", c.template_size);
    f("lowres", c.lowres);
    f("lowres_cell_size", c.lowres_cell_size);
    f("lowres_template_size", c.lowres_template_size);
    f("C", c.C);
    f("margin", c.margin);
    f("rounds", c.rounds);
    f("negatives_per_image", c.negatives_per_image);
    f("tolerance", c.tolerance);
    f("max_passes", c.max_passes);
    f("spring_min", c.spring_min);
    f("rotations", c.rotations);
    f("levels_per_octave", c.levels_per_octave);
    f("upsample", c.upsample);
    f("threshold", c.threshold);
    f("nms_iou", c.nms_iou);
    f("box_pad", c.box_pad);
    f("max_per_level", c.max_per_level);
    f("skip_occluded_transforms", c.skip_occluded_transforms);
    f("overlays", c.overlays);
    f("min_overlap", c.min_overlap);
    f("success_threshold", c.success_threshold);
    f("detection_iou", c.detection_iou);
    f("alphas", c.alphas);
    f("left_eye", c.left_eye);
    f("right_eye", c.right_eye);
    f("seed", c.seed);
    f("workers", c.workers);
}

template <class T>
bool matches(const json& v) {
    if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
    else if constexpr (std::is_same_v<T, uint64_t>) return v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0);
    else if constexpr (std::is_integral_v<T>) return v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) return v.is_number();
    else {
        if (!v.is_array()) return false;
        for (const auto& e : v)
            if (!matches<typename T::value_type>(e)) return false;
        return true;
    }
}

bool builtin_topology(const std::string& s) { return s == "face68" || s == "lowres7"; }

std::string resolve(const std::string& p, const std::string& base) {
    if (p.empty() || builtin_topology(p) || base.empty()) return p;
    std::filesystem::path path(p);
    return path.is_absolute() ? p : (std::filesystem::path(base) / path).lexically_normal().string();
}

Topology topology_by_name(const std::string& s) {
    if (s == "face68") return face68_topology();
    if (s == "lowres7") return lowres7_topology();
    return hpm::load_topology(s);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

void RunConfig::validate() const {
    require(!topology.empty(), "topology is empty");
    require(views >= 1, "views must be >= 1");
    require(ipd > 0, "ipd must be > 0");
    require(shapes >= 1, "shapes must be >= 1");
    require(occlusions >= 1, "occlusions must be >= 1");
    require(virtual_positives >= 0, "virtual_positives must be >= 0");
    require(cell_size >= 2 && lowres_cell_size >= 2, "cell sizes must be >= 2");
    require(template_size >= 1 && lowres_template_size >= 1, "template sizes must be >= 1");
    require(C > 0, "C must be > 0");
    require(margin >= 0 && margin < 1, "margin must be in [0, 1)");
    require(rounds >= 1, "rounds must be >= 1");
    require(negatives_per_image >= 1, "negatives_per_image must be >= 1");
    require(tolerance > 0, "tolerance must be > 0");
    require(max_passes >= 1, "max_passes must be >= 1");
    require(spring_min > 0, "spring_min must be > 0");
    require(!rotations.empty(), "rotations is empty");
    require(levels_per_octave >= 1, "levels_per_octave must be >= 1");
    require(nms_iou > 0 && nms_iou <= 1, "nms_iou must be in (0, 1]");
    require(box_pad >= 0, "box_pad must be >= 0");
    require(max_per_level >= 1, "max_per_level must be >= 1");
    require(min_overlap > 0 && min_overlap <= 1, "min_overlap must be in (0, 1]");
    require(success_threshold > 0, "success_threshold must be > 0");
    require(detection_iou > 0 && detection_iou <= 1, "detection_iou must be in (0, 1]");
    require(!alphas.empty(), "alphas is empty");
    require(!left_eye.empty() && !right_eye.empty(), "eye index lists are empty");
    require(workers >= 0, "workers must be >= 0");
}

Topology RunConfig::load_topology() const { return topology_by_name(topology); }
Topology RunConfig::load_lowres_topology() const { return topology_by_name(lowres_topology); }

ReferenceShapeSet RunConfig::references() const {
    if (!reference_shapes.empty()) return load_reference_set(reference_shapes);
    return default_reference_set(views, view_step, ipd);
}

SupervisionOptions RunConfig::supervision() const {
    SupervisionOptions o;
    o.shapes = shapes;
    o.occlusions = occlusions;
    o.virtual_count = virtual_positives;
    o.seed = seed;
    o.workers = effective_workers();
    return o;
}

TrainingOptions RunConfig::training() const {
    TrainingOptions o;
    o.C = C;
    o.margin = margin;
    o.rounds = rounds;
    o.negatives_per_image = negatives_per_image;
    o.tolerance = tolerance;
    o.max_passes = max_passes;
    o.spring_min = spring_min;
    o.seed = seed;
    o.workers = effective_workers();
    o.template_size = template_size;
    o.cell_size = cell_size;
    o.lowres = lowres;
    o.lowres_template_size = lowres_template_size;
    o.lowres_cell_size = lowres_cell_size;
    o.pyramid = detection().pyramid;
    return o;
}

DetectOptions RunConfig::detection() const {
    DetectOptions o;
    o.threshold = threshold;
    o.nms_iou = nms_iou;
    o.box_pad = box_pad;
    o.max_per_level = max_per_level;
    o.skip_occluded_transforms = skip_occluded_transforms;
    o.workers = effective_workers();
    o.pyramid.cell_size = cell_size;
    o.pyramid.levels_per_octave = levels_per_octave;
    o.pyramid.upsample = upsample;
    o.pyramid.rotations = rotations;
    return o;
}

int RunConfig::effective_workers() const { return workers > 0 ? workers : default_workers(); }

RunConfig config_from_json(const json& j, const std::string& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    std::set<std::string> known;
    visit_fields(c, [&](const char* name, auto& field) {
        known.insert(name);
        auto it = j.find(name);
        if (it == j.end()) return;
        using T = std::decay_t<decltype(field)>;
        if (!matches<T>(*it)) throw ConfigError(std::string("config key '") + name + "' has the wrong type");
        field = it->template get<T>();
    });
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    c.topology = resolve(c.topology, base_dir);
    c.lowres_topology = resolve(c.lowres_topology, base_dir);
    c.reference_shapes = resolve(c.reference_shapes, base_dir);
    c.validate();
    return c;
}

json config_to_json(const RunConfig& c) {
    json j = json::object();
    RunConfig copy = c;
    visit_fields(copy, [&](const char* name, auto& field) { j[name] = field; });
    return j;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return config_from_json(j, std::filesystem::path(path).parent_path().string());
}

std::string config_hash(const RunConfig& c) { return hex_digest(fnv1a(config_to_json(c).dump())); }

}  // namespace hpm
