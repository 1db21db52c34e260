#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hpm/config.hpp"
#include "hpm/detection.hpp"
#include "hpm/evaluation.hpp"
#include "hpm/gdt.hpp"
#include "hpm/model_io.hpp"
#include "hpm/planted.hpp"
#include "hpm/supervision.hpp"
#include "hpm/training.hpp"

namespace py = pybind11;
using namespace hpm;

namespace {

Image to_image(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("image must be HxW or HxWxC");
    const int h = int(a.shape(0)), w = int(a.shape(1)), c = a.ndim() == 3 ? int(a.shape(2)) : 1;
    if (c != 1 && c != 3) throw py::value_error("image must have 1 or 3 channels");
    Image img(w, h, c);
    std::copy(a.data(), a.data() + img.data.size(), img.data.begin());
    return img;
}

py::array_t<float> from_image(const Image& img) {
    std::vector<py::ssize_t> shape = {img.height, img.width};
    if (img.channels > 1) shape.push_back(img.channels);
    py::array_t<float> a(shape);
    std::copy(img.data.begin(), img.data.end(), a.mutable_data());
    return a;
}

py::dict to_dict(const Detection& d) {
    py::list pts;
    for (const auto& p : d.landmarks) pts.append(py::make_tuple(p.x, p.y));
    py::dict r;
    r["score"] = d.score;
    r["box"] = py::make_tuple(d.box.x0, d.box.y0, d.box.x1, d.box.y1);
    r["landmarks"] = pts;
    r["occluded"] = d.occluded;
    r["viewpoint"] = d.viewpoint;
    r["rotation"] = d.rotation;
    r["mixture"] = d.mixture;
    return r;
}

std::vector<Point> to_points(const std::vector<std::pair<double, double>>& v) {
    std::vector<Point> r;
    for (auto [x, y] : v) r.push_back({x, y});
    return r;
}

RunConfig config_from(const py::object& cfg) {
    if (cfg.is_none()) return RunConfig{};
    const std::string text = py::module_::import("json").attr("dumps")(cfg).cast<std::string>();
    return config_from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_hpm, m) {
    m.doc() = "Hierarchical part model face detection and landmark localization";
    m.attr("__version__") = kVersion;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_LookupError);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

    m.def("gdt_1d", [](const std::vector<double>& f, double w1, double w2) {
        auto r = gdt_1d(f, w1, w2);
        return py::make_tuple(r.values, r.argmax);
    }, py::arg("values"), py::arg("w1"), py::arg("w2"));

    m.def("validate_config", [](const py::object& cfg) { return config_hash(config_from(cfg)); }, py::arg("config"),
          "Validate a config dict and return its hash.");
    m.def("default_config", [] {
        return py::module_::import("json").attr("loads")(config_to_json(RunConfig{}).dump());
    });

    m.def("load_image", [](const std::string& path) { return from_image(load_image(path)); });
    m.def("save_png", [](py::array_t<float> a, const std::string& path) { save_png(to_image(a), path); });

    m.def("write_planted_dataset", [](const std::string& dir, int train, int test, int negatives, uint64_t seed) {
        PlantedOptions po;
        po.seed = seed;
        auto d = write_planted_dataset(dir, po, train, test, negatives);
        return py::make_tuple(d.train_manifest, d.test_manifest, d.negatives);
    }, py::arg("dir"), py::arg("train"), py::arg("test"), py::arg("negatives"), py::arg("seed") = 0);

    m.def("supervise", [](const std::string& manifest, const std::string& out, const py::object& cfg) {
        const RunConfig c = config_from(cfg);
        const Topology t = c.load_topology();
        auto s = supervise(load_manifest(manifest, t.num_landmarks), t, c.references(), c.supervision());
        save_supervision(s, out);
        return s.examples.size();
    }, py::arg("manifest"), py::arg("out"), py::arg("config") = py::none(),
       "Supervise a landmark manifest and write the records; returns the record count.");

    m.def("train", [](const std::string& supervision, const std::vector<std::string>& negatives, const std::string& out,
                      const py::object& cfg) {
        const RunConfig c = config_from(cfg);
        const Supervision s = load_supervision(supervision);
        std::optional<Supervision> lr;
        if (c.lowres) lr = derive_lowres(s, c.load_lowres_topology());
        TrainingResult r;
        {
            py::gil_scoped_release release;
            r = train(s, lr ? &*lr : nullptr, negatives, c.training());
        }
        save_detector(r.detector, out);
        py::list log;
        for (const auto& l : r.log) {
            py::dict d;
            d["round"] = l.round;
            d["negatives"] = l.negatives;
            d["start_objective"] = l.start_objective;
            d["objective"] = l.objective;
            log.append(d);
        }
        return log;
    }, py::arg("supervision"), py::arg("negatives"), py::arg("out"), py::arg("config") = py::none());

    py::class_<Detector>(m, "Detector")
        .def_static("load", &load_detector)
        .def("save", [](const Detector& d, const std::string& path) { save_detector(d, path); })
        .def_property_readonly("components", [](const Detector& d) { return d.components.size(); })
        .def("detect", [](const Detector& d, py::array_t<float> img, const py::object& cfg) {
            const Image im = to_image(img);
            const DetectOptions o = config_from(cfg).detection();
            std::vector<Detection> dets;
            {
                py::gil_scoped_release release;
                dets = detect(d, im, o);
            }
            py::list r;
            for (const auto& x : dets) r.append(to_dict(x));
            return r;
        }, py::arg("image"), py::arg("config") = py::none())
        .def("localize", [](const Detector& d, py::array_t<float> img, std::array<double, 4> box, const py::object& cfg) {
            const RunConfig c = config_from(cfg);
            const Image im = to_image(img);
            Detection det;
            {
                py::gil_scoped_release release;
                det = localize_in_box(d, im, {box[0], box[1], box[2], box[3]}, c.detection(), c.min_overlap);
            }
            return to_dict(det);
        }, py::arg("image"), py::arg("box"), py::arg("config") = py::none());

    m.def("localization_metrics", [](const std::vector<std::vector<std::pair<double, double>>>& preds,
                                     const std::vector<std::vector<std::pair<double, double>>>& gts, double threshold) {
        std::vector<std::vector<Point>> p, g;
        for (const auto& x : preds) p.push_back(to_points(x));
        for (const auto& x : gts) g.push_back(to_points(x));
        auto r = localization_metrics(p, g, EyeIndices::face68(), threshold);
        py::dict d;
        d["mean_error"] = r.mean_error;
        d["success_rate"] = r.success_rate;
        d["errors"] = r.errors;
        d["ced"] = r.ced;
        return d;
    }, py::arg("predictions"), py::arg("ground_truth"), py::arg("threshold") = 0.1);

    m.def("occlusion_pr", [](const std::vector<bool>& pred, const std::vector<bool>& gt) {
        auto r = occlusion_pr(pred, gt);
        return py::make_tuple(r.precision, r.recall, r.f1);
    });
}
