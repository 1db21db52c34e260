#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "hpm/config.hpp"
#include "hpm/detection.hpp"
#include "hpm/evaluation.hpp"
#include "hpm/model_io.hpp"
#include "hpm/planted.hpp"
#include "hpm/supervision.hpp"
#include "hpm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hpm;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kConvergence = 4 };

struct Run {
    std::string command;
    std::string config_path;
    RunConfig config;
    fs::path out;
    json inputs = json::array();
    json outputs = json::array();
    json errors = json::array();

    std::string out_file(const std::string& name) const { return (out / name).string(); }
};

bool is_image_file(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

std::vector<std::string> list_images(const fs::path& dir) {
    std::vector<std::string> r;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) r.push_back(e.path().string());
    std::sort(r.begin(), r.end());
    return r;
}

std::string file_digest(const fs::path& p) {
    if (fs::is_directory(p)) {
        std::string acc;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) acc += f.filename().string() + ":" + file_digest(f) + "\n";
        return hex_digest(fnv1a(acc));
    }
    return hex_digest(fnv1a(read_text_file(p.string())));
}

void add_input(Run& run, const std::string& path) {
    json e = {{"path", path}};
    if (fs::exists(path)) e["fnv1a"] = file_digest(path);
    run.inputs.push_back(e);
}

void write_output(Run& run, const std::string& name, const std::string& text) {
    const std::string path = run.out_file(name);
    fs::create_directories(fs::path(path).parent_path());
    write_text_file(path, text);
    run.outputs.push_back({{"path", name}, {"fnv1a", hex_digest(fnv1a(text))}});
}

void write_png_output(Run& run, const std::string& name, const Image& img) {
    const std::string path = run.out_file(name);
    fs::create_directories(fs::path(path).parent_path());
    save_png(img, path);
    run.outputs.push_back({{"path", name}, {"fnv1a", file_digest(path)}});
}

void write_run_manifest(const Run& run, int code, const std::string& message) {
    json versions = {{"hpm", kVersion},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"cli11", CLI11_VERSION}};
    json m = {{"command", run.command},
              {"config_file", run.config_path},
              {"config", config_to_json(run.config)},
              {"config_hash", config_hash(run.config)},
              {"inputs", run.inputs},
              {"outputs", run.outputs},
              {"errors", run.errors},
              {"exit_code", code},
              {"versions", versions}};
    if (!message.empty()) m["message"] = message;
    std::error_code ec;
    fs::create_directories(run.out, ec);
    if (!ec) write_text_file(run.out_file("run_manifest.json"), m.dump(2) + "\n");
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(10);
    s << v;
    return s.str();
}

std::string normalized(const std::string& p) {
    std::error_code ec;
    auto c = fs::weakly_canonical(p, ec);
    return ec ? fs::path(p).lexically_normal().string() : c.string();
}

// A prediction line: detection fields plus "image" and an optional "found" flag.
struct Prediction {
    std::string image;
    bool found = true;
    Detection det;
};

std::vector<Prediction> read_predictions(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<Prediction> r;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
        }
        Prediction p;
        try {
            p.image = j.value("image", std::string());
            p.found = j.value("found", true);
            if (p.found) {
                for (const auto& q : j.at("landmarks")) p.det.landmarks.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
                p.det.occluded = j.contains("occluded") ? j["occluded"].get<std::vector<bool>>()
                                                        : std::vector<bool>(p.det.landmarks.size(), false);
                p.det.score = j.value("score", 0.0);
                if (j.contains("box")) {
                    const auto& b = j["box"];
                    p.det.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                 b.at(3).get<double>()};
                } else if (!p.det.landmarks.empty()) {
                    p.det.box = landmark_box(p.det.landmarks);
                }
            }
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
        }
        if (p.det.occluded.size() != p.det.landmarks.size())
            throw FormatError(path + ":" + std::to_string(n) + ": occluded/landmarks size mismatch");
        r.push_back(std::move(p));
    }
    return r;
}

json prediction_json(const std::string& image, const Detection* d) {
    json j = d ? detection_to_json(*d) : json::object();
    j["image"] = image;
    j["found"] = d != nullptr;
    return j;
}

Image draw_all(const Image& img, const std::vector<Detection>& dets) {
    Image out = img.channels == 3 ? img : render_overlay(img, Detection{});
    for (const auto& d : dets) out = render_overlay(out, d);
    return out;
}

std::string overlay_name(const std::string& image, int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d_", index);
    return std::string("overlays/") + buf + fs::path(image).stem().string() + ".png";
}

// ---- commands ----

int cmd_supervise(Run& run, const std::string& manifest_path) {
    add_input(run, manifest_path);
    const auto& c = run.config;
    const Topology t = c.load_topology();
    const DatasetManifest m = load_manifest(manifest_path, t.num_landmarks);
    if (m.faces.empty()) throw DataError("manifest has no faces: " + manifest_path);
    Supervision s = supervise(m, t, c.references(), c.supervision());
    write_output(run, "supervision.json", supervision_to_json(s).dump() + "\n");
    std::cout << s.examples.size() << " supervised records\n";
    return kOk;
}

int cmd_train(Run& run, const std::string& cache, const std::string& negatives_dir) {
    add_input(run, cache);
    add_input(run, negatives_dir);
    if (!fs::is_directory(negatives_dir)) throw DataError("negatives directory not found: " + negatives_dir);
    const auto& c = run.config;
    const Supervision s = load_supervision(cache);
    std::optional<Supervision> lr;
    if (c.lowres) lr = derive_lowres(s, c.load_lowres_topology());
    TrainingOptions opt = c.training();
    opt.log_path = run.out_file("training_log.csv");
    opt.checkpoint_dir = run.out_file("checkpoints");
    fs::create_directories(opt.checkpoint_dir);
    TrainingResult r = train(s, lr ? &*lr : nullptr, list_images(negatives_dir), opt);
    save_detector(r.detector, run.out_file("model.json"));
    run.outputs.push_back({{"path", "model.json"}, {"fnv1a", file_digest(run.out_file("model.json"))}});
    run.outputs.push_back({{"path", "training_log.csv"}, {"fnv1a", file_digest(opt.log_path)}});
    std::cout << r.log.size() << " rounds, objective " << fmt(r.log.back().objective) << "\n";
    return kOk;
}

int cmd_detect(Run& run, const std::string& model_path, const std::string& input) {
    add_input(run, model_path);
    add_input(run, input);
    const Detector d = load_detector(model_path);
    std::vector<std::string> images;
    if (fs::is_directory(input)) images = list_images(input);
    else if (fs::exists(input)) images = {input};
    else throw DataError("input not found: " + input);
    const DetectOptions opt = run.config.detection();
    std::string jsonl;
    for (size_t i = 0; i < images.size(); ++i) {
        try {
            const Image img = load_image(images[i]);
            auto dets = detect(d, img, opt);
            for (const auto& det : dets) {
                json j = detection_to_json(det);
                j["image"] = images[i];
                jsonl += j.dump() + "\n";
            }
            if (run.config.overlays) write_png_output(run, overlay_name(images[i], int(i)), draw_all(img, dets));
        } catch (const DataError& e) {
            std::cerr << "error: " << images[i] << ": " << e.what() << "\n";
            run.errors.push_back({{"image", images[i]}, {"error", e.what()}});
        }
    }
    write_output(run, "detections.jsonl", jsonl);
    return run.errors.empty() ? kOk : kData;
}

int cmd_localize(Run& run, const std::string& model_path, const std::string& manifest_path) {
    add_input(run, model_path);
    add_input(run, manifest_path);
    const Detector d = load_detector(model_path);
    const auto& c = run.config;
    const int nl = d.components.at(0).spec.topology.num_landmarks;
    const auto faces = eval_faces(load_manifest(manifest_path, nl), c.box_pad);
    const DetectOptions opt = c.detection();
    std::string jsonl;
    for (size_t i = 0; i < faces.size(); ++i) {
        try {
            const Image img = load_image(faces[i].image);
            Detection det = localize_in_box(d, img, faces[i].box, opt, c.min_overlap, nl);
            jsonl += prediction_json(faces[i].image, &det).dump() + "\n";
            if (c.overlays) write_png_output(run, overlay_name(faces[i].image, int(i)), draw_all(img, {det}));
        } catch (const NotFoundError&) {
            jsonl += prediction_json(faces[i].image, nullptr).dump() + "\n";
        } catch (const DataError& e) {
            std::cerr << "error: " << faces[i].image << ": " << e.what() << "\n";
            run.errors.push_back({{"image", faces[i].image}, {"error", e.what()}});
            jsonl += prediction_json(faces[i].image, nullptr).dump() + "\n";
        }
    }
    write_output(run, "localizations.jsonl", jsonl);
    return run.errors.empty() ? kOk : kData;
}

void write_localization_report(Run& run, const LocalizationReport& r, int images) {
    write_output(run, "metrics.csv",
                 "metric,value\nimages," + std::to_string(images) + "\nmissing," + std::to_string(r.missing) +
                     "\nmean_error," + fmt(r.mean_error) + "\nsuccess_threshold," + fmt(r.threshold) +
                     "\nsuccess_rate," + fmt(r.success_rate) + "\n");
    std::vector<std::vector<double>> rows;
    for (const auto& [t, f] : r.ced) rows.push_back({t, f});
    write_output(run, "ced.csv", csv_table({"threshold", "fraction"}, rows));
    write_output(run, "ced.svg",
                 svg_plot("Cumulative error distribution", "mean error / IPD", "fraction of images",
                          {{"ced", r.ced}}, 0.3, 1.0));
}

int cmd_eval(Run& run, const std::string& kind, const std::string& pred_path, const std::string& manifest_path) {
    add_input(run, pred_path);
    add_input(run, manifest_path);
    const auto& c = run.config;
    const auto preds = read_predictions(pred_path);
    const DatasetManifest m = load_manifest(manifest_path, c.load_topology().num_landmarks);
    const auto faces = eval_faces(m, c.box_pad);

    if (kind == "localization" || kind == "occlusion") {
        if (preds.size() != faces.size())
            throw DataError("prediction count " + std::to_string(preds.size()) + " does not match " +
                            std::to_string(faces.size()) + " ground-truth faces");
        std::vector<std::vector<Point>> p, g;
        std::vector<bool> found;
        std::vector<std::vector<bool>> po, go;
        for (size_t i = 0; i < faces.size(); ++i) {
            const auto& pr = preds[i];
            if (pr.found && pr.det.landmarks.size() != faces[i].landmarks.size())
                throw DataError("prediction " + std::to_string(i) + " has " + std::to_string(pr.det.landmarks.size()) +
                                " landmarks, expected " + std::to_string(faces[i].landmarks.size()));
            found.push_back(pr.found);
            p.push_back(pr.found ? pr.det.landmarks : faces[i].landmarks);
            g.push_back(faces[i].landmarks);
            if (pr.found) {
                po.push_back(pr.det.occluded);
                go.push_back(faces[i].occluded);
            }
        }
        if (kind == "localization") {
            write_localization_report(run, localization_metrics(p, g, c.eyes(), c.success_threshold, found),
                                      int(faces.size()));
        } else {
            const OcclusionPR r = occlusion_pr(po, go);
            write_output(run, "metrics.csv",
                         "metric,value\ntp," + std::to_string(r.tp) + "\nfp," + std::to_string(r.fp) + "\nfn," +
                             std::to_string(r.fn) + "\ntn," + std::to_string(r.tn) + "\nprecision," +
                             fmt(r.precision) + "\nrecall," + fmt(r.recall) + "\nf1," + fmt(r.f1) + "\n");
            write_output(run, "occlusion_pr.csv",
                         csv_table({"precision", "recall", "f1"}, {{r.precision, r.recall, r.f1}}));
        }
    } else if (kind == "detection") {
        std::map<std::string, size_t> index;
        std::vector<std::vector<GroundTruthBox>> gts;
        for (const auto& f : faces) {
            auto [it, fresh] = index.emplace(normalized(f.image), gts.size());
            if (fresh) gts.emplace_back();
            gts[it->second].push_back({f.box, std::count(f.occluded.begin(), f.occluded.end(), true) > 0});
        }
        std::vector<std::vector<Detection>> dets(gts.size());
        for (const auto& pr : preds) {
            if (!pr.found) continue;
            auto it = index.find(normalized(pr.image));
            if (it == index.end()) throw DataError("prediction for an image not in the manifest: " + pr.image);
            dets[it->second].push_back(pr.det);
        }
        const DetectionPR r = detection_pr(dets, gts, c.detection_iou);
        write_output(run, "metrics.csv",
                     "metric,value\npositives," + std::to_string(r.positives) + "\noccluded_positives," +
                         std::to_string(r.occluded_positives) + "\nap," + fmt(r.ap) + "\nap_occluded," +
                         fmt(r.ap_occluded) + "\n");
        std::vector<std::vector<double>> rows;
        for (size_t k = 0; k < r.all.size(); ++k) {
            const auto& a = r.all[k];
            const auto& o = r.occluded[k];
            rows.push_back({a.threshold, double(a.tp), double(a.fp), a.precision, a.recall, double(o.tp),
                            o.precision, o.recall});
        }
        write_output(run, "detection_pr.csv",
                     csv_table({"threshold", "tp", "fp", "precision", "recall", "tp_occluded", "precision_occluded",
                                "recall_occluded"},
                               rows));
        Series all{"all", {}}, occ{"occluded", {}};
        for (const auto& a : r.all) all.points.push_back({a.recall, a.precision});
        for (const auto& o : r.occluded) occ.points.push_back({o.recall, o.precision});
        write_output(run, "detection_pr.svg", svg_plot("Detection precision-recall", "recall", "precision", {all, occ}));
    } else {
        throw ConfigError("unknown evaluation kind '" + kind + "' (localization, occlusion, detection)");
    }
    return kOk;
}

int cmd_sweep(Run& run, const std::string& model_path, const std::string& manifest_path) {
    add_input(run, model_path);
    add_input(run, manifest_path);
    const auto& c = run.config;
    const Detector d = load_detector(model_path);
    const int nl = d.components.at(0).spec.topology.num_landmarks;
    const auto faces = eval_faces(load_manifest(manifest_path, nl), c.box_pad);
    const auto pts = occlusion_sweep(d, faces, c.alphas, c.detection(), c.eyes(), c.min_overlap, c.success_threshold);
    std::vector<std::vector<double>> rows;
    Series pr{"occlusion", {}};
    std::vector<std::pair<double, double>> err;
    for (const auto& p : pts) {
        rows.push_back({p.alpha, p.pr.precision, p.pr.recall, p.pr.f1, p.localization.mean_error,
                        p.localization.success_rate, double(p.localization.missing)});
        pr.points.push_back({p.pr.recall, p.pr.precision});
        err.push_back({p.alpha, p.localization.mean_error});
    }
    write_output(run, "occlusion_pr.csv",
                 csv_table({"alpha", "precision", "recall", "f1", "mean_error", "success_rate", "missing"}, rows));
    write_output(run, "occlusion_pr.svg", svg_plot("Occlusion precision-recall over alpha", "recall", "precision", {pr}));
    double amax = 0, emax = 0;
    for (const auto& [a, e] : err) amax = std::max(amax, a), emax = std::max(emax, e);
    write_output(run, "sweep_error.svg",
                 svg_plot("Localization error over alpha", "alpha", "mean error / IPD", {{"error", err}},
                          amax > 0 ? amax : 1.0, emax > 0 ? 1.1 * emax : 1.0));
    return kOk;
}

int cmd_visualize(Run& run, const std::string& pred_path) {
    add_input(run, pred_path);
    std::map<std::string, std::vector<Detection>> by_image;
    std::vector<std::string> order;
    for (const auto& p : read_predictions(pred_path)) {
        if (p.image.empty()) throw FormatError("prediction without an image path");
        if (!by_image.count(p.image)) order.push_back(p.image);
        if (p.found) by_image[p.image].push_back(p.det);
        else by_image[p.image];
    }
    for (size_t i = 0; i < order.size(); ++i) {
        try {
            write_png_output(run, overlay_name(order[i], int(i)), draw_all(load_image(order[i]), by_image[order[i]]));
        } catch (const DataError& e) {
            std::cerr << "error: " << order[i] << ": " << e.what() << "\n";
            run.errors.push_back({{"image", order[i]}, {"error", e.what()}});
        }
    }
    return run.errors.empty() ? kOk : kData;
}

int cmd_synth(Run& run, int ntrain, int ntest, int nneg) {
    PlantedOptions po;
    po.seed = run.config.seed;
    auto data = write_planted_dataset(run.out.string(), po, ntrain, ntest, nneg, run.config.effective_workers());
    run.outputs.push_back({{"path", "train.json"}, {"fnv1a", file_digest(data.train_manifest)}});
    run.outputs.push_back({{"path", "test.json"}, {"fnv1a", file_digest(data.test_manifest)}});
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical part model face detection and landmark localization"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersion);

    Run run;
    std::optional<uint64_t> seed;
    std::optional<int> workers;
    std::string out = ".";
    app.add_option("--config", run.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the configured seed");
    app.add_option("--workers", workers, "Worker threads (default: HPM_WORKERS or hardware)")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "Output directory");

    std::string a, b, kind;
    int ntrain = 200, ntest = 100, nneg = 50;
    auto* sup = app.add_subcommand("supervise", "Build supervision records from a landmark manifest");
    sup->add_option("manifest", a)->required();
    auto* tr = app.add_subcommand("train", "Train a detector from supervision records and negative images");
    tr->add_option("supervision", a)->required();
    tr->add_option("negatives", b)->required();
    auto* det = app.add_subcommand("detect", "Detect faces in an image or a directory of images");
    det->add_option("model", a)->required();
    det->add_option("input", b)->required();
    auto* loc = app.add_subcommand("localize", "Localize landmarks inside the boxes of a manifest");
    loc->add_option("model", a)->required();
    loc->add_option("manifest", b)->required();
    auto* ev = app.add_subcommand("eval", "Score predictions against a ground-truth manifest");
    ev->add_option("kind", kind)->required()->check(CLI::IsMember({"localization", "occlusion", "detection"}));
    ev->add_option("predictions", a)->required();
    ev->add_option("manifest", b)->required();
    auto* sw = app.add_subcommand("sweep", "Occlusion precision-recall over occluded-state bias offsets");
    sw->add_option("model", a)->required();
    sw->add_option("manifest", b)->required();
    std::vector<double> alphas;
    sw->add_option("--alphas", alphas, "Offsets (default from config)")->delimiter(',');
    auto* vis = app.add_subcommand("visualize", "Draw predictions over their images");
    vis->add_option("predictions", a)->required();
    auto* syn = app.add_subcommand("synth", "Write a planted synthetic dataset");
    syn->add_option("--train", ntrain)->check(CLI::NonNegativeNumber);
    syn->add_option("--test", ntest)->check(CLI::NonNegativeNumber);
    syn->add_option("--negatives", nneg)->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    run.command = app.get_subcommands().front()->get_name();
    run.out = out;

    int code = kFailure;
    std::string message;
    try {
        if (!run.config_path.empty()) run.config = load_config(run.config_path);
        if (seed) run.config.seed = *seed;
        if (workers) run.config.workers = *workers;
        if (!alphas.empty()) run.config.alphas = alphas;
        run.config.validate();
        fs::create_directories(run.out);
        if (run.command == "supervise") code = cmd_supervise(run, a);
        else if (run.command == "train") code = cmd_train(run, a, b);
        else if (run.command == "detect") code = cmd_detect(run, a, b);
        else if (run.command == "localize") code = cmd_localize(run, a, b);
        else if (run.command == "eval") code = cmd_eval(run, kind, a, b);
        else if (run.command == "sweep") code = cmd_sweep(run, a, b);
        else if (run.command == "visualize") code = cmd_visualize(run, a);
        else if (run.command == "synth") code = cmd_synth(run, ntrain, ntest, nneg);
    } catch (const ConfigError& e) {
        code = kConfig, message = e.what();
    } catch (const DomainError& e) {
        code = kConfig, message = e.what();
    } catch (const DataError& e) {
        code = kData, message = e.what();
    } catch (const NotFoundError& e) {
        code = kData, message = e.what();
    } catch (const ConvergenceError& e) {
        code = kConvergence, message = e.what();
    } catch (const fs::filesystem_error& e) {
        code = kData, message = e.what();
    } catch (const std::exception& e) {
        code = kFailure, message = e.what();
    }
    if (!message.empty()) std::cerr << "error: " << message << "\n";
    write_run_manifest(run, code, message);
    return code;
}
