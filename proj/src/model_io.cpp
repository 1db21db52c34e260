#include "hpm/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hpm/common.hpp"

namespace hpm {

using nlohmann::json;

namespace {

const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw FormatError("model file: " + where + ": " + what);
}

json number_or_sentinel(double v) {
    if (is_neg_inf(v)) return "-inf";
    return v;
}

double read_value(const json& v, const std::string& where) {
    if (v.is_string() && v.get<std::string>() == "-inf") return kNegInf;
    if (!v.is_number()) fail(where, "expected a number or \"-inf\"");
    return v.get<double>();
}

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

const json& field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) fail(where + "/" + key, "missing");
    return j.at(key);
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    try {
        return v.get<T>();
    } catch (const json::exception& e) {
        fail(where + "/" + key, e.what());
    }
}

}  // namespace

std::string base64_encode(const unsigned char* d, size_t n) {
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        uint32_t v = uint32_t(d[i]) << 16;
        if (i + 1 < n) v |= uint32_t(d[i + 1]) << 8;
        if (i + 2 < n) v |= d[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < n ? kB64[(v >> 6) & 63] : '=';
        out += i + 2 < n ? kB64[v & 63] : '=';
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
    int table[256];
    std::fill(std::begin(table), std::end(table), -1);
    for (int i = 0; i < 64; ++i) table[(unsigned char)kB64[i]] = i;
    if (s.size() % 4) throw FormatError("base64 length is not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (size_t i = 0; i < s.size(); i += 4) {
        uint32_t v = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            char c = s[i + k];
            int x;
            if (c == '=') {
                if (i + 4 != s.size() || k < 2) throw FormatError("misplaced base64 padding");
                x = 0;
                ++pad;
            } else {
                if (pad) throw FormatError("misplaced base64 padding");
                x = table[(unsigned char)c];
                if (x < 0) throw FormatError("invalid base64 character");
            }
            v = v << 6 | uint32_t(x);
        }
        out.push_back((v >> 16) & 255);
        if (pad < 2) out.push_back((v >> 8) & 255);
        if (pad < 1) out.push_back(v & 255);
    }
    return out;
}

json spec_to_json(const ModelSpec& s) {
    json j;
    j["mixture"] = s.mixture;
    j["topology"] = topology_to_json(s.topology);
    j["views"] = s.states.views;
    j["shapes"] = s.states.shapes;
    j["occlusions"] = s.states.occlusions;
    j["cell_size"] = s.cell_size;
    j["template_rows"] = s.template_rows;
    j["template_cols"] = s.template_cols;
    j["feature_dim"] = s.feature_dim;
    json pats = json::array();
    for (const auto& part : s.states.patterns) {
        json pv = json::array();
        for (const auto& view : part) {
            json po = json::array();
            for (uint64_t m : view) po.push_back(hex64(m));
            pv.push_back(po);
        }
        pats.push_back(pv);
    }
    j["patterns"] = pats;
    json mv = json::array();
    for (auto [a, b] : s.states.mirror_views) mv.push_back({a, b});
    j["mirror_views"] = mv;
    auto anchors = [](const std::vector<std::vector<Offset>>& t) {
        json r = json::array();
        for (const auto& node : t) {
            json n = json::array();
            for (const auto& a : node) n.push_back({a.dy, a.dx});
            r.push_back(n);
        }
        return r;
    };
    j["part_anchor"] = anchors(s.part_anchor);
    j["landmark_anchor"] = anchors(s.landmark_anchor);
    return j;
}

ModelSpec spec_from_json(const json& j, const std::string& where) {
    ModelSpec s;
    s.mixture = get_as<std::string>(j, "mixture", where);
    try {
        s.topology = topology_from_json(field(j, "topology", where));
    } catch (const ConfigError& e) {
        fail(where + "/topology", e.what());
    }
    s.states.views = get_as<int>(j, "views", where);
    s.states.shapes = get_as<int>(j, "shapes", where);
    s.states.occlusions = get_as<int>(j, "occlusions", where);
    s.cell_size = get_as<int>(j, "cell_size", where);
    s.template_rows = get_as<int>(j, "template_rows", where);
    s.template_cols = get_as<int>(j, "template_cols", where);
    s.feature_dim = get_as<int>(j, "feature_dim", where);
    const json& pats = field(j, "patterns", where);
    if (!pats.is_array()) fail(where + "/patterns", "expected an array");
    for (size_t p = 0; p < pats.size(); ++p) {
        std::vector<std::vector<uint64_t>> pv;
        for (size_t v = 0; v < pats[p].size(); ++v) {
            std::vector<uint64_t> po;
            for (size_t o = 0; o < pats[p][v].size(); ++o) {
                std::string w = where + "/patterns/" + std::to_string(p) + "/" + std::to_string(v) + "/" + std::to_string(o);
                const json& e = pats[p][v][o];
                if (!e.is_string()) fail(w, "expected a hex string");
                try {
                    po.push_back(std::stoull(e.get<std::string>(), nullptr, 16));
                } catch (const std::exception&) {
                    fail(w, "bad hex mask");
                }
            }
            pv.push_back(po);
        }
        s.states.patterns.push_back(pv);
    }
    for (const auto& e : field(j, "mirror_views", where)) {
        if (!e.is_array() || e.size() != 2) fail(where + "/mirror_views", "expected pairs");
        s.states.mirror_views.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    auto anchors = [&](const char* key) {
        std::vector<std::vector<Offset>> r;
        const json& t = field(j, key, where);
        for (size_t n = 0; n < t.size(); ++n) {
            std::vector<Offset> node;
            for (const auto& a : t[n]) {
                if (!a.is_array() || a.size() != 2) fail(where + "/" + key + "/" + std::to_string(n), "expected [dy, dx]");
                node.push_back({a[0].get<int>(), a[1].get<int>()});
            }
            r.push_back(node);
        }
        return r;
    };
    s.part_anchor = anchors("part_anchor");
    s.landmark_anchor = anchors("landmark_anchor");
    try {
        s.validate();
    } catch (const ConfigError& e) {
        fail(where, std::string("inconsistent dimensions: ") + e.what());
    }
    return s;
}

json model_to_json(const Model& m) {
    json j;
    j["format"] = "hpm-model";
    j["version"] = kModelFormatVersion;
    j["spec"] = spec_to_json(m.spec);
    const auto& L = m.layout;
    j["param_size"] = L.size();
    j["root_offset"] = number_or_sentinel(m.w[L.root_offset()]);
    const size_t a0 = L.appearance_begin(), a1 = L.appearance_end();
    std::vector<unsigned char> bytes((a1 - a0) * 8);
    for (size_t i = a0; i < a1; ++i) {
        uint64_t bits = std::bit_cast<uint64_t>(m.w[i]);
        for (int b = 0; b < 8; ++b) bytes[(i - a0) * 8 + b] = (bits >> (8 * b)) & 255;
    }
    const int sv = m.spec.states.shape_states();
    j["appearance"] = {{"dims", {m.spec.topology.num_landmarks, sv, m.spec.template_rows, m.spec.template_cols, m.spec.feature_dim}},
                       {"encoding", "base64-f64le"},
                       {"data", base64_encode(bytes.data(), bytes.size())}};
    json springs = json::array();
    for (size_t i = L.springs_begin(); i < L.springs_end(); ++i) springs.push_back(number_or_sentinel(m.w[i]));
    j["springs"] = springs;
    json biases = json::array();
    for (size_t i = L.biases_begin(); i < L.size(); ++i) biases.push_back(number_or_sentinel(m.w[i]));
    j["biases"] = biases;
    return j;
}

Model model_from_json(const json& j) {
    const std::string root = "";
    if (!j.is_object()) fail("/", "expected an object");
    if (get_as<std::string>(j, "format", root) != "hpm-model") fail("/format", "not an hpm model");
    int version = get_as<int>(j, "version", root);
    if (version != kModelFormatVersion)
        fail("/version", "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kModelFormatVersion) + ")");
    Model m;
    m.spec = spec_from_json(field(j, "spec", root), "/spec");
    m.layout = ParamLayout(m.spec);
    const auto& L = m.layout;
    if (get_as<size_t>(j, "param_size", root) != L.size()) fail("/param_size", "does not match the declared dimensions");
    m.w.assign(L.size(), 0.0);
    m.w[L.root_offset()] = read_value(field(j, "root_offset", root), "/root_offset");
    const json& app = field(j, "appearance", root);
    auto dims = get_as<std::vector<int>>(app, "dims", "/appearance");
    const int sv = m.spec.states.shape_states();
    if (dims != std::vector<int>{m.spec.topology.num_landmarks, sv, m.spec.template_rows, m.spec.template_cols, m.spec.feature_dim})
        fail("/appearance/dims", "does not match the model spec");
    if (get_as<std::string>(app, "encoding", "/appearance") != "base64-f64le") fail("/appearance/encoding", "unsupported");
    std::vector<unsigned char> bytes;
    try {
        bytes = base64_decode(get_as<std::string>(app, "data", "/appearance"));
    } catch (const FormatError& e) {
        fail("/appearance/data", e.what());
    }
    const size_t a0 = L.appearance_begin(), a1 = L.appearance_end();
    if (bytes.size() != (a1 - a0) * 8) fail("/appearance/data", "wrong byte count");
    for (size_t i = a0; i < a1; ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= uint64_t(bytes[(i - a0) * 8 + b]) << (8 * b);
        m.w[i] = std::bit_cast<double>(bits);
    }
    const json& springs = field(j, "springs", root);
    if (!springs.is_array() || springs.size() != L.springs_end() - L.springs_begin()) fail("/springs", "wrong length");
    for (size_t i = 0; i < springs.size(); ++i)
        m.w[L.springs_begin() + i] = read_value(springs[i], "/springs/" + std::to_string(i));
    const json& biases = field(j, "biases", root);
    if (!biases.is_array() || biases.size() != L.size() - L.biases_begin()) fail("/biases", "wrong length");
    for (size_t i = 0; i < biases.size(); ++i)
        m.w[L.biases_begin() + i] = read_value(biases[i], "/biases/" + std::to_string(i));
    return m;
}

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw FormatError("corrupt model file " + path + " at byte " + std::to_string(e.byte) + ": truncated or malformed JSON");
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text << "\n";
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace

void save_model(const Model& m, const std::string& path) { write_text(path, model_to_json(m).dump(1)); }

Model load_model(const std::string& path) {
    json j = read_json_file(path);
    if (j.is_object() && j.value("format", "") == "hpm-detector") {
        Detector d = load_detector(path);
        return d.components.at(0);
    }
    try {
        return model_from_json(j);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_detector(const Detector& d, const std::string& path) {
    if (d.components.size() == 1) {
        save_model(d.components[0], path);
        return;
    }
    json j;
    j["format"] = "hpm-detector";
    j["version"] = kModelFormatVersion;
    json comps = json::array();
    for (const auto& m : d.components) comps.push_back(model_to_json(m));
    j["components"] = comps;
    write_text(path, j.dump(1));
}

Detector load_detector(const std::string& path) {
    json j = read_json_file(path);
    Detector d;
    try {
        if (j.is_object() && j.value("format", "") == "hpm-detector") {
            if (j.value("version", -1) != kModelFormatVersion) fail("/version", "unsupported version");
            const json& comps = field(j, "components", "");
            for (const auto& c : comps) d.components.push_back(model_from_json(c));
            if (d.components.empty()) fail("/components", "empty");
        } else {
            d.components.push_back(model_from_json(j));
        }
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
    return d;
}

}  // namespace hpm
