#include "hpm/topology.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "hpm/common.hpp"

namespace hpm {

using nlohmann::json;

int Topology::part_index(const std::string& name) const {
    for (int i = 0; i < num_parts(); ++i)
        if (part_names[i] == name) return i;
    return -1;
}

void Topology::finalize() {
    const int np = num_parts();
    if (np == 0) throw ConfigError("topology: no parts");
    if (int(part_parent.size()) != np || int(part_landmarks.size()) != np)
        throw ConfigError("topology: part arrays have inconsistent lengths");
    if (num_landmarks <= 0) throw ConfigError("topology: no landmarks");
    root = -1;
    children.assign(np, {});
    for (int p = 0; p < np; ++p) {
        int q = part_parent[p];
        if (q < 0) {
            if (root >= 0) throw ConfigError("topology: more than one root part");
            root = p;
        } else {
            if (q >= np || q == p) throw ConfigError("topology: bad parent for part " + part_names[p]);
            children[q].push_back(p);
        }
    }
    if (root < 0) throw ConfigError("topology: no root part");
    preorder.clear();
    std::vector<int> stack{root};
    std::vector<char> seen(np, 0);
    while (!stack.empty()) {
        int p = stack.back();
        stack.pop_back();
        if (seen[p]) throw ConfigError("topology: part graph has a cycle");
        seen[p] = 1;
        preorder.push_back(p);
        for (auto it = children[p].rbegin(); it != children[p].rend(); ++it) stack.push_back(*it);
    }
    if (int(preorder.size()) != np) throw ConfigError("topology: parts do not form a single tree");

    landmark_part.assign(num_landmarks, -1);
    landmark_slot.assign(num_landmarks, -1);
    for (int p = 0; p < np; ++p) {
        if (part_landmarks[p].empty()) throw ConfigError("topology: part " + part_names[p] + " has no landmarks");
        if (part_landmarks[p].size() > 64) throw ConfigError("topology: more than 64 landmarks in a part");
        for (size_t s = 0; s < part_landmarks[p].size(); ++s) {
            int k = part_landmarks[p][s];
            if (k < 0 || k >= num_landmarks) throw ConfigError("topology: landmark id out of range");
            if (landmark_part[k] >= 0) throw ConfigError("topology: landmark " + std::to_string(k) + " in two parts");
            landmark_part[k] = p;
            landmark_slot[k] = int(s);
        }
    }
    for (int k = 0; k < num_landmarks; ++k)
        if (landmark_part[k] < 0) throw ConfigError("topology: landmark " + std::to_string(k) + " has no part");

    if (!landmark_sources.empty() && int(landmark_sources.size()) != num_landmarks)
        throw ConfigError("topology: landmark_sources length mismatch");

    part_mirror.clear();
    if (!landmark_mirror.empty()) {
        if (int(landmark_mirror.size()) != num_landmarks) throw ConfigError("topology: mirror table length mismatch");
        part_mirror.assign(np, -1);
        for (int k = 0; k < num_landmarks; ++k) {
            int m = landmark_mirror[k];
            if (m < 0 || m >= num_landmarks || landmark_mirror[m] != k)
                throw ConfigError("topology: mirror table is not an involution");
            int p = landmark_part[k], q = landmark_part[m];
            if (part_mirror[p] >= 0 && part_mirror[p] != q)
                throw ConfigError("topology: mirror table splits part " + part_names[p]);
            part_mirror[p] = q;
        }
        for (int p = 0; p < np; ++p) {
            int q = part_mirror[p];
            if (part_landmarks[p].size() != part_landmarks[q].size())
                throw ConfigError("topology: mirrored parts differ in size");
            int pp = part_parent[p], qp = part_parent[q];
            if ((pp < 0) != (qp < 0) || (pp >= 0 && part_mirror[pp] != qp))
                throw ConfigError("topology: mirror table is not tree-consistent at " + part_names[p]);
        }
    }
}

Topology topology_from_json(const json& j) {
    Topology t;
    try {
        if (!j.is_object()) throw ConfigError("topology: expected an object");
        t.num_landmarks = j.at("num_landmarks").get<int>();
        const auto& parts = j.at("parts");
        std::vector<std::string> parents;
        for (const auto& p : parts) {
            t.part_names.push_back(p.at("name").get<std::string>());
            parents.push_back(p.at("parent").is_null() ? std::string() : p.at("parent").get<std::string>());
            t.part_landmarks.push_back(p.at("landmarks").get<std::vector<int>>());
        }
        for (const auto& name : parents) {
            if (name.empty()) {
                t.part_parent.push_back(-1);
                continue;
            }
            int idx = t.part_index(name);
            if (idx < 0) throw ConfigError("topology: unknown parent part '" + name + "'");
            t.part_parent.push_back(idx);
        }
        if (j.contains("landmark_mirror")) t.landmark_mirror = j.at("landmark_mirror").get<std::vector<int>>();
        if (j.contains("landmark_sources"))
            t.landmark_sources = j.at("landmark_sources").get<std::vector<std::vector<int>>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("topology: ") + e.what());
    }
    t.finalize();
    return t;
}

json topology_to_json(const Topology& t) {
    json j;
    j["num_landmarks"] = t.num_landmarks;
    json parts = json::array();
    for (int p = 0; p < t.num_parts(); ++p) {
        json e;
        e["name"] = t.part_names[p];
        e["parent"] = t.part_parent[p] < 0 ? json(nullptr) : json(t.part_names[t.part_parent[p]]);
        e["landmarks"] = t.part_landmarks[p];
        parts.push_back(e);
    }
    j["parts"] = parts;
    if (!t.landmark_mirror.empty()) j["landmark_mirror"] = t.landmark_mirror;
    if (!t.landmark_sources.empty()) j["landmark_sources"] = t.landmark_sources;
    return j;
}

Topology load_topology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open topology file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("topology file " + path + ": " + e.what());
    }
    return topology_from_json(j);
}

const std::vector<int>& face68_mirror() {
    static const std::vector<int> m = [] {
        std::vector<int> t(68);
        std::iota(t.begin(), t.end(), 0);
        auto pair = [&](int a, int b) {
            t[a] = b;
            t[b] = a;
        };
        for (int i = 0; i <= 7; ++i) pair(i, 16 - i);
        for (int i = 0; i < 5; ++i) pair(17 + i, 26 - i);
        pair(31, 35);
        pair(32, 34);
        pair(36, 45);
        pair(37, 44);
        pair(38, 43);
        pair(39, 42);
        pair(40, 47);
        pair(41, 46);
        pair(48, 54);
        pair(49, 53);
        pair(50, 52);
        pair(55, 59);
        pair(56, 58);
        pair(60, 64);
        pair(61, 63);
        pair(65, 67);
        return t;
    }();
    return m;
}

namespace {

std::vector<int> range(int a, int b) {
    std::vector<int> r;
    for (int i = a; i <= b; ++i) r.push_back(i);
    return r;
}

std::vector<int> cat(std::vector<int> a, const std::vector<int>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

Topology face68_topology() {
    Topology t;
    t.num_landmarks = 68;
    struct P {
        const char* name;
        int parent;
        std::vector<int> lms;
    };
    const std::vector<P> parts = {
        {"nose", -1, range(27, 35)},
        {"right_eye", 0, range(36, 41)},
        {"left_eye", 0, range(42, 47)},
        {"right_brow", 1, range(17, 21)},
        {"left_brow", 2, range(22, 26)},
        {"upper_lip", 0, cat(range(48, 54), range(60, 64))},
        {"lower_lip", 5, cat(range(55, 59), range(65, 67))},
        {"chin", 6, range(6, 10)},
        {"right_jaw", 7, range(0, 5)},
        {"left_jaw", 7, range(11, 16)},
    };
    for (const auto& p : parts) {
        t.part_names.push_back(p.name);
        t.part_parent.push_back(p.parent);
        t.part_landmarks.push_back(p.lms);
    }
    t.landmark_mirror = face68_mirror();
    t.finalize();
    return t;
}

Topology lowres7_topology() {
    Topology t;
    t.num_landmarks = 7;
    const std::vector<std::pair<const char*, int>> parts = {
        {"nose", -1}, {"right_eye", 0}, {"left_eye", 0}, {"mouth", 0},
        {"chin", 3},  {"right_jaw", 4}, {"left_jaw", 4},
    };
    for (int i = 0; i < 7; ++i) {
        t.part_names.push_back(parts[i].first);
        t.part_parent.push_back(parts[i].second);
        t.part_landmarks.push_back({i});
    }
    t.landmark_sources = {range(27, 35), range(36, 41), range(42, 47), range(48, 67),
                          range(6, 10), range(0, 5), range(11, 16)};
    t.landmark_mirror = {0, 2, 1, 3, 4, 6, 5};
    t.finalize();
    return t;
}

}  // namespace hpm
