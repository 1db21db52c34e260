#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace hpm {

// Parts form a tree; every landmark hangs off exactly one part.
struct Topology {
    std::vector<std::string> part_names;
    std::vector<int> part_parent;                   // -1 for the root
    std::vector<std::vector<int>> part_landmarks;   // landmark ids per part, in slot order
    int num_landmarks = 0;
    std::vector<int> landmark_mirror;               // optional left/right table
    std::vector<int> part_mirror;                   // optional, derived from landmark_mirror
    std::vector<std::vector<int>> landmark_sources; // optional: indices into a finer annotation

    // Derived by finalize().
    int root = -1;
    std::vector<int> preorder;
    std::vector<std::vector<int>> children;
    std::vector<int> landmark_part, landmark_slot;

    int num_parts() const { return int(part_names.size()); }
    int num_nodes() const { return num_parts() + num_landmarks; }
    bool has_mirror() const { return !landmark_mirror.empty(); }
    int part_index(const std::string& name) const;

    // Validates structure and fills derived fields; throws ConfigError.
    void finalize();
};

Topology topology_from_json(const nlohmann::json& j);
nlohmann::json topology_to_json(const Topology& t);
Topology load_topology(const std::string& path);

// Built-in 68-landmark, 10-part face layout rooted at the nose.
Topology face68_topology();
// Built-in 7-part layout with one landmark per part, each the mean of face68 points.
Topology lowres7_topology();
// iBUG 68-point left/right correspondence.
const std::vector<int>& face68_mirror();

}  // namespace hpm
