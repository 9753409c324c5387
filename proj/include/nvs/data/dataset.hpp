#pragma once

#include <map>
#include <string>
#include <vector>

#include "nvs/data/scene.hpp"

namespace nvs::data {

struct SceneEntry {
    uint64_t seed = 0;
    int view_count = 0;
    std::string dir;  // relative to root, e.g. "scene_7"
};

// On-disk layout:
//   root/scene_<seed>/view_<k>.png, mask_<k>.png, pose_<k>.json
//   root/index.json with per-file checksums.
class Dataset {
public:
    static Dataset open(const std::string& root);  // throws CorruptDataset

    const std::vector<SceneEntry>& scenes() const { return scenes_; }
    const std::string& root() const { return root_; }

    ViewRecord load_view(const SceneEntry& scene, int view_id) const;
    SceneSpec load_spec(const SceneEntry& scene) const;

    // Scene-seed parity split: even = train, odd = val.
    std::vector<SceneEntry> train_split() const;
    std::vector<SceneEntry> val_split() const;

private:
    std::string root_;
    std::vector<SceneEntry> scenes_;
};

struct DatasetGenConfig {
    int scene_count = 64;
    int views_per_scene = 8;
    int image_size = 64;
    uint64_t seed = 7;
};

// Renders and writes every scene; returns the number of views written.
int write_dataset(const std::string& root, const DatasetGenConfig& cfg);

}  // namespace nvs::data
