#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "nvs/core/serialize.hpp"
#include "nvs/data/dataset.hpp"

namespace fs = std::filesystem;

namespace nvs::data {

namespace {

nlohmann::json load_json(const std::string& path, const std::string& what) {
    std::ifstream is(path);
    if (!is) throw CorruptDataset("missing " + what + ": " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptDataset("unparsable " + what + ": " + path + " (" + e.what() + ")");
    }
}

}  // namespace

int write_dataset(const std::string& root, const DatasetGenConfig& cfg) {
    fs::create_directories(root);
    nlohmann::json index;
    index["image_size"] = cfg.image_size;
    index["seed"] = cfg.seed;
    nlohmann::json scenes = nlohmann::json::array();
    int total_views = 0;
    for (int s = 0; s < cfg.scene_count; ++s) {
        const uint64_t scene_seed = cfg.seed * 100000ull + static_cast<uint64_t>(s);
        const SceneSpec spec = generate_scene(scene_seed);
        const auto poses =
            sample_views(spec, cfg.views_per_scene, cfg.seed, cfg.image_size);
        const std::string dir = "scene_" + std::to_string(scene_seed);
        fs::create_directories(fs::path(root) / dir);

        nlohmann::json entry;
        entry["seed"] = scene_seed;
        entry["dir"] = dir;
        entry["view_count"] = cfg.views_per_scene;
        {
            std::ofstream os(fs::path(root) / dir / "spec.json");
            os << spec.to_json().dump(2) << "\n";
        }
        nlohmann::json checksums;
        checksums["spec.json"] = file_hash_hex((fs::path(root) / dir / "spec.json").string());
        for (int k = 0; k < cfg.views_per_scene; ++k) {
            const ViewRecord rec = render_scene(spec, poses[static_cast<size_t>(k)], k);
            const std::string img_name = "view_" + std::to_string(k) + ".png";
            const std::string mask_name = "mask_" + std::to_string(k) + ".png";
            const std::string pose_name = "pose_" + std::to_string(k) + ".json";
            img::write_png((fs::path(root) / dir / img_name).string(), rec.image);
            img::write_png((fs::path(root) / dir / mask_name).string(), rec.mask);
            {
                std::ofstream os(fs::path(root) / dir / pose_name);
                os << rec.pose.to_json().dump(2) << "\n";
            }
            for (const auto& f : {img_name, mask_name, pose_name})
                checksums[f] = file_hash_hex((fs::path(root) / dir / f).string());
            ++total_views;
        }
        entry["checksums"] = checksums;
        scenes.push_back(entry);
    }
    index["scenes"] = scenes;
    std::ofstream os(fs::path(root) / "index.json");
    if (!os) throw IoError("cannot write dataset index in " + root);
    os << index.dump(2) << "\n";
    return total_views;
}

Dataset Dataset::open(const std::string& root) {
    Dataset ds;
    ds.root_ = root;
    const nlohmann::json index = load_json((fs::path(root) / "index.json").string(),
                                           "dataset index");
    for (const auto& entry : index.at("scenes")) {
        SceneEntry se;
        se.seed = entry.at("seed").get<uint64_t>();
        se.dir = entry.at("dir").get<std::string>();
        se.view_count = entry.at("view_count").get<int>();
        const auto& checksums = entry.at("checksums");
        int files_seen = 0;
        for (auto it = checksums.begin(); it != checksums.end(); ++it) {
            const std::string path = (fs::path(root) / se.dir / it.key()).string();
            if (!fs::exists(path))
                throw CorruptDataset("missing file: " + se.dir + "/" + it.key());
            if (file_hash_hex(path) != it.value().get<std::string>())
                throw CorruptDataset("checksum mismatch: " + se.dir + "/" + it.key());
            ++files_seen;
        }
        if (files_seen != 3 * se.view_count + 1)
            throw CorruptDataset("index count mismatch in " + se.dir);
        int on_disk = 0;
        for (const auto& f : fs::directory_iterator(fs::path(root) / se.dir))
            if (f.is_regular_file()) ++on_disk;
        if (on_disk != files_seen)
            throw CorruptDataset("unindexed files in " + se.dir);
        ds.scenes_.push_back(se);
    }
    return ds;
}

ViewRecord Dataset::load_view(const SceneEntry& scene, int view_id) const {
    if (view_id < 0 || view_id >= scene.view_count)
        throw CorruptDataset("view id out of range in " + scene.dir);
    ViewRecord rec;
    const fs::path dir = fs::path(root_) / scene.dir;
    rec.image = img::read_png((dir / ("view_" + std::to_string(view_id) + ".png")).string());
    rec.mask = img::read_png((dir / ("mask_" + std::to_string(view_id) + ".png")).string());
    const auto pj = load_json((dir / ("pose_" + std::to_string(view_id) + ".json")).string(),
                              "pose for " + scene.dir + " view " + std::to_string(view_id));
    rec.pose = geom::CameraPose::from_json(pj);
    rec.scene_id = scene.seed;
    rec.view_id = view_id;
    return rec;
}

SceneSpec Dataset::load_spec(const SceneEntry& scene) const {
    const auto j = load_json((fs::path(root_) / scene.dir / "spec.json").string(),
                             "scene spec for " + scene.dir);
    return SceneSpec::from_json(j);
}

std::vector<SceneEntry> Dataset::train_split() const {
    std::vector<SceneEntry> out;
    for (const auto& s : scenes_)
        if (s.seed % 2 == 0) out.push_back(s);
    return out;
}

std::vector<SceneEntry> Dataset::val_split() const {
    std::vector<SceneEntry> out;
    for (const auto& s : scenes_)
        if (s.seed % 2 == 1) out.push_back(s);
    return out;
}

}  // namespace nvs::data
