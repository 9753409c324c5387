#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nvs/pipeline/pipeline.hpp"

using nvs::pipe::RunConfig;

int main(int argc, char** argv) {
    CLI::App app{"unposed sparse-view novel view synthesis and 3D distillation"};
    app.require_subcommand(1);

    std::string config_path, out, cond;
    uint64_t seed = 0;
    bool seed_set = false, out_set = false, cond_set = false;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--out", out, "output directory")
            ->each([&](const std::string&) { out_set = true; });
        sub->add_option("--seed", seed, "run seed")
            ->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--cond", cond,
                        "conditioning ablation: df+slt | df_only | slt_only")
            ->each([&](const std::string&) { cond_set = true; });
    };

    const char* stages[] = {"gen-data", "train-srt", "train-diffusion",
                            "distill",  "eval",      "report"};
    for (const char* stage : stages)
        add_common(app.add_subcommand(stage, std::string("run stage ") + stage));

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw nvs::IoError("cannot read config " + config_path);
            cfg = RunConfig::from_json(nlohmann::json::parse(f));
        }
        cfg.stage = app.get_subcommands().front()->get_name();
        if (out_set) cfg.out = out;
        if (seed_set) cfg.seed = seed;
        if (cond_set) cfg.cond = cond;
        nvs::pipe::run(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
