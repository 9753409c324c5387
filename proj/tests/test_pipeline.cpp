#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "nvs/core/serialize.hpp"
#include "nvs/pipeline/pipeline.hpp"

using namespace nvs;
using namespace nvs::pipe;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const std::string& out) {
    RunConfig cfg;
    cfg.out = out;
    cfg.seed = 7;
    cfg.gen = {4, 5, 16, 7};
    cfg.srt.image_size = 16;
    cfg.srt.dim = 16;
    cfg.srt.heads = 2;
    cfg.srt.enc_blocks = 1;
    cfg.srt.dec_blocks = 1;
    cfg.srt.mlp_ratio = 2;
    cfg.srt_steps = 3;
    cfg.max_context_views = 2;
    cfg.diffusion.image_size = 16;
    cfg.diffusion.base_channels = 8;
    cfg.diffusion.heads = 2;
    cfg.diffusion.cond_dim = 16;
    cfg.diffusion.cd_channels = 25;
    cfg.diffusion.time_dim = 16;
    cfg.diffusion.t_count = 50;
    cfg.diffusion_steps = 3;
    cfg.distill.total_iters = 2;
    cfg.distill.warmup_iters = 1;
    cfg.distill.ddim_steps = 2;
    cfg.distill.samples_per_ray = 8;
    cfg.field.levels = 2;
    cfg.field.feats = 2;
    cfg.field.log2_table = 6;
    cfg.field.base_res = 4;
    cfg.field.mlp_width = 8;
    cfg.distill_scenes = 1;
    cfg.eval_view_counts = {1, 3};
    cfg.eval_scenes = 1;
    cfg.eval_queries = 1;
    cfg.sample_steps = 3;
    cfg.eval_samples_per_ray = 8;
    cfg.warp_fit.iters = 20;
    cfg.warp_fit.starts = 1;
    return cfg;
}

// Shared fixture directory: the stage tests build on each other in order.
const std::string& workdir() {
    static const std::string dir = [] {
        const std::string d =
            (fs::temp_directory_path() / "nvs_pipeline_test").string();
        fs::remove_all(d);
        return d;
    }();
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

RunConfig staged(const std::string& stage) {
    RunConfig cfg = tiny_run(workdir());
    cfg.stage = stage;
    return cfg;
}

}  // namespace

TEST_CASE("run config json round trip and validation") {
    RunConfig cfg = tiny_run("somewhere");
    cfg.stage = "eval";
    cfg.cond = "df_only";
    const RunConfig back = RunConfig::from_json(cfg.to_json());
    CHECK(back.out == "somewhere");
    CHECK(back.cond == "df_only");
    CHECK(back.srt.dim == 16);
    CHECK(back.diffusion.t_count == 50);
    CHECK(back.distill.total_iters == 2);
    CHECK(back.eval_view_counts == std::vector<int>{1, 3});
    CHECK(back.warp_fit.iters == 20);

    cfg.cond = "both";
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
    cfg = tiny_run("x");
    cfg.eval_view_counts = {5};  // 5 context + 1 query > 5 views
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
    cfg = tiny_run("x");
    cfg.srt.image_size = 32;
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
}

TEST_CASE("gen-data is deterministic and missing checkpoints are named") {
    RunConfig cfg = staged("gen-data");
    run(cfg);
    CHECK(fs::exists(fs::path(workdir()) / "gen_data_config.json"));
    const data::Dataset ds = data::Dataset::open(cfg.resolved_dataset());
    CHECK(ds.scenes().size() == 4);

    // a second generation from the same seed produces identical bytes
    RunConfig again = cfg;
    again.out = workdir() + "_again";
    run(again);
    CHECK(slurp(cfg.resolved_dataset() + "/index.json") ==
          slurp(again.resolved_dataset() + "/index.json"));
    fs::remove_all(again.out);

    // nothing is trained yet: every downstream stage names its dependency
    try {
        run_train_diffusion(staged("train-diffusion"));
        FAIL("expected MissingDependency");
    } catch (const MissingDependency& e) {
        CHECK(e.dependency == "srt");
    }
    try {
        run_distill(staged("distill"));
        FAIL("expected MissingDependency");
    } catch (const MissingDependency& e) {
        CHECK(e.dependency == "srt");
    }
}

TEST_CASE("train-srt stage writes a checkpoint and a loss log") {
    run(staged("train-srt"));
    const CheckpointManifest m = load_manifest(workdir() + "/srt");
    CHECK(m.kind == "srt");
    CHECK(slurp(workdir() + "/train_srt_loss.csv").rfind("step,loss", 0) == 0);

    // diffusion is still missing for distillation
    try {
        run_distill(staged("distill"));
        FAIL("expected MissingDependency");
    } catch (const MissingDependency& e) {
        CHECK(e.dependency == "diffusion");
    }
}

TEST_CASE("train-diffusion freezes the srt checkpoint") {
    const std::string srt_weights = [&] {
        const CheckpointManifest m = load_manifest(workdir() + "/srt");
        return workdir() + "/srt/" + m.weights_file;
    }();
    const std::string before = file_hash_hex(srt_weights);
    run(staged("train-diffusion"));
    CHECK(file_hash_hex(srt_weights) == before);

    const CheckpointManifest m = load_manifest(workdir() + "/diffusion");
    CHECK(m.kind == "diffusion");
    const auto audit =
        nlohmann::json::parse(slurp(workdir() + "/train_diffusion_audit.json"));
    CHECK(audit.at("unchanged").get<bool>());
}

TEST_CASE("distill stage freezes both upstream checkpoints") {
    const auto weights_path = [&](const std::string& dir) {
        return dir + "/" + load_manifest(dir).weights_file;
    };
    const std::string srt_before = file_hash_hex(weights_path(workdir() + "/srt"));
    const std::string diff_before =
        file_hash_hex(weights_path(workdir() + "/diffusion"));

    run(staged("distill"));
    CHECK(file_hash_hex(weights_path(workdir() + "/srt")) == srt_before);
    CHECK(file_hash_hex(weights_path(workdir() + "/diffusion")) == diff_before);

    // one field checkpoint per requested val scene
    int fields = 0;
    for (const auto& e : fs::directory_iterator(workdir() + "/fields"))
        if (e.is_directory()) {
            CHECK(load_manifest(e.path().string()).kind == "field");
            ++fields;
        }
    CHECK(fields == 1);
}

TEST_CASE("eval emits the metrics csv schema and deterministic reruns") {
    setenv("NVS_DETERMINISTIC", "1", 1);
    run(staged("eval"));
    const std::string csv = slurp(workdir() + "/metrics.csv");
    CHECK(csv.rfind("instance,views,view_id,method,psnr,ssim,psnr_a,ssim_a,"
                    "a00,a01,a10,a11,b0,b1",
                    0) == 0);
    CHECK(csv.find(",diffusion,") != std::string::npos);
    CHECK(csv.find(",white,") != std::string::npos);
    CHECK(csv.find(",field,") != std::string::npos);
    CHECK(csv.find("mean,") != std::string::npos);
    CHECK(fs::exists(fs::path(workdir()) / "grid.png"));

    run(staged("eval"));
    CHECK(slurp(workdir() + "/metrics.csv") == csv);  // byte-identical rerun
    unsetenv("NVS_DETERMINISTIC");
}

TEST_CASE("report stage summarizes the csv") {
    run(staged("report"));
    const Report rep = render_report(workdir() + "/metrics.csv");
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].views == 1);
    CHECK(rep.rows[1].views == 3);
    CHECK(rep.rows[0].count == 1);
    CHECK(rep.white_psnr_a > 0);
    CHECK(rep.field_psnr_a > 0);
    const std::string txt = slurp(workdir() + "/report.txt");
    CHECK(txt.find("trend: ") != std::string::npos);
}

TEST_CASE("render_report monotonicity oracles") {
    const auto write_csv = [](const std::string& path,
                              const std::vector<std::pair<int, double>>& rows) {
        std::ofstream f(path);
        f << "instance,views,view_id,method,psnr,ssim,psnr_a,ssim_a,"
             "a00,a01,a10,a11,b0,b1\n";
        for (const auto& [views, psnr_a] : rows)
            f << "s,"  << views << ",0,diffusion,1,0.5," << psnr_a
              << ",0.5,1,0,0,1,0,0\n";
    };
    const std::string p = (fs::temp_directory_path() / "nvs_report_test.csv").string();

    write_csv(p, {{1, 15.0}, {3, 15.0}, {6, 15.0}});
    CHECK(render_report(p).monotonicity == "flat");
    write_csv(p, {{1, 14.0}, {3, 15.0}, {6, 15.5}});
    CHECK(render_report(p).monotonicity == "monotone-up");
    write_csv(p, {{1, 15.0}, {3, 14.0}, {6, 15.5}});
    CHECK(render_report(p).monotonicity == "non-monotone");

    std::ofstream(p) << "instance,views,view_id,method,psnr,ssim,psnr_a,ssim_a\n";
    CHECK_THROWS_AS(render_report(p), EmptyInput);
    fs::remove(p);
}

TEST_CASE("fixture cleanup") {
    fs::remove_all(workdir());
    CHECK(!fs::exists(workdir()));
}
