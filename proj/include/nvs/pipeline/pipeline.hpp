#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nvs/data/dataset.hpp"
#include "nvs/diffusion/diffusion.hpp"
#include "nvs/distill/distill.hpp"
#include "nvs/eval/metrics.hpp"
#include "nvs/srt/srt.hpp"

// Stage orchestration. Each stage is one process; stages communicate only
// through on-disk artifacts (dataset, checkpoints, CSVs). Every run writes a
// resolved-config snapshot next to its outputs so it can be replayed.
namespace nvs::pipe {

struct RunConfig {
    std::string stage;  // gen-data|train-srt|train-diffusion|distill|eval|report
    std::string out = "out";
    std::string dataset;            // defaults to <out>/dataset
    std::string srt_checkpoint;     // defaults to <out>/srt
    std::string diffusion_checkpoint;  // defaults to <out>/diffusion
    std::string field_root;         // defaults to <out>/fields
    uint64_t seed = 7;
    // conditioning ablation, applied at train AND sample time:
    // df_only drops the set-latent branch, slt_only the decoder-feature one.
    std::string cond = "df+slt";

    data::DatasetGenConfig gen;
    srt::SrtConfig srt;
    int srt_steps = 50000;
    float srt_lr = 1e-4f;
    int max_context_views = 3;

    diff::DiffusionConfig diffusion;
    int diffusion_steps = 50000;
    float diffusion_lr = 1e-4f;

    distill::DistillConfig distill;
    distill::FieldConfig field;
    int distill_scenes = 5;

    std::vector<int> eval_view_counts = {1, 3, 6};
    int eval_scenes = 5;
    int eval_queries = 2;
    int sample_steps = 30;
    float guidance = 9.0f;
    int eval_samples_per_ray = 64;
    eval::WarpFitConfig warp_fit;

    std::string resolved_dataset() const;
    std::string resolved_srt() const;
    std::string resolved_diffusion() const;
    std::string resolved_fields() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// NVS_DETERMINISTIC=1 pins the scalar kernel set so reruns are bit-stable
// across machines.
void apply_determinism_env();

// Dispatches on cfg.stage after writing <out>/<stage>_config.json.
void run(const RunConfig& cfg);

void run_gen_data(const RunConfig& cfg);
void run_train_srt(const RunConfig& cfg);
void run_train_diffusion(const RunConfig& cfg);
void run_distill(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
void run_report(const RunConfig& cfg);

// Per-view-count summary of the metrics CSV emitted by the eval stage.
struct ReportRow {
    int views = 0;
    double psnr_a = 0, ssim_a = 0;
    int count = 0;
};

struct Report {
    std::vector<ReportRow> rows;  // sorted by view count
    std::string monotonicity;     // "monotone-up" | "flat" | "non-monotone"
    double field_psnr_a = 0;      // 0 when no 3D rows are present
    double white_psnr_a = 0;
};

Report render_report(const std::string& csv_path);

}  // namespace nvs::pipe
