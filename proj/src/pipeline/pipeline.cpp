#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nvs/core/kernels.hpp"
#include "nvs/core/serialize.hpp"
#include "nvs/pipeline/pipeline.hpp"

namespace fs = std::filesystem;

namespace nvs::pipe {

std::string RunConfig::resolved_dataset() const {
    return dataset.empty() ? out + "/dataset" : dataset;
}
std::string RunConfig::resolved_srt() const {
    return srt_checkpoint.empty() ? out + "/srt" : srt_checkpoint;
}
std::string RunConfig::resolved_diffusion() const {
    return diffusion_checkpoint.empty() ? out + "/diffusion" : diffusion_checkpoint;
}
std::string RunConfig::resolved_fields() const {
    return field_root.empty() ? out + "/fields" : field_root;
}

nlohmann::json RunConfig::to_json() const {
    return {{"stage", stage},
            {"out", out},
            {"dataset", dataset},
            {"srt_checkpoint", srt_checkpoint},
            {"diffusion_checkpoint", diffusion_checkpoint},
            {"field_root", field_root},
            {"seed", seed},
            {"cond", cond},
            {"gen",
             {{"scene_count", gen.scene_count},
              {"views_per_scene", gen.views_per_scene},
              {"image_size", gen.image_size},
              {"seed", gen.seed}}},
            {"srt", srt.to_json()},
            {"srt_steps", srt_steps},
            {"srt_lr", srt_lr},
            {"max_context_views", max_context_views},
            {"diffusion", diffusion.to_json()},
            {"diffusion_steps", diffusion_steps},
            {"diffusion_lr", diffusion_lr},
            {"distill", distill.to_json()},
            {"field", field.to_json()},
            {"distill_scenes", distill_scenes},
            {"eval_view_counts", eval_view_counts},
            {"eval_scenes", eval_scenes},
            {"eval_queries", eval_queries},
            {"sample_steps", sample_steps},
            {"guidance", guidance},
            {"eval_samples_per_ray", eval_samples_per_ray},
            {"warp_fit",
             {{"iters", warp_fit.iters},
              {"step", warp_fit.step},
              {"starts", warp_fit.starts},
              {"seed", warp_fit.seed}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.stage = j.value("stage", c.stage);
    c.out = j.value("out", c.out);
    c.dataset = j.value("dataset", c.dataset);
    c.srt_checkpoint = j.value("srt_checkpoint", c.srt_checkpoint);
    c.diffusion_checkpoint = j.value("diffusion_checkpoint", c.diffusion_checkpoint);
    c.field_root = j.value("field_root", c.field_root);
    c.seed = j.value("seed", c.seed);
    c.cond = j.value("cond", c.cond);
    if (j.contains("gen")) {
        const auto& g = j.at("gen");
        c.gen.scene_count = g.value("scene_count", c.gen.scene_count);
        c.gen.views_per_scene = g.value("views_per_scene", c.gen.views_per_scene);
        c.gen.image_size = g.value("image_size", c.gen.image_size);
        c.gen.seed = g.value("seed", c.gen.seed);
    }
    if (j.contains("srt")) c.srt = srt::SrtConfig::from_json(j.at("srt"));
    c.srt_steps = j.value("srt_steps", c.srt_steps);
    c.srt_lr = j.value("srt_lr", c.srt_lr);
    c.max_context_views = j.value("max_context_views", c.max_context_views);
    if (j.contains("diffusion"))
        c.diffusion = diff::DiffusionConfig::from_json(j.at("diffusion"));
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
    c.diffusion_lr = j.value("diffusion_lr", c.diffusion_lr);
    if (j.contains("distill"))
        c.distill = distill::DistillConfig::from_json(j.at("distill"));
    if (j.contains("field")) c.field = distill::FieldConfig::from_json(j.at("field"));
    c.distill_scenes = j.value("distill_scenes", c.distill_scenes);
    if (j.contains("eval_view_counts"))
        c.eval_view_counts = j.at("eval_view_counts").get<std::vector<int>>();
    c.eval_scenes = j.value("eval_scenes", c.eval_scenes);
    c.eval_queries = j.value("eval_queries", c.eval_queries);
    c.sample_steps = j.value("sample_steps", c.sample_steps);
    c.guidance = j.value("guidance", c.guidance);
    c.eval_samples_per_ray = j.value("eval_samples_per_ray", c.eval_samples_per_ray);
    if (j.contains("warp_fit")) {
        const auto& w = j.at("warp_fit");
        c.warp_fit.iters = w.value("iters", c.warp_fit.iters);
        c.warp_fit.step = w.value("step", c.warp_fit.step);
        c.warp_fit.starts = w.value("starts", c.warp_fit.starts);
        c.warp_fit.seed = w.value("seed", c.warp_fit.seed);
    }
    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (cond != "df+slt" && cond != "df_only" && cond != "slt_only")
        throw BadConfig("cond: expected df+slt, df_only or slt_only, got " + cond);
    if (gen.scene_count < 1 || gen.views_per_scene < 2)
        throw BadConfig("gen: need at least one scene and two views per scene");
    if (srt.image_size != gen.image_size)
        throw BadConfig("srt.image_size must match gen.image_size");
    if (max_context_views < 1 || max_context_views >= gen.views_per_scene)
        throw BadConfig("max_context_views must be in [1, views_per_scene)");
    if (srt_steps < 1 || diffusion_steps < 1)
        throw BadConfig("srt_steps and diffusion_steps must be positive");
    if (eval_view_counts.empty()) throw BadConfig("eval_view_counts must be non-empty");
    for (int vc : eval_view_counts)
        if (vc < 1 || vc + eval_queries > gen.views_per_scene)
            throw BadConfig("eval_view_counts: each count + eval_queries must fit "
                            "inside views_per_scene");
    if (eval_scenes < 1 || eval_queries < 1)
        throw BadConfig("eval_scenes and eval_queries must be positive");
    if (sample_steps < 1 || sample_steps > diffusion.t_count)
        throw BadConfig("sample_steps must be in [1, t_count]");
    srt.validate();
    diffusion.validate();
    distill.validate();
    field.validate();
}

void apply_determinism_env() {
    const char* v = std::getenv("NVS_DETERMINISTIC");
    if (v && std::string(v) == "1") kern::set_isa(kern::Isa::Scalar);
}

namespace {

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

void require_checkpoint(const std::string& dir, const std::string& kind) {
    if (!fs::exists(fs::path(dir) / "manifest.json")) throw MissingDependency(kind);
}

std::string weights_hash(const std::string& dir) {
    const CheckpointManifest m = load_manifest(dir);
    return file_hash_hex((fs::path(dir) / m.weights_file).string());
}

// Context image set in its own anchored frame, plus the world->anchored
// transform used to express query poses in the same frame.
srt::ImageSet make_context(const data::Dataset& ds, const data::SceneEntry& scene,
                           const std::vector<int>& view_ids,
                           geom::SimilarityTransform* transform) {
    srt::ImageSet set;
    std::vector<geom::CameraPose> poses;
    for (int id : view_ids) {
        const data::ViewRecord view = ds.load_view(scene, id);
        set.images.push_back(img::to_float(view.image));
        poses.push_back(view.pose);
    }
    auto [g, anchored] = geom::anchor_frame(poses);
    set.poses = std::move(anchored);
    if (transform) *transform = g;
    return set;
}

diff::Conditioning apply_cond_mode(const diff::Conditioning& c, const std::string& mode) {
    if (mode == "df_only") return c.with_null(false, true);
    if (mode == "slt_only") return c.with_null(true, false);
    return c;
}

// Conditioning for one anchored query pose at the denoiser's working size.
diff::Conditioning query_conditioning(const srt::SrtModel& model,
                                      const srt::SetLatent& latent,
                                      const geom::CameraPose& query_anchored,
                                      int working_size, const std::string& mode) {
    const geom::RayGrid grid =
        geom::camera_rays_at(query_anchored, working_size, working_size);
    const srt::DecoderFeatures feats = model.decode_features(grid, latent);
    return apply_cond_mode(diff::make_conditioning(feats, grid, latent, working_size),
                           mode);
}

// Fisher-Yates prefix: k distinct indices from [0, n).
std::vector<int> sample_indices(Rng& rng, int n, int k) {
    std::vector<int> ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(
                              static_cast<uint64_t>(n - i)));
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    ids.resize(static_cast<size_t>(k));
    return ids;
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c = 0, uint64_t d = 0) {
    const uint64_t v[4] = {a, b, c, d};
    return fnv1a(v, sizeof v);
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

void append_metric_row(std::ofstream& csv, const std::string& instance, int views,
                       int view_id, const std::string& method,
                       const eval::MetricReport& m) {
    csv << instance << ',' << views << ',' << view_id << ',' << method << ','
        << fmt(m.psnr) << ',' << fmt(m.ssim) << ',' << fmt(m.psnr_a) << ','
        << fmt(m.ssim_a) << ',' << fmt(m.warp.a[0][0]) << ',' << fmt(m.warp.a[0][1])
        << ',' << fmt(m.warp.a[1][0]) << ',' << fmt(m.warp.a[1][1]) << ','
        << fmt(m.warp.b[0]) << ',' << fmt(m.warp.b[1]) << '\n';
}

// Horizontal tiling of equally sized RGB images with a 2px white gutter.
img::Image8 tile_row(const std::vector<img::Image8>& tiles) {
    const int h = tiles.front().height, w = tiles.front().width;
    const int gap = 2;
    img::Image8 row;
    row.height = h;
    row.width = static_cast<int>(tiles.size()) * (w + gap) - gap;
    row.channels = 3;
    row.pixels.assign(static_cast<size_t>(row.height) * row.width * 3, 255);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const int x0 = static_cast<int>(i) * (w + gap);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    row.at(y, x0 + x, c) = tiles[i].at(y, x, c);
    }
    return row;
}

img::Image8 stack_rows(const std::vector<img::Image8>& rows) {
    const int w = rows.front().width;
    const int gap = 2;
    img::Image8 grid;
    grid.width = w;
    grid.height = 0;
    for (const auto& r : rows) grid.height += r.height + gap;
    grid.height -= gap;
    grid.channels = 3;
    grid.pixels.assign(static_cast<size_t>(grid.height) * w * 3, 255);
    int y0 = 0;
    for (const auto& r : rows) {
        for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x)
                for (int c = 0; c < 3; ++c) grid.at(y0 + y, x, c) = r.at(y, x, c);
        y0 += r.height + gap;
    }
    return grid;
}

}  // namespace

void run_gen_data(const RunConfig& cfg) {
    data::DatasetGenConfig gen = cfg.gen;
    gen.seed = cfg.seed;
    const int views = data::write_dataset(cfg.resolved_dataset(), gen);
    write_json(cfg.out + "/gen_data_summary.json",
               {{"views_written", views}, {"root", cfg.resolved_dataset()}});
}

void run_train_srt(const RunConfig& cfg) {
    const data::Dataset ds = data::Dataset::open(cfg.resolved_dataset());
    const std::vector<data::SceneEntry> train = ds.train_split();
    if (train.empty()) throw EmptyInput("train-srt: empty train split");

    srt::SrtModel model(cfg.srt, cfg.seed);
    nn::Adam opt({.lr = cfg.srt_lr});
    Rng rng(mix_seed(cfg.seed, 0x5157));
    std::ofstream log(cfg.out + "/train_srt_loss.csv");
    log << "step,loss\n";

    for (int step = 0; step < cfg.srt_steps; ++step) {
        const data::SceneEntry& scene =
            train[static_cast<size_t>(rng.uniform_int(train.size()))];
        const int max_ctx = std::min(cfg.max_context_views, scene.view_count - 1);
        const int n_ctx = 1 + static_cast<int>(rng.uniform_int(
                                  static_cast<uint64_t>(max_ctx)));
        const std::vector<int> picks =
            sample_indices(rng, scene.view_count, n_ctx + 1);

        geom::SimilarityTransform g;
        const srt::ImageSet set = make_context(
            ds, scene, {picks.begin(), picks.begin() + n_ctx}, &g);
        const data::ViewRecord query = ds.load_view(scene, picks.back());
        const geom::RayGrid grid = geom::camera_rays(g.apply_to_pose(query.pose));
        const Tensor gt = img::to_float(query.image)
                              .reshaped({static_cast<int64_t>(grid.width) * grid.height, 3});

        model.params().zero_grad();
        ag::Var loss = srt::srt_loss(model.render_view(set, grid), gt);
        ag::backward(loss);
        opt.step(model.params());
        if (step % 50 == 0 || step == cfg.srt_steps - 1)
            log << step << ',' << fmt(loss.item()) << '\n';
    }
    model.save(cfg.resolved_srt(), cfg.seed);
}

void run_train_diffusion(const RunConfig& cfg) {
    require_checkpoint(cfg.resolved_srt(), "srt");
    const std::string srt_hash_before = weights_hash(cfg.resolved_srt());
    const srt::SrtModel srt_model = srt::SrtModel::load(cfg.resolved_srt());

    const data::Dataset ds = data::Dataset::open(cfg.resolved_dataset());
    const std::vector<data::SceneEntry> train = ds.train_split();
    if (train.empty()) throw EmptyInput("train-diffusion: empty train split");

    diff::DenoiserNet net(cfg.diffusion, cfg.seed);
    const diff::NoiseSchedule sched = diff::make_schedule(cfg.diffusion.t_count);
    const diff::LatentCodec codec;
    nn::Adam opt({.lr = cfg.diffusion_lr});
    Rng rng(mix_seed(cfg.seed, 0xD1FF));
    std::ofstream log(cfg.out + "/train_diffusion_loss.csv");
    log << "step,loss\n";
    const int s = cfg.diffusion.image_size;

    for (int step = 0; step < cfg.diffusion_steps; ++step) {
        const data::SceneEntry& scene =
            train[static_cast<size_t>(rng.uniform_int(train.size()))];
        const int max_ctx = std::min(cfg.max_context_views, scene.view_count - 1);
        const int n_ctx = 1 + static_cast<int>(rng.uniform_int(
                                  static_cast<uint64_t>(max_ctx)));
        const std::vector<int> picks =
            sample_indices(rng, scene.view_count, n_ctx + 1);

        geom::SimilarityTransform g;
        const srt::ImageSet set = make_context(
            ds, scene, {picks.begin(), picks.begin() + n_ctx}, &g);
        const srt::SetLatent latent = srt_model.encode_set(set);
        const data::ViewRecord query = ds.load_view(scene, picks.back());
        const diff::Conditioning cond = query_conditioning(
            srt_model, latent, g.apply_to_pose(query.pose), s, cfg.cond);

        Tensor gt = img::to_float(query.image);
        if (gt.shape()[0] != s) gt = img::resize_bilinear(gt, s, s);
        const float loss =
            diff::train_step(net, sched, {{codec.encode(gt), cond}}, opt, rng);
        if (step % 50 == 0 || step == cfg.diffusion_steps - 1)
            log << step << ',' << fmt(loss) << '\n';
    }
    net.save(cfg.resolved_diffusion(), cfg.seed);

    // the srt checkpoint is a frozen input of this stage
    const std::string srt_hash_after = weights_hash(cfg.resolved_srt());
    if (srt_hash_after != srt_hash_before)
        throw IoError("train-diffusion: frozen srt checkpoint changed during run");
    write_json(cfg.out + "/train_diffusion_audit.json",
               {{"srt_weights_hash", srt_hash_after}, {"unchanged", true}});
}

void run_distill(const RunConfig& cfg) {
    require_checkpoint(cfg.resolved_srt(), "srt");
    require_checkpoint(cfg.resolved_diffusion(), "diffusion");
    const std::string srt_hash = weights_hash(cfg.resolved_srt());
    const std::string diff_hash = weights_hash(cfg.resolved_diffusion());

    const srt::SrtModel srt_model = srt::SrtModel::load(cfg.resolved_srt());
    const diff::DenoiserNet net = diff::DenoiserNet::load(cfg.resolved_diffusion());
    const diff::NoiseSchedule sched = diff::make_schedule(net.config().t_count);

    const data::Dataset ds = data::Dataset::open(cfg.resolved_dataset());
    const std::vector<data::SceneEntry> val = ds.val_split();
    if (val.empty()) throw EmptyInput("distill: empty val split");
    const int n_scenes = std::min<int>(cfg.distill_scenes, static_cast<int>(val.size()));

    for (int i = 0; i < n_scenes; ++i) {
        const data::SceneEntry& scene = val[static_cast<size_t>(i)];
        const int n_ctx = std::min(cfg.max_context_views, scene.view_count);
        std::vector<int> ids(static_cast<size_t>(n_ctx));
        for (int k = 0; k < n_ctx; ++k) ids[static_cast<size_t>(k)] = k;
        const srt::ImageSet set = make_context(ds, scene, ids, nullptr);

        distill::DistillContext ctx;
        ctx.srt_model = &srt_model;
        ctx.denoiser = &net;
        ctx.schedule = &sched;
        ctx.latent = srt_model.encode_set(set);

        distill::DistillConfig dcfg = cfg.distill;
        dcfg.seed = mix_seed(cfg.seed, scene.seed);

        std::vector<float> losses;
        distill::NeuralField field =
            distill::distill(ctx, dcfg, cfg.field, &losses);
        const std::string dir =
            cfg.resolved_fields() + "/scene_" + std::to_string(scene.seed);
        field.save(dir, dcfg.seed);
        std::ofstream log(dir + "/loss.csv");
        log << "iter,loss\n";
        for (size_t k = 0; k < losses.size(); ++k)
            log << k << ',' << fmt(losses[k]) << '\n';
    }

    if (weights_hash(cfg.resolved_srt()) != srt_hash ||
        weights_hash(cfg.resolved_diffusion()) != diff_hash)
        throw IoError("distill: a frozen checkpoint changed during run");
    write_json(cfg.out + "/distill_audit.json",
               {{"srt_weights_hash", srt_hash},
                {"diffusion_weights_hash", diff_hash},
                {"unchanged", true}});
}

void run_eval(const RunConfig& cfg) {
    require_checkpoint(cfg.resolved_srt(), "srt");
    require_checkpoint(cfg.resolved_diffusion(), "diffusion");
    const srt::SrtModel srt_model = srt::SrtModel::load(cfg.resolved_srt());
    const diff::DenoiserNet net = diff::DenoiserNet::load(cfg.resolved_diffusion());
    const diff::NoiseSchedule sched = diff::make_schedule(net.config().t_count);
    const diff::LatentCodec codec;
    const int s = net.config().image_size;

    const data::Dataset ds = data::Dataset::open(cfg.resolved_dataset());
    const std::vector<data::SceneEntry> val = ds.val_split();
    if (val.empty()) throw EmptyInput("eval: empty val split");
    const int n_scenes = std::min<int>(cfg.eval_scenes, static_cast<int>(val.size()));

    std::ofstream csv(cfg.out + "/metrics.csv");
    if (!csv) throw IoError("cannot write " + cfg.out + "/metrics.csv");
    csv << "instance,views,view_id,method,psnr,ssim,psnr_a,ssim_a,"
           "a00,a01,a10,a11,b0,b1\n";

    struct Mean {
        double psnr = 0, ssim = 0, psnr_a = 0, ssim_a = 0;
        int n = 0;
    };
    std::map<std::pair<std::string, int>, Mean> means;
    const auto tally = [&](const std::string& method, int views,
                           const eval::MetricReport& m) {
        Mean& acc = means[{method, views}];
        acc.psnr += m.psnr;
        acc.ssim += m.ssim;
        acc.psnr_a += m.psnr_a;
        acc.ssim_a += m.ssim_a;
        acc.n += 1;
    };

    std::vector<img::Image8> grid_rows;
    for (int i = 0; i < n_scenes; ++i) {
        const data::SceneEntry& scene = val[static_cast<size_t>(i)];
        const std::string instance = "scene_" + std::to_string(scene.seed);
        std::vector<img::Image8> tiles;

        // held-out queries are the last views; contexts grow from the front
        const int first_query = scene.view_count - cfg.eval_queries;
        for (int qi = 0; qi < cfg.eval_queries; ++qi) {
            const int q = first_query + qi;
            const data::ViewRecord query = ds.load_view(scene, q);
            const Tensor gt = img::to_float(query.image);
            if (qi == 0) tiles.push_back(query.image);

            // context-free baselines, once per query
            const eval::MetricReport white = eval::aligned_metrics(
                Tensor::full(gt.shape(), 1.f), gt, cfg.warp_fit);
            append_metric_row(csv, instance, 0, q, "white", white);
            tally("white", 0, white);

            const std::string field_dir =
                cfg.resolved_fields() + "/scene_" + std::to_string(scene.seed);
            if (fs::exists(fs::path(field_dir) / "manifest.json")) {
                const distill::NeuralField field = distill::NeuralField::load(field_dir);
                // the field lives in the anchored frame of its distillation
                // context (the first max_context_views views)
                std::vector<geom::CameraPose> ctx_poses;
                const int n_ctx = std::min(cfg.max_context_views, scene.view_count);
                for (int k = 0; k < n_ctx; ++k)
                    ctx_poses.push_back(ds.load_view(scene, k).pose);
                const geom::SimilarityTransform g_field =
                    geom::anchor_frame(ctx_poses).first;
                const distill::RenderOutput ro = distill::volume_render(
                    field, g_field.apply_to_pose(query.pose), cfg.eval_samples_per_ray,
                    mix_seed(cfg.seed, scene.seed, static_cast<uint64_t>(q), 3));
                const eval::MetricReport m3d =
                    eval::aligned_metrics(ro.rgb, gt, cfg.warp_fit);
                append_metric_row(csv, instance, 0, q, "field", m3d);
                tally("field", 0, m3d);
            }

            for (int vc : cfg.eval_view_counts) {
                std::vector<int> ctx_ids(static_cast<size_t>(vc));
                for (int k = 0; k < vc; ++k) ctx_ids[static_cast<size_t>(k)] = k;
                geom::SimilarityTransform g;
                const srt::ImageSet set = make_context(ds, scene, ctx_ids, &g);
                const srt::SetLatent latent = srt_model.encode_set(set);
                const diff::Conditioning cond = query_conditioning(
                    srt_model, latent, g.apply_to_pose(query.pose), s, cfg.cond);

                const Tensor x = diff::ddim_sample(
                    net, sched, cond, cfg.sample_steps, cfg.guidance,
                    mix_seed(cfg.seed, scene.seed, static_cast<uint64_t>(vc),
                             static_cast<uint64_t>(q)));
                Tensor pred = codec.decode(x);
                if (pred.shape()[0] != gt.shape()[0])
                    pred = img::resize_bilinear(pred, static_cast<int>(gt.shape()[0]),
                                                static_cast<int>(gt.shape()[1]));
                const eval::MetricReport m =
                    eval::aligned_metrics(pred, gt, cfg.warp_fit);
                append_metric_row(csv, instance, vc, q, "diffusion", m);
                tally("diffusion", vc, m);
                if (qi == 0) tiles.push_back(img::to_u8(pred));
            }
        }
        grid_rows.push_back(tile_row(tiles));
    }

    // per-(method, #views) mean rows
    for (const auto& [key, acc] : means) {
        eval::MetricReport m;
        m.psnr = acc.psnr / acc.n;
        m.ssim = acc.ssim / acc.n;
        m.psnr_a = acc.psnr_a / acc.n;
        m.ssim_a = acc.ssim_a / acc.n;
        append_metric_row(csv, "mean", key.second, -1, key.first, m);
    }
    csv.close();
    img::write_png(cfg.out + "/grid.png", stack_rows(grid_rows));

    // snapshot the checkpoints this eval consumed, for replay audits
    write_json(cfg.out + "/eval_inputs.json",
               {{"srt_weights_hash", weights_hash(cfg.resolved_srt())},
                {"diffusion_weights_hash", weights_hash(cfg.resolved_diffusion())}});
}

Report render_report(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw IoError("cannot read " + csv_path);
    std::string line;
    std::getline(f, line);  // header

    struct Acc {
        double psnr_a = 0, ssim_a = 0;
        int n = 0;
    };
    std::map<int, Acc> by_views;
    Acc field_acc, white_acc;
    int parsed = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() < 8) throw IoError("malformed metrics row: " + line);
        if (cols[0] == "mean") continue;  // summary rows are derived, skip
        const int views = std::stoi(cols[1]);
        const std::string& method = cols[3];
        const double psnr_a = std::stod(cols[6]);
        const double ssim_a = std::stod(cols[7]);
        ++parsed;
        if (method == "diffusion") {
            Acc& a = by_views[views];
            a.psnr_a += psnr_a;
            a.ssim_a += ssim_a;
            a.n += 1;
        } else if (method == "field") {
            field_acc.psnr_a += psnr_a;
            field_acc.n += 1;
        } else if (method == "white") {
            white_acc.psnr_a += psnr_a;
            white_acc.n += 1;
        }
    }
    if (parsed == 0) throw EmptyInput("render_report: no metric rows in " + csv_path);

    Report rep;
    for (const auto& [views, a] : by_views)
        rep.rows.push_back({views, a.psnr_a / a.n, a.ssim_a / a.n, a.n});
    std::sort(rep.rows.begin(), rep.rows.end(),
              [](const ReportRow& x, const ReportRow& y) { return x.views < y.views; });

    bool up = true, flat = true;
    for (size_t i = 1; i < rep.rows.size(); ++i) {
        if (rep.rows[i].psnr_a <= rep.rows[i - 1].psnr_a + 1e-9) up = false;
        if (std::abs(rep.rows[i].psnr_a - rep.rows[i - 1].psnr_a) > 1e-9) flat = false;
    }
    rep.monotonicity = rep.rows.size() < 2 ? "flat"
                       : flat              ? "flat"
                       : up                ? "monotone-up"
                                           : "non-monotone";
    if (field_acc.n > 0) rep.field_psnr_a = field_acc.psnr_a / field_acc.n;
    if (white_acc.n > 0) rep.white_psnr_a = white_acc.psnr_a / white_acc.n;
    return rep;
}

void run_report(const RunConfig& cfg) {
    const Report rep = render_report(cfg.out + "/metrics.csv");
    std::ofstream f(cfg.out + "/report.txt");
    f << "views  psnr_a   ssim_a   n\n";
    for (const auto& r : rep.rows)
        f << r.views << "V     " << fmt(r.psnr_a) << "  " << fmt(r.ssim_a) << "  "
          << r.count << "\n";
    f << "trend: " << rep.monotonicity << "\n";
    if (rep.field_psnr_a > 0)
        f << "3D distilled psnr_a: " << fmt(rep.field_psnr_a) << "\n";
    if (rep.white_psnr_a > 0)
        f << "white baseline psnr_a: " << fmt(rep.white_psnr_a) << "\n";

    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows)
        rows.push_back({{"views", r.views},
                        {"psnr_a", r.psnr_a},
                        {"ssim_a", r.ssim_a},
                        {"count", r.count}});
    write_json(cfg.out + "/report.json", {{"rows", rows},
                                          {"monotonicity", rep.monotonicity},
                                          {"field_psnr_a", rep.field_psnr_a},
                                          {"white_psnr_a", rep.white_psnr_a}});
}

void run(const RunConfig& cfg) {
    cfg.validate();
    apply_determinism_env();
    fs::create_directories(cfg.out);
    std::string snap = cfg.stage;
    std::replace(snap.begin(), snap.end(), '-', '_');
    write_json(cfg.out + "/" + snap + "_config.json", cfg.to_json());

    if (cfg.stage == "gen-data") run_gen_data(cfg);
    else if (cfg.stage == "train-srt") run_train_srt(cfg);
    else if (cfg.stage == "train-diffusion") run_train_diffusion(cfg);
    else if (cfg.stage == "distill") run_distill(cfg);
    else if (cfg.stage == "eval") run_eval(cfg);
    else if (cfg.stage == "report") run_report(cfg);
    else throw BadConfig("unknown stage: " + cfg.stage);
}

}  // namespace nvs::pipe
