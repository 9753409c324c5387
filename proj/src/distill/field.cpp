#include <cmath>

#include <nlohmann/json.hpp>

#include "nvs/core/serialize.hpp"
#include "nvs/distill/distill.hpp"

namespace nvs::distill {

nlohmann::json FieldConfig::to_json() const {
    return {{"levels", levels},         {"feats", feats},
            {"log2_table", log2_table}, {"base_res", base_res},
            {"level_scale", level_scale}, {"mlp_width", mlp_width}};
}

FieldConfig FieldConfig::from_json(const nlohmann::json& j) {
    FieldConfig c;
    c.levels = j.value("levels", c.levels);
    c.feats = j.value("feats", c.feats);
    c.log2_table = j.value("log2_table", c.log2_table);
    c.base_res = j.value("base_res", c.base_res);
    c.level_scale = j.value("level_scale", c.level_scale);
    c.mlp_width = j.value("mlp_width", c.mlp_width);
    c.validate();
    return c;
}

void FieldConfig::validate() const {
    if (levels < 1 || feats < 1 || base_res < 2)
        throw BadConfig("field: levels, feats and base_res must be positive");
    if (log2_table < 4 || log2_table > 24)
        throw BadConfig("field: log2_table out of the supported range [4,24]");
    if (level_scale <= 1.f) throw BadConfig("field: level_scale must exceed 1");
}

namespace {

// Instant-NGP style spatial hash of integer lattice coordinates.
inline uint64_t lattice_hash(int64_t x, int64_t y, int64_t z, int64_t mask) {
    const uint64_t h = static_cast<uint64_t>(x) ^
                       (static_cast<uint64_t>(y) * 2654435761ull) ^
                       (static_cast<uint64_t>(z) * 805459861ull);
    return h & static_cast<uint64_t>(mask);
}

}  // namespace

Var hash_encode(const Var& tables, const std::vector<std::array<float, 3>>& points,
                const FieldConfig& cfg) {
    const int64_t n = static_cast<int64_t>(points.size());
    const int64_t rows = cfg.table_rows();
    const int64_t f = cfg.feats;
    const int64_t out_dim = static_cast<int64_t>(cfg.levels) * f;
    if (tables.shape() != std::vector<int64_t>{cfg.levels * rows, f})
        throw ShapeError("hash_encode: table shape mismatch");

    // per output row: 8 corner (table row, weight) pairs per level
    struct Corner {
        int64_t row;
        float w;
    };
    auto corners = std::make_shared<std::vector<Corner>>();
    corners->resize(static_cast<size_t>(n) * cfg.levels * 8);

    Tensor out = Tensor::zeros({n, out_dim});
    const float* tab = tables.value().data();
    for (int64_t i = 0; i < n; ++i) {
        for (int l = 0; l < cfg.levels; ++l) {
            const float res = static_cast<float>(cfg.base_res) *
                              std::pow(cfg.level_scale, static_cast<float>(l));
            float p[3], fr[3];
            int64_t lo[3];
            for (int a = 0; a < 3; ++a) {
                // [-1,1] -> [0, res]
                const float v = (points[static_cast<size_t>(i)][static_cast<size_t>(a)] + 1.f) * 0.5f * res;
                lo[a] = static_cast<int64_t>(std::floor(v));
                fr[a] = v - static_cast<float>(lo[a]);
                (void)p;
            }
            Corner* cs = corners->data() + (i * cfg.levels + l) * 8;
            for (int c = 0; c < 8; ++c) {
                const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
                const float w = (dx ? fr[0] : 1.f - fr[0]) *
                                (dy ? fr[1] : 1.f - fr[1]) *
                                (dz ? fr[2] : 1.f - fr[2]);
                const int64_t row =
                    static_cast<int64_t>(l) * rows +
                    static_cast<int64_t>(
                        lattice_hash(lo[0] + dx, lo[1] + dy, lo[2] + dz, rows - 1));
                cs[c] = {row, w};
                for (int64_t k = 0; k < f; ++k)
                    out[i * out_dim + l * f + k] += w * tab[row * f + k];
            }
        }
    }

    auto tn = tables.node();
    auto node = std::make_shared<ag::Node>();
    node->value = std::move(out);
    node->parents = {tn};
    node->requires_grad = tn->requires_grad;
    if (node->requires_grad) {
        const int levels = cfg.levels;
        node->backward_fn = [tn, corners, n, levels, f](ag::Node& nd) {
            float* gt = tn->ensure_grad().data();
            const int64_t out_dim = levels * f;
            for (int64_t i = 0; i < n; ++i) {
                for (int l = 0; l < levels; ++l) {
                    const Corner* cs = corners->data() + (i * levels + l) * 8;
                    for (int c = 0; c < 8; ++c) {
                        for (int64_t k = 0; k < f; ++k)
                            gt[cs[c].row * f + k] +=
                                cs[c].w * nd.grad[i * out_dim + l * f + k];
                    }
                }
            }
        };
    }
    return Var(std::move(node));
}

NeuralField::NeuralField(const FieldConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t enc_dim = static_cast<int64_t>(cfg_.levels) * cfg_.feats;
    const int64_t w = cfg_.mlp_width;
    tables_ = params_.add("hash.tables",
                          Tensor::randn({cfg_.levels * cfg_.table_rows(), cfg_.feats},
                                        rng, 1e-2f));
    fc1_ = nn::Linear(params_, "mlp.fc1", enc_dim, w, rng);
    fc2_ = nn::Linear(params_, "mlp.fc2", w, w, rng);
    sigma_head_ = nn::Linear(params_, "mlp.sigma", w, 1, rng);
    rgb_head_ = nn::Linear(params_, "mlp.rgb", w, 3, rng);
}

NeuralField::Sample NeuralField::query(
    const std::vector<std::array<float, 3>>& points) const {
    if (points.empty()) throw EmptyInput("field query: no points");
    Var enc = hash_encode(tables_, points, cfg_);
    Var h = ag::silu(fc2_(ag::silu(fc1_(enc))));
    return {ag::softplus(sigma_head_(h)), ag::sigmoid(rgb_head_(h))};
}

void NeuralField::save(const std::string& dir, uint64_t seed) const {
    save_checkpoint(dir, "field", cfg_.to_json(), seed, params_.state());
}

NeuralField NeuralField::load(const std::string& dir) {
    const CheckpointManifest m = load_manifest(dir);
    if (m.kind != "field") throw BadConfig("checkpoint at " + dir + " is not a field");
    NeuralField field(FieldConfig::from_json(m.hyperparams), m.seed);
    field.params_.load_state(load_checkpoint_arrays(dir, m));
    return field;
}

}  // namespace nvs::distill
