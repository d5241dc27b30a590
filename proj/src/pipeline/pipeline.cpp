#include "cf3d/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cf3d/bytes.hpp"
#include "cf3d/checkpoint.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/io.hpp"

namespace cf3d {

using nlohmann::json;

namespace {

json schedule_json(const Schedule& s) {
    return {{"epochs", s.epochs}, {"delay", s.delay}, {"lr", s.lr}, {"batch", s.batch}};
}

Schedule schedule_from(const json& j, Schedule s) {
    s.epochs = j.value("epochs", s.epochs);
    s.delay = j.value("delay", s.delay);
    s.lr = j.value("lr", s.lr);
    s.batch = j.value("batch", s.batch);
    return s;
}

}  // namespace

void PipelineConfig::sync() {
    mmf.grid_w = mmf.grid_h = size;
    mmr.grid_w = mmr.grid_h = size;
    mmf.lambda = lambda;
    mmf.validate();
    mmr.validate();
    if (mmf.latent_shape() != mmr.latent_shape())
        throw ShapeError("MMR latent " + ad::to_string(mmr.latent_shape()) + " does not match Corr-MMF latent " +
                         ad::to_string(mmf.latent_shape()));
    csir.latent_shape = mmf.latent_shape();
    csir.validate();
}

json PipelineConfig::to_json() const {
    json j;
    j["scene_seed"] = scene_seed;
    j["size"] = size;
    j["density"] = density;
    j["data_seed"] = data_seed;
    j["n_aerial"] = n_aerial;
    j["split_fractions"] = split_fractions;
    j["mmf_train_centers"] = mmf_train_centers;
    j["mmf_val_centers"] = mmf_val_centers;
    j["mmr_extra_scenes"] = mmr_extra_scenes;
    j["mmr_val_scenes"] = mmr_val_scenes;
    j["corr_mmf"] = {{"view_channels", mmf.view_channels}, {"fused_blocks", mmf.fused_blocks},
                     {"kernel", mmf.kernel},               {"sigma", mmf.sigma},
                     {"use_tam", mmf.use_tam},             {"use_cam", mmf.use_cam}};
    j["mmr"] = {{"stem_channels", mmr.stem_channels}, {"block_channels", mmr.block_channels},
                {"kernel", mmr.kernel},               {"sam_kernel", mmr.sam_kernel},
                {"sam_every_block", mmr.sam_every_block}, {"use_sam", mmr.use_sam}};
    j["csi_r"] = {{"patch", csir.patch}, {"embed_dim", csir.embed_dim}, {"hidden", csir.hidden},
                  {"dropout", csir.dropout}};
    j["schedules"] = {{"corr_mmf", schedule_json(mmf_schedule)},
                      {"mmr", schedule_json(mmr_schedule)},
                      {"csi_r", schedule_json(csir_schedule)}};
    j["lambda"] = lambda;
    j["baseline_rate"] = baseline_rate;
    j["jobs"] = jobs;
    j["channel"] = {{"max_paths", channel.trace.max_paths},
                    {"reflection_coeff", channel.trace.reflection_coeff},
                    {"speed", channel.speed},
                    {"max_symbol", channel.max_symbol}};
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    try {
        c.scene_seed = j.value("scene_seed", c.scene_seed);
        c.size = j.value("size", c.size);
        c.density = j.value("density", c.density);
        c.data_seed = j.value("data_seed", c.data_seed);
        c.n_aerial = j.value("n_aerial", c.n_aerial);
        c.split_fractions = j.value("split_fractions", c.split_fractions);
        c.mmf_train_centers = j.value("mmf_train_centers", c.mmf_train_centers);
        c.mmf_val_centers = j.value("mmf_val_centers", c.mmf_val_centers);
        c.mmr_extra_scenes = j.value("mmr_extra_scenes", c.mmr_extra_scenes);
        c.mmr_val_scenes = j.value("mmr_val_scenes", c.mmr_val_scenes);
        if (j.contains("corr_mmf")) {
            const auto& m = j["corr_mmf"];
            c.mmf.view_channels = m.value("view_channels", c.mmf.view_channels);
            c.mmf.fused_blocks = m.value("fused_blocks", c.mmf.fused_blocks);
            c.mmf.kernel = m.value("kernel", c.mmf.kernel);
            c.mmf.sigma = m.value("sigma", c.mmf.sigma);
            c.mmf.use_tam = m.value("use_tam", c.mmf.use_tam);
            c.mmf.use_cam = m.value("use_cam", c.mmf.use_cam);
        }
        if (j.contains("mmr")) {
            const auto& m = j["mmr"];
            c.mmr.stem_channels = m.value("stem_channels", c.mmr.stem_channels);
            c.mmr.block_channels = m.value("block_channels", c.mmr.block_channels);
            c.mmr.kernel = m.value("kernel", c.mmr.kernel);
            c.mmr.sam_kernel = m.value("sam_kernel", c.mmr.sam_kernel);
            c.mmr.sam_every_block = m.value("sam_every_block", c.mmr.sam_every_block);
            c.mmr.use_sam = m.value("use_sam", c.mmr.use_sam);
        }
        if (j.contains("csi_r")) {
            const auto& m = j["csi_r"];
            c.csir.patch = m.value("patch", c.csir.patch);
            c.csir.embed_dim = m.value("embed_dim", c.csir.embed_dim);
            c.csir.hidden = m.value("hidden", c.csir.hidden);
            c.csir.dropout = m.value("dropout", c.csir.dropout);
        }
        if (j.contains("schedules")) {
            const auto& s = j["schedules"];
            if (s.contains("corr_mmf")) c.mmf_schedule = schedule_from(s["corr_mmf"], c.mmf_schedule);
            if (s.contains("mmr")) c.mmr_schedule = schedule_from(s["mmr"], c.mmr_schedule);
            if (s.contains("csi_r")) c.csir_schedule = schedule_from(s["csi_r"], c.csir_schedule);
        }
        c.lambda = j.value("lambda", c.lambda);
        c.baseline_rate = j.value("baseline_rate", c.baseline_rate);
        c.jobs = j.value("jobs", c.jobs);
        if (j.contains("channel")) {
            const auto& m = j["channel"];
            c.channel.trace.max_paths = m.value("max_paths", c.channel.trace.max_paths);
            c.channel.trace.reflection_coeff = m.value("reflection_coeff", c.channel.trace.reflection_coeff);
            c.channel.speed = m.value("speed", c.channel.speed);
            c.channel.max_symbol = m.value("max_symbol", c.channel.max_symbol);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    c.sync();
    return c;
}

SceneAssets build_assets(const PipelineConfig& cfg) {
    SceneAssets a;
    ScenarioOptions so;
    so.width = so.height = cfg.size;
    so.density = cfg.density;
    a.scenario = generate_scenario(cfg.scene_seed, so);
    const auto positions = sample_aerial_positions(a.scenario, cfg.n_aerial, cfg.data_seed);
    const auto db = simulate_positions(a.scenario, positions, cfg.data_seed, cfg.channel, cfg.jobs);
    a.grid = sample_ground_grid(a.scenario, cfg.data_seed, cfg.channel, cfg.jobs);

    // The scale must cover every stored value, ground and aerial alike.
    double g_max = -std::numeric_limits<double>::infinity();
    for (double g : db) g_max = std::max(g_max, g);
    for (std::size_t i = 0; i < a.grid.rss_db.size(); ++i)
        if (a.grid.mask[i]) g_max = std::max(g_max, a.grid.rss_db[i]);
    if (!(g_max > kRssThresholdDb)) throw DataError("no measurement exceeds the RSS threshold");
    const Normalization norm{kRssThresholdDb, g_max};

    a.store.scenario_id = scenario_id(a.scenario);
    a.store.norm = norm;
    a.store.tuples.reserve(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i)
        a.store.tuples.push_back({positions[i], db[i], normalize_rss(db[i], norm)});
    normalize_grid(a.grid, norm);
    a.split = split(a.store.size(), cfg.split_fractions, cfg.data_seed ^ 0x5B117ULL);
    return a;
}

void save_assets(const std::filesystem::path& dir, const SceneAssets& a) {
    save_scenario(dir / "scenario.cf3s", a.scenario);
    save_store(dir / "store.cf3c", a.store);
    save_grid(dir / "ground.cf3g", a.grid);
    const json j{{"seed", a.split.seed}, {"train", a.split.train}, {"val", a.split.val}, {"test", a.split.test}};
    const std::string text = j.dump(1) + "\n";
    write_file(dir / "split.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

SceneAssets load_assets(const std::filesystem::path& dir) {
    SceneAssets a;
    a.scenario = load_scenario(dir / "scenario.cf3s");
    a.store = load_store(dir / "store.cf3c");
    a.grid = load_grid(dir / "ground.cf3g");
    const auto bytes = read_file(dir / "split.json");
    try {
        const auto j = json::parse(bytes.begin(), bytes.end());
        a.split.seed = j.at("seed").get<std::uint64_t>();
        a.split.train = j.at("train").get<std::vector<std::size_t>>();
        a.split.val = j.at("val").get<std::vector<std::size_t>>();
        a.split.test = j.at("test").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw FormatError("split.json: " + std::string(e.what()));
    }
    for (const auto* part : {&a.split.train, &a.split.val, &a.split.test})
        for (auto i : *part)
            if (i >= a.store.size()) throw FormatError("split.json: index " + std::to_string(i) + " out of range");
    if (a.grid.grid_w != a.scenario.grid_w || a.grid.grid_h != a.scenario.grid_h)
        throw FormatError("ground grid does not match the scenario");
    return a;
}

void check_disjoint(const DatasetSplit& s) {
    std::vector<std::size_t> all;
    all.insert(all.end(), s.train.begin(), s.train.end());
    all.insert(all.end(), s.val.begin(), s.val.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw UsageError("dataset splits overlap: test data must be disjoint from training data");
}

CorrMmfData corrmmf_data(const PipelineConfig& cfg, const SceneAssets& assets) {
    CorrMmfData d;
    d.g_view.assign(assets.grid.values.begin(), assets.grid.values.end());
    d.e_view.assign(assets.scenario.e_h.begin(), assets.scenario.e_h.end());
    auto take = [&](const std::vector<std::size_t>& idx, std::size_t n, auto& out) {
        for (std::size_t i = 0; i < std::min(n, idx.size()); ++i) {
            const Vec3 p = assets.store.tuples[idx[i]].position;
            out.emplace_back(p.x, p.y);
        }
    };
    take(assets.split.train, cfg.mmf_train_centers, d.train_xy);
    take(assets.split.val, cfg.mmf_val_centers, d.val_xy);
    return d;
}

std::vector<double> height_map(const Scenario& scn) {
    std::vector<double> out(scn.e_v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(scn.e_v[i] / 100.0, 0.0, 1.0);
    return out;
}

namespace {

// Element t of the dihedral group of the square acting on a w x w map.
std::vector<double> dihedral(const std::vector<double>& m, std::size_t w, int t) {
    std::vector<double> out(m.size());
    for (std::size_t y = 0; y < w; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t u = (t & 4) ? w - 1 - x : x, v = y;
            for (int r = 0; r < (t & 3); ++r) {
                const std::size_t nu = v, nv = w - 1 - u;
                u = nu;
                v = nv;
            }
            out[v * w + u] = m[y * w + x];
        }
    return out;
}

}  // namespace

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> mmr_data(const PipelineConfig& cfg,
                                                                                      const Scenario& scn) {
    std::vector<std::vector<double>> train, val;
    const auto base = height_map(scn);
    if (scn.grid_w == scn.grid_h) {
        for (int t = 0; t < 8; ++t) train.push_back(dihedral(base, scn.grid_w, t));
    } else {
        train.push_back(base);
    }
    ScenarioOptions so;
    so.width = scn.grid_w;
    so.height = scn.grid_h;
    so.density = cfg.density;
    for (std::size_t i = 0; i < cfg.mmr_extra_scenes; ++i)
        train.push_back(height_map(generate_scenario(cfg.scene_seed + 1000 + i, so)));
    for (std::size_t i = 0; i < cfg.mmr_val_scenes; ++i)
        val.push_back(height_map(generate_scenario(cfg.scene_seed + 5000 + i, so)));
    return {train, val};
}

std::array<double, 3> normalized_coords(const Scenario& scn, Vec3 p) {
    const double W = static_cast<double>(scn.grid_w), H = static_cast<double>(scn.grid_h);
    if (!(p.x >= 0 && p.x <= W && p.y >= 0 && p.y <= H && p.z >= 25.0 && p.z <= 80.0))
        throw RangeError("position (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ", " + std::to_string(p.z) +
                         ") is outside the scene or the 25-80 m altitude band");
    return {p.x / W, p.y / H, (p.z - 25.0) / 55.0};
}

std::unique_ptr<MmrModel> train_mmr_stage(const PipelineConfig& cfg, const SceneAssets& assets, std::uint64_t seed,
                                          std::vector<LossEpoch>* history, const Progress& progress) {
    auto model = std::make_unique<MmrModel>(cfg.mmr, seed);
    const auto [train, val] = mmr_data(cfg, assets.scenario);
    if (progress) progress("mmr: " + std::to_string(train.size()) + " maps");
    auto h = train_mmr(*model, train, val, cfg.mmr_schedule, seed);
    if (progress && !h.empty()) progress("mmr: final val loss " + std::to_string(h.back().val));
    if (history) *history = std::move(h);
    return model;
}

std::unique_ptr<CorrMmfModel> train_corrmmf_stage(const PipelineConfig& cfg, const SceneAssets& assets,
                                                  std::uint64_t seed, std::vector<CorrMmfEpoch>* history,
                                                  const Progress& progress) {
    CorrMmfConfig mc = cfg.mmf;
    mc.lambda = cfg.lambda;
    auto model = std::make_unique<CorrMmfModel>(mc, seed);
    auto h = train_corrmmf(*model, corrmmf_data(cfg, assets), cfg.mmf_schedule, cfg.lambda, seed);
    if (progress && !h.empty())
        progress("corr-mmf: lambda " + std::to_string(cfg.lambda) + " final val L_obj " +
                 std::to_string(h.back().val_objective) + ", corr " + std::to_string(h.back().val_corr));
    if (history) *history = std::move(h);
    return model;
}

CsiRData csir_data(const CorrMmfModel& mmf, const MmrModel& mmr, const SceneAssets& assets,
                   const std::vector<std::size_t>& indices) {
    const auto& scn = assets.scenario;
    const auto& mc = mmf.config();
    CsiRData d;
    // Tuples in one cell share a mask, hence a latent.
    std::map<std::size_t, std::size_t> slot;
    std::vector<std::pair<double, double>> cells;
    std::vector<std::size_t> tuple_slot;
    for (auto i : indices) {
        const Vec3 p = assets.store.tuples.at(i).position;
        const auto [cx, cy] = snap_to_cell(p.x, p.y, scn.grid_w, scn.grid_h);
        const auto key = static_cast<std::size_t>(cy) * scn.grid_w + static_cast<std::size_t>(cx);
        auto [it, fresh] = slot.emplace(key, cells.size());
        if (fresh) cells.emplace_back(cx, cy);
        tuple_slot.push_back(it->second);
        d.coords.push_back(normalized_coords(scn, p));
        d.targets.push_back(assets.store.tuples[i].rss_norm);
    }
    std::vector<double> g(assets.grid.values.begin(), assets.grid.values.end());
    std::vector<double> e(scn.e_h.begin(), scn.e_h.end());
    const ad::Shape ls = mc.latent_shape();
    const std::size_t row = ad::numel(ls);
    std::vector<double> cell_latent(cells.size() * row);
    for (std::size_t s = 0; s < cells.size(); s += 32) {
        const std::vector<std::pair<double, double>> chunk(
            cells.begin() + static_cast<std::ptrdiff_t>(s),
            cells.begin() + static_cast<std::ptrdiff_t>(std::min(cells.size(), s + 32)));
        auto [gv, ev] = masked_views(mc, g, e, chunk);
        const Tensor z = mmf.encode(gv, ev, Mode::Eval);
        std::copy(z.data().begin(), z.data().end(), cell_latent.begin() + static_cast<std::ptrdiff_t>(s * row));
    }
    std::vector<double> lat(indices.size() * row);
    for (std::size_t k = 0; k < indices.size(); ++k)
        std::copy_n(cell_latent.begin() + static_cast<std::ptrdiff_t>(tuple_slot[k] * row), row,
                    lat.begin() + static_cast<std::ptrdiff_t>(k * row));
    d.corrmmf_latents = Tensor::from({indices.size(), ls[0], ls[1], ls[2]}, std::move(lat));
    d.mmr_latent =
        mmr.encode(Tensor::from({1, scn.grid_h, scn.grid_w, 1}, height_map(scn)), Mode::Eval).detach();
    return d;
}

std::unique_ptr<CsiRModel> train_csir_stage(const PipelineConfig& cfg, const CorrMmfModel& mmf, const MmrModel& mmr,
                                            const SceneAssets& assets, std::uint64_t seed,
                                            std::vector<LossEpoch>* history, const Progress& progress) {
    check_disjoint(assets.split);
    auto model = std::make_unique<CsiRModel>(cfg.csir, seed);
    const auto train = csir_data(mmf, mmr, assets, assets.split.train);
    const auto val = csir_data(mmf, mmr, assets, assets.split.val);
    auto h = train_csir(*model, train, val, cfg.csir_schedule, seed);
    if (progress && !h.empty()) progress("csi-r: final val mse " + std::to_string(h.back().val));
    if (history) *history = std::move(h);
    return model;
}

TrainedModels train_pipeline(const PipelineConfig& cfg, const SceneAssets& assets, std::uint64_t seed,
                             const Progress& progress) {
    TrainedModels t;
    t.mmr = train_mmr_stage(cfg, assets, seed, &t.mmr_history, progress);
    t.mmf = train_corrmmf_stage(cfg, assets, seed, &t.mmf_history, progress);
    t.csir = train_csir_stage(cfg, *t.mmf, *t.mmr, assets, seed, &t.csir_history, progress);
    return t;
}

void save_models(const std::filesystem::path& dir, const TrainedModels& m) {
    ad::save_checkpoint(dir / "corr_mmf.ckpt", m.mmf->parameters());
    ad::save_checkpoint(dir / "mmr.ckpt", m.mmr->parameters());
    ad::save_checkpoint(dir / "csi_r.ckpt", m.csir->parameters());
}

TrainedModels load_models(const std::filesystem::path& dir, const PipelineConfig& cfg) {
    TrainedModels t;
    CorrMmfConfig mc = cfg.mmf;
    mc.lambda = cfg.lambda;
    t.mmf = std::make_unique<CorrMmfModel>(mc, 0);
    t.mmr = std::make_unique<MmrModel>(cfg.mmr, 0);
    t.csir = std::make_unique<CsiRModel>(cfg.csir, 0);
    ad::load_checkpoint(dir / "corr_mmf.ckpt", t.mmf->parameters());
    ad::load_checkpoint(dir / "mmr.ckpt", t.mmr->parameters());
    ad::load_checkpoint(dir / "csi_r.ckpt", t.csir->parameters());
    return t;
}

Predictor::Predictor(const CorrMmfModel& mmf, const MmrModel& mmr, const CsiRModel& csir, const Scenario& scn,
                     const GroundMeasurementGrid& grid)
    : mmf_(mmf), mmr_(mmr), csir_(csir), scn_(scn) {
    if (grid.grid_w != scn.grid_w || grid.grid_h != scn.grid_h) throw ShapeError("ground grid does not match scene");
    g_view_.assign(grid.values.begin(), grid.values.end());
    e_view_.assign(scn.e_h.begin(), scn.e_h.end());
}

bool Predictor::mmr_cached() const {
    std::lock_guard lock(mu_);
    return mmr_emb_.has_value();
}

Tensor Predictor::mmr_embedding() const {
    std::lock_guard lock(mu_);
    if (!mmr_emb_) {
        const Tensor z = mmr_.encode(Tensor::from({1, scn_.grid_h, scn_.grid_w, 1}, height_map(scn_)), Mode::Eval);
        mmr_emb_ = csir_.embed_mmr(z).detach();
    }
    return *mmr_emb_;
}

std::vector<double> Predictor::predict(const std::vector<Vec3>& positions, std::size_t batch) const {
    std::vector<double> out;
    out.reserve(positions.size());
    if (positions.empty()) return out;
    const Tensor eb = mmr_embedding();
    batch = std::max<std::size_t>(1, batch);
    for (std::size_t s = 0; s < positions.size(); s += batch) {
        const std::size_t end = std::min(positions.size(), s + batch);
        std::vector<std::pair<double, double>> xy;
        std::vector<double> coords;
        for (std::size_t i = s; i < end; ++i) {
            const auto c = normalized_coords(scn_, positions[i]);
            coords.insert(coords.end(), c.begin(), c.end());
            xy.emplace_back(positions[i].x, positions[i].y);
        }
        auto [g, e] = masked_views(mmf_.config(), g_view_, e_view_, xy);
        const Tensor z = mmf_.encode(g, e, Mode::Eval);
        const Tensor p = csir_.regress(csir_.embed_corrmmf(z), eb, Tensor::from({xy.size(), 3}, std::move(coords)),
                                       Mode::Eval);
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return out;
}

double Predictor::predict(Vec3 position) const { return predict(std::vector<Vec3>{position}).front(); }

CfStore construct_cf(const Predictor& predictor, const std::vector<Vec3>& positions, const Normalization& norm,
                     const std::string& scenario) {
    CfStore store;
    store.scenario_id = scenario;
    store.norm = norm;
    const auto pred = predictor.predict(positions);
    store.tuples.reserve(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const double g = pred[i];
        const double db = g > 0.0 ? denormalize_rss(g, norm.g_thr, norm.g_max) : norm.g_thr;
        store.tuples.push_back({positions[i], db, g});
    }
    return store;
}

}  // namespace cf3d
