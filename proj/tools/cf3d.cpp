// cf3d: generate scenes, sample measurements, train, evaluate and plot.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "cf3d/bytes.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/io.hpp"
#include "cf3d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cf3d;
using nlohmann::json;

namespace {

struct Options {
    std::string config;  // receipt to start from
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> scene_seed;
    std::optional<std::size_t> size;
    std::optional<double> density;
    std::optional<std::size_t> n_aerial;
    std::optional<double> lambda;
    std::optional<double> sigma;
    std::optional<std::size_t> epochs_mmf, epochs_mmr, epochs_csir;
    std::size_t jobs = 1;
    std::string out, data, models;
    std::string method = "all";
    std::string source = "sim";
    std::string z_list = "10,20,30,40";
    std::string lambdas = "0,1,10";
    std::string seeds = "1,2,3";
    std::size_t queries = 200;
    bool at_samples = false;
    bool quiet = false;
};

fs::path default_dir(const char* leaf) {
    if (const char* base = std::getenv("CF3D_DATA_DIR"); base && *base) return fs::path(base) / leaf;
    return fs::path("runs") / leaf;
}

fs::path out_dir(const Options& o, const char* sub) {
    fs::path p = o.out.empty() ? default_dir(sub) : fs::path(o.out);
    fs::create_directories(p);
    return p;
}

fs::path data_dir(const Options& o) { return o.data.empty() ? default_dir("sample") : fs::path(o.data); }
fs::path model_dir(const Options& o) { return o.models.empty() ? default_dir("train") : fs::path(o.models); }

void write_text(const fs::path& p, const std::string& s) { write_file(p, std::vector<std::uint8_t>(s.begin(), s.end())); }

json read_json(const fs::path& p) {
    const auto bytes = read_file(p);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

// Receipt config -> overrides from flags.
PipelineConfig resolve(const Options& o, const fs::path& fallback_receipt = {}) {
    PipelineConfig c;
    fs::path receipt = o.config;
    if (receipt.empty() && !fallback_receipt.empty() && fs::exists(fallback_receipt)) receipt = fallback_receipt;
    if (!receipt.empty()) {
        auto j = read_json(receipt);
        c = PipelineConfig::from_json(j.contains("pipeline") ? j["pipeline"] : j);
    }
    if (o.scene_seed) c.scene_seed = *o.scene_seed;
    if (o.size) c.size = *o.size;
    if (o.density) c.density = *o.density;
    if (o.n_aerial) c.n_aerial = *o.n_aerial;
    if (o.lambda) c.lambda = *o.lambda;
    if (o.sigma) c.mmf.sigma = *o.sigma;
    if (o.epochs_mmf) c.mmf_schedule.epochs = *o.epochs_mmf;
    if (o.epochs_mmr) c.mmr_schedule.epochs = *o.epochs_mmr;
    if (o.epochs_csir) c.csir_schedule.epochs = *o.epochs_csir;
    c.mmf_schedule.delay = std::min(c.mmf_schedule.delay, c.mmf_schedule.epochs);
    c.mmr_schedule.delay = std::min(c.mmr_schedule.delay, c.mmr_schedule.epochs);
    c.csir_schedule.delay = std::min(c.csir_schedule.delay, c.csir_schedule.epochs);
    c.jobs = std::max<std::size_t>(1, o.jobs);
    c.sync();
    return c;
}

void receipt(const fs::path& dir, const std::string& command, const Options& o, const PipelineConfig& c) {
    json j;
    j["command"] = command;
    j["seed"] = o.seed;
    j["data"] = o.data;
    j["models"] = o.models;
    j["method"] = o.method;
    j["source"] = o.source;
    j["z"] = o.z_list;
    j["lambdas"] = o.lambdas;
    j["seeds"] = o.seeds;
    j["queries"] = o.queries;
    j["at_samples"] = o.at_samples;
    j["pipeline"] = c.to_json();
    write_text(dir / "config.json", j.dump(2) + "\n");
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw UsageError(std::string("bad ") + what + " list '" + s + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
    return out;
}

std::string z_name(double z) {
    std::ostringstream os;
    os << z;
    return os.str();
}

void log(const Options& o, const std::string& s) {
    if (!o.quiet) std::cerr << s << "\n";
}

int cmd_generate(const Options& o) {
    const auto c = resolve(o);
    ScenarioOptions so;
    so.width = so.height = c.size;
    so.density = c.density;
    const auto scn = generate_scenario(c.scene_seed, so);
    const auto dir = out_dir(o, "generate");
    save_scenario(dir / "scenario.cf3s", scn);
    receipt(dir, "generate", o, c);
    log(o, "scenario " + scenario_id(scn) + " -> " + dir.string());
    return 0;
}

int cmd_sample(const Options& o) {
    const auto c = resolve(o);
    const auto assets = build_assets(c);
    const auto dir = out_dir(o, "sample");
    save_assets(dir, assets);
    receipt(dir, "sample", o, c);
    log(o, std::to_string(assets.store.size()) + " aerial tuples, ground grid " + std::to_string(c.size) + "^2 -> " +
               dir.string());
    return 0;
}

int cmd_train(const Options& o) {
    const auto data = data_dir(o);
    const auto c = resolve(o, data / "config.json");
    const auto assets = load_assets(data);
    const auto dir = out_dir(o, "train");
    auto t = train_pipeline(c, assets, o.seed, [&](const std::string& s) { log(o, s); });
    save_models(dir, t);
    write_text(dir / "corr_mmf_loss.csv", corrmmf_history_csv(t.mmf_history));
    write_text(dir / "mmr_loss.csv", loss_history_csv(t.mmr_history));
    write_text(dir / "csi_r_loss.csv", loss_history_csv(t.csir_history));
    receipt(dir, "train", o, c);
    log(o, "checkpoints -> " + dir.string());
    return 0;
}

int cmd_eval(const Options& o) {
    const auto data = data_dir(o);
    const auto c = resolve(o, data / "config.json");
    const auto assets = load_assets(data);
    check_disjoint(assets.split);
    std::vector<std::string> methods;
    if (o.method == "all") methods = {"mmf", "idw", "nn", "kriging", "gpr"};
    else methods = {o.method};

    EvalReport report;
    report.scenario = assets.store.scenario_id;
    for (const auto& m : methods) {
        if (m == "mmf") {
            if (o.at_samples) throw UsageError("--at-samples applies to the interpolation baselines only");
            const auto mdir = model_dir(o);
            const auto mc = resolve(o, mdir / "config.json");
            const auto t = load_models(mdir, mc);
            const Predictor pred(*t.mmf, *t.mmr, *t.csir, assets.scenario, assets.grid);
            std::vector<Vec3> pos;
            for (auto i : assets.split.test) pos.push_back(assets.store.tuples[i].position);
            const auto r = metrics(pred.predict(pos), targets(assets.store, assets.split.test));
            report.rows.push_back({"mmf", o.seed, mc.lambda, r.mae, r.rmse, pos.size(), "test split"});
        } else {
            std::vector<std::size_t> queries = assets.split.test;
            if (o.at_samples) queries = baseline_sample(assets, c.baseline_rate, o.seed);
            const auto p = baseline_predictions(m, assets, c.baseline_rate, o.seed, queries);
            const auto r = metrics(p, targets(assets.store, queries));
            report.rows.push_back(
                {m, o.seed, 0.0, r.mae, r.rmse, queries.size(), o.at_samples ? "fitted samples" : "test split"});
        }
    }
    report.rows.push_back(reference_row());
    const auto dir = out_dir(o, "eval");
    write_text(dir / "report.csv", report.to_csv());
    write_text(dir / "report.txt", report.to_text());
    receipt(dir, "eval", o, c);
    std::cout << report.to_text();
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto data = data_dir(o);
    const auto c = resolve(o, data / "config.json");
    const auto assets = load_assets(data);
    const auto rows = lambda_sweep(c, assets, parse_list<double>(o.lambdas, "lambda"),
                                   parse_list<std::uint64_t>(o.seeds, "seed"), [&](const std::string& s) { log(o, s); });
    const auto dir = out_dir(o, "sweep");
    write_text(dir / "sweep.csv", sweep_csv(rows));
    receipt(dir, "sweep", o, c);
    std::cout << sweep_csv(rows);
    return 0;
}

int cmd_plot(const Options& o) {
    const auto data = data_dir(o);
    const auto c = resolve(o, data / "config.json");
    const auto assets = load_assets(data);
    const auto& scn = assets.scenario;
    const auto zs = parse_list<double>(o.z_list, "altitude");

    std::function<std::vector<double>(const std::vector<Vec3>&)> eval;
    TrainedModels models;
    std::unique_ptr<Predictor> pred;
    std::vector<Sample> samples;
    std::optional<KrigingModel> km;
    std::optional<GprModel> gp;
    if (o.source == "sim") {
        eval = [&](const std::vector<Vec3>& ps) {
            auto db = simulate_positions(scn, ps, c.data_seed, c.channel, c.jobs);
            for (auto& g : db) g = normalize_rss(g, assets.store.norm);
            return db;
        };
    } else if (o.source == "mmf") {
        for (double z : zs)
            if (z < 25.0 || z > 80.0) throw UsageError("the learned model covers 25-80 m; got z=" + z_name(z));
        const auto mdir = model_dir(o);
        models = load_models(mdir, resolve(o, mdir / "config.json"));
        pred = std::make_unique<Predictor>(*models.mmf, *models.mmr, *models.csir, scn, assets.grid);
        eval = [&](const std::vector<Vec3>& ps) { return pred->predict(ps); };
    } else {
        samples = samples_from(assets.store.subset(baseline_sample(assets, c.baseline_rate, o.seed)));
        std::function<double(Vec3)> f;
        if (o.source == "idw") f = [&](Vec3 q) { return idw_predict(samples, q); };
        else if (o.source == "nn") f = [&](Vec3 q) { return nn_predict(samples, q); };
        else if (o.source == "kriging") {
            km.emplace(kriging_fit(samples));
            f = [&](Vec3 q) { return km->predict(q); };
        } else if (o.source == "gpr") {
            gp.emplace(gpr_fit_auto(samples));
            f = [&](Vec3 q) { return gp->predict(q).first; };
        } else {
            throw UsageError("unknown plot source '" + o.source + "'");
        }
        eval = [f](const std::vector<Vec3>& ps) {
            std::vector<double> v;
            for (auto p : ps) v.push_back(std::clamp(f(p), 0.0, 1.0));
            return v;
        };
    }

    const auto dir = out_dir(o, "plot");
    for (double z : zs) {
        HeatSlice s{scn.grid_w, scn.grid_h, z, std::vector<double>(scn.grid_w * scn.grid_h, std::nan(""))};
        std::vector<Vec3> ps;
        std::vector<std::size_t> cells;
        for (std::size_t iy = 0; iy < scn.grid_h; ++iy)
            for (std::size_t ix = 0; ix < scn.grid_w; ++ix) {
                const Vec3 p{ix + 0.5, iy + 0.5, z};
                if (scn.inside_structure(p)) continue;
                ps.push_back(p);
                cells.push_back(scn.index(ix, iy));
            }
        const auto v = eval(ps);
        for (std::size_t k = 0; k < cells.size(); ++k) s.values[cells[k]] = v[k];
        write_file(dir / ("z" + z_name(z) + ".ppm"), encode_ppm(s));
        write_text(dir / ("z" + z_name(z) + ".csv"), encode_slice_csv(s));
    }
    receipt(dir, "plot", o, c);
    log(o, std::to_string(zs.size()) + " slices -> " + dir.string());
    return 0;
}

int cmd_bench(const Options& o) {
    const auto data = data_dir(o);
    const auto c = resolve(o, data / "config.json");
    const auto assets = load_assets(data);
    const auto mdir = model_dir(o);
    const auto t = load_models(mdir, resolve(o, mdir / "config.json"));
    const Predictor pred(*t.mmf, *t.mmr, *t.csir, assets.scenario, assets.grid);
    std::vector<Vec3> qs;
    for (std::size_t k = 0; k < std::min(o.queries, assets.split.test.size()); ++k)
        qs.push_back(assets.store.tuples[assets.split.test[k]].position);
    if (qs.empty()) throw UsageError("no test positions to time");

    auto time = [](auto&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const auto samples = samples_from(assets.store.subset(baseline_sample(assets, c.baseline_rate, o.seed)));
    pred.predict(qs.front());
    std::vector<std::pair<std::string, double>> rows;
    rows.emplace_back("mmf", time([&] { pred.predict(qs); }));
    rows.emplace_back("idw", time([&] { for (auto q : qs) idw_predict(samples, q); }));
    rows.emplace_back("nn", time([&] { for (auto q : qs) nn_predict(samples, q); }));
    rows.emplace_back("kriging", time([&] {
        const auto km = kriging_fit(samples);
        for (auto q : qs) km.predict(q);
    }));
    rows.emplace_back("gpr", time([&] {
        const auto gp = gpr_fit_auto(samples);
        for (auto q : qs) gp.predict(q);
    }));
    std::string csv = "method,queries,relative_time\n";
    for (const auto& [m, s] : rows) {
        std::ostringstream os;
        os << m << "," << qs.size() << "," << s / rows.front().second << "\n";
        csv += os.str();
    }
    const auto dir = out_dir(o, "bench");
    write_text(dir / "bench.csv", csv);
    receipt(dir, "bench", o, c);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D channel fingerprint construction from ground measurements and scene maps"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* s) {
        s->add_option("--config", o.config, "start from a receipt config.json");
        s->add_option("--seed", o.seed, "model / sampling seed");
        s->add_option("--scene-seed", o.scene_seed, "scenario seed");
        s->add_option("--size", o.size, "grid side in cells (1 m each)");
        s->add_option("--density", o.density, "building footprint fraction");
        s->add_option("--n-aerial", o.n_aerial, "aerial CSI tuples to sample");
        s->add_option("--lambda", o.lambda, "correlation loss weight");
        s->add_option("--sigma-tam", o.sigma, "terminal-attention mask width, m");
        s->add_option("--epochs-mmf", o.epochs_mmf, "Corr-MMF epochs");
        s->add_option("--epochs-mmr", o.epochs_mmr, "MMR epochs");
        s->add_option("--epochs-csir", o.epochs_csir, "CSI-R epochs");
        s->add_option("--jobs", o.jobs, "worker threads for simulation");
        s->add_option("--out", o.out, "output directory");
        s->add_option("--data", o.data, "sample directory");
        s->add_option("--models", o.models, "trained model directory");
        s->add_flag("--quiet", o.quiet, "no progress on stderr");
    };

    auto* gen = app.add_subcommand("generate", "generate a scenario");
    auto* smp = app.add_subcommand("sample", "generate a scenario and simulate its measurements");
    auto* trn = app.add_subcommand("train", "train MMR, Corr-MMF and CSI-R");
    auto* evl = app.add_subcommand("eval", "compare methods on the test split");
    auto* swp = app.add_subcommand("sweep", "lambda sweep over seeds");
    auto* plt = app.add_subcommand("plot", "RSS heat maps at fixed altitudes");
    auto* bch = app.add_subcommand("bench", "relative query time per method");
    for (auto* s : {gen, smp, trn, evl, swp, plt, bch}) common(s);
    evl->add_option("--method", o.method, "mmf, idw, nn, kriging, gpr or all")
        ->check(CLI::IsMember({"mmf", "idw", "nn", "kriging", "gpr", "all"}));
    evl->add_flag("--at-samples", o.at_samples, "score baselines at their own fitted samples");
    swp->add_option("--lambdas", o.lambdas, "comma-separated lambda values");
    swp->add_option("--seeds", o.seeds, "comma-separated seeds");
    plt->add_option("--z", o.z_list, "comma-separated altitudes, m");
    plt->add_option("--source", o.source, "sim, mmf, idw, nn, kriging or gpr");
    bch->add_option("--queries", o.queries, "number of query positions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "cf3d: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen) return cmd_generate(o);
        if (*smp) return cmd_sample(o);
        if (*trn) return cmd_train(o);
        if (*evl) return cmd_eval(o);
        if (*swp) return cmd_sweep(o);
        if (*plt) return cmd_plot(o);
        if (*bch) return cmd_bench(o);
    } catch (const UsageError& e) {
        std::cerr << "cf3d: usage error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "cf3d: data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "cf3d: numeric error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "cf3d: data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "cf3d: internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
