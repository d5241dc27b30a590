#include <algorithm>
#include <cstdio>
#include <sstream>

#include "cf3d/errors.hpp"
#include "cf3d/pipeline.hpp"

namespace cf3d {

namespace {

std::string num(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

}  // namespace

EvalRow reference_row() { return {"reference", 0, 1.0, 0.029, 0.060, 0, "published operating point, not measured"}; }

std::string EvalReport::to_csv() const {
    std::string out = "scenario,method,seed,lambda,mae,rmse,n,note\n";
    for (const auto& r : rows)
        out += scenario + "," + r.method + "," + std::to_string(r.seed) + "," + num(r.lambda, 3) + "," +
               num(r.mae, 9) + "," + num(r.rmse, 9) + "," + std::to_string(r.n) + "," + r.note + "\n";
    return out;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "scenario " << scenario << "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %6s %7s %10s %10s %7s  %s\n", "method", "seed", "lambda", "MAE", "RMSE",
                  "n", "note");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-10s %6llu %7.3f %10.6f %10.6f %7zu  %s\n", r.method.c_str(),
                      static_cast<unsigned long long>(r.seed), r.lambda, r.mae, r.rmse, r.n, r.note.c_str());
        os << line;
    }
    return os.str();
}

std::vector<std::size_t> baseline_sample(const SceneAssets& assets, double rate, std::uint64_t seed) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("baseline sampling rate must lie in (0, 1]");
    const auto want = static_cast<std::size_t>(std::llround(rate * static_cast<double>(assets.store.size())));
    std::vector<std::size_t> pool = assets.split.train;
    const std::size_t k = std::clamp<std::size_t>(want, 1, pool.size());
    if (pool.empty()) throw UsageError("train split is empty");
    Rng rng(seed, 0xBA5E);
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(k);
    return pool;
}

std::vector<double> targets(const CfStore& store, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(store.tuples.at(i).rss_norm);
    return out;
}

std::vector<double> baseline_predictions(const std::string& method, const SceneAssets& assets, double rate,
                                         std::uint64_t seed, const std::vector<std::size_t>& queries,
                                         std::vector<std::size_t>* fitted) {
    const auto picked = baseline_sample(assets, rate, seed);
    if (fitted) *fitted = picked;
    const auto samples = samples_from(assets.store.subset(picked));
    std::function<double(Vec3)> f;
    std::optional<KrigingModel> km;
    std::optional<GprModel> gp;
    if (method == "idw") {
        f = [&](Vec3 q) { return idw_predict(samples, q); };
    } else if (method == "nn") {
        f = [&](Vec3 q) { return nn_predict(samples, q); };
    } else if (method == "kriging") {
        km.emplace(kriging_fit(samples));
        f = [&](Vec3 q) { return km->predict(q); };
    } else if (method == "gpr") {
        gp.emplace(gpr_fit_auto(samples));
        f = [&](Vec3 q) { return gp->predict(q).first; };
    } else {
        throw UsageError("unknown baseline '" + method + "'");
    }
    std::vector<double> out;
    out.reserve(queries.size());
    for (auto i : queries) out.push_back(std::clamp(f(assets.store.tuples.at(i).position), 0.0, 1.0));
    return out;
}

std::vector<SweepRow> lambda_sweep(const PipelineConfig& cfg, const SceneAssets& assets,
                                   const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
                                   const Progress& progress) {
    check_disjoint(assets.split);
    std::vector<SweepRow> rows;
    const auto truth = targets(assets.store, assets.split.test);
    std::vector<Vec3> pos;
    for (auto i : assets.split.test) pos.push_back(assets.store.tuples[i].position);
    for (auto seed : seeds) {
        const auto mmr = train_mmr_stage(cfg, assets, seed, nullptr, progress);
        for (double lambda : lambdas) {
            PipelineConfig c = cfg;
            c.lambda = lambda;
            std::vector<CorrMmfEpoch> hist;
            const auto mmf = train_corrmmf_stage(c, assets, seed, &hist, progress);
            const auto csir = train_csir_stage(c, *mmf, *mmr, assets, seed, nullptr, progress);
            const Predictor pred(*mmf, *mmr, *csir, assets.scenario, assets.grid);
            const auto m = metrics(pred.predict(pos), truth);
            rows.push_back({lambda, seed, m.mae, m.rmse, hist.empty() ? 0.0 : hist.back().val_corr});
            if (progress)
                progress("sweep: lambda " + num(lambda, 3) + " seed " + std::to_string(seed) + " MAE " + num(m.mae) +
                         " RMSE " + num(m.rmse) + " corr " + num(rows.back().corr));
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "lambda,seed,mae,rmse,corr\n";
    for (const auto& r : rows)
        out += num(r.lambda, 3) + "," + std::to_string(r.seed) + "," + num(r.mae, 9) + "," + num(r.rmse, 9) + "," +
               num(r.corr, 9) + "\n";
    return out;
}

}  // namespace cf3d
