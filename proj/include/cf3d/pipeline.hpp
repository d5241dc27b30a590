#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cf3d/baselines.hpp"
#include "cf3d/dataset.hpp"
#include "cf3d/models.hpp"

namespace cf3d {

/// Everything needed to rebuild a run: scene, data sizes, architectures and
/// schedules. Serialises to the receipt written next to every output.
struct PipelineConfig {
    std::uint64_t scene_seed = 7;
    std::size_t size = 128;
    double density = 0.3;
    std::uint64_t data_seed = 11;
    std::size_t n_aerial = 20000;
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};

    std::size_t mmf_train_centers = 128;
    std::size_t mmf_val_centers = 32;
    std::size_t mmr_extra_scenes = 16;
    std::size_t mmr_val_scenes = 4;

    CorrMmfConfig mmf;
    MmrConfig mmr;
    CsiRConfig csir;
    Schedule mmf_schedule{60, 35, 0.005, 16};
    Schedule mmr_schedule{50, 35, 0.001, 16};
    // Longer and faster than the reference schedule (15 epochs at 1e-4), which
    // stops while validation loss is still falling fast at this scale.
    Schedule csir_schedule{80, 60, 1e-3, 32};

    double lambda = 1.0;
    double baseline_rate = 0.05;
    std::size_t jobs = 1;
    ChannelConfig channel;

    /// Propagates size and latent geometry into the module configs.
    void sync();
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
};

/// Scene plus its measurements, shared by every method.
struct SceneAssets {
    Scenario scenario;
    GroundMeasurementGrid grid;  // normalised with store.norm
    CfStore store;
    DatasetSplit split;
};

SceneAssets build_assets(const PipelineConfig& cfg);
/// scenario.cf3s, store.cf3c, ground.cf3g and split.json under `dir`.
void save_assets(const std::filesystem::path& dir, const SceneAssets& assets);
SceneAssets load_assets(const std::filesystem::path& dir);
/// Throws UsageError when any index appears in two parts.
void check_disjoint(const DatasetSplit& split);

/// Corr-MMF view maps of a scene: normalised ground grid and footprint.
CorrMmfData corrmmf_data(const PipelineConfig& cfg, const SceneAssets& assets);
/// The scene's E_v scaled by 100 m, then its 8 dihedral variants plus
/// freshly generated scenes.
std::vector<double> height_map(const Scenario& scn);
std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> mmr_data(const PipelineConfig& cfg,
                                                                                      const Scenario& scn);

/// Normalised CSI-R coordinates; RangeError outside the scene or band.
std::array<double, 3> normalized_coords(const Scenario& scn, Vec3 p);

struct TrainedModels {
    std::unique_ptr<CorrMmfModel> mmf;
    std::unique_ptr<MmrModel> mmr;
    std::unique_ptr<CsiRModel> csir;
    std::vector<CorrMmfEpoch> mmf_history;
    std::vector<LossEpoch> mmr_history, csir_history;
};

using Progress = std::function<void(const std::string&)>;

std::unique_ptr<MmrModel> train_mmr_stage(const PipelineConfig& cfg, const SceneAssets& assets, std::uint64_t seed,
                                          std::vector<LossEpoch>* history, const Progress& progress = {});
std::unique_ptr<CorrMmfModel> train_corrmmf_stage(const PipelineConfig& cfg, const SceneAssets& assets,
                                                  std::uint64_t seed, std::vector<CorrMmfEpoch>* history,
                                                  const Progress& progress = {});
/// Frozen-upstream inputs for the tuples at `indices`.
CsiRData csir_data(const CorrMmfModel& mmf, const MmrModel& mmr, const SceneAssets& assets,
                   const std::vector<std::size_t>& indices);
std::unique_ptr<CsiRModel> train_csir_stage(const PipelineConfig& cfg, const CorrMmfModel& mmf, const MmrModel& mmr,
                                            const SceneAssets& assets, std::uint64_t seed,
                                            std::vector<LossEpoch>* history, const Progress& progress = {});

/// All three stages in order: MMR, Corr-MMF, CSI-R.
TrainedModels train_pipeline(const PipelineConfig& cfg, const SceneAssets& assets, std::uint64_t seed,
                             const Progress& progress = {});

void save_models(const std::filesystem::path& dir, const TrainedModels& models);
/// Fresh models built from `cfg` with weights read from `dir`.
TrainedModels load_models(const std::filesystem::path& dir, const PipelineConfig& cfg);

/// Inference over one scene. The MMR embedding is computed on first use and
/// reused afterwards; Corr-MMF latents are recomputed per query.
class Predictor {
public:
    Predictor(const CorrMmfModel& mmf, const MmrModel& mmr, const CsiRModel& csir, const Scenario& scn,
              const GroundMeasurementGrid& grid);

    double predict(Vec3 position) const;
    std::vector<double> predict(const std::vector<Vec3>& positions, std::size_t batch = 64) const;
    bool mmr_cached() const;

private:
    Tensor mmr_embedding() const;

    const CorrMmfModel& mmf_;
    const MmrModel& mmr_;
    const CsiRModel& csir_;
    const Scenario& scn_;
    std::vector<double> g_view_, e_view_;
    mutable std::mutex mu_;
    mutable std::optional<Tensor> mmr_emb_;
};

/// One tuple per position, carrying the position bit for bit.
CfStore construct_cf(const Predictor& predictor, const std::vector<Vec3>& positions, const Normalization& norm,
                     const std::string& scenario);

// ---- evaluation ---------------------------------------------------------------

struct EvalRow {
    std::string method;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    double mae = 0.0, rmse = 0.0;
    std::size_t n = 0;
    std::string note;
};

struct EvalReport {
    std::string scenario;
    std::vector<EvalRow> rows;

    std::string to_csv() const;
    std::string to_text() const;
};

/// The published operating point at lambda = 1, carried as a documentation row.
EvalRow reference_row();

/// Baseline predictions on the test split, fitted to `rate` of the store
/// drawn from the train split. Outputs are clipped to [0, 1].
std::vector<double> baseline_predictions(const std::string& method, const SceneAssets& assets, double rate,
                                         std::uint64_t seed, const std::vector<std::size_t>& queries,
                                         std::vector<std::size_t>* fitted = nullptr);
std::vector<std::size_t> baseline_sample(const SceneAssets& assets, double rate, std::uint64_t seed);

std::vector<double> targets(const CfStore& store, const std::vector<std::size_t>& idx);

struct SweepRow {
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double mae = 0.0, rmse = 0.0;
    double corr = 0.0;  // validation corr of the probes after the last epoch
};

/// Full pipeline per (lambda, seed); MMR is trained once per seed.
std::vector<SweepRow> lambda_sweep(const PipelineConfig& cfg, const SceneAssets& assets,
                                   const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
                                   const Progress& progress = {});
std::string sweep_csv(const std::vector<SweepRow>& rows);

// ---- complexity ---------------------------------------------------------------

struct LayerCost {
    std::string name;
    std::uint64_t macs = 0;
};

struct ComplexityReport {
    std::vector<LayerCost> layers;
    std::uint64_t total() const;
    std::string to_text() const;
};

/// n * c_in * h_out * w_out * c_out * k^2
std::uint64_t conv_macs(std::uint64_t n, std::uint64_t c_in, std::uint64_t h_out, std::uint64_t w_out,
                        std::uint64_t c_out, std::uint64_t k);
/// n * d_in * d_out
std::uint64_t dense_macs(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out);
/// Multiply-accumulates of one inference query (Corr-MMF encoder, MMR
/// encoder, CSI-R head) for batch n.
ComplexityReport complexity_report(const CorrMmfConfig& mmf, const MmrConfig& mmr, const CsiRConfig& csir,
                                   std::uint64_t n = 1);

// ---- heat maps ----------------------------------------------------------------

/// grid_h x grid_w values at one altitude; NaN marks cells inside structures.
struct HeatSlice {
    std::size_t grid_w = 0, grid_h = 0;
    double z = 0.0;
    std::vector<double> values;
};

/// 256-entry perceptual colormap from dark blue through green to yellow.
std::array<std::uint8_t, 3> colormap(double t);
std::vector<std::uint8_t> encode_ppm(const HeatSlice& slice, double lo = 0.0, double hi = 1.0);
std::string encode_slice_csv(const HeatSlice& slice);

}  // namespace cf3d
