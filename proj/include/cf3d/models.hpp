#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cf3d/nn.hpp"
#include "cf3d/optim.hpp"

namespace cf3d {

using ad::Mode;
using ad::Tensor;

// ---- terminal attention -----------------------------------------------------

/// Cell centre of the cell holding the horizontal point (x, y), clamped to
/// the grid.
std::pair<double, double> snap_to_cell(double x, double y, std::size_t grid_w, std::size_t grid_h);

/// Gaussian mask exp(-d^2 / 2 sigma^2) over cell centres, d measured in the
/// plane from the centre of the LAV's cell. Returns [grid_h * grid_w] values.
std::vector<double> tam_mask(double x, double y, std::size_t grid_w, std::size_t grid_h, double sigma);

/// Both views share one mask, so a single tensor serves as M_G and M_E.
struct TamMasks {
    Tensor m_g, m_e;  // [1, h, w, 1]
    double sigma = 16.0;
};
TamMasks tam_masks(double x, double y, std::size_t grid_w, std::size_t grid_h, double sigma);

/// Masks for a batch of LAV projections: [n, h, w, 1].
Tensor tam_mask_batch(const std::vector<std::pair<double, double>>& xy, std::size_t grid_w, std::size_t grid_h,
                      double sigma);

// ---- channel / spatial attention ---------------------------------------------

struct Attention {
    Tensor weights;  // [n,1,1,c] for CAM, [n,h,w,1] for SAM
    Tensor output;
};

/// Shared two-layer 1x1 conv over average- and max-pooled channel statistics.
struct ChannelAttention {
    ad::Conv2d squeeze, expand;

    ChannelAttention() = default;
    ChannelAttention(Rng& rng, std::size_t channels, std::size_t reduction = 4);
    Attention operator()(const Tensor& x) const;
    void collect(const std::string& prefix, ad::ParamList& out) const;
};

/// k x k conv over the per-pixel average and max across channels.
struct SpatialAttention {
    ad::Conv2d conv;

    SpatialAttention() = default;
    explicit SpatialAttention(Rng& rng, std::size_t k = 7);
    Attention operator()(const Tensor& x) const;
    void collect(const std::string& prefix, ad::ParamList& out) const;
};

/// BN(ReLU(Conv(x))), the encoder building block.
struct ConvBlock {
    ad::Conv2d conv;
    ad::BatchNorm2d bn;

    ConvBlock() = default;
    ConvBlock(Rng& rng, std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t stride);
    Tensor operator()(const Tensor& x, Mode mode) const { return bn(ad::relu(conv(x)), mode); }
    void collect(const std::string& prefix, ad::ParamList& out) const;
};

/// Transposed-conv stack that undoes `levels` stride-2 halvings. ReLU
/// between layers, linear output.
struct UpStack {
    std::vector<ad::ConvTranspose2d> layers;

    UpStack() = default;
    UpStack(Rng& rng, const std::vector<std::size_t>& channels, std::size_t k);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, ad::ParamList& out) const;
};

// ---- Corr-MMF ---------------------------------------------------------------

struct CorrMmfConfig {
    std::size_t grid_w = 128, grid_h = 128;
    std::vector<std::size_t> view_channels{8, 16, 32};  // one stride-2 block each
    std::size_t fused_blocks = 2;                         // stride-2 blocks after CAM
    std::size_t kernel = 3;
    double sigma = 16.0;
    double lambda = 1.0;
    bool use_tam = true;
    bool use_cam = true;

    std::size_t levels() const { return view_channels.size() + fused_blocks; }
    std::size_t latent_channels() const { return view_channels.back(); }
    ad::Shape latent_shape() const;  // [h, w, c]
    void validate() const;
};

struct CorrMmfLosses {
    Tensor fusion, cross, corr_loss, objective;
    double corr = 0.0;             // batch-mean adjusted cosine of the probes
    std::size_t degenerate = 0;    // probe pairs with a constant latent
};

class CorrMmfModel {
public:
    CorrMmfModel(const CorrMmfConfig& cfg, std::uint64_t seed);

    const CorrMmfConfig& config() const { return cfg_; }
    ad::ParamList parameters() const;

    /// Sub-encoders on already-masked views [n,h,w,1].
    std::pair<Tensor, Tensor> encode_views(const Tensor& g, const Tensor& e, Mode mode) const;
    /// O_F = o1 + o2, then CAM and the fused blocks.
    Tensor fuse(const Tensor& o1, const Tensor& o2, Mode mode) const;
    Tensor encode(const Tensor& g, const Tensor& e, Mode mode) const;
    /// Two-channel reconstruction (g, e) at the input resolution.
    Tensor decode(const Tensor& code) const;
    /// Channel attention on the fused map (identity output when CAM is off).
    Attention cam(const Tensor& o_f) const;

    /// Full, E=0 and G=0 passes in one batch; targets are the masked views.
    CorrMmfLosses losses(const Tensor& g, const Tensor& e, double lambda, Mode mode) const;

private:
    CorrMmfConfig cfg_;
    std::vector<ConvBlock> e1_, e2_, e3_;
    ChannelAttention cam_;
    UpStack decoder_;
};

/// Mean-centred cosine of two equal-length vectors; 0 when either is constant.
double adjusted_cosine(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate = nullptr);

// ---- MMR --------------------------------------------------------------------

struct MmrConfig {
    std::size_t grid_w = 128, grid_h = 128;
    std::size_t stem_channels = 8;
    std::vector<std::size_t> block_channels{8, 16, 32, 32, 32};  // one stride-2 block each
    std::size_t kernel = 3;
    std::size_t sam_kernel = 7;
    bool sam_every_block = true;  // false: first block only
    bool use_sam = true;

    ad::Shape latent_shape() const;
    void validate() const;
};

class MmrModel {
public:
    MmrModel(const MmrConfig& cfg, std::uint64_t seed);

    const MmrConfig& config() const { return cfg_; }
    ad::ParamList parameters() const;

    Tensor encode(const Tensor& e_v, Mode mode) const;
    Tensor decode(const Tensor& code) const;
    /// Mean Frobenius reconstruction error over the batch.
    Tensor loss(const Tensor& e_v, Mode mode) const;
    Attention sam(std::size_t block, const Tensor& x) const;

private:
    MmrConfig cfg_;
    ad::Conv2d stem_;
    std::vector<SpatialAttention> sams_;
    std::vector<ConvBlock> blocks_;
    UpStack decoder_;
};

// ---- CSI-R ------------------------------------------------------------------

struct CsiRConfig {
    ad::Shape latent_shape{4, 4, 32};
    std::size_t patch = 2;
    std::size_t embed_dim = 64;
    std::vector<std::size_t> hidden{512, 256, 64};
    double dropout = 0.2;

    std::size_t n_patches() const;
    void validate() const;
};

class CsiRModel {
public:
    CsiRModel(const CsiRConfig& cfg, std::uint64_t seed);

    const CsiRConfig& config() const { return cfg_; }
    ad::ParamList parameters() const;

    /// Patch conv (kernel = stride = patch) then flatten: [n, n_patches * d].
    Tensor embed_corrmmf(const Tensor& latent) const;
    Tensor embed_mmr(const Tensor& latent) const;
    /// coords [n,3] in [0,1]; output [n,1] in [0,1].
    Tensor regress(const Tensor& emb_corrmmf, const Tensor& emb_mmr, const Tensor& coords, Mode mode,
                   Rng* rng = nullptr) const;

private:
    CsiRConfig cfg_;
    ad::Conv2d embed_a_, embed_b_;
    std::vector<ad::Dense> fc_;
};

/// Patch embedding with an explicit conv, for callers outside the model.
Tensor patch_embed(const Tensor& latent, const ad::Conv2d& conv, std::size_t patch);

// ---- training ---------------------------------------------------------------

struct Schedule {
    std::size_t epochs = 1;
    std::size_t delay = 0;
    double lr = 1e-3;
    std::size_t batch = 16;

    ad::LrSchedule lr_schedule() const { return {lr, epochs, delay}; }
};

struct CorrMmfEpoch {
    std::size_t epoch = 0;
    double fusion = 0, cross = 0, corr_loss = 0, objective = 0;
    double val_objective = 0, val_corr = 0;
};

/// Training set for Corr-MMF: one scene's two views and LAV projections
/// that place the masks.
struct CorrMmfData {
    std::vector<double> g_view, e_view;  // [h*w] each
    std::vector<std::pair<double, double>> train_xy, val_xy;
};

/// Masked views for a batch of centres: pair of [n,h,w,1] tensors.
std::pair<Tensor, Tensor> masked_views(const CorrMmfConfig& cfg, const std::vector<double>& g_view,
                                       const std::vector<double>& e_view,
                                       const std::vector<std::pair<double, double>>& xy);

std::vector<CorrMmfEpoch> train_corrmmf(CorrMmfModel& model, const CorrMmfData& data, const Schedule& schedule,
                                        double lambda, std::uint64_t seed);
/// Eval-mode losses averaged over `xy` in chunks of `batch`.
CorrMmfEpoch evaluate_corrmmf(const CorrMmfModel& model, const CorrMmfData& data,
                              const std::vector<std::pair<double, double>>& xy, double lambda,
                              std::size_t batch);
std::string corrmmf_history_csv(const std::vector<CorrMmfEpoch>& history);

struct LossEpoch {
    std::size_t epoch = 0;
    double train = 0, val = 0;
};

/// E_v maps [h*w] normalised to [0,1].
std::vector<LossEpoch> train_mmr(MmrModel& model, const std::vector<std::vector<double>>& train_maps,
                                 const std::vector<std::vector<double>>& val_maps, const Schedule& schedule,
                                 std::uint64_t seed);

/// Frozen-upstream training data: per tuple embeddings inputs and targets.
struct CsiRData {
    Tensor corrmmf_latents;  // [n, h, w, c]
    Tensor mmr_latent;       // [1, h, w, c], shared by every tuple
    std::vector<std::array<double, 3>> coords;
    std::vector<double> targets;
};

std::vector<LossEpoch> train_csir(CsiRModel& model, const CsiRData& train, const CsiRData& val,
                                  const Schedule& schedule, std::uint64_t seed);
/// Eval-mode predictions for every tuple of `data`.
std::vector<double> predict_csir(const CsiRModel& model, const CsiRData& data, std::size_t batch = 256);

std::string loss_history_csv(const std::vector<LossEpoch>& history);

/// Throws NumericError naming the stage, epoch, batch and loss parts.
void check_finite(const char* stage, std::size_t epoch, std::size_t batch,
                  const std::vector<std::pair<const char*, double>>& parts);

}  // namespace cf3d
