#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cf3d/dataset.hpp"

namespace cf3d {

/// Scattered 3D sample used by the interpolators.
struct Sample {
    Vec3 position;
    double value = 0.0;
};

std::vector<Sample> samples_from(const CfStore& store);

/// Inverse-distance weighting with weights d^-power; exact at sample points.
double idw_predict(const std::vector<Sample>& samples, Vec3 query, double power = 2.0);
/// Value of the nearest sample; ties go to the lowest index.
double nn_predict(const std::vector<Sample>& samples, Vec3 query);

enum class VariogramKind { Exponential, Spherical, Gaussian };

VariogramKind parse_variogram_kind(const std::string& name);
const char* to_string(VariogramKind kind);

/// Practical-range forms: the structured part reaches ~95% of the partial
/// sill at `range`. gamma(0) is 0 regardless of the nugget.
struct VariogramModel {
    VariogramKind kind = VariogramKind::Exponential;
    double nugget = 0.0;
    double sill = 1.0;  // total sill, nugget included
    double range = 1.0;

    double operator()(double h) const;
};

struct EmpiricalVariogram {
    std::vector<double> lag, gamma;
    std::vector<std::size_t> count;
    double bin_width = 0.0;
};

/// Semivariance over all pairs in `bins` equal-width bins up to max_lag
/// (default: half the largest pair distance). Empty bins are dropped.
EmpiricalVariogram empirical_variogram(const std::vector<Sample>& samples, double max_lag = 0.0,
                                       std::size_t bins = 15);
/// Pair-count weighted least squares: grid search over the range with the
/// nugget and partial sill solved under non-negativity.
VariogramModel fit_variogram(const EmpiricalVariogram& ev, VariogramKind kind);

/// Ordinary Kriging with a factorised system [Gamma 1; 1^T 0].
class KrigingModel {
public:
    KrigingModel(std::vector<Sample> samples, VariogramModel model);

    const VariogramModel& variogram() const { return model_; }
    const std::vector<Sample>& samples() const { return samples_; }
    /// Sample weights followed by the Lagrange multiplier.
    Eigen::VectorXd weights(Vec3 query) const;
    double predict(Vec3 query) const;

private:
    std::vector<Sample> samples_;
    VariogramModel model_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

/// Fits the variogram of `kind` to the samples, then builds the model.
KrigingModel kriging_fit(const std::vector<Sample>& samples, VariogramKind kind = VariogramKind::Exponential);

struct GprHyper {
    double length_scale = 10.0;
    double signal_var = 0.1;
    double noise_var = 1e-4;
};

/// Zero-mean GP with a squared-exponential kernel.
class GprModel {
public:
    GprModel(std::vector<Sample> samples, GprHyper hyper);

    const GprHyper& hyper() const { return hyper_; }
    double jitter() const { return jitter_; }
    /// Posterior mean and variance.
    std::pair<double, double> predict(Vec3 query) const;
    double log_marginal_likelihood() const { return lml_; }

private:
    double kernel(Vec3 a, Vec3 b) const;
    std::vector<Sample> samples_;
    GprHyper hyper_;
    double jitter_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
    double lml_ = 0.0;
};

inline GprModel gpr_fit(const std::vector<Sample>& samples, GprHyper hyper) { return GprModel(samples, hyper); }
/// Grid search over length scales {5,10,20,40} m and signal variances
/// {0.05,0.1,0.5} with noise 1e-4, keeping the best marginal likelihood.
GprModel gpr_fit_auto(const std::vector<Sample>& samples);

}  // namespace cf3d
