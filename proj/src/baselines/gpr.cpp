#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "cf3d/baselines.hpp"
#include "cf3d/errors.hpp"

namespace cf3d {

double GprModel::kernel(Vec3 a, Vec3 b) const {
    const Vec3 d = a - b;
    const double r2 = d.x * d.x + d.y * d.y + d.z * d.z;
    return hyper_.signal_var * std::exp(-0.5 * r2 / (hyper_.length_scale * hyper_.length_scale));
}

GprModel::GprModel(std::vector<Sample> samples, GprHyper hyper) : samples_(std::move(samples)), hyper_(hyper) {
    if (samples_.empty()) throw UsageError("GPR needs at least one sample");
    if (!(hyper_.length_scale > 0.0)) throw ConfigError("GPR length scale must be positive");
    if (!(hyper_.signal_var > 0.0) || hyper_.noise_var < 0.0) throw ConfigError("GPR variances out of range");
    const auto n = static_cast<Eigen::Index>(samples_.size());
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = hyper_.signal_var + hyper_.noise_var;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double k = kernel(samples_[i].position, samples_[j].position);
            K(i, j) = k;
            K(j, i) = k;
        }
    }
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = samples_[i].value;

    // Unjittered first, so a noise-free model stays exact; a failed or
    // degenerate factorisation retries with 1e-10 growing tenfold.
    jitter_ = 0.0;
    for (int attempt = 0;; ++attempt) {
        Eigen::MatrixXd Kj = K;
        Kj.diagonal().array() += jitter_;
        llt_.compute(Kj);
        if (llt_.info() == Eigen::Success) {
            const Eigen::VectorXd d = llt_.matrixLLT().diagonal();
            if (jitter_ > 0.0 || d.array().square().minCoeff() > 1e-12 * hyper_.signal_var) break;
        }
        if (attempt == 4) throw NumericError("GPR kernel matrix is not positive definite even with jitter");
        jitter_ = attempt == 0 ? 1e-10 : jitter_ * 10.0;
    }
    alpha_ = llt_.solve(y);
    const Eigen::MatrixXd L = llt_.matrixL();
    lml_ = -0.5 * y.dot(alpha_) - L.diagonal().array().log().sum() -
           0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

std::pair<double, double> GprModel::predict(Vec3 query) const {
    const auto n = static_cast<Eigen::Index>(samples_.size());
    Eigen::VectorXd k(n);
    for (Eigen::Index i = 0; i < n; ++i) k(i) = kernel(samples_[i].position, query);
    const double mean = k.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(k);
    const double var = hyper_.signal_var - v.squaredNorm();
    return {mean, std::max(var, 0.0)};
}

GprModel gpr_fit_auto(const std::vector<Sample>& samples) {
    std::optional<GprModel> best;
    for (double ell : {5.0, 10.0, 20.0, 40.0})
        for (double sf2 : {0.05, 0.1, 0.5}) {
            GprModel m(samples, {ell, sf2, 1e-4});
            if (!best || m.log_marginal_likelihood() > best->log_marginal_likelihood()) best = std::move(m);
        }
    return std::move(*best);
}

}  // namespace cf3d
