#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "pbody/autodiff.hpp"
#include "pbody/camera.hpp"

namespace pbody {

// Diagonal Gaussian: mean and per-dimension variance.
struct GaussianDiag {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;

    int dim() const { return static_cast<int>(mean.size()); }
    // Throws std::invalid_argument on size mismatch or a variance that is not
    // positive and finite.
    void validate() const;
};

// Per-input network outputs Y = {mu_theta, var_theta, mu_beta, var_beta,
// gamma, c}.
struct PredictionSet {
    GaussianDiag pose;
    GaussianDiag shape;
    Eigen::Vector3d gamma = Eigen::Vector3d::Zero();
    WeakPerspCamera cam;

    void validate() const;
};

// Flat layout of Y: [mu_theta | var_theta | mu_beta | var_beta | gamma | c].
struct OutputLayout {
    int pose_dim = 69;
    int shape_dim = 10;

    int mu_theta() const { return 0; }
    int var_theta() const { return pose_dim; }
    int mu_beta() const { return 2 * pose_dim; }
    int var_beta() const { return 2 * pose_dim + shape_dim; }
    int gamma() const { return 2 * pose_dim + 2 * shape_dim; }
    int cam() const { return 2 * pose_dim + 2 * shape_dim + 3; }
    int size() const { return 2 * pose_dim + 2 * shape_dim + 6; }
};

Eigen::VectorXd to_vector(const PredictionSet& p);
PredictionSet from_vector(const Eigen::VectorXd& y, const OutputLayout& layout);

inline constexpr double kPrecisionFloor = 1e-12;

// Product of Gaussians over the inputs, in precision space:
// S = (sum_n 1/var_n)^-1, m = S * sum_n mean_n / var_n.
GaussianDiag fuse_shapes(std::span<const GaussianDiag> dists);

// Arithmetic mean of the input means; variance is left as the mean variance.
GaussianDiag mean_of_means(std::span<const GaussianDiag> dists);

// mu + sqrt(var) * eps, elementwise.
template <class T>
std::vector<T> sample_reparam(std::span<const T> mean, std::span<const T> var, std::span<const double> eps)
{
    using std::sqrt;
    using ad::sqrt;
    if (mean.size() != var.size() || mean.size() != eps.size()) {
        throw std::invalid_argument("sample_reparam: dimension mismatch");
    }
    std::vector<T> out(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) out[i] = mean[i] + sqrt(var[i]) * eps[i];
    return out;
}

Eigen::VectorXd sample_reparam(const GaussianDiag& dist, const Eigen::VectorXd& eps);

// sum_i log(2 pi var_i) + (target_i - mean_i)^2 / var_i.
template <class T>
T nll_terms(std::span<const T> mean, std::span<const T> var, std::span<const double> target)
{
    using std::log;
    using ad::log;
    if (mean.size() != var.size() || mean.size() != target.size()) {
        throw std::invalid_argument("nll_terms: dimension mismatch");
    }
    T acc(0.0);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (!(ad::value_of(var[i]) > 0.0)) throw std::domain_error("nll_terms: variance must be positive");
        const T r = mean[i] - target[i];
        acc = acc + log(var[i] * (2.0 * std::numbers::pi)) + r * r / var[i];
    }
    return acc;
}

double nll_terms(const GaussianDiag& dist, const Eigen::VectorXd& target);

}  // namespace pbody
