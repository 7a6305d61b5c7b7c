#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "pbody/autodiff.hpp"
#include "pbody/body_model.hpp"
#include "pbody/distributions.hpp"
#include "pbody/rng.hpp"
#include "pbody/rotation.hpp"

namespace pbody {

// ||R(gamma) - R(gamma_hat)||_F^2.
template <class T>
T loss_glob(const Vec3<T>& gamma_hat, const Eigen::Vector3d& gamma)
{
    const Mat3<T> rh = rodrigues<T>(gamma_hat);
    const Mat3<double> r = rodrigues<double>({gamma.x(), gamma.y(), gamma.z()});
    T acc(0.0);
    for (int k = 0; k < 9; ++k) {
        const T d = rh[k] - r[k];
        acc = acc + d * d;
    }
    return acc;
}

// Pixel coordinates to the weak-perspective frame: both axes are centred on
// the image and divided by half the image width.
Points2 normalize_pixels(const Points2& pixels, int width, int height);

// Supervision for one example. target_joints are in normalized coordinates.
struct LossTargets {
    Eigen::VectorXd theta;
    Eigen::VectorXd beta;
    Eigen::Vector3d gamma = Eigen::Vector3d::Zero();
    Points2 target_joints;
    std::vector<std::uint8_t> visibility;
};

struct LossWeights {
    double glob = 1.0;
    double reproj = 0.01;
};

template <class T>
struct LossTerms {
    T nll;
    T glob;
    T reproj;
    T total;
};

// Standard normal draws, one row per reprojection sample, laid out as
// [eps_theta | eps_beta].
using ReprojNoise = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ReprojNoise draw_reproj_noise(Rng& rng, int samples, const OutputLayout& layout);

// sum_i sum_l omega_l ||J_l - J_hat_l^i||^2 over the noise rows i, where
// J_hat^i projects the posed keypoints of (mu + sigma * eps_i) with the
// predicted gamma and weak-perspective camera. y is the flat output vector.
template <class T>
T loss_reproj(const BodyModel& model, std::span<const T> y, const OutputLayout& lay, const Points2& target,
              std::span<const std::uint8_t> visibility, const ReprojNoise& eps)
{
    using std::sqrt;
    using ad::sqrt;
    const int np = lay.pose_dim;
    const int nb = lay.shape_dim;
    if (static_cast<int>(y.size()) != lay.size()) throw std::invalid_argument("loss_reproj: output size mismatch");
    if (eps.cols() != np + nb) throw std::invalid_argument("loss_reproj: noise width mismatch");
    if (target.rows() != model.num_keypoints() || static_cast<Eigen::Index>(visibility.size()) != target.rows()) {
        throw std::invalid_argument("loss_reproj: keypoint count mismatch");
    }
    bool any = false;
    for (auto w : visibility) any = any || w;
    if (!any || eps.rows() == 0) return T(0.0);

    std::vector<T> sd(np + nb);
    for (int i = 0; i < np; ++i) sd[i] = sqrt(y[lay.var_theta() + i]);
    for (int i = 0; i < nb; ++i) sd[np + i] = sqrt(y[lay.var_beta() + i]);
    const Vec3<T> gamma{y[lay.gamma()], y[lay.gamma() + 1], y[lay.gamma() + 2]};
    const T s = y[lay.cam()];
    const T tx = y[lay.cam() + 1];
    const T ty = y[lay.cam() + 2];

    std::vector<T> theta(np);
    std::vector<T> beta(nb);
    T acc(0.0);
    for (Eigen::Index r = 0; r < eps.rows(); ++r) {
        for (int i = 0; i < np; ++i) theta[i] = y[lay.mu_theta() + i] + sd[i] * eps(r, i);
        for (int i = 0; i < nb; ++i) beta[i] = y[lay.mu_beta() + i] + sd[np + i] * eps(r, np + i);
        const auto kp = posed_keypoints<T>(model, theta, beta, gamma);
        for (int l = 0; l < model.num_keypoints(); ++l) {
            if (!visibility[l]) continue;
            const T du = s * kp[l][0] + tx - target(l, 0);
            const T dv = s * kp[l][1] + ty - target(l, 1);
            acc = acc + du * du + dv * dv;
        }
    }
    return acc;
}

// L = NLL(pose) + NLL(shape) + w.glob * L_glob + w.reproj * L_2D.
template <class T>
LossTerms<T> loss_total(const BodyModel& model, std::span<const T> y, const OutputLayout& lay,
                        const LossTargets& tgt, const ReprojNoise& eps, const LossWeights& w)
{
    if (tgt.theta.size() != lay.pose_dim || tgt.beta.size() != lay.shape_dim) {
        throw std::invalid_argument("loss_total: label size mismatch");
    }
    LossTerms<T> out;
    out.nll = nll_terms<T>(y.subspan(lay.mu_theta(), lay.pose_dim), y.subspan(lay.var_theta(), lay.pose_dim),
                           std::span<const double>(tgt.theta.data(), tgt.theta.size())) +
              nll_terms<T>(y.subspan(lay.mu_beta(), lay.shape_dim), y.subspan(lay.var_beta(), lay.shape_dim),
                           std::span<const double>(tgt.beta.data(), tgt.beta.size()));
    out.glob = loss_glob<T>({y[lay.gamma()], y[lay.gamma() + 1], y[lay.gamma() + 2]}, tgt.gamma);
    out.reproj = w.reproj != 0.0 ? loss_reproj<T>(model, y, lay, tgt.target_joints, tgt.visibility, eps) : T(0.0);
    out.total = out.nll + out.glob * w.glob + out.reproj * w.reproj;
    return out;
}

// Loss values and dL/dy for a flat output vector.
struct LossGradient {
    LossTerms<double> terms;
    Eigen::VectorXd dy;
};

LossGradient loss_with_gradient(const BodyModel& model, const Eigen::VectorXd& y, const OutputLayout& lay,
                                const LossTargets& tgt, const ReprojNoise& eps, const LossWeights& w);

}  // namespace pbody
