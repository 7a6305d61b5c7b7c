#include "pbody/distributions.hpp"

#include <algorithm>
#include <string>

namespace pbody {

void GaussianDiag::validate() const
{
    if (mean.size() != var.size()) throw std::invalid_argument("Gaussian mean and variance sizes differ");
    for (Eigen::Index i = 0; i < var.size(); ++i) {
        if (!(var[i] > 0.0) || !std::isfinite(var[i])) {
            throw std::invalid_argument("Gaussian variance " + std::to_string(i) + " is not positive and finite");
        }
    }
}

void PredictionSet::validate() const
{
    pose.validate();
    shape.validate();
    if (!(cam.s > 0.0)) throw std::invalid_argument("camera scale must be positive");
}

Eigen::VectorXd to_vector(const PredictionSet& p)
{
    const OutputLayout lay{p.pose.dim(), p.shape.dim()};
    Eigen::VectorXd y(lay.size());
    y.segment(lay.mu_theta(), lay.pose_dim) = p.pose.mean;
    y.segment(lay.var_theta(), lay.pose_dim) = p.pose.var;
    y.segment(lay.mu_beta(), lay.shape_dim) = p.shape.mean;
    y.segment(lay.var_beta(), lay.shape_dim) = p.shape.var;
    y.segment<3>(lay.gamma()) = p.gamma;
    y.segment<3>(lay.cam()) << p.cam.s, p.cam.tx, p.cam.ty;
    return y;
}

PredictionSet from_vector(const Eigen::VectorXd& y, const OutputLayout& lay)
{
    if (y.size() != lay.size()) {
        throw std::invalid_argument("prediction vector has " + std::to_string(y.size()) + " entries, expected " +
                                    std::to_string(lay.size()));
    }
    PredictionSet p;
    p.pose.mean = y.segment(lay.mu_theta(), lay.pose_dim);
    p.pose.var = y.segment(lay.var_theta(), lay.pose_dim);
    p.shape.mean = y.segment(lay.mu_beta(), lay.shape_dim);
    p.shape.var = y.segment(lay.var_beta(), lay.shape_dim);
    p.gamma = y.segment<3>(lay.gamma());
    p.cam = {y[lay.cam()], y[lay.cam() + 1], y[lay.cam() + 2]};
    return p;
}

GaussianDiag fuse_shapes(std::span<const GaussianDiag> dists)
{
    if (dists.empty()) throw std::invalid_argument("fuse_shapes: no inputs");
    const int d = dists.front().dim();
    Eigen::VectorXd precision = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd weighted = Eigen::VectorXd::Zero(d);
    for (const auto& g : dists) {
        g.validate();
        if (g.dim() != d) throw std::invalid_argument("fuse_shapes: dimension mismatch");
        for (int i = 0; i < d; ++i) {
            const double p = std::max(1.0 / g.var[i], kPrecisionFloor);
            precision[i] += p;
            weighted[i] += p * g.mean[i];
        }
    }
    GaussianDiag out;
    out.var = precision.cwiseInverse();
    out.mean = weighted.cwiseQuotient(precision);
    return out;
}

GaussianDiag mean_of_means(std::span<const GaussianDiag> dists)
{
    if (dists.empty()) throw std::invalid_argument("mean_of_means: no inputs");
    GaussianDiag out;
    out.mean = Eigen::VectorXd::Zero(dists.front().dim());
    out.var = Eigen::VectorXd::Zero(dists.front().dim());
    for (const auto& g : dists) {
        if (g.dim() != out.mean.size()) throw std::invalid_argument("mean_of_means: dimension mismatch");
        out.mean += g.mean;
        out.var += g.var;
    }
    out.mean /= static_cast<double>(dists.size());
    out.var /= static_cast<double>(dists.size());
    return out;
}

Eigen::VectorXd sample_reparam(const GaussianDiag& dist, const Eigen::VectorXd& eps)
{
    dist.validate();
    const auto s = sample_reparam<double>(std::span<const double>(dist.mean.data(), dist.mean.size()),
                                          std::span<const double>(dist.var.data(), dist.var.size()),
                                          std::span<const double>(eps.data(), eps.size()));
    return Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
}

double nll_terms(const GaussianDiag& dist, const Eigen::VectorXd& target)
{
    return nll_terms<double>(std::span<const double>(dist.mean.data(), dist.mean.size()),
                             std::span<const double>(dist.var.data(), dist.var.size()),
                             std::span<const double>(target.data(), target.size()));
}

}  // namespace pbody
