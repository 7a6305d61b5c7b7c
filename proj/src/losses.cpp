#include "pbody/losses.hpp"

namespace pbody {

Points2 normalize_pixels(const Points2& pixels, int width, int height)
{
    if (width <= 0 || height <= 0) throw std::invalid_argument("normalize_pixels: image size must be positive");
    const double half = 0.5 * width;
    Points2 out(pixels.rows(), 2);
    out.col(0) = (pixels.col(0).array() - 0.5 * width) / half;
    out.col(1) = (pixels.col(1).array() - 0.5 * height) / half;
    return out;
}

ReprojNoise draw_reproj_noise(Rng& rng, int samples, const OutputLayout& layout)
{
    if (samples < 0) throw std::invalid_argument("reprojection sample count must be non-negative");
    ReprojNoise eps(samples, layout.pose_dim + layout.shape_dim);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = standard_normal(rng);
    return eps;
}

LossGradient loss_with_gradient(const BodyModel& model, const Eigen::VectorXd& y, const OutputLayout& lay,
                                const LossTargets& tgt, const ReprojNoise& eps, const LossWeights& w)
{
    ad::Tape tape;
    tape.reserve(static_cast<std::size_t>(20000) * std::max<Eigen::Index>(1, eps.rows()));
    const auto in = tape.inputs(std::span<const double>(y.data(), y.size()));
    const auto terms = loss_total<ad::Var>(model, in, lay, tgt, eps, w);
    LossGradient out;
    out.terms = {terms.nll.value(), terms.glob.value(), terms.reproj.value(), terms.total.value()};
    const auto g = tape.gradient(terms.total, in);
    out.dy = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
    return out;
}

}  // namespace pbody
