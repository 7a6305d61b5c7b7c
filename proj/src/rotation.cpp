#include "pbody/rotation.hpp"

#include <algorithm>

namespace pbody {

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r)
{
    const Eigen::Vector3d v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    const double s = 0.5 * v.norm();                      // sin(angle)
    const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);  // cos(angle)
    const double angle = std::atan2(s, c);
    if (angle < 1e-8) return 0.5 * v;
    if (angle < 0.5 * M_PI) return v.normalized() * angle;

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 - cos) * a * a^T instead.
    const Eigen::Matrix3d b = 0.5 * (r + r.transpose()) - c * Eigen::Matrix3d::Identity();
    const double one_minus_c = 1.0 - c;
    int i = 0;
    b.diagonal().maxCoeff(&i);
    Eigen::Vector3d axis;
    axis[i] = std::sqrt(std::max(b(i, i), 0.0) / one_minus_c);
    for (int j = 0; j < 3; ++j) {
        if (j != i) axis[j] = b(i, j) / (one_minus_c * axis[i]);
    }
    axis.normalize();
    if (axis.dot(v) < 0.0) axis = -axis;
    return axis * angle;
}

}  // namespace pbody
