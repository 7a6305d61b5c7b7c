#pragma once

#include <array>
#include <cmath>

#include <Eigen/Core>

#include "pbody/autodiff.hpp"

// Fixed-size 3-vectors and 3x3 matrices over a generic scalar, so the same
// kinematics code runs on double and on ad::Var.

namespace pbody {

template <class T>
using Vec3 = std::array<T, 3>;

// Row-major 3x3.
template <class T>
using Mat3 = std::array<T, 9>;

template <class T>
Mat3<T> identity3()
{
    return {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
}

template <class T>
Vec3<T> operator+(const Vec3<T>& a, const Vec3<T>& b)
{
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

template <class T>
Vec3<T> operator-(const Vec3<T>& a, const Vec3<T>& b)
{
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

template <class T, class S>
Vec3<T> scale(const Vec3<T>& a, const S& s)
{
    return {a[0] * s, a[1] * s, a[2] * s};
}

template <class T>
Vec3<T> mul(const Mat3<T>& m, const Vec3<T>& v)
{
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

template <class T>
Mat3<T> mul(const Mat3<T>& a, const Mat3<T>& b)
{
    Mat3<T> c;
    for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) {
            c[3 * r + k] = a[3 * r] * b[k] + a[3 * r + 1] * b[3 + k] + a[3 * r + 2] * b[6 + k];
        }
    }
    return c;
}

// Rotation matrix of an axis-angle vector. Small angles use the Taylor series
// of sin(t)/t and (1-cos t)/t^2 so the map stays smooth (and tape-safe) at 0.
template <class T>
Mat3<T> rodrigues(const Vec3<T>& aa)
{
    using std::cos;
    using std::sin;
    using std::sqrt;
    using ad::cos;
    using ad::sin;
    using ad::sqrt;
    const T& x = aa[0];
    const T& y = aa[1];
    const T& z = aa[2];
    const T xx = x * x;
    const T yy = y * y;
    const T zz = z * z;
    const T t2 = xx + yy + zz;
    T a;
    T b;
    if (ad::value_of(t2) < 1e-6) {
        a = T(1.0) - t2 * (1.0 / 6.0) + t2 * t2 * (1.0 / 120.0);
        b = T(0.5) - t2 * (1.0 / 24.0) + t2 * t2 * (1.0 / 720.0);
    } else {
        const T t = sqrt(t2);
        a = sin(t) / t;
        b = (T(1.0) - cos(t)) / t2;
    }
    const T bxy = b * x * y;
    const T bxz = b * x * z;
    const T byz = b * y * z;
    return {T(1.0) - b * (yy + zz), bxy - a * z, bxz + a * y,
            bxy + a * z, T(1.0) - b * (xx + zz), byz - a * x,
            bxz - a * y, byz + a * x, T(1.0) - b * (xx + yy)};
}

inline Eigen::Matrix3d to_eigen(const Mat3<double>& m)
{
    Eigen::Matrix3d r;
    r << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
    return r;
}

inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& aa)
{
    return to_eigen(rodrigues<double>(Vec3<double>{aa.x(), aa.y(), aa.z()}));
}

// Inverse of rodrigues with angle in [0, pi]. Stable near 0 and near pi.
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r);

}  // namespace pbody
