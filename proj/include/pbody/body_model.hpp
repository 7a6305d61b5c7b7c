#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pbody/rotation.hpp"

namespace pbody {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ShapeMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A girth measured on the neutral mesh: the horizontal plane through the
// anchor vertex, restricted to triangles of one body part.
struct Measurement {
    std::string name;
    int anchor_vertex = 0;
    int part = 0;
};

struct VertexMesh {
    Points3 vertices;
    Faces faces;
};

// Quantities derived from a BodyModel that make posing cheap. Rebuilt by
// BodyModel::build_rig(); never serialized.
struct BodyRig {
    struct Influence {
        int joint;
        double weight;
    };
    // Joint pivots regress linearly from the shaped template:
    // pivot_j = pivot_template.row(j) + pivot_basis.block(3j, 0, 3, B) * beta.
    Points3 pivot_template;
    RowMatrix pivot_basis;
    std::vector<std::vector<Influence>> vertex_influences;

    // Keypoints regress linearly from the skinned mesh, so they can be posed
    // without forming it. With r_l the regressor row and w the skinning
    // weights:
    //   rest_l        = sum_v r_lv x_v(beta)
    //   term (l, j):  weight = sum_v r_lv w_vj, p = sum_v r_lv w_vj x_v(beta)
    // Each affine quantity is stored as base + basis * beta.
    struct AffinePoint {
        Eigen::Vector3d base;
        Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor> basis;
    };
    struct KeypointTerm : AffinePoint {
        int joint = 0;
        double weight = 0.0;
    };
    std::vector<AffinePoint> keypoint_rest;
    std::vector<std::vector<KeypointTerm>> keypoint_terms;
};

// Generic SMPL-style body: shape blendshapes, forward kinematics over a joint
// tree, linear blend skinning and a linear keypoint regressor.
struct BodyModel {
    Points3 template_vertices;          // V x 3, meters
    RowMatrix shape_basis;              // 3V x B, row 3*v + axis
    Eigen::MatrixXd joint_regressor;    // L x V keypoint regressor
    Eigen::MatrixXd skeleton_regressor; // J x V joint pivot regressor
    Eigen::MatrixXd skinning_weights;   // V x J
    std::vector<int> parents;           // J, parents[0] == -1
    Faces faces;
    std::vector<int> part_labels;       // V
    std::vector<std::string> joint_names;
    std::vector<std::string> keypoint_names;
    std::vector<std::string> part_names;
    std::vector<std::array<int, 2>> keypoint_lr_pairs;
    // Pose joint whose rotation places each keypoint; -1 when only the root
    // (global rotation) does.
    std::vector<int> keypoint_pose_joint;
    std::vector<Measurement> measurements;

    BodyRig rig;

    int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
    int num_joints() const { return static_cast<int>(parents.size()); }
    int num_keypoints() const { return static_cast<int>(joint_regressor.rows()); }
    int num_betas() const { return static_cast<int>(shape_basis.cols()); }
    int pose_dim() const { return 3 * (num_joints() - 1); }

    // Throws std::invalid_argument describing the first violated invariant.
    void validate() const;
    void build_rig();
};

// Compares the stored arrays and metadata (not the derived rig).
bool operator==(const BodyModel& a, const BodyModel& b);

// ---------------------------------------------------------------------------
// Posing. Templates run on double and on ad::Var.

// Per-joint rigid motion written relative to the rest pivot: a rest point x
// bound to joint j moves to x + (R_j - I)(x - pivot_j) + d_j. At the rest pose
// every term is exactly zero, so the neutral mesh reproduces the template bit
// for bit.
template <class T>
struct SkinTransforms {
    std::vector<Mat3<T>> rotation;      // world rotation R_j
    std::vector<Mat3<T>> rot_minus_id;  // R_j - I
    std::vector<Vec3<T>> pivot;         // rest pivot of joint j
    std::vector<Vec3<T>> displacement;  // posed pivot minus rest pivot

    Vec3<T> offset(int j, const Vec3<T>& x) const
    {
        return mul(rot_minus_id[j], x - pivot[j]) + displacement[j];
    }
};

namespace detail {

inline void check_pose_dims(const BodyModel& m, std::size_t theta, std::size_t beta)
{
    if (theta != static_cast<std::size_t>(m.pose_dim())) {
        throw ShapeMismatch("pose has " + std::to_string(theta) + " entries, model expects " +
                            std::to_string(m.pose_dim()));
    }
    if (beta != static_cast<std::size_t>(m.num_betas())) {
        throw ShapeMismatch("shape has " + std::to_string(beta) + " entries, model expects " +
                            std::to_string(m.num_betas()));
    }
}

template <class T>
Vec3<T> affine_row(const Eigen::Vector3d& base, const double* basis_rows, int stride, std::span<const T> beta)
{
    Vec3<T> out{T(base[0]), T(base[1]), T(base[2])};
    for (int a = 0; a < 3; ++a) {
        const double* row = basis_rows + a * stride;
        for (std::size_t k = 0; k < beta.size(); ++k) {
            if (row[k] != 0.0) out[a] += row[k] * beta[k];
        }
    }
    return out;
}

template <class T>
Mat3<T> minus_identity(Mat3<T> m)
{
    m[0] -= 1.0;
    m[4] -= 1.0;
    m[8] -= 1.0;
    return m;
}

}  // namespace detail

template <class T>
std::vector<Vec3<T>> joint_pivots(const BodyModel& m, std::span<const T> beta)
{
    const int nb = m.num_betas();
    std::vector<Vec3<T>> pivots(m.num_joints());
    for (int j = 0; j < m.num_joints(); ++j) {
        pivots[j] = detail::affine_row<T>(m.rig.pivot_template.row(j).transpose(),
                                          m.rig.pivot_basis.data() + 3 * j * nb, nb, beta);
    }
    return pivots;
}

template <class T>
SkinTransforms<T> skin_transforms(const BodyModel& m, std::span<const T> theta, std::span<const T> beta,
                                  const Vec3<T>& gamma)
{
    detail::check_pose_dims(m, theta.size(), beta.size());
    const int nj = m.num_joints();
    SkinTransforms<T> st;
    st.pivot = joint_pivots<T>(m, beta);
    st.rotation.resize(nj);
    st.rot_minus_id.resize(nj);
    st.displacement.resize(nj);
    for (int j = 0; j < nj; ++j) {
        const Mat3<T> local = j == 0 ? rodrigues<T>(gamma)
                                     : rodrigues<T>(Vec3<T>{theta[3 * (j - 1)], theta[3 * (j - 1) + 1],
                                                            theta[3 * (j - 1) + 2]});
        const int p = m.parents[j];
        if (p < 0) {
            st.rotation[j] = local;
            st.displacement[j] = Vec3<T>{T(0.0), T(0.0), T(0.0)};
        } else {
            st.rotation[j] = mul(st.rotation[p], local);
            // posed_j - pivot_j = (R_p - I)(pivot_j - pivot_p) + (posed_p - pivot_p)
            st.displacement[j] = mul(st.rot_minus_id[p], st.pivot[j] - st.pivot[p]) + st.displacement[p];
        }
        st.rot_minus_id[j] = detail::minus_identity(st.rotation[j]);
    }
    return st;
}

// Posed vertices, LBS over the shaped template.
template <class T>
std::vector<Vec3<T>> posed_vertices(const BodyModel& m, std::span<const T> theta, std::span<const T> beta,
                                    const Vec3<T>& gamma)
{
    const auto st = skin_transforms<T>(m, theta, beta, gamma);
    const int nv = m.num_vertices();
    const int nb = m.num_betas();
    std::vector<Vec3<T>> out(nv);
    for (int v = 0; v < nv; ++v) {
        const Vec3<T> rest = detail::affine_row<T>(m.template_vertices.row(v).transpose(),
                                                   m.shape_basis.data() + 3 * v * nb, nb, beta);
        Vec3<T> acc = rest;
        for (const auto& inf : m.rig.vertex_influences[v]) acc = acc + scale(st.offset(inf.joint, rest), inf.weight);
        out[v] = acc;
    }
    return out;
}

// Regressed keypoints of the posed mesh; equals regress_joints(forward(...))
// without forming the mesh.
template <class T>
std::vector<Vec3<T>> posed_keypoints(const BodyModel& m, std::span<const T> theta, std::span<const T> beta,
                                     const Vec3<T>& gamma)
{
    const auto st = skin_transforms<T>(m, theta, beta, gamma);
    const int nb = m.num_betas();
    std::vector<Vec3<T>> out(m.num_keypoints());
    for (int l = 0; l < m.num_keypoints(); ++l) {
        const auto& rest = m.rig.keypoint_rest[l];
        Vec3<T> acc = detail::affine_row<T>(rest.base, rest.basis.data(), nb, beta);
        for (const auto& term : m.rig.keypoint_terms[l]) {
            // sum_v r_lv w_vj (x_v - pivot_j) = p_lj - a_lj * pivot_j
            const Vec3<T> p = detail::affine_row<T>(term.base, term.basis.data(), nb, beta);
            acc = acc + mul(st.rot_minus_id[term.joint], p - scale(st.pivot[term.joint], term.weight)) +
                  scale(st.displacement[term.joint], term.weight);
        }
        out[l] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Double-precision entry points.

VertexMesh forward(const BodyModel& m, const Eigen::VectorXd& theta, const Eigen::VectorXd& beta,
                   const Eigen::Vector3d& gamma);

Points3 regress_joints(const BodyModel& m, const VertexMesh& mesh);

// Keypoints via the rig fast path.
Points3 keypoints(const BodyModel& m, const Eigen::VectorXd& theta, const Eigen::VectorXd& beta,
                  const Eigen::Vector3d& gamma);

VertexMesh neutral_pose_mesh(const BodyModel& m, const Eigen::VectorXd& beta);

// Procedural humanoid built from elliptical tubes along five limb chains,
// with an SMPL-like 24-joint tree (fewer joints merge extremities into their
// parents). Requires num_vertices >= 50 and 8 <= num_joints <= 24.
BodyModel generate_toy_model(std::uint64_t seed, int num_vertices = 600, int num_joints = 24);

void save_model(const BodyModel& m, const std::string& path);
BodyModel load_model(const std::string& path);

}  // namespace pbody
