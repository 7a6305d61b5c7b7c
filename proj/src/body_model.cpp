#include "pbody/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Geometry>

#include "pbody/container.hpp"
#include "pbody/rng.hpp"

namespace pbody {

namespace {

constexpr const char* kModelMagic = "PBMODEL";

void require(bool ok, const std::string& what)
{
    if (!ok) throw std::invalid_argument("invalid body model: " + what);
}

template <class A, class B>
bool same_matrix(const A& a, const B& b)
{
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

void BodyModel::validate() const
{
    const int nv = num_vertices();
    const int nj = num_joints();
    const int nl = num_keypoints();
    require(nv > 0, "no vertices");
    require(nj >= 1 && parents[0] == -1, "joint 0 must be the root");
    for (int j = 1; j < nj; ++j) {
        // Parents precede children, so following parents always terminates at
        // the root: one tree, no cycles.
        require(parents[j] >= 0 && parents[j] < j, "joint " + std::to_string(j) + " has an invalid parent");
    }
    require(shape_basis.rows() == 3 * nv, "shape basis rows must be 3 * vertices");
    require(skinning_weights.rows() == nv && skinning_weights.cols() == nj, "skinning weights must be V x J");
    require(skeleton_regressor.rows() == nj && skeleton_regressor.cols() == nv, "skeleton regressor must be J x V");
    require(joint_regressor.cols() == nv, "keypoint regressor must have V columns");
    require(template_vertices.allFinite() && shape_basis.allFinite(), "non-finite template or shape basis");
    for (int v = 0; v < nv; ++v) {
        require((skinning_weights.row(v).array() >= 0.0).all(), "negative skinning weight");
        require(std::abs(skinning_weights.row(v).sum() - 1.0) <= 1e-6, "skinning weights of vertex " +
                                                                           std::to_string(v) + " do not sum to 1");
    }
    for (int l = 0; l < nl; ++l) {
        require((joint_regressor.row(l).array() >= 0.0).all(), "negative keypoint regressor entry");
        require(std::abs(joint_regressor.row(l).sum() - 1.0) <= 1e-6, "keypoint regressor rows must sum to 1");
    }
    for (int j = 0; j < nj; ++j) {
        require(std::abs(skeleton_regressor.row(j).sum() - 1.0) <= 1e-6, "skeleton regressor rows must sum to 1");
    }
    require(faces.size() == 0 || (faces.minCoeff() >= 0 && faces.maxCoeff() < nv), "face index out of range");
    require(static_cast<int>(part_labels.size()) == nv, "one part label per vertex");
    for (int p : part_labels) require(p >= 0 && p < static_cast<int>(part_names.size()), "part label out of range");
    require(static_cast<int>(joint_names.size()) == nj, "one name per joint");
    require(static_cast<int>(keypoint_names.size()) == nl, "one name per keypoint");
    require(static_cast<int>(keypoint_pose_joint.size()) == nl, "one pose joint per keypoint");
    for (int j : keypoint_pose_joint) require(j >= -1 && j < nj && j != 0, "keypoint pose joint out of range");
    for (const auto& pr : keypoint_lr_pairs) {
        require(pr[0] >= 0 && pr[0] < nl && pr[1] >= 0 && pr[1] < nl && pr[0] != pr[1], "bad left/right pair");
    }
    for (const auto& m : measurements) {
        require(m.anchor_vertex >= 0 && m.anchor_vertex < nv, "measurement anchor out of range");
        require(m.part >= 0 && m.part < static_cast<int>(part_names.size()), "measurement part out of range");
    }
}

void BodyModel::build_rig()
{
    const int nv = num_vertices();
    const int nj = num_joints();
    const int nb = num_betas();
    const int nl = num_keypoints();
    using Strided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

    rig.pivot_template = skeleton_regressor * template_vertices;
    rig.pivot_basis = RowMatrix::Zero(3 * nj, nb);
    for (int a = 0; a < 3; ++a) {
        const Strided sa(shape_basis.data() + a * nb, nv, nb, Eigen::OuterStride<>(3 * nb));
        const RowMatrix pj = skeleton_regressor * sa;
        for (int j = 0; j < nj; ++j) rig.pivot_basis.row(3 * j + a) = pj.row(j);
    }

    rig.vertex_influences.assign(nv, {});
    for (int v = 0; v < nv; ++v) {
        for (int j = 0; j < nj; ++j) {
            const double w = skinning_weights(v, j);
            if (w != 0.0) rig.vertex_influences[v].push_back({j, w});
        }
    }

    rig.keypoint_rest.assign(nl, {});
    rig.keypoint_terms.assign(nl, {});
    for (int l = 0; l < nl; ++l) {
        auto& rest = rig.keypoint_rest[l];
        rest.base.setZero();
        rest.basis.setZero(3, nb);
        std::vector<BodyRig::KeypointTerm> terms(nj);
        for (int j = 0; j < nj; ++j) {
            terms[j].joint = j;
            terms[j].base.setZero();
            terms[j].basis.setZero(3, nb);
        }
        for (int v = 0; v < nv; ++v) {
            const double r = joint_regressor(l, v);
            if (r == 0.0) continue;
            const Eigen::Vector3d x = template_vertices.row(v).transpose();
            const auto dx = shape_basis.block(3 * v, 0, 3, nb);
            rest.base += r * x;
            rest.basis += r * dx;
            for (const auto& inf : rig.vertex_influences[v]) {
                auto& t = terms[inf.joint];
                const double rw = r * inf.weight;
                t.weight += rw;
                t.base += rw * x;
                t.basis += rw * dx;
            }
        }
        for (auto& t : terms) {
            if (t.weight != 0.0) rig.keypoint_terms[l].push_back(std::move(t));
        }
    }
}

bool operator==(const BodyModel& a, const BodyModel& b)
{
    auto same_measurements = [&] {
        if (a.measurements.size() != b.measurements.size()) return false;
        for (std::size_t i = 0; i < a.measurements.size(); ++i) {
            const auto& x = a.measurements[i];
            const auto& y = b.measurements[i];
            if (x.name != y.name || x.anchor_vertex != y.anchor_vertex || x.part != y.part) return false;
        }
        return true;
    };
    return same_matrix(a.template_vertices, b.template_vertices) && same_matrix(a.shape_basis, b.shape_basis) &&
           same_matrix(a.joint_regressor, b.joint_regressor) &&
           same_matrix(a.skeleton_regressor, b.skeleton_regressor) &&
           same_matrix(a.skinning_weights, b.skinning_weights) && a.parents == b.parents &&
           same_matrix(a.faces, b.faces) && a.part_labels == b.part_labels && a.joint_names == b.joint_names &&
           a.keypoint_names == b.keypoint_names && a.part_names == b.part_names &&
           a.keypoint_lr_pairs == b.keypoint_lr_pairs && a.keypoint_pose_joint == b.keypoint_pose_joint &&
           same_measurements();
}

// ---------------------------------------------------------------------------

namespace {

Points3 to_points(const std::vector<Vec3<double>>& pts)
{
    Points3 out(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) << pts[i][0], pts[i][1], pts[i][2];
    }
    return out;
}

Vec3<double> to_vec(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

VertexMesh forward(const BodyModel& m, const Eigen::VectorXd& theta, const Eigen::VectorXd& beta,
                   const Eigen::Vector3d& gamma)
{
    const auto verts = posed_vertices<double>(m, std::span<const double>(theta.data(), theta.size()),
                                              std::span<const double>(beta.data(), beta.size()), to_vec(gamma));
    return {to_points(verts), m.faces};
}

Points3 regress_joints(const BodyModel& m, const VertexMesh& mesh)
{
    if (mesh.vertices.rows() != m.joint_regressor.cols()) {
        throw ShapeMismatch("mesh has " + std::to_string(mesh.vertices.rows()) + " vertices, regressor expects " +
                            std::to_string(m.joint_regressor.cols()));
    }
    return m.joint_regressor * mesh.vertices;
}

Points3 keypoints(const BodyModel& m, const Eigen::VectorXd& theta, const Eigen::VectorXd& beta,
                  const Eigen::Vector3d& gamma)
{
    const auto kps = posed_keypoints<double>(m, std::span<const double>(theta.data(), theta.size()),
                                             std::span<const double>(beta.data(), beta.size()), to_vec(gamma));
    return to_points(kps);
}

VertexMesh neutral_pose_mesh(const BodyModel& m, const Eigen::VectorXd& beta)
{
    return forward(m, Eigen::VectorXd::Zero(m.pose_dim()), beta, Eigen::Vector3d::Zero());
}

// ---------------------------------------------------------------------------
// Toy model.

namespace {

enum Joint {
    kPelvis, kLHip, kRHip, kSpine1, kLKnee, kRKnee, kSpine2, kLAnkle, kRAnkle, kSpine3, kLFoot, kRFoot,
    kNeck, kLCollar, kRCollar, kHead, kLShoulder, kRShoulder, kLElbow, kRElbow, kLWrist, kRWrist, kLHand, kRHand,
    kFullJoints
};

const std::array<int, kFullJoints> kFullParents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                                                   9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

const std::array<const char*, kFullJoints> kFullJointNames = {
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
    "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand"};

// Dropped first when fewer joints are requested.
const std::array<int, 16> kRemovalOrder = {22, 23, 10, 11, 13, 14, 6, 12, 3, 15, 20, 21, 7, 8, 18, 19};

const std::array<const char*, 17> kKeypointNames = {
    "nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle"};

enum Part { kTorso, kHeadPart, kLUpperArm, kRUpperArm, kLForearm, kRForearm, kLThigh, kRThigh, kLCalf, kRCalf };

const std::array<const char*, 10> kPartNames = {"torso", "head", "l_upper_arm", "r_upper_arm", "l_forearm",
                                                "r_forearm", "l_thigh", "r_thigh", "l_calf", "r_calf"};

constexpr int kNumShapeComponents = 10;
constexpr double kYShift = 0.29;
constexpr double kFloorY = -0.96 + kYShift;

struct Waypoint {
    Eigen::Vector3d p;
    double rx = 0.0;
    double rz = 0.0;
    int owner = 0;  // full-tree joint owning the segment that starts here
    int part = 0;
};

using Chain = std::vector<Waypoint>;

enum ChainId { kTorsoChain, kLLegChain, kRLegChain, kLArmChain, kRArmChain, kNumChains };

struct Proportions {
    double height = 1.0;
    double width = 1.0;
    double arm = 1.0;
    double leg = 1.0;
    double girth = 1.0;
};

Waypoint wp(double x, double y, double z, double rx, double rz, int owner, int part)
{
    return {Eigen::Vector3d(x, y + kYShift, z), rx, rz, owner, part};
}

// Waypoint geometry for shape coefficients d; every coordinate and radius is
// affine in d.
std::array<Chain, kNumChains> build_chains(const Proportions& pr, const std::array<double, kNumShapeComponents>& d)
{
    const double h = pr.height;
    const double w = pr.width;
    const double g = pr.girth;
    std::array<Chain, kNumChains> c;

    c[kTorsoChain] = {
        wp(0, -0.12 * h, 0, 0.13 * g, 0.09 * g, kPelvis, kTorso),
        wp(0, 0.0, 0, 0.15 * g, 0.10 * g, kPelvis, kTorso),
        wp(0, 0.10 * h, -0.005, 0.13 * g, 0.095 * g, kSpine1, kTorso),
        wp(0, 0.23 * h, -0.005, 0.13 * g, 0.10 * g, kSpine2, kTorso),
        wp(0, 0.36 * h, 0, 0.14 * g, 0.10 * g, kSpine3, kTorso),
        wp(0, 0.47 * h, 0, 0.12 * g, 0.08 * g, kSpine3, kTorso),
        wp(0, 0.52 * h, 0, 0.05 * g, 0.05 * g, kNeck, kHeadPart),
        wp(0, 0.60 * h, 0.01, 0.075 * g, 0.085 * g, kHead, kHeadPart),
        wp(0, 0.70 * h, 0.01, 0.09 * g, 0.10 * g, kHead, kHeadPart),
        wp(0, 0.80 * h, 0.0, 0.03 * g, 0.035 * g, kHead, kHeadPart),
    };
    for (int side : {1, -1}) {
        const bool left = side > 0;
        const double lh = h * pr.leg;
        c[left ? kLLegChain : kRLegChain] = {
            wp(side * 0.09 * w, -0.08 * h, 0, 0.075 * g, 0.075 * g, left ? kLHip : kRHip, left ? kLThigh : kRThigh),
            wp(side * 0.10 * w, -0.08 * h - 0.40 * lh, 0.01, 0.05 * g, 0.05 * g, left ? kLKnee : kRKnee,
               left ? kLCalf : kRCalf),
            wp(side * 0.10 * w, -0.08 * h - 0.80 * lh, -0.02, 0.04 * g, 0.04 * g, left ? kLAnkle : kRAnkle,
               left ? kLCalf : kRCalf),
            wp(side * 0.10 * w, -0.08 * h - 0.87 * lh, 0.08, 0.035 * g, 0.03 * g, left ? kLFoot : kRFoot,
               left ? kLCalf : kRCalf),
            wp(side * 0.10 * w, -0.08 * h - 0.88 * lh, 0.17, 0.03 * g, 0.02 * g, left ? kLFoot : kRFoot,
               left ? kLCalf : kRCalf),
        };
        const double a = pr.arm;
        const double sy = 0.45 * h;
        c[left ? kLArmChain : kRArmChain] = {
            wp(side * 0.05 * w, sy, 0, 0.045 * g, 0.045 * g, left ? kLCollar : kRCollar, kTorso),
            wp(side * 0.17 * w, sy, 0, 0.048 * g, 0.048 * g, left ? kLShoulder : kRShoulder,
               left ? kLUpperArm : kRUpperArm),
            wp(side * (0.17 * w + 0.07 * a), sy - 0.25 * a * h, 0, 0.04 * g, 0.04 * g, left ? kLElbow : kRElbow,
               left ? kLForearm : kRForearm),
            wp(side * (0.17 * w + 0.13 * a), sy - 0.48 * a * h, 0, 0.03 * g, 0.025 * g, left ? kLWrist : kRWrist,
               left ? kLForearm : kRForearm),
            wp(side * (0.17 * w + 0.15 * a), sy - 0.56 * a * h, 0, 0.03 * g, 0.02 * g, left ? kLHand : kRHand,
               left ? kLForearm : kRForearm),
            wp(side * (0.17 * w + 0.16 * a), sy - 0.64 * a * h, 0, 0.015 * g, 0.01 * g, left ? kLHand : kRHand,
               left ? kLForearm : kRForearm),
        };
    }

    auto& torso = c[kTorsoChain];
    const double pelvis_y = torso[1].p.y();
    const double collar_y = c[kLArmChain][0].p.y();
    const double neck_y = torso[6].p.y();

    // 0: stature, uniform vertical stretch above the floor.
    for (auto& ch : c) {
        for (auto& q : ch) q.p.y() += 0.03 * d[0] * (q.p.y() - kFloorY);
    }
    // 1: overall girth.
    for (auto& ch : c) {
        for (auto& q : ch) {
            q.rx += 0.07 * d[1] * q.rx;
            q.rz += 0.07 * d[1] * q.rz;
        }
    }
    // 2: belly.
    torso[1].rz += 0.008 * d[2];
    torso[2].rz += 0.014 * d[2];
    torso[2].rx += 0.006 * d[2];
    torso[3].rz += 0.008 * d[2];
    // 3: hip width.
    torso[0].rx += 0.012 * d[3];
    torso[1].rx += 0.012 * d[3];
    for (int side : {1, -1}) {
        auto& leg = c[side > 0 ? kLLegChain : kRLegChain];
        for (std::size_t i = 0; i < leg.size(); ++i) leg[i].p.x() += side * (i == 0 ? 0.008 : 0.004) * d[3];
    }
    // 4: shoulder width.
    torso[4].rx += 0.01 * d[4];
    torso[5].rx += 0.01 * d[4];
    for (int side : {1, -1}) {
        auto& arm = c[side > 0 ? kLArmChain : kRArmChain];
        for (std::size_t i = 0; i < arm.size(); ++i) arm[i].p.x() += side * (i == 0 ? 0.006 : 0.012) * d[4];
    }
    // 5: leg length, feet move down.
    for (int ch : {kLLegChain, kRLegChain}) {
        const double hip_y = c[ch][0].p.y();
        for (auto& q : c[ch]) q.p.y() -= 0.05 * d[5] * (hip_y - q.p.y());
    }
    // 6: arm length, scaled about the shoulder.
    for (int ch : {kLArmChain, kRArmChain}) {
        const Eigen::Vector3d s = c[ch][1].p;
        for (std::size_t i = 2; i < c[ch].size(); ++i) c[ch][i].p += 0.04 * d[6] * (c[ch][i].p - s);
    }
    // 7: limb girth.
    for (int ch : {kLLegChain, kRLegChain, kLArmChain, kRArmChain}) {
        for (std::size_t i = ch >= kLArmChain ? 1 : 0; i < c[ch].size(); ++i) {
            c[ch][i].rx += 0.09 * d[7] * c[ch][i].rx;
            c[ch][i].rz += 0.09 * d[7] * c[ch][i].rz;
        }
    }
    // 8: head size about the neck.
    {
        const Eigen::Vector3d n = torso[6].p;
        for (std::size_t i = 7; i < torso.size(); ++i) {
            torso[i].p += 0.05 * d[8] * (torso[i].p - n);
            torso[i].rx += 0.05 * d[8] * torso[i].rx;
            torso[i].rz += 0.05 * d[8] * torso[i].rz;
        }
    }
    // 9: torso length; arms ride with the collar, head with the neck.
    for (std::size_t i = 2; i < torso.size(); ++i) {
        const double y = std::min(torso[i].p.y(), neck_y);
        torso[i].p.y() += 0.04 * d[9] * (y - pelvis_y);
    }
    for (int ch : {kLArmChain, kRArmChain}) {
        for (auto& q : c[ch]) q.p.y() += 0.04 * d[9] * (collar_y - pelvis_y);
    }
    return c;
}

struct Ring {
    int chain = 0;
    int segment = 0;
    double u = 0.0;  // position within the segment
    double s = 0.0;  // arclength along the chain
    Eigen::Vector3d b1 = Eigen::Vector3d::Zero();
    Eigen::Vector3d b2 = Eigen::Vector3d::Zero();
    int first_vertex = 0;
};

Eigen::Vector3d ring_center(const Chain& ch, const Ring& r)
{
    return (1.0 - r.u) * ch[r.segment].p + r.u * ch[r.segment + 1].p;
}

std::vector<double> arclengths(const Chain& ch)
{
    std::vector<double> s(ch.size(), 0.0);
    for (std::size_t i = 1; i < ch.size(); ++i) s[i] = s[i - 1] + (ch[i].p - ch[i - 1].p).norm();
    return s;
}

struct Layout {
    int k = 0;                               // vertices per ring
    std::vector<std::vector<Ring>> rings;    // per chain
    std::vector<std::array<int, 2>> caps;    // per chain: start/end cap vertex
    std::vector<std::vector<double>> s;      // per chain waypoint arclengths
    int base_vertices = 0;
};

Layout make_layout(const std::array<Chain, kNumChains>& chains, int num_vertices)
{
    Layout lay;
    lay.k = std::clamp(static_cast<int>(std::lround(std::sqrt(num_vertices / 9.0))), 3, 16);
    const int total_rings = (num_vertices - 2 * kNumChains) / lay.k;

    std::array<double, kNumChains> len{};
    double sum_len = 0.0;
    for (int c = 0; c < kNumChains; ++c) {
        lay.s.push_back(arclengths(chains[c]));
        len[c] = lay.s[c].back();
        sum_len += len[c];
    }
    std::array<int, kNumChains> count{};
    int used = 0;
    for (int c = 0; c < kNumChains; ++c) {
        count[c] = std::max(2, static_cast<int>(std::lround(total_rings * len[c] / sum_len)));
        used += count[c];
    }
    while (used != total_rings) {
        // Adjust the chain with the largest (or smallest) spacing.
        int best = -1;
        for (int c = 0; c < kNumChains; ++c) {
            if (used > total_rings && count[c] <= 2) continue;
            const double spacing = len[c] / count[c];
            if (best < 0 || (used > total_rings ? spacing < len[best] / count[best]
                                                : spacing > len[best] / count[best])) {
                best = c;
            }
        }
        const int step = used > total_rings ? -1 : 1;
        count[best] += step;
        used += step;
    }

    int next = 0;
    lay.rings.resize(kNumChains);
    for (int c = 0; c < kNumChains; ++c) {
        const auto& s = lay.s[c];
        const int n = count[c];
        for (int i = 0; i < n; ++i) {
            Ring r;
            r.chain = c;
            r.s = len[c] * i / (n - 1);
            int seg = 0;
            while (seg + 2 < static_cast<int>(s.size()) && r.s > s[seg + 1]) ++seg;
            r.segment = seg;
            r.u = std::clamp((r.s - s[seg]) / (s[seg + 1] - s[seg]), 0.0, 1.0);
            r.first_vertex = next;
            next += lay.k;
            lay.rings[c].push_back(r);
        }
        // Parallel-transported frames along the ring centres.
        std::vector<Eigen::Vector3d> centers;
        for (const auto& r : lay.rings[c]) centers.push_back(ring_center(chains[c], r));
        Eigen::Vector3d b2_prev;
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector3d t =
                (centers[std::min(i + 1, n - 1)] - centers[std::max(i - 1, 0)]).normalized();
            Eigen::Vector3d ref = i == 0 ? (std::abs(t.z()) > 0.9 ? Eigen::Vector3d::UnitX()
                                                                  : Eigen::Vector3d::UnitZ())
                                         : b2_prev;
            const Eigen::Vector3d b2 = (ref - ref.dot(t) * t).normalized();
            lay.rings[c][i].b2 = b2;
            lay.rings[c][i].b1 = t.cross(b2);
            b2_prev = b2;
        }
    }
    for (int c = 0; c < kNumChains; ++c) {
        lay.caps.push_back({next, next + 1});
        next += 2;
    }
    lay.base_vertices = next;
    return lay;
}

std::vector<Eigen::Vector3d> layout_vertices(const Layout& lay, const std::array<Chain, kNumChains>& chains)
{
    std::vector<Eigen::Vector3d> out(lay.base_vertices);
    for (int c = 0; c < kNumChains; ++c) {
        const auto& ch = chains[c];
        for (const auto& r : lay.rings[c]) {
            const Eigen::Vector3d ctr = ring_center(ch, r);
            const double rx = (1.0 - r.u) * ch[r.segment].rx + r.u * ch[r.segment + 1].rx;
            const double rz = (1.0 - r.u) * ch[r.segment].rz + r.u * ch[r.segment + 1].rz;
            for (int m = 0; m < lay.k; ++m) {
                const double phi = 2.0 * std::numbers::pi * m / lay.k;
                out[r.first_vertex + m] = ctr + rx * std::cos(phi) * r.b1 + rz * std::sin(phi) * r.b2;
            }
        }
        out[lay.caps[c][0]] = ch.front().p;
        out[lay.caps[c][1]] = ch.back().p;
    }
    return out;
}

// Skinning weights of one ring over the full 24-joint tree.
std::array<double, kFullJoints> ring_weights(const Chain& ch, const std::vector<double>& s, const Ring& r)
{
    std::array<double, kFullJoints> w{};
    const int seg = r.segment;
    const int owner = ch[seg].owner;
    const int nseg = static_cast<int>(ch.size()) - 1;
    const double seglen = s[seg + 1] - s[seg];
    const double bl = std::min(0.04, seglen / 2.5);
    double rest = 1.0;
    const int prev = seg > 0 ? ch[seg - 1].owner : kFullParents[owner];
    const double d_start = r.s - s[seg];
    if (prev >= 0 && prev != owner && d_start < bl) {
        const double x = 0.5 * (1.0 - d_start / bl);
        w[prev] += x;
        rest -= x;
    }
    const double d_end = s[seg + 1] - r.s;
    if (seg + 1 < nseg && ch[seg + 1].owner != owner && d_end < bl) {
        const double x = 0.5 * (1.0 - d_end / bl);
        w[ch[seg + 1].owner] += x;
        rest -= x;
    }
    w[owner] += rest;
    return w;
}

struct JointSite {
    int chain;
    int waypoint;
};

// Where each full-tree joint sits on the chains.
const std::array<JointSite, kFullJoints> kJointSites = {{
    {kTorsoChain, 1}, {kLLegChain, 0}, {kRLegChain, 0}, {kTorsoChain, 2}, {kLLegChain, 1}, {kRLegChain, 1},
    {kTorsoChain, 3}, {kLLegChain, 2}, {kRLegChain, 2}, {kTorsoChain, 4}, {kLLegChain, 3}, {kRLegChain, 3},
    {kTorsoChain, 6}, {kLArmChain, 0}, {kRArmChain, 0}, {kTorsoChain, 7}, {kLArmChain, 1}, {kRArmChain, 1},
    {kLArmChain, 2}, {kRArmChain, 2}, {kLArmChain, 3}, {kRArmChain, 3}, {kLArmChain, 4}, {kRArmChain, 4},
}};

// Regressor row averaging the ring centres that bracket arclength s_target.
Eigen::RowVectorXd chain_point_row(const Layout& lay, int chain, double s_target, int nv)
{
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
    const auto& rings = lay.rings[chain];
    int i = 0;
    while (i + 2 < static_cast<int>(rings.size()) && s_target > rings[i + 1].s) ++i;
    const double u = std::clamp((s_target - rings[i].s) / (rings[i + 1].s - rings[i].s), 0.0, 1.0);
    for (int m = 0; m < lay.k; ++m) {
        row(rings[i].first_vertex + m) += (1.0 - u) / lay.k;
        row(rings[i + 1].first_vertex + m) += u / lay.k;
    }
    return row;
}

int nearest_ring(const Layout& lay, int chain, double s_target, int want_part, const Chain& ch)
{
    int best = -1;
    for (int pass = 0; pass < 2 && best < 0; ++pass) {
        for (int i = 0; i < static_cast<int>(lay.rings[chain].size()); ++i) {
            const auto& r = lay.rings[chain][i];
            if (pass == 0 && ch[r.segment].part != want_part) continue;
            if (best < 0 || std::abs(r.s - s_target) < std::abs(lay.rings[chain][best].s - s_target)) best = i;
        }
    }
    return best;
}

// Ring vertex whose offset from the ring centre best matches dir.
int ring_vertex_toward(const Layout& lay, const std::vector<Eigen::Vector3d>& verts, const Ring& r,
                       const Eigen::Vector3d& dir)
{
    Eigen::Vector3d ctr = Eigen::Vector3d::Zero();
    for (int m = 0; m < lay.k; ++m) ctr += verts[r.first_vertex + m];
    ctr /= lay.k;
    int best = r.first_vertex;
    double best_dot = -1e300;
    for (int m = 0; m < lay.k; ++m) {
        const double dt = (verts[r.first_vertex + m] - ctr).normalized().dot(dir);
        if (dt > best_dot + 1e-12) {
            best_dot = dt;
            best = r.first_vertex + m;
        }
    }
    return best;
}

}  // namespace

BodyModel generate_toy_model(std::uint64_t seed, int num_vertices, int num_joints)
{
    if (num_vertices < 50) throw std::invalid_argument("toy model needs at least 50 vertices");
    if (num_joints < 8 || num_joints > kFullJoints) {
        throw std::invalid_argument("toy model joint count must be in [8, 24]");
    }

    Rng rng = make_rng(seed, "toy-model");
    Proportions pr;
    pr.height = 1.0 + uniform(rng, -0.02, 0.02);
    pr.width = 1.0 + uniform(rng, -0.02, 0.02);
    pr.arm = 1.0 + uniform(rng, -0.02, 0.02);
    pr.leg = 1.0 + uniform(rng, -0.02, 0.02);
    pr.girth = 1.0 + uniform(rng, -0.02, 0.02);

    const std::array<double, kNumShapeComponents> zero{};
    const auto base = build_chains(pr, zero);
    const Layout lay = make_layout(base, num_vertices);
    const auto base_verts = layout_vertices(lay, base);
    const int nb_vert = lay.base_vertices;
    const int k = lay.k;

    // Shape basis: each component's geometry is affine in its coefficient,
    // so the unit-step difference is the exact direction.
    std::vector<std::vector<Eigen::Vector3d>> dirs(kNumShapeComponents);
    for (int c = 0; c < kNumShapeComponents; ++c) {
        auto d = zero;
        d[c] = 1.0;
        const auto v = layout_vertices(lay, build_chains(pr, d));
        dirs[c].resize(nb_vert);
        for (int i = 0; i < nb_vert; ++i) dirs[c][i] = v[i] - base_verts[i];
    }

    // Joint reduction: removed joints hand their skin to the nearest kept
    // ancestor.
    std::vector<bool> keep(kFullJoints, true);
    for (int i = 0; i < kFullJoints - num_joints; ++i) keep[kRemovalOrder[i]] = false;
    std::array<int, kFullJoints> new_index{};
    int nj = 0;
    for (int j = 0; j < kFullJoints; ++j) new_index[j] = keep[j] ? nj++ : -1;
    std::array<int, kFullJoints> mapped{};
    for (int j = 0; j < kFullJoints; ++j) {
        int a = j;
        while (!keep[a]) a = kFullParents[a];
        mapped[j] = new_index[a];
    }

    // Per base vertex: full-tree skin weights and part.
    std::vector<std::array<double, kFullJoints>> skin(nb_vert);
    std::vector<int> part(nb_vert, 0);
    for (int c = 0; c < kNumChains; ++c) {
        const auto& rings = lay.rings[c];
        for (const auto& r : rings) {
            const auto w = ring_weights(base[c], lay.s[c], r);
            for (int m = 0; m < k; ++m) {
                skin[r.first_vertex + m] = w;
                part[r.first_vertex + m] = base[c][r.segment].part;
            }
        }
        skin[lay.caps[c][0]] = skin[rings.front().first_vertex];
        part[lay.caps[c][0]] = part[rings.front().first_vertex];
        skin[lay.caps[c][1]] = skin[rings.back().first_vertex];
        part[lay.caps[c][1]] = part[rings.back().first_vertex];
    }

    std::vector<std::array<int, 3>> faces;
    for (int c = 0; c < kNumChains; ++c) {
        const auto& rings = lay.rings[c];
        for (std::size_t i = 0; i + 1 < rings.size(); ++i) {
            const int r0 = rings[i].first_vertex;
            const int r1 = rings[i + 1].first_vertex;
            for (int m = 0; m < k; ++m) {
                const int m1 = (m + 1) % k;
                faces.push_back({r0 + m, r0 + m1, r1 + m1});
                faces.push_back({r0 + m, r1 + m1, r1 + m});
            }
        }
        const int s0 = rings.front().first_vertex;
        const int s1 = rings.back().first_vertex;
        for (int m = 0; m < k; ++m) {
            const int m1 = (m + 1) % k;
            faces.push_back({lay.caps[c][0], s0 + m1, s0 + m});
            faces.push_back({lay.caps[c][1], s1 + m, s1 + m1});
        }
    }

    // Reach the exact vertex count by splitting the largest triangles at
    // their centroids.
    std::vector<Eigen::Vector3d> verts = base_verts;
    const int extra = num_vertices - nb_vert;
    {
        std::vector<int> order(faces.size());
        std::iota(order.begin(), order.end(), 0);
        auto area = [&](int f) {
            const auto& t = faces[f];
            return (verts[t[1]] - verts[t[0]]).cross(verts[t[2]] - verts[t[0]]).norm();
        };
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return area(a) > area(b); });
        for (int e = 0; e < extra; ++e) {
            const auto t = faces[order[e]];
            const int v = static_cast<int>(verts.size());
            verts.push_back((verts[t[0]] + verts[t[1]] + verts[t[2]]) / 3.0);
            for (auto& dc : dirs) dc.push_back((dc[t[0]] + dc[t[1]] + dc[t[2]]) / 3.0);
            std::array<double, kFullJoints> w{};
            for (int j = 0; j < kFullJoints; ++j) w[j] = (skin[t[0]][j] + skin[t[1]][j] + skin[t[2]][j]) / 3.0;
            skin.push_back(w);
            part.push_back(part[t[0]]);
            faces[order[e]] = {t[0], t[1], v};
            faces.push_back({t[1], t[2], v});
            faces.push_back({t[2], t[0], v});
        }
    }
    const int nv = static_cast<int>(verts.size());

    BodyModel m;
    m.template_vertices.resize(nv, 3);
    m.shape_basis.resize(3 * nv, kNumShapeComponents);
    for (int v = 0; v < nv; ++v) {
        m.template_vertices.row(v) = verts[v].transpose();
        for (int c = 0; c < kNumShapeComponents; ++c) {
            for (int a = 0; a < 3; ++a) m.shape_basis(3 * v + a, c) = dirs[c][v][a];
        }
    }
    m.skinning_weights = Eigen::MatrixXd::Zero(nv, nj);
    for (int v = 0; v < nv; ++v) {
        for (int j = 0; j < kFullJoints; ++j) m.skinning_weights(v, mapped[j]) += skin[v][j];
        // Renormalize away the rounding of the blends.
        m.skinning_weights.row(v) /= m.skinning_weights.row(v).sum();
    }
    m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        m.faces.row(static_cast<Eigen::Index>(f)) << faces[f][0], faces[f][1], faces[f][2];
    }
    m.part_labels = part;
    for (const char* n : kPartNames) m.part_names.emplace_back(n);

    m.skeleton_regressor = Eigen::MatrixXd::Zero(nj, nv);
    for (int j = 0; j < kFullJoints; ++j) {
        if (!keep[j]) continue;
        m.parents.push_back(j == 0 ? -1 : mapped[kFullParents[j]]);
        m.joint_names.emplace_back(kFullJointNames[j]);
        const auto site = kJointSites[j];
        m.skeleton_regressor.row(new_index[j]) =
            chain_point_row(lay, site.chain, lay.s[site.chain][site.waypoint], nv);
    }

    // COCO-ordered keypoints. Limb keypoints sit at joint sites; face
    // keypoints are single head vertices.
    m.joint_regressor = Eigen::MatrixXd::Zero(17, nv);
    const auto& torso_rings = lay.rings[kTorsoChain];
    const double head_mid_s = lay.s[kTorsoChain][8];
    const int mid_ring = nearest_ring(lay, kTorsoChain, head_mid_s, kHeadPart, base[kTorsoChain]);
    const int eye_ring = std::min(mid_ring + 1, static_cast<int>(torso_rings.size()) - 1);
    const Eigen::Vector3d fwd = Eigen::Vector3d::UnitZ();
    const Eigen::Vector3d lat = Eigen::Vector3d::UnitX();
    m.joint_regressor(0, ring_vertex_toward(lay, verts, torso_rings[mid_ring], fwd)) = 1.0;
    m.joint_regressor(1, ring_vertex_toward(lay, verts, torso_rings[eye_ring], (fwd + 0.6 * lat).normalized())) = 1.0;
    m.joint_regressor(2, ring_vertex_toward(lay, verts, torso_rings[eye_ring], (fwd - 0.6 * lat).normalized())) = 1.0;
    m.joint_regressor(3, ring_vertex_toward(lay, verts, torso_rings[mid_ring], lat)) = 1.0;
    m.joint_regressor(4, ring_vertex_toward(lay, verts, torso_rings[mid_ring], -lat)) = 1.0;
    const std::array<int, 12> limb_joints = {kLShoulder, kRShoulder, kLElbow, kRElbow, kLWrist, kRWrist,
                                             kLHip,      kRHip,      kLKnee,  kRKnee,  kLAnkle, kRAnkle};
    for (int i = 0; i < 12; ++i) {
        const auto site = kJointSites[limb_joints[i]];
        m.joint_regressor.row(5 + i) = chain_point_row(lay, site.chain, lay.s[site.chain][site.waypoint], nv);
    }
    for (const char* n : kKeypointNames) m.keypoint_names.emplace_back(n);
    m.keypoint_lr_pairs = {{5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};

    auto pose_joint = [&](int full) {
        const int j = mapped[full];
        return j == 0 ? -1 : j;
    };
    for (int l = 0; l < 5; ++l) m.keypoint_pose_joint.push_back(pose_joint(kHead));
    for (int j : limb_joints) m.keypoint_pose_joint.push_back(pose_joint(kFullParents[j]));

    // Girth anchors.
    auto add_measurement = [&](const std::string& name, int chain, double s_target, int want_part,
                               const Eigen::Vector3d& dir) {
        const int ri = nearest_ring(lay, chain, s_target, want_part, base[chain]);
        const Ring& r = lay.rings[chain][ri];
        m.measurements.push_back(
            {name, ring_vertex_toward(lay, verts, r, dir), base[chain][r.segment].part});
    };
    const auto& st = lay.s[kTorsoChain];
    add_measurement("chest", kTorsoChain, st[4], kTorso, fwd);
    add_measurement("stomach", kTorsoChain, st[2], kTorso, fwd);
    add_measurement("hips", kTorsoChain, st[1], kTorso, fwd);
    const auto& sa = lay.s[kLArmChain];
    add_measurement("biceps", kLArmChain, 0.5 * (sa[1] + sa[2]), kLUpperArm, fwd);
    add_measurement("forearms", kLArmChain, 0.5 * (sa[2] + sa[3]), kLForearm, fwd);
    const auto& sl = lay.s[kLLegChain];
    add_measurement("thighs", kLLegChain, 0.5 * (sl[0] + sl[1]), kLThigh, fwd);

    m.validate();
    m.build_rig();
    return m;
}

// ---------------------------------------------------------------------------
// Model files.

namespace {

template <class M>
std::vector<double> row_major(const M& mat)
{
    std::vector<double> out(static_cast<std::size_t>(mat.size()));
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c) out[r * mat.cols() + c] = mat(r, c);
    }
    return out;
}

Eigen::MatrixXd from_row_major(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols)
{
    return Eigen::Map<const RowMatrix>(v.data(), rows, cols);
}

std::vector<std::int64_t> widen(const std::vector<int>& v) { return {v.begin(), v.end()}; }

std::vector<int> narrow(const std::vector<std::int64_t>& v) { return {v.begin(), v.end()}; }

std::vector<std::int64_t> shape_of(io::ContainerReader& r, const std::string& name, std::size_t rank)
{
    const auto& s = r.info(name).shape;
    if (s.size() != rank) throw io::FormatError("array '" + name + "' has rank " + std::to_string(s.size()));
    return s;
}

}  // namespace

void save_model(const BodyModel& m, const std::string& path)
{
    io::ContainerWriter w(kModelMagic);
    const std::int64_t nv = m.num_vertices();
    const std::int64_t nj = m.num_joints();
    const std::int64_t nl = m.num_keypoints();
    const std::int64_t nb = m.num_betas();
    w.add_f64("template_vertices", row_major(m.template_vertices), {nv, 3});
    w.add_f64("shape_basis", row_major(m.shape_basis), {nv, 3, nb});
    w.add_f64("joint_regressor", row_major(m.joint_regressor), {nl, nv});
    w.add_f64("skeleton_regressor", row_major(m.skeleton_regressor), {nj, nv});
    w.add_f64("skinning_weights", row_major(m.skinning_weights), {nv, nj});
    w.add_i64("parents", widen(m.parents), {nj});
    std::vector<std::int64_t> faces(m.faces.data(), m.faces.data() + m.faces.size());
    w.add_i64("faces", faces, {static_cast<std::int64_t>(m.faces.rows()), 3});
    w.add_i64("part_labels", widen(m.part_labels), {nv});
    std::vector<std::int64_t> pairs;
    for (const auto& p : m.keypoint_lr_pairs) pairs.insert(pairs.end(), {p[0], p[1]});
    w.add_i64("keypoint_lr_pairs", pairs, {static_cast<std::int64_t>(m.keypoint_lr_pairs.size()), 2});
    w.add_i64("keypoint_pose_joint", widen(m.keypoint_pose_joint), {nl});

    auto& meta = w.meta();
    meta["kind"] = "body_model";
    meta["joint_names"] = m.joint_names;
    meta["keypoint_names"] = m.keypoint_names;
    meta["part_names"] = m.part_names;
    meta["measurements"] = nlohmann::json::array();
    for (const auto& ms : m.measurements) {
        meta["measurements"].push_back({{"name", ms.name}, {"anchor_vertex", ms.anchor_vertex}, {"part", ms.part}});
    }
    w.write(path);
}

BodyModel load_model(const std::string& path)
{
    io::ContainerReader r(path, kModelMagic);
    BodyModel m;
    try {
        const auto tv = shape_of(r, "template_vertices", 2);
        const auto sb = shape_of(r, "shape_basis", 3);
        const auto jr = shape_of(r, "joint_regressor", 2);
        const auto sr = shape_of(r, "skeleton_regressor", 2);
        const auto sw = shape_of(r, "skinning_weights", 2);
        const auto fc = shape_of(r, "faces", 2);
        m.template_vertices = Eigen::Map<const Points3>(r.f64("template_vertices").data(), tv[0], 3);
        m.shape_basis = Eigen::Map<const RowMatrix>(r.f64("shape_basis").data(), sb[0] * 3, sb[2]);
        m.joint_regressor = from_row_major(r.f64("joint_regressor"), jr[0], jr[1]);
        m.skeleton_regressor = from_row_major(r.f64("skeleton_regressor"), sr[0], sr[1]);
        m.skinning_weights = from_row_major(r.f64("skinning_weights"), sw[0], sw[1]);
        m.parents = narrow(r.i64("parents"));
        const auto faces = narrow(r.i64("faces"));
        m.faces = Eigen::Map<const Faces>(faces.data(), fc[0], 3);
        m.part_labels = narrow(r.i64("part_labels"));
        const auto pairs = r.i64("keypoint_lr_pairs");
        for (std::size_t i = 0; i + 1 < pairs.size(); i += 2) {
            m.keypoint_lr_pairs.push_back({static_cast<int>(pairs[i]), static_cast<int>(pairs[i + 1])});
        }
        m.keypoint_pose_joint = narrow(r.i64("keypoint_pose_joint"));
        const auto& meta = r.meta();
        m.joint_names = meta.at("joint_names").get<std::vector<std::string>>();
        m.keypoint_names = meta.at("keypoint_names").get<std::vector<std::string>>();
        m.part_names = meta.at("part_names").get<std::vector<std::string>>();
        for (const auto& j : meta.at("measurements")) {
            m.measurements.push_back(
                {j.at("name").get<std::string>(), j.at("anchor_vertex").get<int>(), j.at("part").get<int>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError("'" + path + "': malformed model metadata: " + e.what());
    }
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw io::FormatError("'" + path + "': " + e.what());
    }
    m.build_rig();
    return m;
}

}  // namespace pbody
