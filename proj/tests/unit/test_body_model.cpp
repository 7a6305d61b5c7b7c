#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Geometry>
#include <doctest.h>

#include "pbody/body_model.hpp"
#include "pbody/rotation.hpp"

using namespace pbody;
namespace fs = std::filesystem;

namespace {

const BodyModel& toy()
{
    static const BodyModel m = generate_toy_model(0);
    return m;
}

Eigen::Vector3d random_aa(std::mt19937_64& rng, double max_angle = 3.0)
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> a(0.01, max_angle);
    Eigen::Vector3d axis(n(rng), n(rng), n(rng));
    return axis.normalized() * a(rng);
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, int n, double sd)
{
    std::normal_distribution<double> d(0.0, sd);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = d(rng);
    return v;
}

std::string tmp_path(const std::string& name)
{
    return (fs::temp_directory_path() / ("pbody_test_" + name)).string();
}

}  // namespace

TEST_CASE("rodrigues: identity and quarter turn")
{
    CHECK(rodrigues(Eigen::Vector3d::Zero()).isApprox(Eigen::Matrix3d::Identity(), 0.0));
    const Eigen::Vector3d p = rodrigues(Eigen::Vector3d(std::numbers::pi / 2, 0, 0)) * Eigen::Vector3d::UnitY();
    CHECK((p - Eigen::Vector3d::UnitZ()).norm() < 1e-15);
}

TEST_CASE("rodrigues: orthonormal with det +1, and inverse map round-trips")
{
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d aa = random_aa(rng);
        const Eigen::Matrix3d r = rodrigues(aa);
        CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
        CHECK((matrix_to_axis_angle(r) - aa).norm() < 1e-9);
    }
    // Tiny angles take the series branch.
    const Eigen::Vector3d small(1e-5, -2e-5, 3e-6);
    CHECK((matrix_to_axis_angle(rodrigues(small)) - small).norm() < 1e-12);
    // Oracle: Eigen's own angle-axis.
    const Eigen::Vector3d aa(0.3, -1.2, 0.5);
    CHECK(rodrigues(aa).isApprox(Eigen::AngleAxisd(aa.norm(), aa.normalized()).toRotationMatrix(), 1e-14));
}

TEST_CASE("toy model: invariants and determinism")
{
    const BodyModel& m = toy();
    CHECK_NOTHROW(m.validate());
    CHECK(m.num_vertices() == 600);
    CHECK(m.num_joints() == 24);
    CHECK(m.pose_dim() == 69);
    CHECK(m.num_keypoints() == 17);
    CHECK(m.num_betas() == 10);
    CHECK((m.skinning_weights.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(m.skinning_weights.minCoeff() >= 0.0);
    CHECK((m.joint_regressor.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(m.joint_regressor.minCoeff() >= 0.0);
    int roots = 0;
    for (std::size_t j = 0; j < m.parents.size(); ++j) {
        if (m.parents[j] < 0) ++roots;
        else CHECK(m.parents[j] < static_cast<int>(j));
    }
    CHECK(roots == 1);
    std::set<int> parts(m.part_labels.begin(), m.part_labels.end());
    CHECK(parts.size() >= 6);
    CHECK(generate_toy_model(0) == m);
    CHECK_FALSE(generate_toy_model(1) == m);
    CHECK_THROWS_AS(generate_toy_model(0, 49), std::invalid_argument);
    CHECK_THROWS_AS(generate_toy_model(0, 600, 7), std::invalid_argument);
}

TEST_CASE("smaller skeletons stay valid")
{
    for (int j : {8, 16, 24}) {
        const BodyModel m = generate_toy_model(3, 120, j);
        CHECK_NOTHROW(m.validate());
        CHECK(m.num_joints() == j);
    }
}

TEST_CASE("forward: neutral pose reproduces the template exactly")
{
    const BodyModel& m = toy();
    const auto mesh = forward(m, Eigen::VectorXd::Zero(69), Eigen::VectorXd::Zero(10), Eigen::Vector3d::Zero());
    CHECK((mesh.vertices - m.template_vertices).cwiseAbs().maxCoeff() == 0.0);
    const auto neutral = neutral_pose_mesh(m, Eigen::VectorXd::Zero(10));
    CHECK((neutral.vertices - m.template_vertices).cwiseAbs().maxCoeff() == 0.0);
    const double height = neutral.vertices.col(1).maxCoeff() - neutral.vertices.col(1).minCoeff();
    CHECK(height > 0.0);
}

TEST_CASE("forward: unit shape coefficient adds its basis direction")
{
    const BodyModel& m = toy();
    for (int k : {0, 1}) {
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(10);
        beta[k] = 1.0;
        const auto mesh = neutral_pose_mesh(m, beta);
        for (int v = 0; v < m.num_vertices(); ++v) {
            for (int a = 0; a < 3; ++a) {
                CHECK(mesh.vertices(v, a) ==
                      doctest::Approx(m.template_vertices(v, a) + m.shape_basis(3 * v + a, k)).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("forward: half turn about y rotates the neutral mesh")
{
    const BodyModel& m = toy();
    const Eigen::VectorXd th = Eigen::VectorXd::Zero(69), b = Eigen::VectorXd::Zero(10);
    const auto rotated = forward(m, th, b, Eigen::Vector3d(0, std::numbers::pi, 0));
    const Eigen::Matrix3d ry = Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitY()).toRotationMatrix();
    Points3 ref = m.template_vertices * ry.transpose();
    // Compared after removing the vertex centroid.
    Points3 a = rotated.vertices.rowwise() - rotated.vertices.colwise().mean();
    Points3 r = ref.rowwise() - ref.colwise().mean();
    CHECK((a - r).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forward is linear in shape at the neutral pose")
{
    const BodyModel& m = toy();
    std::mt19937_64 rng(2);
    const Eigen::VectorXd b1 = random_vec(rng, 10, 1.5), b2 = random_vec(rng, 10, 1.5);
    auto V = [&](const Eigen::VectorXd& b) { return neutral_pose_mesh(m, b).vertices; };
    const Points3 lhs = V(b1 + b2) - V(b1);
    const Points3 rhs = V(b2) - V(Eigen::VectorXd::Zero(10));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("root rotation equivariance")
{
    const BodyModel& m = toy();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 5; ++i) {
        const Eigen::VectorXd th = random_vec(rng, 69, 0.2), b = random_vec(rng, 10, 1.0);
        const Eigen::Vector3d g = random_aa(rng, 1.0), rho = random_aa(rng, 1.0);
        const Eigen::Matrix3d rr = rodrigues(rho);
        const auto base = forward(m, th, b, g);
        const auto composed = forward(m, th, b, matrix_to_axis_angle(rr * rodrigues(g)));
        // Root pivot handling: compare root-centred meshes.
        const Points3 lhs = composed.vertices.rowwise() - composed.vertices.colwise().mean();
        Points3 rhs = base.vertices * rr.transpose();
        rhs = rhs.rowwise() - rhs.colwise().mean();
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("templated posing agrees with the double entry points and the fast keypoint path")
{
    const BodyModel& m = toy();
    std::mt19937_64 rng(4);
    const Eigen::VectorXd th = random_vec(rng, 69, 0.3), b = random_vec(rng, 10, 1.5);
    const Eigen::Vector3d g = random_aa(rng, 2.0);
    const auto mesh = forward(m, th, b, g);
    const Points3 slow = regress_joints(m, mesh);
    const Points3 fast = keypoints(m, th, b, g);
    CHECK((slow - fast).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("analytic Jacobians of forward match finite differences")
{
    const BodyModel m = generate_toy_model(7, 120, 16);
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> pick_v(0, m.num_vertices() - 1);
    const int P = m.pose_dim(), B = m.num_betas();
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd th = random_vec(rng, P, 0.3), b = random_vec(rng, B, 1.0);
        const Eigen::Vector3d g = random_aa(rng, 2.0);
        const int v = pick_v(rng);
        std::vector<double> x(th.data(), th.data() + P);
        x.insert(x.end(), b.data(), b.data() + B);
        x.insert(x.end(), g.data(), g.data() + 3);
        // Scalar probe: a fixed random projection of one vertex.
        const Eigen::Vector3d w = random_vec(rng, 3, 1.0);
        auto f = [&](std::span<const ad::Var> z) {
            const auto verts = posed_vertices<ad::Var>(m, z.subspan(0, P), z.subspan(P, B),
                                                       Vec3<ad::Var>{z[P + B], z[P + B + 1], z[P + B + 2]});
            return verts[v][0] * w[0] + verts[v][1] * w[1] + verts[v][2] * w[2];
        };
        const auto r = ad::grad_check(f, x, 1e-5);
        // Components with a vanishing derivative are compared absolutely.
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double e = std::abs(r.analytic[i]) > 1e-6 ? r.rel_error[i] : std::abs(r.analytic[i] - r.numeric[i]);
            worst = std::max(worst, e);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("regress_joints: one-hot and uniform rows")
{
    BodyModel m = toy();
    const auto mesh = forward(m, Eigen::VectorXd::Zero(69), Eigen::VectorXd::Zero(10), Eigen::Vector3d::Zero());
    m.joint_regressor.setZero();
    m.joint_regressor(0, 17) = 1.0;
    m.joint_regressor.row(1).setConstant(1.0 / m.num_vertices());
    const Points3 j = regress_joints(m, mesh);
    CHECK((j.row(0) - mesh.vertices.row(17)).norm() == 0.0);
    CHECK((j.row(1) - mesh.vertices.colwise().mean()).norm() < 1e-12);
    VertexMesh bad = mesh;
    bad.vertices.conservativeResize(10, 3);
    CHECK_THROWS(regress_joints(m, bad));
}

TEST_CASE("neutral keypoints lie inside the mesh bounding box")
{
    const BodyModel& m = toy();
    const auto mesh = neutral_pose_mesh(m, Eigen::VectorXd::Zero(10));
    const Points3 j = regress_joints(m, mesh);
    const Eigen::RowVector3d lo = mesh.vertices.colwise().minCoeff(), hi = mesh.vertices.colwise().maxCoeff();
    for (int l = 0; l < j.rows(); ++l) {
        CHECK((j.row(l).array() >= lo.array()).all());
        CHECK((j.row(l).array() <= hi.array()).all());
    }
}

TEST_CASE("forward rejects mismatched dimensions")
{
    const BodyModel& m = toy();
    CHECK_THROWS_AS(forward(m, Eigen::VectorXd::Zero(68), Eigen::VectorXd::Zero(10), Eigen::Vector3d::Zero()),
                    ShapeMismatch);
    CHECK_THROWS_AS(forward(m, Eigen::VectorXd::Zero(69), Eigen::VectorXd::Zero(9), Eigen::Vector3d::Zero()),
                    ShapeMismatch);
}

TEST_CASE("model files: round trip, truncation, wrong magic")
{
    const BodyModel& m = toy();
    const std::string path = tmp_path("model.pbm");
    save_model(m, path);
    const BodyModel back = load_model(path);
    CHECK(back == m);
    // Derived rig is rebuilt identically.
    const Eigen::VectorXd th = Eigen::VectorXd::Constant(69, 0.1), b = Eigen::VectorXd::Constant(10, 0.5);
    CHECK((forward(back, th, b, Eigen::Vector3d(0.1, 0.2, 0.3)).vertices -
           forward(m, th, b, Eigen::Vector3d(0.1, 0.2, 0.3)).vertices)
              .cwiseAbs()
              .maxCoeff() == 0.0);

    const auto size = fs::file_size(path);
    const std::string cut = tmp_path("model_cut.pbm");
    fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
    fs::resize_file(cut, size / 2);
    CHECK_THROWS(load_model(cut));

    const std::string bad = tmp_path("model_magic.pbm");
    fs::copy_file(path, bad, fs::copy_options::overwrite_existing);
    {
        std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXXXXXX", 8);
    }
    CHECK_THROWS(load_model(bad));
    fs::remove(path);
    fs::remove(cut);
    fs::remove(bad);
}
