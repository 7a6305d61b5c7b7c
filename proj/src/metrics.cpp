#include "pbody/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace pbody {

namespace {

void check_same(const Points3& a, const Points3& b)
{
    if (a.rows() != b.rows() || a.rows() == 0) {
        throw std::invalid_argument("skeletons must be non-empty with equal joint counts (" +
                                    std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + ")");
    }
}

double mean_distance_mm(const Points3& a, const Points3& b)
{
    return 1000.0 * (a - b).rowwise().norm().mean();
}

}  // namespace

Points3 root_center(const Points3& joints, std::span<const int> root)
{
    Eigen::RowVector3d r = Eigen::RowVector3d::Zero();
    if (root.empty()) {
        r = joints.row(0);
    } else {
        for (int j : root) {
            if (j < 0 || j >= joints.rows()) throw std::invalid_argument("root joint index out of range");
            r += joints.row(j);
        }
        r /= static_cast<double>(root.size());
    }
    return joints.rowwise() - r;
}

double mpjpe(const Points3& pred, const Points3& gt, std::span<const int> root)
{
    check_same(pred, gt);
    return mean_distance_mm(root_center(pred, root), root_center(gt, root));
}

double optimal_scale(const Points3& pred, const Points3& gt)
{
    check_same(pred, gt);
    const double pp = pred.squaredNorm();
    if (!(pp > 0.0)) throw std::invalid_argument("scale correction of an all-zero prediction");
    return (pred.array() * gt.array()).sum() / pp;
}

Points3 scale_correct(const Points3& pred, const Points3& gt, std::span<const int> root)
{
    const Points3 p = root_center(pred, root);
    const Points3 g = root_center(gt, root);
    return optimal_scale(p, g) * p;
}

double mpjpe_sc(const Points3& pred, const Points3& gt, std::span<const int> root)
{
    check_same(pred, gt);
    return mean_distance_mm(scale_correct(pred, gt, root), root_center(gt, root));
}

Points3 Similarity::apply(const Points3& p) const
{
    return ((scale * p * rotation.transpose()).rowwise() + translation.transpose());
}

Similarity procrustes(const Points3& pred, const Points3& gt)
{
    check_same(pred, gt);
    if (pred.rows() < 3) throw std::invalid_argument("Procrustes alignment needs at least 3 points");
    const Eigen::RowVector3d mx = pred.colwise().mean();
    const Eigen::RowVector3d my = gt.colwise().mean();
    const Eigen::MatrixXd xc = pred.rowwise() - mx;
    const Eigen::MatrixXd yc = gt.rowwise() - my;

    const Eigen::JacobiSVD<Eigen::MatrixXd> shape(xc);
    const auto sv = shape.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) {
        throw std::invalid_argument("Procrustes alignment of a degenerate (collinear) configuration");
    }

    const double n = static_cast<double>(pred.rows());
    const Eigen::Matrix3d sigma = yc.transpose() * xc / n;
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d[2] = -1.0;

    Similarity t;
    t.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double var_x = xc.squaredNorm() / n;
    t.scale = svd.singularValues().dot(d) / var_x;
    t.translation = my.transpose() - t.scale * t.rotation * mx.transpose();
    return t;
}

Points3 procrustes_align(const Points3& pred, const Points3& gt) { return procrustes(pred, gt).apply(pred); }

double mpjpe_pa(const Points3& pred, const Points3& gt) { return mean_distance_mm(procrustes_align(pred, gt), gt); }

double pve_t_sc(const Eigen::VectorXd& pred_beta, const Eigen::VectorXd& gt_beta, const BodyModel& model)
{
    const Points3 p = neutral_pose_mesh(model, pred_beta).vertices;
    const Points3 g = neutral_pose_mesh(model, gt_beta).vertices;
    const Points3 pc = p.rowwise() - p.colwise().mean();
    const Points3 gc = g.rowwise() - g.colwise().mean();
    return mean_distance_mm(optimal_scale(pc, gc) * pc, gc);
}

Eigen::VectorXd per_vertex_uncertainty(const PredictionSet& pred, const BodyModel& model, int n_samples, Rng& rng)
{
    if (n_samples < 1) throw std::invalid_argument("uncertainty needs at least one sample");
    const int np = pred.pose.dim();
    const int nb = pred.shape.dim();
    if (np != model.pose_dim() || nb != model.num_betas() || pred.pose.var.size() != np ||
        pred.shape.var.size() != nb) {
        throw std::invalid_argument("prediction does not match the body model");
    }
    if ((pred.pose.var.array() < 0.0).any() || (pred.shape.var.array() < 0.0).any()) {
        throw std::invalid_argument("variances must be non-negative");
    }
    const Eigen::ArrayXd sd_theta = pred.pose.var.array().sqrt();
    const Eigen::ArrayXd sd_beta = pred.shape.var.array().sqrt();

    std::vector<Points3> meshes;
    meshes.reserve(n_samples);
    Points3 mean = Points3::Zero(model.num_vertices(), 3);
    Eigen::VectorXd theta(np);
    Eigen::VectorXd beta(nb);
    for (int i = 0; i < n_samples; ++i) {
        for (int k = 0; k < np; ++k) theta[k] = pred.pose.mean[k] + sd_theta[k] * standard_normal(rng);
        for (int k = 0; k < nb; ++k) beta[k] = pred.shape.mean[k] + sd_beta[k] * standard_normal(rng);
        meshes.push_back(forward(model, theta, beta, pred.gamma).vertices);
        mean += meshes.back() - meshes.front();
    }
    // Offsets from the first draw keep identical draws exactly at zero spread.
    mean = meshes.front() + mean / static_cast<double>(n_samples);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(model.num_vertices());
    for (const auto& m : meshes) out += (m - mean).rowwise().norm();
    return out * (100.0 / n_samples);
}

std::vector<std::vector<int>> split_groups(std::vector<int> indices, int max_size, Rng& rng)
{
    if (max_size < 1) throw std::invalid_argument("group size must be at least 1");
    for (std::size_t i = indices.size(); i > 1; --i) {
        std::swap(indices[i - 1], indices[uniform_int(rng, 0, static_cast<int>(i) - 1)]);
    }
    std::vector<std::vector<int>> groups;
    for (std::size_t s = 0; s < indices.size(); s += max_size) {
        const std::size_t e = std::min(indices.size(), s + static_cast<std::size_t>(max_size));
        groups.emplace_back(indices.begin() + s, indices.begin() + e);
    }
    return groups;
}

double slice_girth(const VertexMesh& mesh, const std::vector<int>& part_labels, int part, double height)
{
    using P = std::array<double, 2>;
    std::vector<P> pts;
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        if (part_labels[mesh.faces(f, 0)] != part) continue;
        for (int e = 0; e < 3; ++e) {
            const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, e));
            const Eigen::RowVector3d b = mesh.vertices.row(mesh.faces(f, (e + 1) % 3));
            const double da = a.y() - height;
            const double db = b.y() - height;
            if (da == 0.0) pts.push_back({a.x(), a.z()});
            if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) {
                const double t = da / (da - db);
                pts.push_back({a.x() + t * (b.x() - a.x()), a.z() + t * (b.z() - a.z())});
            }
        }
    }
    if (pts.size() < 2) return 0.0;
    // Monotone chain hull.
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 2) return 0.0;
    auto cross = [](const P& o, const P& a, const P& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<P> hull(2 * pts.size());
    std::size_t k = 0;
    for (const P& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    double perimeter = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const P& a = hull[i];
        const P& b = hull[(i + 1) % hull.size()];
        perimeter += std::hypot(b[0] - a[0], b[1] - a[1]);
    }
    return perimeter;
}

double neutral_height(const Eigen::VectorXd& beta, const BodyModel& model)
{
    const VertexMesh mesh = neutral_pose_mesh(model, beta);
    return mesh.vertices.col(1).maxCoeff() - mesh.vertices.col(1).minCoeff();
}

void to_json(nlohmann::json& j, const MeasurementSet& m)
{
    j = nlohmann::json::object();
    for (std::size_t i = 0; i < m.names.size(); ++i) j["girths_cm"][m.names[i]] = m.values_cm[i];
    j["height_m"] = m.height_m;
    j["predicted_height_m"] = m.predicted_height_m;
    j["scale"] = m.scale;
}

MeasurementSet measure_and_normalize(const Eigen::VectorXd& beta, const BodyModel& model, double true_height)
{
    if (!(true_height > 0.0)) throw std::invalid_argument("true height must be positive");
    const VertexMesh mesh = neutral_pose_mesh(model, beta);
    MeasurementSet out;
    out.height_m = true_height;
    out.predicted_height_m = mesh.vertices.col(1).maxCoeff() - mesh.vertices.col(1).minCoeff();
    if (!(out.predicted_height_m > 0.0)) throw std::invalid_argument("predicted body has non-positive height");
    out.scale = true_height / out.predicted_height_m;
    for (const auto& m : model.measurements) {
        out.names.push_back(m.name);
        const double y = mesh.vertices(m.anchor_vertex, 1);
        out.values_cm.push_back(100.0 * out.scale * slice_girth(mesh, model.part_labels, m.part, y));
    }
    return out;
}

Combine parse_combine(const std::string& s)
{
    if (s == "pc") return Combine::PC;
    if (s == "mean") return Combine::Mean;
    if (s == "single") return Combine::Single;
    throw std::invalid_argument("combination must be pc, mean or single (got '" + s + "')");
}

std::string to_string(Combine c)
{
    switch (c) {
    case Combine::PC: return "pc";
    case Combine::Mean: return "mean";
    default: return "single";
    }
}

std::vector<int> keypoint_root(const BodyModel& model)
{
    const auto& n = model.keypoint_names;
    const auto l = std::find(n.begin(), n.end(), "l_hip");
    const auto r = std::find(n.begin(), n.end(), "r_hip");
    if (l != n.end() && r != n.end()) {
        return {static_cast<int>(l - n.begin()), static_cast<int>(r - n.begin())};
    }
    return {0};
}

void to_json(nlohmann::json& j, const MetricSummary& s)
{
    j = {{"count", s.count},
         {"mpjpe_mm", s.mpjpe},
         {"mpjpe_sc_mm", s.mpjpe_sc},
         {"mpjpe_pa_mm", s.mpjpe_pa},
         {"pve_t_sc_mm", s.pve_t_sc}};
}

void to_json(nlohmann::json& j, const MetricsReport& r)
{
    j = {{"combine", to_string(r.combine)},
         {"max_group_size", r.max_group_size},
         {"all", r.all},
         {"clean", r.clean},
         {"corrupted", r.corrupted}};
    auto& ps = j["per_subject_pve_t_sc_mm"] = nlohmann::json::array();
    for (const auto& [s, v] : r.per_subject) ps.push_back({{"subject", s}, {"pve_t_sc_mm", v}});
}

namespace {

void add_to(MetricSummary& s, const SampleEval& e)
{
    ++s.count;
    s.mpjpe += e.mpjpe;
    s.mpjpe_sc += e.mpjpe_sc;
    s.mpjpe_pa += e.mpjpe_pa;
    s.pve_t_sc += e.pve_t_sc;
}

void finish(MetricSummary& s)
{
    if (s.count == 0) return;
    s.mpjpe /= s.count;
    s.mpjpe_sc /= s.count;
    s.mpjpe_pa /= s.count;
    s.pve_t_sc /= s.count;
}

}  // namespace

MetricsReport evaluate(const std::vector<SyntheticSample>& samples, const std::vector<PredictionSet>& predictions,
                       const BodyModel& model, int max_group_size, Combine combine, std::uint64_t seed)
{
    if (samples.size() != predictions.size()) {
        throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                                    std::to_string(samples.size()) + " samples");
    }
    if (max_group_size < 1) throw std::invalid_argument("group size must be at least 1");
    for (const auto& p : predictions) {
        if (p.pose.dim() != model.pose_dim() || p.shape.dim() != model.num_betas()) {
            throw std::invalid_argument("evaluate: prediction dimensions do not match the body model");
        }
    }
    const std::vector<int> root = keypoint_root(model);

    MetricsReport rep;
    rep.combine = combine;
    rep.max_group_size = combine == Combine::Single ? 1 : max_group_size;
    rep.samples.resize(samples.size());

    // Groups keyed by (subject, corrupted) in dataset order.
    std::map<std::pair<std::int64_t, int>, std::vector<int>> by_key;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::int64_t subject = s.subject >= 0 ? s.subject : -1 - static_cast<std::int64_t>(i);
        by_key[{subject, s.corrupted ? 1 : 0}].push_back(static_cast<int>(i));
    }
    std::vector<std::vector<int>> groups;
    for (const auto& [key, idx] : by_key) {
        if (combine == Combine::Single || key.first < 0) {
            for (int i : idx) groups.push_back({i});
            continue;
        }
        Rng rng = make_rng(seed, "groups", static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second));
        for (auto& g : split_groups(idx, max_group_size, rng)) groups.push_back(std::move(g));
    }

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        std::vector<GaussianDiag> shapes;
        for (int i : g) shapes.push_back(predictions[i].shape);
        const Eigen::VectorXd beta = combine == Combine::PC ? fuse_shapes(shapes).mean : mean_of_means(shapes).mean;
        for (int i : g) {
            const auto& s = samples[i];
            const auto& p = predictions[i];
            SampleEval& e = rep.samples[i];
            e.index = s.index;
            e.subject = s.subject;
            e.corrupted = s.corrupted;
            e.view = s.view;
            e.group = static_cast<int>(gi);
            e.group_size = static_cast<int>(g.size());
            const Points3 gt = keypoints(model, s.theta, s.beta, s.gamma);
            const Points3 pr = keypoints(model, p.pose.mean, p.shape.mean, p.gamma);
            e.mpjpe = mpjpe(pr, gt, root);
            e.mpjpe_sc = mpjpe_sc(pr, gt, root);
            e.mpjpe_pa = mpjpe_pa(pr, gt);
            e.pve_t_sc = pve_t_sc(beta, s.beta, model);
            e.shape = beta;
        }
    }

    std::map<std::int64_t, std::pair<double, int>> subj;
    for (const auto& e : rep.samples) {
        add_to(rep.all, e);
        add_to(e.corrupted ? rep.corrupted : rep.clean, e);
        auto& acc = subj[e.subject];
        acc.first += e.pve_t_sc;
        ++acc.second;
    }
    finish(rep.all);
    finish(rep.clean);
    finish(rep.corrupted);
    for (const auto& [s, acc] : subj) rep.per_subject.emplace_back(s, acc.first / acc.second);
    return rep;
}

}  // namespace pbody
