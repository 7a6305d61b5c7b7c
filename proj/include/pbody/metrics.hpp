#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pbody/body_model.hpp"
#include "pbody/distributions.hpp"
#include "pbody/rng.hpp"
#include "pbody/synth.hpp"

namespace pbody {

// Joint errors take meters and return millimetres. `root` lists the joints
// whose mean is subtracted from each skeleton (empty: joint 0).
Points3 root_center(const Points3& joints, std::span<const int> root = {});
double mpjpe(const Points3& pred, const Points3& gt, std::span<const int> root = {});

// Least-squares scalar s* = <pred, gt> / <pred, pred>. Throws
// std::invalid_argument for an all-zero prediction.
double optimal_scale(const Points3& pred, const Points3& gt);
// Root-centres both skeletons and returns s* * pred.
Points3 scale_correct(const Points3& pred, const Points3& gt, std::span<const int> root = {});
double mpjpe_sc(const Points3& pred, const Points3& gt, std::span<const int> root = {});

// gt ~ scale * rotation * pred + translation, rotation a proper rotation.
struct Similarity {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    double scale = 1.0;
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Points3 apply(const Points3& p) const;
};

// Throws std::invalid_argument with fewer than 3 points or collinear input.
Similarity procrustes(const Points3& pred, const Points3& gt);
Points3 procrustes_align(const Points3& pred, const Points3& gt);
double mpjpe_pa(const Points3& pred, const Points3& gt);

// Mean per-vertex error (mm) of neutral-pose meshes after centring both on
// their centroid and scaling the prediction by the least-squares scalar.
double pve_t_sc(const Eigen::VectorXd& pred_beta, const Eigen::VectorXd& gt_beta, const BodyModel& model);

// Monte-Carlo spread (cm) of each vertex under the predicted pose and shape
// distributions; zero variances are allowed.
Eigen::VectorXd per_vertex_uncertainty(const PredictionSet& pred, const BodyModel& model, int n_samples, Rng& rng);

// Shuffles then chunks into groups of at most max_size.
std::vector<std::vector<int>> split_groups(std::vector<int> indices, int max_size, Rng& rng);

// Perimeter of the convex hull of the intersection of the plane y = height
// with the triangles of one body part, in the x-z plane.
double slice_girth(const VertexMesh& mesh, const std::vector<int>& part_labels, int part, double height);

struct MeasurementSet {
    std::vector<std::string> names;
    std::vector<double> values_cm;
    double height_m = 0.0;         // true height
    double predicted_height_m = 0.0;
    double scale = 1.0;            // true / predicted height
};

void to_json(nlohmann::json& j, const MeasurementSet& m);

MeasurementSet measure_and_normalize(const Eigen::VectorXd& beta, const BodyModel& model, double true_height);

// Height of the neutral mesh: y extent.
double neutral_height(const Eigen::VectorXd& beta, const BodyModel& model);

enum class Combine { PC, Mean, Single };
Combine parse_combine(const std::string& s);
std::string to_string(Combine c);

struct SampleEval {
    std::int64_t index = 0;
    std::int64_t subject = -1;
    bool corrupted = false;
    int view = -1;
    int group = -1;
    int group_size = 1;
    double mpjpe = 0.0;
    double mpjpe_sc = 0.0;
    double mpjpe_pa = 0.0;
    double pve_t_sc = 0.0;
    Eigen::VectorXd shape;  // combined shape estimate
};

struct MetricSummary {
    int count = 0;
    double mpjpe = 0.0;
    double mpjpe_sc = 0.0;
    double mpjpe_pa = 0.0;
    double pve_t_sc = 0.0;
};

struct MetricsReport {
    Combine combine = Combine::PC;
    int max_group_size = 1;
    std::vector<SampleEval> samples;
    MetricSummary all;
    MetricSummary clean;
    MetricSummary corrupted;
    // Mean PVE-T-SC per subject, ordered by subject id.
    std::vector<std::pair<std::int64_t, double>> per_subject;
};

void to_json(nlohmann::json& j, const MetricSummary& s);
void to_json(nlohmann::json& j, const MetricsReport& r);

// Shape estimate of each sample: pc fuses the group's shape distributions,
// mean averages their means, single keeps every prediction. Groups are
// formed per (subject, corrupted) with stream (seed, "groups", subject,
// corrupted); samples without a subject form singleton groups.
MetricsReport evaluate(const std::vector<SyntheticSample>& samples, const std::vector<PredictionSet>& predictions,
                       const BodyModel& model, int max_group_size, Combine combine, std::uint64_t seed);

// Root joints for keypoint skeletons: the hips when the model names them,
// otherwise joint 0.
std::vector<int> keypoint_root(const BodyModel& model);

}  // namespace pbody
