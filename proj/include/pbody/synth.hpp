#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pbody/body_model.hpp"
#include "pbody/camera.hpp"
#include "pbody/container.hpp"
#include "pbody/rng.hpp"

namespace pbody {

// Input corruptions applied to synthetic samples.
struct AugmentationConfig {
    double body_part_occlusion_prob = 0.1;
    double joint_lr_swap_prob = 0.1;    // per left/right pair
    double half_image_occlusion_prob = 0.05;
    double joint_removal_prob = 0.1;    // per joint
    double joint_noise_px = 8.0;        // uniform in [-r, r] per coordinate
    double vertex_noise_m = 0.01;       // uniform in [-r, r] per coordinate
    double occlusion_box_prob = 0.5;
    int occlusion_box_size = 48;        // pixels

    void validate() const;
    // All probabilities zero and no noise.
    static AugmentationConfig none();
};

struct GenerationConfig {
    double shape_mean = 0.0;
    double shape_var = 2.25;
    double shape_limit = 6.0;  // |beta_i| truncation
    Eigen::Vector3d cam_t_mean{0.0, -0.2, 2.5};
    Eigen::Vector3d cam_t_var{0.05, 0.05, 0.25};
    double focal = 300.0;
    int width = 256;
    int height = 256;
    double confidence_threshold = 0.025;
    int max_camera_retries = 10;

    void validate() const;
};

void to_json(nlohmann::json& j, const AugmentationConfig& c);
void from_json(const nlohmann::json& j, AugmentationConfig& c);
void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

enum class View : int { Front = 0, Back = 1, Left = 2, Right = 3 };

struct Pose {
    Eigen::VectorXd theta;
    Eigen::Vector3d gamma = Eigen::Vector3d::Zero();
};

// Supplies (theta, gamma). The procedural source draws each joint's
// axis-angle from N(0, std^2) clamped to per-joint limits, and a global
// rotation facing the camera from the front, back, left or right with a small
// jitter. A bank source replays stored poses.
class PoseSource {
public:
    static PoseSource procedural(const BodyModel& model, double pose_std = 0.3, double yaw_jitter = 0.15,
                                 double tilt_std = 0.05);
    static PoseSource bank(std::vector<Pose> poses);

    // view < 0 picks a random canonical view.
    Pose sample(Rng& rng, int view = -1) const;

    int pose_dim() const { return pose_dim_; }
    std::size_t bank_size() const { return bank_.size(); }

private:
    int pose_dim_ = 0;
    double pose_std_ = 0.3;
    double yaw_jitter_ = 0.15;
    double tilt_std_ = 0.05;
    std::vector<std::array<double, 2>> limits_;  // per pose component
    std::vector<Pose> bank_;
};

// Pose bank files: magic "PBPOSES", arrays theta (N x P) and gamma (N x 3).
void save_pose_bank(const std::vector<Pose>& poses, const std::string& path);
std::vector<Pose> load_pose_bank(const std::string& path);

Eigen::VectorXd sample_shape(Rng& rng, const GenerationConfig& cfg, int num_betas = 10);

PerspCamera sample_camera(Rng& rng, const GenerationConfig& cfg);

// What the corruption pipeline did to one sample.
struct AugmentationRecord {
    bool vertex_noise = false;
    int occluded_part = -1;   // -1: none
    int half_occluded = -1;   // -1: none, 0..3: left, right, top, bottom half cleared
    bool box = false;
    int box_col = 0;
    int box_row = 0;
    std::uint32_t swapped_pairs = 0;   // bit p set when pair p swapped
    std::uint32_t removed_joints = 0;  // bit l set when joint l removed
    bool joint_noise = false;
};

struct SyntheticSample {
    std::int64_t index = 0;
    std::int64_t subject = -1;
    int view = -1;
    bool corrupted = false;

    Eigen::VectorXd theta;
    Eigen::VectorXd beta;
    Eigen::Vector3d gamma = Eigen::Vector3d::Zero();
    PerspCamera camera;

    // Ground-truth projected keypoints (pixels) and visibility.
    Points2 target_joints;
    std::vector<std::uint8_t> visibility;
    // Keypoints as drawn into the heatmaps (after swap and noise).
    Points2 input_joints;

    std::vector<std::uint8_t> silhouette;  // H x W
    AugmentationRecord aug;
};

// Silhouette plus heatmaps of the visible input joints.
ProxyRepresentation make_proxy(const SyntheticSample& s);

// Body-part occlusion: clears pixels covered only by triangles of `part`.
// Returns the cleared-pixel mask.
std::vector<std::uint8_t> occlude_body_part(std::vector<std::uint8_t>& silhouette, const Faces& faces,
                                            const std::vector<int>& part_labels, const Points2& projected, int part,
                                            int width, int height);
// Clears pixels whose covering triangles all belong to parts in the bitmask.
std::vector<std::uint8_t> occlude_body_parts(std::vector<std::uint8_t>& silhouette, const Faces& faces,
                                             const std::vector<int>& part_labels, const Points2& projected,
                                             std::uint64_t parts, int width, int height);

// Swaps each configured pair with probability p (one draw per pair, in
// order). Returns the bitmask of swapped pairs.
std::uint32_t swap_lr_joints(Points2& joints, std::vector<std::uint8_t>& visibility,
                             const std::vector<std::array<int, 2>>& pairs, double p, Rng& rng);
// Applies a fixed swap decision.
void apply_lr_swaps(Points2& joints, std::vector<std::uint8_t>& visibility,
                    const std::vector<std::array<int, 2>>& pairs, std::uint32_t mask);

// Renders labels through a fixed camera; corruptions draw from `rng`. The
// camera is retried (with draws from `camera_rng`) when the subject is behind
// it or the silhouette is empty.
SyntheticSample render_sample(const BodyModel& model, const Pose& pose, const Eigen::VectorXd& beta,
                              const GenerationConfig& gen, const AugmentationConfig& aug, Rng& camera_rng, Rng& rng,
                              bool corrupt);

// Full pipeline: pose, shape and camera from `rng`.
SyntheticSample generate_sample(const BodyModel& model, const PoseSource& poses, const GenerationConfig& gen,
                                const AugmentationConfig& aug, Rng& rng, bool corrupt, int view = -1);

// Evaluation benchmark: subjects with fixed shapes, one pose per view. Clean
// and corrupted variants of an image share labels and camera.
enum class CorruptMode { Off, On, Both };
CorruptMode parse_corrupt_mode(const std::string& s);
std::string to_string(CorruptMode m);

struct BenchmarkSpec {
    std::uint64_t seed = 0;
    int num_subjects = 200;
    int poses_per_subject = 4;
    CorruptMode corrupt = CorruptMode::Both;
};

std::vector<SyntheticSample> generate_benchmark(const BodyModel& model, const PoseSource& poses,
                                                const GenerationConfig& gen, const AugmentationConfig& aug,
                                                const BenchmarkSpec& spec);

// Dataset files: magic "PBDATA", header meta holds configs and seed, one
// fixed-size checksummed record per sample.
struct DatasetHeader {
    std::uint64_t seed = 0;
    GenerationConfig gen;
    AugmentationConfig aug;
    nlohmann::json extra = nlohmann::json::object();
    int num_samples = 0;
    int pose_dim = 0;
    int num_betas = 0;
    int num_keypoints = 0;
};

void write_dataset(const std::string& path, const DatasetHeader& header, const std::vector<SyntheticSample>& samples);

class DatasetReader {
public:
    explicit DatasetReader(const std::string& path);

    const DatasetHeader& header() const { return header_; }
    int size() const { return header_.num_samples; }
    // Reads and checksum-verifies one record.
    SyntheticSample read(int i);

private:
    std::unique_ptr<io::ContainerReader> reader_;
    DatasetHeader header_;
    std::uint64_t record_bytes_ = 0;
    std::vector<std::int64_t> checksums_;
};

std::vector<SyntheticSample> read_dataset(const std::string& path, DatasetHeader* header = nullptr);

}  // namespace pbody
