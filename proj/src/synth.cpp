#include "pbody/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numbers>

#include <Eigen/Geometry>

#include "pbody/rotation.hpp"

namespace pbody {

void AugmentationConfig::validate() const
{
    for (double p : {body_part_occlusion_prob, joint_lr_swap_prob, half_image_occlusion_prob, joint_removal_prob,
                     occlusion_box_prob}) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
    }
    if (!(joint_noise_px >= 0.0) || !(vertex_noise_m >= 0.0)) {
        throw std::invalid_argument("noise ranges must be non-negative");
    }
    if (occlusion_box_size < 0) throw std::invalid_argument("occlusion box size must be non-negative");
}

AugmentationConfig AugmentationConfig::none()
{
    AugmentationConfig c;
    c.body_part_occlusion_prob = 0.0;
    c.joint_lr_swap_prob = 0.0;
    c.half_image_occlusion_prob = 0.0;
    c.joint_removal_prob = 0.0;
    c.joint_noise_px = 0.0;
    c.vertex_noise_m = 0.0;
    c.occlusion_box_prob = 0.0;
    return c;
}

void GenerationConfig::validate() const
{
    if (!(shape_var > 0.0)) throw std::invalid_argument("shape variance must be positive");
    if (!(shape_limit > 0.0)) throw std::invalid_argument("shape truncation must be positive");
    if (!(cam_t_var.array() > 0.0).all()) throw std::invalid_argument("camera translation variances must be positive");
    if (!(focal > 0.0)) throw std::invalid_argument("focal length must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("proxy size must be positive");
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
        throw std::invalid_argument("confidence threshold must lie in [0, 1]");
    }
    if (max_camera_retries < 0) throw std::invalid_argument("camera retries must be non-negative");
}

void to_json(nlohmann::json& j, const AugmentationConfig& c)
{
    j = {{"body_part_occlusion_prob", c.body_part_occlusion_prob},
         {"joint_lr_swap_prob", c.joint_lr_swap_prob},
         {"half_image_occlusion_prob", c.half_image_occlusion_prob},
         {"joint_removal_prob", c.joint_removal_prob},
         {"joint_noise_px", c.joint_noise_px},
         {"vertex_noise_m", c.vertex_noise_m},
         {"occlusion_box_prob", c.occlusion_box_prob},
         {"occlusion_box_size", c.occlusion_box_size}};
}

void from_json(const nlohmann::json& j, AugmentationConfig& c)
{
    j.at("body_part_occlusion_prob").get_to(c.body_part_occlusion_prob);
    j.at("joint_lr_swap_prob").get_to(c.joint_lr_swap_prob);
    j.at("half_image_occlusion_prob").get_to(c.half_image_occlusion_prob);
    j.at("joint_removal_prob").get_to(c.joint_removal_prob);
    j.at("joint_noise_px").get_to(c.joint_noise_px);
    j.at("vertex_noise_m").get_to(c.vertex_noise_m);
    j.at("occlusion_box_prob").get_to(c.occlusion_box_prob);
    j.at("occlusion_box_size").get_to(c.occlusion_box_size);
}

void to_json(nlohmann::json& j, const GenerationConfig& c)
{
    j = {{"shape_mean", c.shape_mean},
         {"shape_var", c.shape_var},
         {"shape_limit", c.shape_limit},
         {"cam_t_mean", {c.cam_t_mean.x(), c.cam_t_mean.y(), c.cam_t_mean.z()}},
         {"cam_t_var", {c.cam_t_var.x(), c.cam_t_var.y(), c.cam_t_var.z()}},
         {"focal", c.focal},
         {"width", c.width},
         {"height", c.height},
         {"confidence_threshold", c.confidence_threshold},
         {"max_camera_retries", c.max_camera_retries}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c)
{
    j.at("shape_mean").get_to(c.shape_mean);
    j.at("shape_var").get_to(c.shape_var);
    j.at("shape_limit").get_to(c.shape_limit);
    const auto m = j.at("cam_t_mean").get<std::array<double, 3>>();
    const auto v = j.at("cam_t_var").get<std::array<double, 3>>();
    c.cam_t_mean = {m[0], m[1], m[2]};
    c.cam_t_var = {v[0], v[1], v[2]};
    j.at("focal").get_to(c.focal);
    j.at("width").get_to(c.width);
    j.at("height").get_to(c.height);
    j.at("confidence_threshold").get_to(c.confidence_threshold);
    j.at("max_camera_retries").get_to(c.max_camera_retries);
}

// ---------------------------------------------------------------------------
// Poses.

namespace {

using Limits = std::array<std::array<double, 2>, 3>;

// Per-axis rotation limits (radians) of the named joints. Knees bend with
// positive x rotation, elbows with negative.
const std::map<std::string, Limits>& joint_limits()
{
    static const std::map<std::string, Limits> table = {
        {"l_hip", {{{-1.2, 0.5}, {-0.5, 0.5}, {-0.3, 0.6}}}},
        {"r_hip", {{{-1.2, 0.5}, {-0.5, 0.5}, {-0.6, 0.3}}}},
        {"spine1", {{{-0.3, 0.4}, {-0.3, 0.3}, {-0.2, 0.2}}}},
        {"spine2", {{{-0.2, 0.3}, {-0.3, 0.3}, {-0.2, 0.2}}}},
        {"spine3", {{{-0.2, 0.3}, {-0.3, 0.3}, {-0.2, 0.2}}}},
        {"l_knee", {{{0.0, 1.6}, {-0.1, 0.1}, {-0.1, 0.1}}}},
        {"r_knee", {{{0.0, 1.6}, {-0.1, 0.1}, {-0.1, 0.1}}}},
        {"l_ankle", {{{-0.4, 0.4}, {-0.3, 0.3}, {-0.2, 0.2}}}},
        {"r_ankle", {{{-0.4, 0.4}, {-0.3, 0.3}, {-0.2, 0.2}}}},
        {"l_foot", {{{-0.2, 0.2}, {-0.1, 0.1}, {-0.1, 0.1}}}},
        {"r_foot", {{{-0.2, 0.2}, {-0.1, 0.1}, {-0.1, 0.1}}}},
        {"neck", {{{-0.4, 0.4}, {-0.4, 0.4}, {-0.3, 0.3}}}},
        {"head", {{{-0.4, 0.4}, {-0.5, 0.5}, {-0.3, 0.3}}}},
        {"l_collar", {{{-0.2, 0.2}, {-0.2, 0.2}, {-0.2, 0.2}}}},
        {"r_collar", {{{-0.2, 0.2}, {-0.2, 0.2}, {-0.2, 0.2}}}},
        {"l_shoulder", {{{-1.2, 1.2}, {-0.8, 0.8}, {-0.6, 1.2}}}},
        {"r_shoulder", {{{-1.2, 1.2}, {-0.8, 0.8}, {-1.2, 0.6}}}},
        {"l_elbow", {{{-1.6, 0.0}, {-0.5, 0.5}, {-0.1, 0.1}}}},
        {"r_elbow", {{{-1.6, 0.0}, {-0.5, 0.5}, {-0.1, 0.1}}}},
        {"l_wrist", {{{-0.6, 0.6}, {-0.6, 0.6}, {-0.4, 0.4}}}},
        {"r_wrist", {{{-0.6, 0.6}, {-0.6, 0.6}, {-0.4, 0.4}}}},
        {"l_hand", {{{-0.3, 0.3}, {-0.3, 0.3}, {-0.3, 0.3}}}},
        {"r_hand", {{{-0.3, 0.3}, {-0.3, 0.3}, {-0.3, 0.3}}}},
    };
    return table;
}

constexpr std::array<double, 4> kViewYaw = {std::numbers::pi, 0.0, 0.5 * std::numbers::pi,
                                            -0.5 * std::numbers::pi};

}  // namespace

PoseSource PoseSource::procedural(const BodyModel& model, double pose_std, double yaw_jitter, double tilt_std)
{
    PoseSource src;
    src.pose_dim_ = model.pose_dim();
    src.pose_std_ = pose_std;
    src.yaw_jitter_ = yaw_jitter;
    src.tilt_std_ = tilt_std;
    const auto& table = joint_limits();
    for (int j = 1; j < model.num_joints(); ++j) {
        const auto it = table.find(model.joint_names[j]);
        for (int a = 0; a < 3; ++a) {
            src.limits_.push_back(it != table.end() ? it->second[a] : std::array<double, 2>{-0.5, 0.5});
        }
    }
    return src;
}

PoseSource PoseSource::bank(std::vector<Pose> poses)
{
    if (poses.empty()) throw std::invalid_argument("pose bank is empty");
    PoseSource src;
    src.pose_dim_ = static_cast<int>(poses.front().theta.size());
    for (const auto& p : poses) {
        if (p.theta.size() != src.pose_dim_) throw std::invalid_argument("pose bank entries differ in size");
        for (int j = 0; j < src.pose_dim_ / 3; ++j) {
            if (!(p.theta.segment<3>(3 * j).norm() < std::numbers::pi)) {
                throw std::invalid_argument("pose bank rotation outside the canonical axis-angle range");
            }
        }
    }
    src.bank_ = std::move(poses);
    return src;
}

Pose PoseSource::sample(Rng& rng, int view) const
{
    if (!bank_.empty()) return bank_[uniform_int(rng, 0, static_cast<int>(bank_.size()) - 1)];
    Pose p;
    p.theta.resize(pose_dim_);
    for (int i = 0; i < pose_dim_; ++i) {
        p.theta[i] = std::clamp(pose_std_ * standard_normal(rng), limits_[i][0], limits_[i][1]);
    }
    if (view < 0) view = uniform_int(rng, 0, 3);
    const double yaw = kViewYaw[view % 4] + yaw_jitter_ * standard_normal(rng);
    const double tilt_x = tilt_std_ * standard_normal(rng);
    const double tilt_z = tilt_std_ * standard_normal(rng);
    const Eigen::Matrix3d r = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(tilt_x, Eigen::Vector3d::UnitX()) *
                               Eigen::AngleAxisd(tilt_z, Eigen::Vector3d::UnitZ()))
                                  .toRotationMatrix();
    p.gamma = matrix_to_axis_angle(r);
    return p;
}

void save_pose_bank(const std::vector<Pose>& poses, const std::string& path)
{
    if (poses.empty()) throw std::invalid_argument("pose bank is empty");
    const auto n = static_cast<std::int64_t>(poses.size());
    const auto p = static_cast<std::int64_t>(poses.front().theta.size());
    std::vector<double> theta;
    std::vector<double> gamma;
    for (const auto& q : poses) {
        theta.insert(theta.end(), q.theta.data(), q.theta.data() + q.theta.size());
        gamma.insert(gamma.end(), q.gamma.data(), q.gamma.data() + 3);
    }
    io::ContainerWriter w("PBPOSES");
    w.meta()["kind"] = "pose_bank";
    w.add_f64("theta", theta, {n, p});
    w.add_f64("gamma", gamma, {n, 3});
    w.write(path);
}

std::vector<Pose> load_pose_bank(const std::string& path)
{
    io::ContainerReader r(path, "PBPOSES");
    const auto shape = r.info("theta").shape;
    if (shape.size() != 2 || r.info("gamma").shape != std::vector<std::int64_t>{shape[0], 3}) {
        throw io::FormatError("'" + path + "': inconsistent pose bank arrays");
    }
    const auto theta = r.f64("theta");
    const auto gamma = r.f64("gamma");
    std::vector<Pose> out(shape[0]);
    for (std::int64_t i = 0; i < shape[0]; ++i) {
        out[i].theta = Eigen::Map<const Eigen::VectorXd>(theta.data() + i * shape[1], shape[1]);
        out[i].gamma = Eigen::Map<const Eigen::Vector3d>(gamma.data() + 3 * i);
    }
    return out;
}

Eigen::VectorXd sample_shape(Rng& rng, const GenerationConfig& cfg, int num_betas)
{
    const double sd = std::sqrt(cfg.shape_var);
    Eigen::VectorXd beta(num_betas);
    for (int i = 0; i < num_betas; ++i) {
        double x;
        do {
            x = cfg.shape_mean + sd * standard_normal(rng);
        } while (std::abs(x) > cfg.shape_limit);
        beta[i] = x;
    }
    return beta;
}

PerspCamera sample_camera(Rng& rng, const GenerationConfig& cfg)
{
    PerspCamera cam;
    cam.focal = cfg.focal;
    cam.width = cfg.width;
    cam.height = cfg.height;
    for (int a = 0; a < 3; ++a) cam.translation[a] = cfg.cam_t_mean[a] + std::sqrt(cfg.cam_t_var[a]) * standard_normal(rng);
    return cam;
}

// ---------------------------------------------------------------------------
// Corruptions.

std::vector<std::uint8_t> occlude_body_part(std::vector<std::uint8_t>& silhouette, const Faces& faces,
                                            const std::vector<int>& part_labels, const Points2& projected, int part,
                                            int width, int height)
{
    if (part < 0 || part >= 64) throw std::invalid_argument("body part index must lie in [0, 64)");
    return occlude_body_parts(silhouette, faces, part_labels, projected, std::uint64_t{1} << part, width, height);
}

std::vector<std::uint8_t> occlude_body_parts(std::vector<std::uint8_t>& silhouette, const Faces& faces,
                                             const std::vector<int>& part_labels, const Points2& projected,
                                             std::uint64_t parts, int width, int height)
{
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (silhouette.size() != n) throw std::invalid_argument("silhouette size does not match image size");
    std::vector<std::uint64_t> cover(n, 0);
    rasterize_triangles(projected, faces, width, height, [&](int p, int f) {
        const int label = part_labels[faces(f, 0)];
        if (label < 0 || label >= 64) throw std::invalid_argument("body part label must lie in [0, 64)");
        cover[p] |= std::uint64_t{1} << label;
    });
    std::vector<std::uint8_t> cleared(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        if (silhouette[p] && cover[p] != 0 && (cover[p] & ~parts) == 0) {
            silhouette[p] = 0;
            cleared[p] = 1;
        }
    }
    return cleared;
}

void apply_lr_swaps(Points2& joints, std::vector<std::uint8_t>& visibility,
                    const std::vector<std::array<int, 2>>& pairs, std::uint32_t mask)
{
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (!(mask >> k & 1u)) continue;
        const int a = pairs[k][0];
        const int b = pairs[k][1];
        joints.row(a).swap(joints.row(b));
        std::swap(visibility[a], visibility[b]);
    }
}

std::uint32_t swap_lr_joints(Points2& joints, std::vector<std::uint8_t>& visibility,
                             const std::vector<std::array<int, 2>>& pairs, double p, Rng& rng)
{
    std::uint32_t mask = 0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (bernoulli(rng, p)) mask |= 1u << k;
    }
    apply_lr_swaps(joints, visibility, pairs, mask);
    return mask;
}

ProxyRepresentation make_proxy(const SyntheticSample& s)
{
    ProxyRepresentation x;
    x.width = s.camera.width;
    x.height = s.camera.height;
    x.silhouette = s.silhouette;
    x.heatmaps = joints_to_heatmaps(s.input_joints, s.visibility, x.width, x.height);
    return x;
}

namespace {

std::uint8_t pixel_of(const std::vector<std::uint8_t>& mask, double u, double v, int width)
{
    const int c = nearest_pixel(u);
    const int r = nearest_pixel(v);
    return mask[static_cast<std::size_t>(r) * width + c];
}

void clear_rect(std::vector<std::uint8_t>& sil, std::vector<std::uint8_t>& erased, int width, int c0, int r0, int c1,
                int r1)
{
    for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
            sil[static_cast<std::size_t>(r) * width + c] = 0;
            erased[static_cast<std::size_t>(r) * width + c] = 1;
        }
    }
}

}  // namespace

SyntheticSample render_sample(const BodyModel& model, const Pose& pose, const Eigen::VectorXd& beta,
                              const GenerationConfig& gen, const AugmentationConfig& aug, Rng& camera_rng, Rng& rng,
                              bool corrupt)
{
    gen.validate();
    aug.validate();
    const VertexMesh mesh = forward(model, pose.theta, beta, pose.gamma);
    const Points3 kp3 = regress_joints(model, mesh);

    SyntheticSample s;
    s.theta = pose.theta;
    s.beta = beta;
    s.gamma = pose.gamma;
    s.corrupted = corrupt;

    bool ok = false;
    for (int attempt = 0; attempt <= gen.max_camera_retries && !ok; ++attempt) {
        s.camera = sample_camera(camera_rng, gen);
        if (!(s.camera.translation.z() > 0.0)) continue;
        try {
            s.silhouette = rasterize_silhouette(mesh, s.camera);
            s.target_joints = project_persp(kp3, s.camera);
        } catch (const BehindCamera&) {
            continue;
        }
        ok = std::any_of(s.silhouette.begin(), s.silhouette.end(), [](std::uint8_t v) { return v != 0; });
    }
    if (!ok) {
        throw std::runtime_error("no usable camera after " + std::to_string(gen.max_camera_retries) +
                                 " retries (subject behind camera or out of frame)");
    }

    const int w = s.camera.width;
    const int h = s.camera.height;
    const int nl = model.num_keypoints();
    s.visibility.assign(nl, 0);
    for (int l = 0; l < nl; ++l) s.visibility[l] = in_frame(s.target_joints(l, 0), s.target_joints(l, 1), w, h);
    s.input_joints = s.target_joints;
    if (!corrupt) return s;

    AugmentationRecord& rec = s.aug;
    std::vector<std::uint8_t> erased(static_cast<std::size_t>(w) * h, 0);

    // Vertex noise.
    VertexMesh noisy = mesh;
    if (aug.vertex_noise_m > 0.0) {
        rec.vertex_noise = true;
        for (Eigen::Index i = 0; i < noisy.vertices.size(); ++i) {
            noisy.vertices.data()[i] += uniform(rng, -aug.vertex_noise_m, aug.vertex_noise_m);
        }
        s.silhouette = rasterize_silhouette(noisy, s.camera);
    }
    // Body-part occlusion.
    if (bernoulli(rng, aug.body_part_occlusion_prob)) {
        rec.occluded_part = uniform_int(rng, 0, static_cast<int>(model.part_names.size()) - 1);
        const Points2 px = project_persp(noisy.vertices, s.camera);
        const auto cleared =
            occlude_body_part(s.silhouette, model.faces, model.part_labels, px, rec.occluded_part, w, h);
        for (std::size_t p = 0; p < erased.size(); ++p) erased[p] |= cleared[p];
    }
    // Half-image occlusion.
    if (bernoulli(rng, aug.half_image_occlusion_prob)) {
        rec.half_occluded = uniform_int(rng, 0, 3);
        switch (rec.half_occluded) {
        case 0: clear_rect(s.silhouette, erased, w, 0, 0, w / 2, h); break;
        case 1: clear_rect(s.silhouette, erased, w, w / 2, 0, w, h); break;
        case 2: clear_rect(s.silhouette, erased, w, 0, 0, w, h / 2); break;
        default: clear_rect(s.silhouette, erased, w, 0, h / 2, w, h); break;
        }
    }
    // Occlusion box, fully inside the frame.
    if (bernoulli(rng, aug.occlusion_box_prob)) {
        const int b = std::min({aug.occlusion_box_size, w, h});
        rec.box = true;
        rec.box_col = uniform_int(rng, 0, w - b);
        rec.box_row = uniform_int(rng, 0, h - b);
        clear_rect(s.silhouette, erased, w, rec.box_col, rec.box_row, rec.box_col + b, rec.box_row + b);
    }
    for (int l = 0; l < nl; ++l) {
        if (s.visibility[l] && pixel_of(erased, s.target_joints(l, 0), s.target_joints(l, 1), w)) s.visibility[l] = 0;
    }
    // Joint corruptions act on the heatmap inputs.
    rec.swapped_pairs = swap_lr_joints(s.input_joints, s.visibility, model.keypoint_lr_pairs, aug.joint_lr_swap_prob, rng);
    for (int l = 0; l < nl; ++l) {
        if (bernoulli(rng, aug.joint_removal_prob)) {
            rec.removed_joints |= 1u << l;
            s.visibility[l] = 0;
        }
    }
    if (aug.joint_noise_px > 0.0) {
        rec.joint_noise = true;
        for (int l = 0; l < nl; ++l) {
            s.input_joints(l, 0) += uniform(rng, -aug.joint_noise_px, aug.joint_noise_px);
            s.input_joints(l, 1) += uniform(rng, -aug.joint_noise_px, aug.joint_noise_px);
            if (!in_frame(s.input_joints(l, 0), s.input_joints(l, 1), w, h)) s.visibility[l] = 0;
        }
    }
    return s;
}

SyntheticSample generate_sample(const BodyModel& model, const PoseSource& poses, const GenerationConfig& gen,
                                const AugmentationConfig& aug, Rng& rng, bool corrupt, int view)
{
    const Pose pose = poses.sample(rng, view);
    const Eigen::VectorXd beta = sample_shape(rng, gen, model.num_betas());
    SyntheticSample s = render_sample(model, pose, beta, gen, aug, rng, rng, corrupt);
    s.view = view;
    return s;
}

CorruptMode parse_corrupt_mode(const std::string& s)
{
    if (s == "off") return CorruptMode::Off;
    if (s == "on") return CorruptMode::On;
    if (s == "both") return CorruptMode::Both;
    throw std::invalid_argument("corrupt mode must be off, on or both (got '" + s + "')");
}

std::string to_string(CorruptMode m)
{
    switch (m) {
    case CorruptMode::Off: return "off";
    case CorruptMode::On: return "on";
    default: return "both";
    }
}

std::vector<SyntheticSample> generate_benchmark(const BodyModel& model, const PoseSource& poses,
                                                const GenerationConfig& gen, const AugmentationConfig& aug,
                                                const BenchmarkSpec& spec)
{
    if (spec.num_subjects < 1 || spec.poses_per_subject < 1) {
        throw std::invalid_argument("benchmark needs at least one subject and one pose per subject");
    }
    std::vector<bool> variants;
    if (spec.corrupt != CorruptMode::On) variants.push_back(false);
    if (spec.corrupt != CorruptMode::Off) variants.push_back(true);

    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(spec.num_subjects) * spec.poses_per_subject * variants.size());
    for (int subj = 0; subj < spec.num_subjects; ++subj) {
        Rng shape_rng = make_rng(spec.seed, "bench-shape", subj);
        const Eigen::VectorXd beta = sample_shape(shape_rng, gen, model.num_betas());
        std::vector<Pose> subject_poses;
        for (int p = 0; p < spec.poses_per_subject; ++p) {
            Rng pose_rng = make_rng(spec.seed, "bench-pose", subj, p);
            subject_poses.push_back(poses.sample(pose_rng, p % 4));
        }
        for (bool corrupt : variants) {
            for (int p = 0; p < spec.poses_per_subject; ++p) {
                Rng camera_rng = make_rng(spec.seed, "bench-camera", subj, p);
                Rng aug_rng = make_rng(spec.seed, "bench-aug", subj, p);
                SyntheticSample s = render_sample(model, subject_poses[p], beta, gen, aug, camera_rng, aug_rng, corrupt);
                s.index = static_cast<std::int64_t>(out.size());
                s.subject = subj;
                s.view = p % 4;
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset files.

namespace {

constexpr const char* kDataMagic = "PBDATA";

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    template <class T>
    void put(T v)
    {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        out_.insert(out_.end(), p, p + sizeof(T));
    }
    void put_f64(const double* p, std::size_t n)
    {
        for (std::size_t i = 0; i < n; ++i) put(p[i]);
    }
    void put_bytes(const std::uint8_t* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    void pad8()
    {
        while (out_.size() % 8 != 0) out_.push_back(0);
    }

private:
    std::vector<std::uint8_t>& out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}

    template <class T>
    T get()
    {
        if (pos_ + sizeof(T) > in_.size()) throw io::FormatError("dataset record is shorter than its layout");
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void get_f64(double* p, std::size_t n)
    {
        for (std::size_t i = 0; i < n; ++i) p[i] = get<double>();
    }
    const std::uint8_t* take(std::size_t n)
    {
        if (pos_ + n > in_.size()) throw io::FormatError("dataset record is shorter than its layout");
        const std::uint8_t* p = in_.data() + pos_;
        pos_ += n;
        return p;
    }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& mask)
{
    std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    return out;
}

std::vector<std::uint8_t> unpack_bits(const std::uint8_t* bits, std::size_t n)
{
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (bits[i / 8] >> (i % 8)) & 1u;
    return out;
}

std::vector<std::uint8_t> encode_record(const SyntheticSample& s)
{
    std::vector<std::uint8_t> buf;
    ByteWriter w(buf);
    w.put<std::int64_t>(s.index);
    w.put<std::int64_t>(s.subject);
    w.put<std::int64_t>(s.view);
    w.put<std::int64_t>(s.corrupted ? 1 : 0);
    w.put<std::int64_t>(s.camera.width);
    w.put<std::int64_t>(s.camera.height);
    w.put_f64(s.theta.data(), s.theta.size());
    w.put_f64(s.beta.data(), s.beta.size());
    w.put_f64(s.gamma.data(), 3);
    w.put(s.camera.focal);
    w.put_f64(s.camera.translation.data(), 3);
    w.put_f64(s.target_joints.data(), s.target_joints.size());
    w.put_f64(s.input_joints.data(), s.input_joints.size());
    const auto& a = s.aug;
    for (std::int64_t v : {std::int64_t{a.vertex_noise}, std::int64_t{a.occluded_part}, std::int64_t{a.half_occluded},
                           std::int64_t{a.box}, std::int64_t{a.box_col}, std::int64_t{a.box_row},
                           std::int64_t{a.swapped_pairs}, std::int64_t{a.removed_joints},
                           std::int64_t{a.joint_noise}}) {
        w.put(v);
    }
    w.put_bytes(s.visibility.data(), s.visibility.size());
    const auto bits = pack_bits(s.silhouette);
    w.put_bytes(bits.data(), bits.size());
    w.pad8();
    return buf;
}

SyntheticSample decode_record(const std::vector<std::uint8_t>& buf, const DatasetHeader& h)
{
    ByteReader r(buf);
    SyntheticSample s;
    s.index = r.get<std::int64_t>();
    s.subject = r.get<std::int64_t>();
    s.view = static_cast<int>(r.get<std::int64_t>());
    s.corrupted = r.get<std::int64_t>() != 0;
    s.camera.width = static_cast<int>(r.get<std::int64_t>());
    s.camera.height = static_cast<int>(r.get<std::int64_t>());
    s.theta.resize(h.pose_dim);
    r.get_f64(s.theta.data(), h.pose_dim);
    s.beta.resize(h.num_betas);
    r.get_f64(s.beta.data(), h.num_betas);
    r.get_f64(s.gamma.data(), 3);
    s.camera.focal = r.get<double>();
    r.get_f64(s.camera.translation.data(), 3);
    s.target_joints.resize(h.num_keypoints, 2);
    r.get_f64(s.target_joints.data(), s.target_joints.size());
    s.input_joints.resize(h.num_keypoints, 2);
    r.get_f64(s.input_joints.data(), s.input_joints.size());
    auto& a = s.aug;
    a.vertex_noise = r.get<std::int64_t>() != 0;
    a.occluded_part = static_cast<int>(r.get<std::int64_t>());
    a.half_occluded = static_cast<int>(r.get<std::int64_t>());
    a.box = r.get<std::int64_t>() != 0;
    a.box_col = static_cast<int>(r.get<std::int64_t>());
    a.box_row = static_cast<int>(r.get<std::int64_t>());
    a.swapped_pairs = static_cast<std::uint32_t>(r.get<std::int64_t>());
    a.removed_joints = static_cast<std::uint32_t>(r.get<std::int64_t>());
    a.joint_noise = r.get<std::int64_t>() != 0;
    const std::uint8_t* vis = r.take(h.num_keypoints);
    s.visibility.assign(vis, vis + h.num_keypoints);
    const std::size_t npx = static_cast<std::size_t>(s.camera.width) * s.camera.height;
    s.silhouette = unpack_bits(r.take((npx + 7) / 8), npx);
    return s;
}

}  // namespace

void write_dataset(const std::string& path, const DatasetHeader& header, const std::vector<SyntheticSample>& samples)
{
    std::vector<std::uint8_t> records;
    std::vector<std::int64_t> checksums;
    std::size_t record_bytes = 0;
    for (const auto& s : samples) {
        if (s.theta.size() != header.pose_dim || s.beta.size() != header.num_betas ||
            s.target_joints.rows() != header.num_keypoints || s.camera.width != header.gen.width ||
            s.camera.height != header.gen.height) {
            throw std::invalid_argument("sample " + std::to_string(s.index) + " does not match the dataset header");
        }
        const auto rec = encode_record(s);
        if (record_bytes == 0) record_bytes = rec.size();
        if (rec.size() != record_bytes) throw std::logic_error("dataset records differ in size");
        checksums.push_back(static_cast<std::int64_t>(io::fnv1a64(rec)));
        records.insert(records.end(), rec.begin(), rec.end());
    }
    io::ContainerWriter w(kDataMagic);
    auto& m = w.meta();
    m["kind"] = "dataset";
    m["seed"] = header.seed;
    m["generation"] = header.gen;
    m["augmentation"] = header.aug;
    m["extra"] = header.extra;
    m["num_samples"] = samples.size();
    m["pose_dim"] = header.pose_dim;
    m["num_betas"] = header.num_betas;
    m["num_keypoints"] = header.num_keypoints;
    m["record_bytes"] = record_bytes;
    w.add_u8("records", records, {static_cast<std::int64_t>(samples.size()), static_cast<std::int64_t>(record_bytes)},
             false);
    w.add_i64("record_checksums", checksums, {static_cast<std::int64_t>(samples.size())});
    w.write(path);
}

DatasetReader::DatasetReader(const std::string& path)
    : reader_(std::make_unique<io::ContainerReader>(path, kDataMagic))
{
    try {
        const auto& m = reader_->meta();
        header_.seed = m.at("seed").get<std::uint64_t>();
        header_.gen = m.at("generation").get<GenerationConfig>();
        header_.aug = m.at("augmentation").get<AugmentationConfig>();
        header_.extra = m.value("extra", nlohmann::json::object());
        header_.num_samples = m.at("num_samples").get<int>();
        header_.pose_dim = m.at("pose_dim").get<int>();
        header_.num_betas = m.at("num_betas").get<int>();
        header_.num_keypoints = m.at("num_keypoints").get<int>();
        record_bytes_ = m.at("record_bytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError("'" + path + "': malformed dataset header: " + e.what());
    }
    checksums_ = reader_->i64("record_checksums");
    if (static_cast<int>(checksums_.size()) != header_.num_samples ||
        reader_->info("records").nbytes != record_bytes_ * header_.num_samples) {
        throw io::FormatError("'" + path + "': record table does not match the header");
    }
}

SyntheticSample DatasetReader::read(int i)
{
    if (i < 0 || i >= header_.num_samples) throw std::out_of_range("dataset index " + std::to_string(i));
    const auto buf = reader_->read_range("records", static_cast<std::uint64_t>(i) * record_bytes_, record_bytes_);
    if (static_cast<std::int64_t>(io::fnv1a64(buf)) != checksums_[i]) {
        throw io::FormatError("dataset record " + std::to_string(i) + " failed its checksum");
    }
    return decode_record(buf, header_);
}

std::vector<SyntheticSample> read_dataset(const std::string& path, DatasetHeader* header)
{
    DatasetReader r(path);
    std::vector<SyntheticSample> out;
    out.reserve(r.size());
    for (int i = 0; i < r.size(); ++i) out.push_back(r.read(i));
    if (header) *header = r.header();
    return out;
}

}  // namespace pbody
