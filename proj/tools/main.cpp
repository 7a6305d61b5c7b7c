// pbody: command-line driver for the probabilistic body estimation toolkit.

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "pbody/body_model.hpp"
#include "pbody/container.hpp"
#include "pbody/metrics.hpp"
#include "pbody/network.hpp"
#include "pbody/synth.hpp"
#include "pbody/train.hpp"
#include "report.hpp"

#ifndef PBODY_VERSION
#define PBODY_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace pbody;

namespace {

class CommandError : public std::runtime_error {
public:
    CommandError(std::string kind, const std::string& msg) : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

std::string one_line(std::string s)
{
    for (char& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    return s;
}

std::string file_digest(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CommandError("io", "cannot read '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(io::fnv1a64(bytes)));
    return buf;
}

std::string utc_now()
{
    // SOURCE_DATE_EPOCH pins the timestamp for reproducible builds of the outputs.
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string toml_string(const std::string& s) { return nlohmann::json(s).dump(); }

std::string toml_list(const std::vector<std::string>& xs)
{
    std::string out = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + toml_string(xs[i]);
    return out + "]";
}

void ensure_parent(const std::string& path)
{
    const fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

// Written before any output. Loading it back with --config re-runs the
// command with the same resolved flags.
void write_manifest(const std::string& path, const CLI::App& sub, std::uint64_t seed,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs)
{
    ensure_parent(path);
    std::ostringstream o;
    o << "# pbody run manifest\n"
      << "seed=" << seed << "\n"
      << "[" << sub.get_name() << "]\n"
      << sub.config_to_str(true, false) << "\n"
      << "[manifest]\n"
      << "subcommand=" << toml_string(sub.get_name()) << "\n"
      << "tool_version=" << toml_string(PBODY_VERSION) << "\n"
      << "seed=" << seed << "\n"
      << "inputs=" << toml_list(inputs) << "\n"
      << "outputs=" << toml_list(outputs) << "\n"
      << "started_utc=" << toml_string(utc_now()) << "\n";
    report::write_text(path, o.str());
}

std::string manifest_path(const std::string& given, const std::string& primary)
{
    return given.empty() ? primary + ".manifest.toml" : given;
}

std::string paper_desk(const std::string& what, const std::string& paper, const std::string& desk)
{
    return what + " [paper: " + paper + "; desk: " + desk + "]";
}

struct GenFlags {
    GenerationConfig gen;
    AugmentationConfig aug;
    std::vector<double> t_mean{0.0, -0.2, 2.5};
    std::vector<double> t_var{0.05, 0.05, 0.25};
    double pose_std = 0.3;
    std::string pose_bank;

    void finish()
    {
        gen.cam_t_mean = {t_mean[0], t_mean[1], t_mean[2]};
        gen.cam_t_var = {t_var[0], t_var[1], t_var[2]};
        try {
            gen.validate();
            aug.validate();
        } catch (const std::invalid_argument& e) {
            throw CommandError("config", e.what());
        }
    }
};

void add_generation_flags(CLI::App* a, GenFlags& f)
{
    auto* g = &f.gen;
    auto* u = &f.aug;
    a->option_defaults()->always_capture_default();
    const std::string grp = "Synthetic data";
    a->add_option("--shape-mean", g->shape_mean, paper_desk("Shape sampling mean", "0", "0"))->group(grp);
    a->add_option("--shape-var", g->shape_var, paper_desk("Shape sampling variance", "2.25", "2.25"))->group(grp);
    a->add_option("--shape-limit", g->shape_limit,
                  paper_desk("Truncation |beta_i| <= limit", "not stated", "6"))
        ->group(grp);
    a->add_option("--cam-t-mean", f.t_mean, paper_desk("Camera translation mean (m), 3 values", "0 -0.2 2.5",
                                                       "0 -0.2 2.5"))
        ->expected(3)
        ->group(grp);
    a->add_option("--cam-t-var", f.t_var,
                  paper_desk("Camera translation variance (m), 3 values", "0.05 0.05 0.25", "0.05 0.05 0.25"))
        ->expected(3)
        ->group(grp);
    a->add_option("--focal", g->focal, paper_desk("Focal length (px)", "300", "300"))->group(grp);
    a->add_option("--width", g->width, paper_desk("Proxy width (px)", "256", "256"))->group(grp);
    a->add_option("--height", g->height, paper_desk("Proxy height (px)", "256", "256"))->group(grp);
    a->add_option("--confidence-threshold", g->confidence_threshold,
                  paper_desk("Keypoint confidence threshold", "0.025", "0.025"))
        ->group(grp);
    a->add_option("--max-camera-retries", g->max_camera_retries,
                  paper_desk("Camera resamples before giving up", "not stated", "10"))
        ->group(grp);
    a->add_option("--pose-std", f.pose_std,
                  paper_desk("Procedural pose std (rad)", "mocap poses", "0.3"))
        ->group(grp);
    a->add_option("--pose-bank", f.pose_bank, "Pose bank file replacing procedural poses")->group(grp);

    const std::string agrp = "Augmentation";
    a->add_option("--body-part-occlusion-prob", u->body_part_occlusion_prob,
                  paper_desk("Body-part occlusion probability", "0.1", "0.1"))
        ->group(agrp);
    a->add_option("--joint-lr-swap-prob", u->joint_lr_swap_prob,
                  paper_desk("Left/right swap probability per pair", "0.1", "0.1"))
        ->group(agrp);
    a->add_option("--half-image-occlusion-prob", u->half_image_occlusion_prob,
                  paper_desk("Half-image occlusion probability", "0.05", "0.05"))
        ->group(agrp);
    a->add_option("--joint-removal-prob", u->joint_removal_prob,
                  paper_desk("Joint removal probability per joint", "0.1", "0.1"))
        ->group(agrp);
    a->add_option("--joint-noise-px", u->joint_noise_px, paper_desk("Joint noise range +-px", "8", "8"))->group(agrp);
    a->add_option("--vertex-noise-m", u->vertex_noise_m, paper_desk("Vertex noise range +-m", "0.01", "0.01"))
        ->group(agrp);
    a->add_option("--occlusion-box-prob", u->occlusion_box_prob,
                  paper_desk("Occlusion box probability", "0.5", "0.5"))
        ->group(agrp);
    a->add_option("--occlusion-box-size", u->occlusion_box_size, paper_desk("Occlusion box side (px)", "48", "48"))
        ->group(agrp);
}

PoseSource make_pose_source(const BodyModel& model, const GenFlags& f)
{
    if (!f.pose_bank.empty()) {
        PoseSource src = PoseSource::bank(load_pose_bank(f.pose_bank));
        if (src.pose_dim() != model.pose_dim()) {
            throw CommandError("config", "pose bank has " + std::to_string(src.pose_dim()) +
                                             " pose values, model expects " + std::to_string(model.pose_dim()));
        }
        return src;
    }
    return PoseSource::procedural(model, f.pose_std);
}

// ---------------------------------------------------------------------------

struct GenModelArgs {
    std::string out;
    int vertices = 600;
    int joints = 24;
};

void run_gen_model(const GenModelArgs& a, std::uint64_t seed)
{
    const BodyModel m = generate_toy_model(seed, a.vertices, a.joints);
    save_model(m, a.out);
    std::cout << "model: " << m.num_vertices() << " vertices, " << m.faces.rows() << " faces, " << m.num_joints()
              << " joints, " << m.num_keypoints() << " keypoints, " << m.num_betas() << " shape components -> "
              << a.out << "\n";
}

struct GenDataArgs {
    std::string model;
    std::string out;
    int num_subjects = 200;
    int poses_per_subject = 4;
    std::string corrupt = "both";
    GenFlags flags;
};

void print_data_summary(const std::vector<SyntheticSample>& samples, const BodyModel& model)
{
    double coverage = 0.0;
    int corrupted = 0;
    std::map<std::string, double> inc;
    std::size_t pair_draws = 0;
    std::size_t joint_draws = 0;
    for (const auto& s : samples) {
        std::size_t on = 0;
        for (auto p : s.silhouette) on += p;
        coverage += static_cast<double>(on) / s.silhouette.size();
        if (!s.corrupted) continue;
        ++corrupted;
        inc["body_part_occlusion"] += s.aug.occluded_part >= 0;
        inc["half_image_occlusion"] += s.aug.half_occluded >= 0;
        inc["occlusion_box"] += s.aug.box;
        inc["vertex_noise"] += s.aug.vertex_noise;
        inc["joint_noise"] += s.aug.joint_noise;
        for (std::size_t p = 0; p < model.keypoint_lr_pairs.size(); ++p) inc["joint_lr_swap"] += s.aug.swapped_pairs >> p & 1u;
        for (int l = 0; l < model.num_keypoints(); ++l) inc["joint_removal"] += s.aug.removed_joints >> l & 1u;
        pair_draws += model.keypoint_lr_pairs.size();
        joint_draws += model.num_keypoints();
    }
    std::cout << "samples: " << samples.size() << " (" << corrupted << " corrupted)\n"
              << "mean silhouette coverage: " << report::fmt(coverage / std::max<std::size_t>(1, samples.size())) << "\n";
    if (corrupted > 0) {
        std::cout << "augmentation incidence (per corrupted sample, per pair, per joint):\n";
        for (const auto& [k, v] : inc) {
            const double denom = k == "joint_lr_swap" ? pair_draws : (k == "joint_removal" ? joint_draws : corrupted);
            std::cout << "  " << k << ": " << report::fmt(v / denom) << "\n";
        }
    }
}

void run_gen_data(GenDataArgs& a, std::uint64_t seed)
{
    a.flags.finish();
    const BodyModel model = load_model(a.model);
    const PoseSource poses = make_pose_source(model, a.flags);
    BenchmarkSpec spec;
    spec.seed = seed;
    spec.num_subjects = a.num_subjects;
    spec.poses_per_subject = a.poses_per_subject;
    spec.corrupt = parse_corrupt_mode(a.corrupt);
    const auto samples = generate_benchmark(model, poses, a.flags.gen, a.flags.aug, spec);

    DatasetHeader h;
    h.seed = seed;
    h.gen = a.flags.gen;
    h.aug = a.flags.aug;
    h.extra = {{"num_subjects", a.num_subjects},
               {"poses_per_subject", a.poses_per_subject},
               {"corrupt", a.corrupt},
               {"pose_source", a.flags.pose_bank.empty() ? "procedural" : "bank"},
               {"pose_std", a.flags.pose_std},
               {"model_digest", file_digest(a.model)}};
    h.num_samples = static_cast<int>(samples.size());
    h.pose_dim = model.pose_dim();
    h.num_betas = model.num_betas();
    h.num_keypoints = model.num_keypoints();
    write_dataset(a.out, h, samples);
    print_data_summary(samples, model);
    std::cout << "dataset -> " << a.out << "\n";
}

struct TrainArgs {
    std::string model;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string resume;
    std::string log;
    std::vector<int> channels{8, 16, 32};
    int hidden = 512;
    TrainConfig cfg;
    GenFlags flags;
};

void write_loss_log(const std::string& path, const std::vector<EpochLog>& log)
{
    std::ostringstream o;
    o << "epoch,loss,nll,glob,reproj,param_norm\n";
    for (const auto& e : log) {
        o << e.epoch << "," << report::fmt(e.loss, 8) << "," << report::fmt(e.nll, 8) << ","
          << report::fmt(e.glob, 8) << "," << report::fmt(e.reproj, 8) << "," << report::fmt(e.param_norm, 8)
          << "\n";
    }
    report::write_text(path, o.str());
}

void run_train(TrainArgs& a)
{
    a.flags.finish();
    const BodyModel model = load_model(a.model);
    try {
        a.cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw CommandError("config", e.what());
    }

    std::unique_ptr<TrainingSource> source;
    GenerationConfig proxy_gen = a.flags.gen;
    std::string data_digest = "fresh";
    if (!a.data.empty()) {
        DatasetHeader h;
        auto samples = read_dataset(a.data, &h);
        if (h.pose_dim != model.pose_dim() || h.num_betas != model.num_betas() ||
            h.num_keypoints != model.num_keypoints()) {
            throw CommandError("mismatch", "dataset '" + a.data + "' does not match model '" + a.model + "'");
        }
        proxy_gen = h.gen;
        data_digest = file_digest(a.data);
        source = std::make_unique<FixedSamples>(std::move(samples), a.cfg.seed);
    } else {
        source = std::make_unique<FreshSynthetic>(model, make_pose_source(model, a.flags), a.flags.gen, a.flags.aug,
                                                  a.cfg.seed, a.cfg.samples_per_epoch);
    }

    EncoderConfig enc = default_encoder(model, proxy_gen);
    enc.channels = a.channels;
    enc.hidden = a.hidden;
    try {
        enc.validate();
    } catch (const std::invalid_argument& e) {
        throw CommandError("config", e.what());
    }

    TrainState state;
    if (!a.resume.empty()) {
        state = load_train_state(a.resume);
        const Checkpoint ck = load_checkpoint(a.resume);
        TrainConfig saved = ck.meta.at("train").get<TrainConfig>();
        saved.epochs = a.cfg.epochs;
        if (nlohmann::json(saved) != nlohmann::json(a.cfg)) {
            throw CommandError("mismatch", "checkpoint '" + a.resume + "' was written with a different training config");
        }
        if (nlohmann::json(state.net.config()) != nlohmann::json(enc)) {
            throw CommandError("mismatch", "checkpoint '" + a.resume + "' has a different network architecture");
        }
    } else {
        state = initial_state(enc, a.cfg);
    }

    const std::string ckpt = a.checkpoint.empty() ? a.out + ".ckpt" : a.checkpoint;
    const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
    const auto t0 = std::chrono::steady_clock::now();
    TrainHooks hooks;
    hooks.on_epoch = [&](const TrainState& s) {
        save_checkpoint(s, a.cfg, ckpt);
        const auto& e = s.log.back();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "epoch " << e.epoch + 1 << "/" << a.cfg.epochs << "  loss " << report::fmt(e.loss)
                  << "  nll " << report::fmt(e.nll) << "  glob " << report::fmt(e.glob) << "  2d "
                  << report::fmt(e.reproj) << "  (" << report::fmt(secs, 1) << " s)\n";
    };
    try {
        state = train(std::move(state), *source, model, a.cfg, hooks);
    } catch (const TrainingDiverged& e) {
        throw CommandError("diverged", e.what());
    }
    save_weights(state.net, a.out, nullptr,
                 {{"train", a.cfg}, {"epochs_completed", state.next_epoch}, {"data", data_digest},
                  {"model_digest", file_digest(a.model)}});
    write_loss_log(log_path, state.log);
    std::cout << "weights -> " << a.out << "\nloss log -> " << log_path << "\n";
}

struct PredictArgs {
    std::string weights;
    std::string data;
    std::string out;
};

void run_predict(const PredictArgs& a)
{
    const PredictorNet net = load_weights(a.weights);
    DatasetReader reader(a.data);
    const auto& h = reader.header();
    const auto& enc = net.config();
    if (h.gen.width != enc.input_size || h.gen.height != enc.input_size || h.num_keypoints + 1 != enc.input_channels ||
        h.pose_dim != enc.output.pose_dim || h.num_betas != enc.output.shape_dim) {
        throw CommandError("mismatch", "weights '" + a.weights + "' expect " + std::to_string(enc.input_size) + "x" +
                                           std::to_string(enc.input_size) + " proxies with " +
                                           std::to_string(enc.input_channels) + " channels; dataset '" + a.data +
                                           "' has " + std::to_string(h.gen.width) + "x" +
                                           std::to_string(h.gen.height) + " with " +
                                           std::to_string(h.num_keypoints + 1));
    }
    PredictionFile p;
    p.layout = enc.output;
    p.meta = {{"weights_digest", file_digest(a.weights)}, {"data_digest", file_digest(a.data)}};
    for (int i = 0; i < reader.size(); ++i) {
        const SyntheticSample s = reader.read(i);
        p.index.push_back(s.index);
        p.outputs.push_back(net.forward(make_proxy(s)));
    }
    save_predictions(p, a.out);
    std::cout << "predictions: " << p.outputs.size() << " -> " << a.out << "\n";
}

struct EvaluateArgs {
    std::string predictions;
    std::string data;
    std::string model;
    std::string out_dir;
    int group_size = 4;
    std::string combine = "pc";
    std::vector<int> sweep{1, 2, 4};
};

std::string summary_row(const MetricSummary& s)
{
    return std::to_string(s.count) + "," + report::fmt(s.pve_t_sc) + "," + report::fmt(s.mpjpe) + "," +
           report::fmt(s.mpjpe_sc) + "," + report::fmt(s.mpjpe_pa);
}

void run_evaluate(const EvaluateArgs& a, std::uint64_t seed)
{
    const BodyModel model = load_model(a.model);
    DatasetHeader h;
    const auto samples = read_dataset(a.data, &h);
    const PredictionFile pf = load_predictions(a.predictions);
    if (pf.index.size() != samples.size()) {
        throw CommandError("mismatch", "'" + a.predictions + "' holds " + std::to_string(pf.index.size()) +
                                           " predictions for " + std::to_string(samples.size()) + " samples");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (pf.index[i] != samples[i].index) {
            throw CommandError("mismatch", "prediction " + std::to_string(i) + " is for sample " +
                                               std::to_string(pf.index[i]) + ", dataset has " +
                                               std::to_string(samples[i].index));
        }
    }
    const auto sets = pf.sets();
    const Combine combine = parse_combine(a.combine);
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);

    const MetricsReport rep = evaluate(samples, sets, model, a.group_size, combine, seed);

    // Height-normalized girth errors of the combined shape estimates.
    std::map<std::string, double> girth_err;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double height = neutral_height(samples[i].beta, model);
        const auto gt = measure_and_normalize(samples[i].beta, model, height);
        const auto pr = measure_and_normalize(rep.samples[i].shape, model, height);
        for (std::size_t k = 0; k < gt.names.size(); ++k) girth_err[gt.names[k]] += std::abs(pr.values_cm[k] - gt.values_cm[k]);
    }
    nlohmann::json j = rep;
    for (auto& [k, v] : girth_err) j["girth_mae_cm"][k] = v / std::max<std::size_t>(1, samples.size());
    j["num_samples"] = samples.size();
    j["seed"] = seed;
    report::write_text((dir / "report.json").string(), j.dump(2) + "\n");

    std::ostringstream per;
    per << "index,subject,corrupted,view,group,group_size,mpjpe_mm,mpjpe_sc_mm,mpjpe_pa_mm,pve_t_sc_mm\n";
    for (const auto& e : rep.samples) {
        per << e.index << "," << e.subject << "," << int(e.corrupted) << "," << e.view << "," << e.group << ","
            << e.group_size << "," << report::fmt(e.mpjpe) << "," << report::fmt(e.mpjpe_sc) << ","
            << report::fmt(e.mpjpe_pa) << "," << report::fmt(e.pve_t_sc) << "\n";
    }
    report::write_text((dir / "samples.csv").string(), per.str());

    // Group-size sweep.
    std::ostringstream sw;
    sw << "group_size,combine,subset,count,pve_t_sc_mm,mpjpe_mm,mpjpe_sc_mm,mpjpe_pa_mm\n";
    report::LinePlot sweep_plot{"Mean PVE-T-SC vs. maximum group size", "maximum group size", "PVE-T-SC (mm)", {},
                                true};
    std::map<std::string, report::Series> curves;
    for (int n : a.sweep) {
        if (n < 1) throw CommandError("config", "sweep group sizes must be at least 1");
        for (Combine c : {Combine::PC, Combine::Mean, Combine::Single}) {
            const MetricsReport r = evaluate(samples, sets, model, n, c, seed);
            sw << n << "," << to_string(c) << ",all," << summary_row(r.all) << "\n"
               << n << "," << to_string(c) << ",clean," << summary_row(r.clean) << "\n"
               << n << "," << to_string(c) << ",corrupted," << summary_row(r.corrupted) << "\n";
            auto& s = curves[to_string(c)];
            s.label = to_string(c);
            s.points.emplace_back(n, r.all.pve_t_sc);
        }
    }
    report::write_text((dir / "sweep.csv").string(), sw.str());
    for (const char* k : {"pc", "mean", "single"}) sweep_plot.series.push_back(curves[k]);
    report::write_text((dir / "group_sweep.svg").string(), report::to_svg(sweep_plot));

    // Sorted per-sample error curves.
    report::LinePlot sorted{"Sorted per-sample PVE-T-SC (max group size " + std::to_string(a.group_size) + ")",
                            "fraction of samples", "PVE-T-SC (mm)", {}, false};
    for (Combine c : {Combine::PC, Combine::Mean, Combine::Single}) {
        const MetricsReport r = c == combine ? rep : evaluate(samples, sets, model, a.group_size, c, seed);
        std::vector<double> v;
        for (const auto& e : r.samples) v.push_back(e.pve_t_sc);
        std::sort(v.begin(), v.end());
        report::Series s{to_string(c), {}};
        for (std::size_t i = 0; i < v.size(); ++i) s.points.emplace_back((i + 1.0) / v.size(), v[i]);
        sorted.series.push_back(std::move(s));
    }
    report::write_text((dir / "sorted_pve_t_sc.svg").string(), report::to_svg(sorted));

    std::cout << "combine " << a.combine << ", max group size " << rep.max_group_size << "\n"
              << "  PVE-T-SC (mm): all " << report::fmt(rep.all.pve_t_sc, 2) << ", clean "
              << report::fmt(rep.clean.pve_t_sc, 2) << ", corrupted " << report::fmt(rep.corrupted.pve_t_sc, 2)
              << "\n  MPJPE-SC (mm): " << report::fmt(rep.all.mpjpe_sc, 2)
              << ", MPJPE-PA (mm): " << report::fmt(rep.all.mpjpe_pa, 2) << "\nreports -> " << a.out_dir << "\n";
}

struct UncertaintyArgs {
    std::string model;
    std::string predictions;
    std::string out;
    int index = 0;
    int samples = 100;
    double variance_scale = 1.0;
};

void run_uncertainty(const UncertaintyArgs& a, std::uint64_t seed)
{
    const BodyModel model = load_model(a.model);
    const PredictionFile pf = load_predictions(a.predictions);
    if (a.index < 0 || a.index >= static_cast<int>(pf.outputs.size())) {
        throw CommandError("config", "--index " + std::to_string(a.index) + " outside [0, " +
                                         std::to_string(pf.outputs.size()) + ")");
    }
    if (!(a.variance_scale >= 0.0)) throw CommandError("config", "--variance-scale must be non-negative");
    PredictionSet p = from_vector(pf.outputs[a.index], pf.layout);
    p.pose.var *= a.variance_scale;
    p.shape.var *= a.variance_scale;
    Rng rng = make_rng(seed, "uncertainty", static_cast<std::uint64_t>(a.index));
    const Eigen::VectorXd u = per_vertex_uncertainty(p, model, a.samples, rng);
    const VertexMesh mesh = forward(model, p.pose.mean, p.shape.mean, p.gamma);
    report::write_text(a.out, report::to_ply(mesh, u, "uncertainty_cm"));
    std::cout << "per-vertex uncertainty (cm): mean " << report::fmt(u.mean()) << ", max " << report::fmt(u.maxCoeff())
              << " over " << a.samples << " samples -> " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"pbody: probabilistic body shape and pose estimation from groups of synthetic proxy inputs"};
    app.set_version_flag("--version", PBODY_VERSION);
    app.set_config("--config", "", "TOML config file mirroring the flags (or set PBODY_CONFIG)")
        ->envname("PBODY_CONFIG");
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    std::string manifest;
    app.add_option("--seed", seed, "Seed for every random stream")->capture_default_str();
    app.add_option("--manifest", manifest, "Run manifest path (default: <output>.manifest.toml)");

    GenModelArgs gm;
    auto* c_model = app.add_subcommand("gen-model", "Generate a procedural body model");
    c_model->configurable();
    c_model->add_option("--out", gm.out, "Output model file")->required();
    c_model->add_option("--vertices", gm.vertices, paper_desk("Vertex count", "6890 (SMPL)", "600"))
        ->check(CLI::Range(50, 200000))
        ->capture_default_str();
    c_model->add_option("--joints", gm.joints, paper_desk("Joint count", "24", "24"))
        ->check(CLI::Range(8, 24))
        ->capture_default_str();

    GenDataArgs gd;
    auto* c_data = app.add_subcommand("gen-data", "Generate a synthetic benchmark / training dataset");
    c_data->configurable();
    c_data->add_option("--model", gd.model, "Body model file")->required()->check(CLI::ExistingFile);
    c_data->add_option("--out", gd.out, "Output dataset file")->required();
    c_data->add_option("--num-subjects", gd.num_subjects, paper_desk("Subjects", "not stated", "200"))
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_data->add_option("--poses-per-subject", gd.poses_per_subject,
                       paper_desk("Poses per subject (views cycle front/back/left/right)", "4", "4"))
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_data->add_option("--corrupt", gd.corrupt, "Corruption: off, on or both")
        ->check(CLI::IsMember({"off", "on", "both"}))
        ->capture_default_str();
    add_generation_flags(c_data, gd.flags);

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the distribution predictor");
    c_train->configurable();
    c_train->add_option("--model", tr.model, "Body model file")->required()->check(CLI::ExistingFile);
    c_train->add_option("--out", tr.out, "Output weight file")->required();
    c_train->add_option("--data", tr.data, "Fixed training dataset (default: fresh synthetic data every epoch)");
    c_train->add_option("--checkpoint", tr.checkpoint, "Checkpoint path (default: <out>.ckpt)");
    c_train->add_option("--resume", tr.resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
    c_train->add_option("--log", tr.log, "Loss log CSV (default: <out>.log.csv)");
    c_train->option_defaults()->always_capture_default();
    c_train->add_option("--epochs", tr.cfg.epochs, paper_desk("Epochs", "100", "50"))->check(CLI::NonNegativeNumber);
    c_train->add_option("--batch-size", tr.cfg.batch_size, paper_desk("Batch size", "120", "32"))
        ->check(CLI::PositiveNumber);
    c_train->add_option("--lr", tr.cfg.lr, paper_desk("Adam learning rate", "1e-4", "1e-3"))
        ->check(CLI::PositiveNumber);
    c_train->add_option("--samples-per-epoch", tr.cfg.samples_per_epoch,
                        paper_desk("Fresh samples per epoch", "dataset size", "2048"))
        ->check(CLI::PositiveNumber);
    c_train->add_option("--lambda-glob", tr.cfg.lambda_glob, paper_desk("Global rotation loss weight", "not stated", "1"));
    c_train->add_option("--lambda-2d", tr.cfg.lambda_2d, paper_desk("Reprojection loss weight", "not stated", "0.01"));
    c_train->add_option("--reproj-samples", tr.cfg.reproj_samples,
                        paper_desk("Reprojection samples B", "not stated", "8"))
        ->check(CLI::PositiveNumber);
    c_train->add_option("--channels", tr.channels,
                        paper_desk("Encoder channel widths", "ResNet-18", "8 16 32"));
    c_train->add_option("--hidden", tr.hidden, paper_desk("Hidden units", "512", "512"))->check(CLI::PositiveNumber);
    add_generation_flags(c_train, tr.flags);

    PredictArgs pr;
    auto* c_pred = app.add_subcommand("predict", "Predict distributions for every dataset record");
    c_pred->configurable();
    c_pred->add_option("--weights", pr.weights, "Weight file")->required()->check(CLI::ExistingFile);
    c_pred->add_option("--data", pr.data, "Dataset file")->required()->check(CLI::ExistingFile);
    c_pred->add_option("--out", pr.out, "Output prediction file")->required();

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "Combine per-group shapes and report metrics and plots");
    c_eval->configurable();
    c_eval->add_option("--predictions", ev.predictions, "Prediction file")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--data", ev.data, "Dataset file")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--model", ev.model, "Body model file")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--out-dir", ev.out_dir, "Report directory")->required();
    c_eval->add_option("--group-size", ev.group_size, paper_desk("Maximum group size N", "1-5", "4"))
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_eval->add_option("--combine", ev.combine, "Shape combination: pc, mean or single")
        ->check(CLI::IsMember({"pc", "mean", "single"}))
        ->capture_default_str();
    c_eval->add_option("--sweep", ev.sweep, paper_desk("Group sizes for the sweep table", "1 2 3 4 5", "1 2 4"))
        ->capture_default_str();

    UncertaintyArgs un;
    auto* c_unc = app.add_subcommand("uncertainty", "Per-vertex Monte-Carlo uncertainty of one prediction");
    c_unc->configurable();
    c_unc->add_option("--model", un.model, "Body model file")->required()->check(CLI::ExistingFile);
    c_unc->add_option("--predictions", un.predictions, "Prediction file")->required()->check(CLI::ExistingFile);
    c_unc->add_option("--out", un.out, "Output PLY mesh")->required();
    c_unc->add_option("--index", un.index, "Prediction record")->capture_default_str();
    c_unc->add_option("--samples", un.samples, paper_desk("Monte-Carlo samples", "100", "100"))
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_unc->add_option("--variance-scale", un.variance_scale,
                      paper_desk("Multiplier on predicted variances", "1", "1"))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "pbody: error: kind=usage message=" << toml_string(one_line(e.what())) << "\n";
        return 2;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        if (sub == c_model) {
            ensure_parent(gm.out);
            write_manifest(manifest_path(manifest, gm.out), *sub, seed, {}, {gm.out});
            run_gen_model(gm, seed);
        } else if (sub == c_data) {
            ensure_parent(gd.out);
            write_manifest(manifest_path(manifest, gd.out), *sub, seed, {gd.model}, {gd.out});
            run_gen_data(gd, seed);
        } else if (sub == c_train) {
            tr.cfg.seed = seed;
            ensure_parent(tr.out);
            std::vector<std::string> in{tr.model};
            if (!tr.data.empty()) in.push_back(tr.data);
            if (!tr.resume.empty()) in.push_back(tr.resume);
            write_manifest(manifest_path(manifest, tr.out), *sub, seed, in, {tr.out});
            run_train(tr);
        } else if (sub == c_pred) {
            ensure_parent(pr.out);
            write_manifest(manifest_path(manifest, pr.out), *sub, seed, {pr.weights, pr.data}, {pr.out});
            run_predict(pr);
        } else if (sub == c_eval) {
            fs::create_directories(ev.out_dir);
            write_manifest(manifest.empty() ? (fs::path(ev.out_dir) / "manifest.toml").string() : manifest, *sub,
                           seed, {ev.predictions, ev.data, ev.model}, {ev.out_dir});
            run_evaluate(ev, seed);
        } else if (sub == c_unc) {
            ensure_parent(un.out);
            write_manifest(manifest_path(manifest, un.out), *sub, seed, {un.model, un.predictions}, {un.out});
            run_uncertainty(un, seed);
        }
    } catch (const CommandError& e) {
        std::cerr << "pbody: error: subcommand=" << name << " kind=" << e.kind()
                  << " message=" << toml_string(one_line(e.what())) << "\n";
        return 1;
    } catch (const io::FormatError& e) {
        std::cerr << "pbody: error: subcommand=" << name << " kind=format message=" << toml_string(one_line(e.what()))
                  << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "pbody: error: subcommand=" << name << " kind=invalid message=" << toml_string(one_line(e.what()))
                  << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "pbody: error: subcommand=" << name << " kind=runtime message=" << toml_string(one_line(e.what()))
                  << "\n";
        return 1;
    }
    return 0;
}
