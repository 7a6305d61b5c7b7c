#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <doctest.h>

#include "pbody/losses.hpp"
#include "pbody/network.hpp"
#include "pbody/train.hpp"

using namespace pbody;
namespace fs = std::filesystem;

namespace {

// Tiny setup: 120-vertex, 16-joint model and 32x32 proxies.
struct Tiny {
    BodyModel model = generate_toy_model(7, 120, 16);
    GenerationConfig gen = [] {
        GenerationConfig g;
        g.width = g.height = 32;
        g.focal = 300.0 * 32 / 256;
        return g;
    }();
    EncoderConfig enc = [this] {
        EncoderConfig e;
        e.input_size = 32;
        e.input_channels = 1 + model.num_keypoints();
        e.pool = 2;
        e.channels = {4, 8, 8};
        e.hidden = 16;
        e.output.pose_dim = model.pose_dim();
        e.output.shape_dim = model.num_betas();
        return e;
    }();

    std::vector<SyntheticSample> samples(int n, std::uint64_t seed) const
    {
        const PoseSource poses = PoseSource::procedural(model);
        std::vector<SyntheticSample> out;
        for (int i = 0; i < n; ++i) {
            Rng rng = make_rng(seed, "tiny", i);
            out.push_back(generate_sample(model, poses, gen, AugmentationConfig{}, rng, true));
            out.back().index = i;
        }
        return out;
    }
};

const Tiny& tiny()
{
    static const Tiny t;
    return t;
}

Eigen::VectorXd random_output(std::mt19937_64& rng, const OutputLayout& lay)
{
    std::normal_distribution<double> n(0.0, 0.3);
    std::uniform_real_distribution<double> v(0.01, 0.2);
    Eigen::VectorXd y(lay.size());
    for (int i = 0; i < lay.size(); ++i) y[i] = n(rng);
    for (int i = 0; i < lay.pose_dim; ++i) y[lay.var_theta() + i] = v(rng);
    for (int i = 0; i < lay.shape_dim; ++i) y[lay.var_beta() + i] = v(rng);
    y[lay.cam()] = 0.9 + 0.1 * n(rng);
    return y;
}

std::vector<double> as_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("default predictor output head has 164 values")
{
    const BodyModel m = generate_toy_model(0);
    EncoderConfig enc = default_encoder(m, GenerationConfig{});
    CHECK(enc.output.size() == 164);
    CHECK(enc.output.pose_dim == 69);
    CHECK(enc.output.shape_dim == 10);
    CHECK(enc.grid_size() == 64);
    CHECK(enc.feature_dim() >= 32);
    const PredictorNet net(enc, 1);
    ProxyRepresentation zero;
    zero.width = zero.height = 256;
    zero.silhouette.assign(256 * 256, 0);
    zero.heatmaps.assign(17 * 256 * 256, 0.0f);
    const Eigen::VectorXd y = net.forward(zero);
    CHECK(y.size() == 164);
    CHECK(y.allFinite());
    const PredictionSet p = net.predict(zero);
    CHECK(p.pose.var.minCoeff() > 0.0);
    CHECK(p.shape.var.minCoeff() > 0.0);
    CHECK(p.cam.s > 0.0);
    CHECK(net.forward(zero) == y);
}

TEST_CASE("encoder config validation and input checks")
{
    EncoderConfig e = tiny().enc;
    e.channels = {2, 2, 2};  // 2 * 2 * 2 = 8 features
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);
    e = tiny().enc;
    e.pool = 3;
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);
    const PredictorNet net(tiny().enc, 1);
    ProxyRepresentation wrong;
    wrong.width = wrong.height = 64;
    wrong.silhouette.assign(64 * 64, 0);
    wrong.heatmaps.assign(17 * 64 * 64, 0.0f);
    CHECK_THROWS_AS(net.forward(wrong), std::invalid_argument);
}

TEST_CASE("network backward matches finite differences")
{
    const Tiny& t = tiny();
    PredictorNet net(t.enc, 3);
    const auto s = t.samples(1, 4).front();
    const NetInput x = pool_input(make_proxy(s), t.enc);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd w(t.enc.output.size());
    for (int i = 0; i < w.size(); ++i) w[i] = n(rng);
    PredictorNet::Cache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
    net.backward(cache, w, grad);
    std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        const Eigen::Index i = pick(rng);
        const double p0 = net.params()[i];
        net.params()[i] = p0 + 1e-5;
        const double up = net.forward(x).dot(w);
        net.params()[i] = p0 - 1e-5;
        const double dn = net.forward(x).dot(w);
        net.params()[i] = p0;
        const double num = (up - dn) / 2e-5;
        if (std::abs(grad[i]) < 1e-7 && std::abs(num) < 1e-7) continue;
        worst = std::max(worst, ad::relative_error(grad[i], num));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("global rotation loss")
{
    const Eigen::Vector3d g(0.3, -0.4, 1.2);
    CHECK(loss_glob<double>({g.x(), g.y(), g.z()}, g) < 1e-28);
    const Eigen::Vector3d axis = Eigen::Vector3d(1, 2, -1).normalized();
    const Eigen::Vector3d a = 0.4 * axis;
    const Eigen::Vector3d b = (0.4 - std::numbers::pi) * axis;
    CHECK(loss_glob<double>({b.x(), b.y(), b.z()}, a) == doctest::Approx(8.0).epsilon(1e-12));
    // Trace identity oracle on random pairs.
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        const Eigen::Vector3d p(n(rng), n(rng), n(rng)), q(n(rng), n(rng), n(rng));
        const double ref = 6.0 - 2.0 * (rodrigues(p).transpose() * rodrigues(q)).trace();
        CHECK(loss_glob<double>({p.x(), p.y(), p.z()}, q) == doctest::Approx(ref).epsilon(1e-12));
        const auto r = ad::grad_check(
            [&](std::span<const ad::Var> v) { return loss_glob<ad::Var>({v[0], v[1], v[2]}, q); }, as_std(p), 1e-5);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("reprojection loss: masking, degenerate distribution, gradient")
{
    const Tiny& t = tiny();
    const OutputLayout lay = t.enc.output;
    const auto s = t.samples(1, 7).front();
    const LossTargets tgt = make_targets(s);
    Rng nrng = make_rng(1, "eps");
    const ReprojNoise eps = draw_reproj_noise(nrng, 8, lay);
    std::mt19937_64 rng(8);
    const Eigen::VectorXd y = random_output(rng, lay);
    const std::span<const double> ys(y.data(), y.size());

    const std::vector<std::uint8_t> none(t.model.num_keypoints(), 0);
    CHECK(loss_reproj<double>(t.model, ys, lay, tgt.target_joints, none, eps) == 0.0);

    // Exact labels, tiny variances and the camera that reproduces the targets.
    Eigen::VectorXd exact = y;
    exact.segment(lay.mu_theta(), lay.pose_dim) = s.theta;
    exact.segment(lay.var_theta(), lay.pose_dim).setConstant(1e-20);
    exact.segment(lay.mu_beta(), lay.shape_dim) = s.beta;
    exact.segment(lay.var_beta(), lay.shape_dim).setConstant(1e-20);
    exact.segment(lay.gamma(), 3) = s.gamma;
    exact.segment(lay.cam(), 3) << 1.0, 0.0, 0.0;
    const Points3 kp = keypoints(t.model, s.theta, s.beta, s.gamma);
    Points2 weak = project_weak(kp, {1.0, 0.0, 0.0});
    const std::vector<std::uint8_t> all(t.model.num_keypoints(), 1);
    CHECK(loss_reproj<double>(t.model, std::span<const double>(exact.data(), exact.size()), lay, weak, all, eps) <
          1e-15);

    const std::vector<double> yv = as_std(y);
    const auto r = ad::grad_check(
        [&](std::span<const ad::Var> v) {
            return loss_reproj<ad::Var>(t.model, v, lay, tgt.target_joints, tgt.visibility, eps);
        },
        yv, 1e-5);
    double worst = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) {
        if (std::abs(r.analytic[i]) < 1e-8 && std::abs(r.numeric[i]) < 1e-8) continue;
        worst = std::max(worst, r.rel_error[i]);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("reprojection loss is an unbiased estimator in the sample count")
{
    const Tiny& t = tiny();
    const OutputLayout lay = t.enc.output;
    const auto s = t.samples(1, 9).front();
    const LossTargets tgt = make_targets(s);
    std::mt19937_64 rng(10);
    const Eigen::VectorXd y = random_output(rng, lay);
    const std::span<const double> ys(y.data(), y.size());
    auto estimate = [&](int B, int draws, std::uint64_t seed) {
        Rng r = make_rng(seed, "unbiased");
        double s1 = 0, s2 = 0;
        for (int i = 0; i < draws; ++i) {
            const double v = loss_reproj<double>(t.model, ys, lay, tgt.target_joints, tgt.visibility,
                                                 draw_reproj_noise(r, B, lay)) / B;
            s1 += v;
            s2 += v * v;
        }
        const double mean = s1 / draws;
        return std::pair{mean, (s2 / draws - mean * mean) / draws};
    };
    const auto [m1, v1] = estimate(1, 10000, 1);
    const auto [m8, v8] = estimate(8, 10000, 2);
    CHECK(std::abs(m1 - m8) < 3.0 * std::sqrt(v1 + v8));
}

TEST_CASE("total loss: weights, additivity, gradient")
{
    const Tiny& t = tiny();
    const OutputLayout lay = t.enc.output;
    const auto s = t.samples(1, 11).front();
    const LossTargets tgt = make_targets(s);
    Rng nrng = make_rng(2, "eps");
    const ReprojNoise eps = draw_reproj_noise(nrng, 8, lay);
    std::mt19937_64 rng(12);
    const Eigen::VectorXd y = random_output(rng, lay);
    const std::span<const double> ys(y.data(), y.size());

    const auto zero = loss_total<double>(t.model, ys, lay, tgt, eps, {0.0, 0.0});
    const GaussianDiag pose{y.segment(lay.mu_theta(), lay.pose_dim), y.segment(lay.var_theta(), lay.pose_dim)};
    const GaussianDiag shape{y.segment(lay.mu_beta(), lay.shape_dim), y.segment(lay.var_beta(), lay.shape_dim)};
    CHECK(zero.total == doctest::Approx(nll_terms(pose, tgt.theta) + nll_terms(shape, tgt.beta)).epsilon(1e-14));
    const auto full = loss_total<double>(t.model, ys, lay, tgt, eps, {1.0, 0.01});
    CHECK(full.total - zero.total == doctest::Approx(1.0 * full.glob + 0.01 * full.reproj).epsilon(1e-12));

    const std::vector<double> yv = as_std(y);
    const auto r = ad::grad_check(
        [&](std::span<const ad::Var> v) { return loss_total<ad::Var>(t.model, v, lay, tgt, eps, {1.0, 0.01}).total; },
        yv, 1e-5);
    CHECK(r.max_rel_error < 1e-4);
    const LossGradient lg = loss_with_gradient(t.model, y, lay, tgt, eps, {1.0, 0.01});
    CHECK(lg.terms.total == doctest::Approx(full.total).epsilon(1e-14));
    for (int i = 0; i < lay.size(); ++i) CHECK(lg.dy[i] == doctest::Approx(r.analytic[i]).epsilon(1e-12));
}

TEST_CASE("full pipeline gradient: loss through the tiny network")
{
    const Tiny& t = tiny();
    PredictorNet net(t.enc, 13);
    const auto s = t.samples(1, 13).front();
    const NetInput x = pool_input(make_proxy(s), t.enc);
    const LossTargets tgt = make_targets(s);
    Rng nrng = make_rng(3, "eps");
    const ReprojNoise eps = draw_reproj_noise(nrng, 8, t.enc.output);
    const LossWeights w{1.0, 0.01};
    auto loss = [&] { return loss_with_gradient(t.model, net.forward(x), t.enc.output, tgt, eps, w).terms.total; };

    PredictorNet::Cache cache;
    const Eigen::VectorXd y = net.forward(x, &cache);
    const LossGradient lg = loss_with_gradient(t.model, y, t.enc.output, tgt, eps, w);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
    net.backward(cache, lg.dy, grad);

    std::mt19937_64 rng(14);
    std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const Eigen::Index i = pick(rng);
        const double p0 = net.params()[i];
        net.params()[i] = p0 + 1e-5;
        const double up = loss();
        net.params()[i] = p0 - 1e-5;
        const double dn = loss();
        net.params()[i] = p0;
        const double num = (up - dn) / 2e-5;
        if (std::abs(grad[i]) < 1e-7 && std::abs(num) < 1e-7) continue;
        worst = std::max(worst, ad::relative_error(grad[i], num));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("training: smoke, determinism, overfitting")
{
    const Tiny& t = tiny();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 5;
    {
        FixedSamples data(t.samples(10, 15), cfg.seed);
        const TrainState st = train(initial_state(t.enc, cfg), data, t.model, cfg);
        REQUIRE(st.log.size() == 1);
        CHECK(std::isfinite(st.log[0].loss));
        const TrainState again = train(initial_state(t.enc, cfg), data, t.model, cfg);
        CHECK(again.net == st.net);
    }
    {
        cfg.epochs = 500;
        cfg.batch_size = 20;
        cfg.reproj_samples = 2;
        FixedSamples data(t.samples(20, 16), cfg.seed);
        const TrainState st = train(initial_state(t.enc, cfg), data, t.model, cfg);
        REQUIRE(st.log.size() == 500);
        CHECK(st.log.back().nll < st.log.front().nll);
    }
}

TEST_CASE("training resumes to the same result")
{
    const Tiny& t = tiny();
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.seed = 6;
    FixedSamples data(t.samples(8, 17), cfg.seed);
    const TrainState full = train(initial_state(t.enc, cfg), data, t.model, cfg);
    TrainConfig half = cfg;
    half.epochs = 2;
    const std::string path = (fs::temp_directory_path() / "pbody_test_resume.pbn").string();
    save_checkpoint(train(initial_state(t.enc, cfg), data, t.model, half), cfg, path);
    const TrainState resumed = train(load_train_state(path), data, t.model, cfg);
    CHECK(resumed.net == full.net);
    CHECK(resumed.log.size() == 4);
    CHECK(resumed.log[3].loss == full.log[3].loss);
    fs::remove(path);
}

TEST_CASE("non-finite loss aborts with a diagnostic")
{
    const Tiny& t = tiny();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    TrainState st = initial_state(t.enc, cfg);
    st.net.params().setConstant(std::numeric_limits<double>::quiet_NaN());
    FixedSamples data(t.samples(2, 18), 0);
    try {
        train(std::move(st), data, t.model, cfg);
        FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
        const std::string msg = e.what();
        CHECK(msg.find("batch 0") != std::string::npos);
        CHECK(msg.find("parameter norm") != std::string::npos);
    }
}

TEST_CASE("weight files: round trip, mismatch, checksum")
{
    const Tiny& t = tiny();
    const PredictorNet net(t.enc, 19);
    const std::string path = (fs::temp_directory_path() / "pbody_test_w.pbn").string();
    save_weights(net, path);
    CHECK(load_weights(path) == net);

    // Checksum: flip one byte in the parameter payload (end of file).
    const auto size = fs::file_size(path);
    const std::string bad = path + ".bad";
    fs::copy_file(path, bad, fs::copy_options::overwrite_existing);
    {
        std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(size - 16));
        f.put('\x7f');
    }
    CHECK_THROWS_AS(load_weights(bad), io::FormatError);

    // Mismatch: a model file is not a weight file.
    const std::string model_path = path + ".model";
    save_model(t.model, model_path);
    CHECK_THROWS_AS(load_weights(model_path), io::FormatError);
    fs::remove(path);
    fs::remove(bad);
    fs::remove(model_path);
}

TEST_CASE("prediction files round trip")
{
    const Tiny& t = tiny();
    const PredictorNet net(t.enc, 20);
    PredictionFile p;
    p.layout = t.enc.output;
    for (const auto& s : t.samples(3, 21)) {
        p.index.push_back(s.index);
        p.outputs.push_back(net.forward(make_proxy(s)));
    }
    const std::string path = (fs::temp_directory_path() / "pbody_test_p.pbp").string();
    save_predictions(p, path);
    const PredictionFile q = load_predictions(path);
    CHECK(q.index == p.index);
    REQUIRE(q.outputs.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(q.outputs[i] == p.outputs[i]);
    fs::remove(path);
}
