#include "pbody/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pbody {

void TrainConfig::validate() const
{
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1 || epochs < 0 || samples_per_epoch < 1) {
        throw std::invalid_argument("batch size and samples per epoch must be positive, epochs non-negative");
    }
    if (!(lambda_glob >= 0.0) || !(lambda_2d >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    if (reproj_samples < 1) throw std::invalid_argument("reprojection sample count must be at least 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"lr", c.lr},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"samples_per_epoch", c.samples_per_epoch},
         {"lambda_glob", c.lambda_glob},
         {"lambda_2d", c.lambda_2d},
         {"reproj_samples", c.reproj_samples},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    j.at("lr").get_to(c.lr);
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("samples_per_epoch").get_to(c.samples_per_epoch);
    j.at("lambda_glob").get_to(c.lambda_glob);
    j.at("lambda_2d").get_to(c.lambda_2d);
    j.at("reproj_samples").get_to(c.reproj_samples);
    j.at("seed").get_to(c.seed);
}

void to_json(nlohmann::json& j, const EpochLog& e)
{
    j = {{"epoch", e.epoch}, {"loss", e.loss},     {"nll", e.nll},
         {"glob", e.glob},   {"reproj", e.reproj}, {"param_norm", e.param_norm}};
}

void from_json(const nlohmann::json& j, EpochLog& e)
{
    j.at("epoch").get_to(e.epoch);
    j.at("loss").get_to(e.loss);
    j.at("nll").get_to(e.nll);
    j.at("glob").get_to(e.glob);
    j.at("reproj").get_to(e.reproj);
    j.at("param_norm").get_to(e.param_norm);
}

FreshSynthetic::FreshSynthetic(const BodyModel& model, PoseSource poses, GenerationConfig gen, AugmentationConfig aug,
                               std::uint64_t seed, int samples_per_epoch)
    : model_(model), poses_(std::move(poses)), gen_(gen), aug_(aug), seed_(seed), samples_(samples_per_epoch)
{
    gen_.validate();
    aug_.validate();
    if (samples_ < 1) throw std::invalid_argument("samples per epoch must be positive");
}

SyntheticSample FreshSynthetic::get(int epoch, int position) const
{
    Rng rng = make_rng(seed_, "train", static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(position));
    SyntheticSample s = generate_sample(model_, poses_, gen_, aug_, rng, true);
    s.index = position;
    return s;
}

FixedSamples::FixedSamples(std::vector<SyntheticSample> samples, std::uint64_t seed)
    : samples_(std::move(samples)), seed_(seed)
{
    if (samples_.empty()) throw std::invalid_argument("training dataset is empty");
}

SyntheticSample FixedSamples::get(int epoch, int position) const
{
    if (epoch != cached_epoch_) {
        order_.resize(samples_.size());
        std::iota(order_.begin(), order_.end(), 0);
        Rng rng = make_rng(seed_, "shuffle", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order_.size(); i > 1; --i) {
            std::swap(order_[i - 1], order_[uniform_int(rng, 0, static_cast<int>(i) - 1)]);
        }
        cached_epoch_ = epoch;
    }
    return samples_.at(order_.at(position));
}

LossTargets make_targets(const SyntheticSample& s)
{
    LossTargets t;
    t.theta = s.theta;
    t.beta = s.beta;
    t.gamma = s.gamma;
    t.target_joints = normalize_pixels(s.target_joints, s.camera.width, s.camera.height);
    t.visibility = s.visibility;
    return t;
}

EncoderConfig default_encoder(const BodyModel& model, const GenerationConfig& gen)
{
    if (gen.width != gen.height) throw std::invalid_argument("the encoder expects square proxies");
    EncoderConfig enc;
    enc.input_size = gen.width;
    enc.input_channels = 1 + model.num_keypoints();
    enc.pool = gen.width % 64 == 0 ? gen.width / 64 : 1;
    enc.output.pose_dim = model.pose_dim();
    enc.output.shape_dim = model.num_betas();
    enc.validate();
    return enc;
}

TrainState initial_state(const EncoderConfig& enc, const TrainConfig& cfg)
{
    cfg.validate();
    TrainState st;
    st.net = PredictorNet(enc, cfg.seed);
    st.adam.lr = cfg.lr;
    return st;
}

TrainState train(TrainState state, const TrainingSource& data, const BodyModel& model, const TrainConfig& cfg,
                 const TrainHooks& hooks)
{
    cfg.validate();
    const OutputLayout& lay = state.net.layout();
    if (lay.pose_dim != model.pose_dim() || lay.shape_dim != model.num_betas()) {
        throw std::invalid_argument("network output layout does not match the body model");
    }
    state.adam.lr = cfg.lr;
    const LossWeights weights{cfg.lambda_glob, cfg.lambda_2d};
    const int n = data.size();
    if (n < 1) throw std::invalid_argument("training data is empty");

    Eigen::VectorXd grad(state.net.num_params());
    PredictorNet::Cache cache;
    for (int epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch;
        for (int start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
            const int end = std::min(n, start + cfg.batch_size);
            grad.setZero();
            for (int pos = start; pos < end; ++pos) {
                const SyntheticSample s = data.get(epoch, pos);
                const Eigen::VectorXd y = state.net.forward(pool_input(make_proxy(s), state.net.config()), &cache);
                Rng noise_rng = make_rng(cfg.seed, "reproj", static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(pos));
                const ReprojNoise eps = draw_reproj_noise(noise_rng, cfg.reproj_samples, lay);
                LossGradient lg;
                if (y.allFinite()) lg = loss_with_gradient(model, y, lay, make_targets(s), eps, weights);
                else lg.terms = {NAN, NAN, NAN, NAN};
                if (!std::isfinite(lg.terms.total) || !lg.dy.allFinite()) {
                    std::ostringstream msg;
                    msg << "non-finite loss at epoch " << epoch << ", batch " << batch << ", example " << pos
                        << " (nll " << lg.terms.nll << ", glob " << lg.terms.glob << ", reproj " << lg.terms.reproj
                        << "); parameter norm " << state.net.params().norm();
                    throw TrainingDiverged(msg.str());
                }
                state.net.backward(cache, lg.dy, grad);
                log.loss += lg.terms.total;
                log.nll += lg.terms.nll;
                log.glob += lg.terms.glob;
                log.reproj += lg.terms.reproj;
            }
            grad /= static_cast<double>(end - start);
            if (!grad.allFinite()) {
                std::ostringstream msg;
                msg << "non-finite gradient at epoch " << epoch << ", batch " << batch << "; parameter norm "
                    << state.net.params().norm();
                throw TrainingDiverged(msg.str());
            }
            state.adam.step(state.net.params(), grad);
        }
        log.loss /= n;
        log.nll /= n;
        log.glob /= n;
        log.reproj /= n;
        log.param_norm = state.net.params().norm();
        state.log.push_back(log);
        state.next_epoch = epoch + 1;
        if (hooks.on_epoch) hooks.on_epoch(state);
    }
    return state;
}

void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path)
{
    nlohmann::json meta = {{"next_epoch", state.next_epoch}, {"train", cfg}, {"log", state.log}};
    save_weights(state.net, path, &state.adam, meta);
}

TrainState load_train_state(const std::string& path)
{
    Checkpoint ck = load_checkpoint(path);
    if (!ck.has_optimizer) throw io::FormatError("'" + path + "' holds weights without optimizer state");
    TrainState st;
    st.net = std::move(ck.net);
    st.adam = std::move(ck.adam);
    try {
        st.next_epoch = ck.meta.at("next_epoch").get<int>();
        st.log = ck.meta.at("log").get<std::vector<EpochLog>>();
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError("'" + path + "': malformed checkpoint meta: " + e.what());
    }
    return st;
}

}  // namespace pbody
