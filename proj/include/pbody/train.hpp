#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbody/body_model.hpp"
#include "pbody/losses.hpp"
#include "pbody/network.hpp"
#include "pbody/synth.hpp"

namespace pbody {

// Desk-scale defaults. The published run used lr 1e-4, batch 120 and 100
// epochs on a GPU.
struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32;
    int epochs = 50;
    int samples_per_epoch = 2048;  // fresh synthetic data only
    double lambda_glob = 1.0;
    double lambda_2d = 0.01;
    int reproj_samples = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Supplies training examples addressed by (epoch, position in epoch).
class TrainingSource {
public:
    virtual ~TrainingSource() = default;
    virtual int size() const = 0;
    virtual SyntheticSample get(int epoch, int position) const = 0;
};

// Fresh corrupted samples from stream (seed, "train", epoch, position).
class FreshSynthetic final : public TrainingSource {
public:
    FreshSynthetic(const BodyModel& model, PoseSource poses, GenerationConfig gen, AugmentationConfig aug,
                   std::uint64_t seed, int samples_per_epoch);
    int size() const override { return samples_; }
    SyntheticSample get(int epoch, int position) const override;

private:
    const BodyModel& model_;
    PoseSource poses_;
    GenerationConfig gen_;
    AugmentationConfig aug_;
    std::uint64_t seed_;
    int samples_;
};

// A fixed sample list, reshuffled every epoch with stream (seed, "shuffle", epoch).
class FixedSamples final : public TrainingSource {
public:
    FixedSamples(std::vector<SyntheticSample> samples, std::uint64_t seed);
    int size() const override { return static_cast<int>(samples_.size()); }
    SyntheticSample get(int epoch, int position) const override;

private:
    std::vector<SyntheticSample> samples_;
    std::uint64_t seed_;
    mutable int cached_epoch_ = -1;
    mutable std::vector<int> order_;
};

// Loss targets of a sample in the weak-perspective frame.
LossTargets make_targets(const SyntheticSample& s);

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double nll = 0.0;
    double glob = 0.0;
    double reproj = 0.0;
    double param_norm = 0.0;
};

void to_json(nlohmann::json& j, const EpochLog& e);
void from_json(const nlohmann::json& j, EpochLog& e);

struct TrainState {
    PredictorNet net;
    Adam adam;
    int next_epoch = 0;
    std::vector<EpochLog> log;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainHooks {
    // Called after every epoch with the updated state.
    std::function<void(const TrainState&)> on_epoch;
};

// Runs epochs state.next_epoch .. cfg.epochs - 1. Every example gets one tape;
// gradients are averaged over the batch and applied with Adam. Throws
// TrainingDiverged on a non-finite loss or gradient.
TrainState train(TrainState state, const TrainingSource& data, const BodyModel& model, const TrainConfig& cfg,
                 const TrainHooks& hooks = {});

// Fresh state: network initialised from stream (cfg.seed, "init").
TrainState initial_state(const EncoderConfig& enc, const TrainConfig& cfg);

// Checkpoints are weight files carrying optimizer state, the config and the log.
void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path);
TrainState load_train_state(const std::string& path);

// Encoder sized for a model's keypoints and the generation proxy size.
EncoderConfig default_encoder(const BodyModel& model, const GenerationConfig& gen);

}  // namespace pbody
