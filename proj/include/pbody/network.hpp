#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pbody/camera.hpp"
#include "pbody/distributions.hpp"

namespace pbody {

// Proxy -> average pool -> stride-2 3x3 convolutions (ELU) -> flatten ->
// hidden fully connected layer (ELU) -> output layer.
struct EncoderConfig {
    int input_size = 256;   // square proxy side, pixels
    int input_channels = 18;  // silhouette + keypoint heatmaps
    int pool = 4;           // average-pool factor
    std::vector<int> channels{8, 16, 32};
    int hidden = 512;
    OutputLayout output;

    int grid_size() const { return input_size / pool; }
    // Spatial side after every convolution stage.
    int stage_size(int stage) const;
    int feature_dim() const;
    // Throws std::invalid_argument on inconsistent sizes or feature_dim < 32.
    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

inline constexpr double kRawClamp = 12.0;

// Pooled network input, channel-major C x (h*w).
using NetInput = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

NetInput pool_input(const ProxyRepresentation& x, const EncoderConfig& cfg);

class PredictorNet {
public:
    PredictorNet() = default;
    // Weights drawn from stream (seed, "init").
    PredictorNet(const EncoderConfig& cfg, std::uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }
    const OutputLayout& layout() const { return cfg_.output; }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }
    std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

    // Intermediate values kept for the backward pass.
    struct Cache {
        std::vector<NetInput> act;      // stage inputs (act[0] = pooled proxy)
        std::vector<NetInput> pre;      // pre-activations per conv stage
        std::vector<Eigen::MatrixXd> cols;
        Eigen::VectorXd feature;
        Eigen::VectorXd hidden_pre;
        Eigen::VectorXd hidden;
        Eigen::VectorXd raw;
        Eigen::VectorXd y;
    };

    // Flat output vector y with variances and camera scale mapped through
    // exp(clamp(raw, -12, 12)).
    Eigen::VectorXd forward(const NetInput& x, Cache* cache = nullptr) const;
    Eigen::VectorXd forward(const ProxyRepresentation& x) const { return forward(pool_input(x, cfg_)); }
    PredictionSet predict(const ProxyRepresentation& x) const;

    // Accumulates dL/dW into grad (size num_params()) given dL/dy.
    void backward(const Cache& cache, const Eigen::VectorXd& dy, Eigen::VectorXd& grad) const;

    bool operator==(const PredictorNet& o) const;

private:
    struct Block {
        Eigen::Index w = 0;  // offset of the row-major weight matrix
        Eigen::Index b = 0;  // offset of the bias
        int rows = 0;
        int cols = 0;
    };
    void build_layout();

    EncoderConfig cfg_;
    std::vector<Block> blocks_;  // convs, hidden, output
    Eigen::VectorXd params_;
};

// Adaptive moment estimation.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    Eigen::VectorXd m;
    Eigen::VectorXd v;

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
};

// Weight files: magic "PBNET", versioned header with the encoder config,
// checksummed parameter array, optional optimizer state and training meta.
inline constexpr int kWeightsVersion = 1;

struct Checkpoint {
    PredictorNet net;
    bool has_optimizer = false;
    Adam adam;
    nlohmann::json meta = nlohmann::json::object();
};

void save_weights(const PredictorNet& net, const std::string& path, const Adam* adam = nullptr,
                  const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);
PredictorNet load_weights(const std::string& path);

// Prediction files: magic "PBPRED", one flat output vector per dataset
// record, in dataset order.
struct PredictionFile {
    OutputLayout layout;
    std::vector<std::int64_t> index;
    std::vector<Eigen::VectorXd> outputs;
    nlohmann::json meta = nlohmann::json::object();

    std::vector<PredictionSet> sets() const;
};

void save_predictions(const PredictionFile& p, const std::string& path);
PredictionFile load_predictions(const std::string& path);

}  // namespace pbody
