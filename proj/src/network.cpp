#include "pbody/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pbody/container.hpp"
#include "pbody/rng.hpp"

namespace pbody {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Rows: (channel, ky, kx); columns: output pixels. Padding 1, stride 2.
void im2col(const NetInput& in, int side, int out_side, Eigen::MatrixXd& cols)
{
    const auto channels = in.rows();
    cols.setZero(channels * 9, static_cast<Eigen::Index>(out_side) * out_side);
    for (Eigen::Index c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const Eigen::Index row = c * 9 + ky * 3 + kx;
                for (int r = 0; r < out_side; ++r) {
                    const int y = 2 * r + ky - 1;
                    if (y < 0 || y >= side) continue;
                    for (int q = 0; q < out_side; ++q) {
                        const int x = 2 * q + kx - 1;
                        if (x < 0 || x >= side) continue;
                        cols(row, r * out_side + q) = in(c, y * side + x);
                    }
                }
            }
        }
    }
}

void col2im(const Eigen::MatrixXd& dcols, int side, int out_side, NetInput& din)
{
    const Eigen::Index channels = dcols.rows() / 9;
    din.setZero(channels, static_cast<Eigen::Index>(side) * side);
    for (Eigen::Index c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const Eigen::Index row = c * 9 + ky * 3 + kx;
                for (int r = 0; r < out_side; ++r) {
                    const int y = 2 * r + ky - 1;
                    if (y < 0 || y >= side) continue;
                    for (int q = 0; q < out_side; ++q) {
                        const int x = 2 * q + kx - 1;
                        if (x < 0 || x >= side) continue;
                        din(c, y * side + x) += dcols(row, r * out_side + q);
                    }
                }
            }
        }
    }
}

bool is_exp_output(const OutputLayout& lay, int i)
{
    return (i >= lay.var_theta() && i < lay.var_theta() + lay.pose_dim) ||
           (i >= lay.var_beta() && i < lay.var_beta() + lay.shape_dim) || i == lay.cam();
}

}  // namespace

int EncoderConfig::stage_size(int stage) const
{
    int side = grid_size();
    for (int k = 0; k < stage; ++k) side = (side - 1) / 2 + 1;
    return side;
}

int EncoderConfig::feature_dim() const
{
    const int k = static_cast<int>(channels.size());
    const int side = stage_size(k);
    return (k == 0 ? input_channels : channels.back()) * side * side;
}

void EncoderConfig::validate() const
{
    if (input_size <= 0 || input_channels <= 0 || pool <= 0 || hidden <= 0) {
        throw std::invalid_argument("encoder sizes must be positive");
    }
    if (input_size % pool != 0) throw std::invalid_argument("pool factor must divide the input size");
    for (int c : channels) {
        if (c <= 0) throw std::invalid_argument("encoder channel widths must be positive");
    }
    if (output.pose_dim <= 0 || output.shape_dim <= 0 || output.pose_dim % 3 != 0) {
        throw std::invalid_argument("output layout dimensions are invalid");
    }
    if (feature_dim() < 32) {
        throw std::invalid_argument("encoder feature dimension " + std::to_string(feature_dim()) + " is below 32");
    }
}

void to_json(nlohmann::json& j, const EncoderConfig& c)
{
    j = {{"input_size", c.input_size},     {"input_channels", c.input_channels},
         {"pool", c.pool},                 {"channels", c.channels},
         {"hidden", c.hidden},             {"pose_dim", c.output.pose_dim},
         {"shape_dim", c.output.shape_dim}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c)
{
    j.at("input_size").get_to(c.input_size);
    j.at("input_channels").get_to(c.input_channels);
    j.at("pool").get_to(c.pool);
    j.at("channels").get_to(c.channels);
    j.at("hidden").get_to(c.hidden);
    j.at("pose_dim").get_to(c.output.pose_dim);
    j.at("shape_dim").get_to(c.output.shape_dim);
}

NetInput pool_input(const ProxyRepresentation& x, const EncoderConfig& cfg)
{
    if (x.width != cfg.input_size || x.height != cfg.input_size) {
        throw std::invalid_argument("proxy is " + std::to_string(x.width) + "x" + std::to_string(x.height) +
                                    ", network expects " + std::to_string(cfg.input_size) + "x" +
                                    std::to_string(cfg.input_size));
    }
    if (1 + x.num_keypoints() != cfg.input_channels) {
        throw std::invalid_argument("proxy has " + std::to_string(1 + x.num_keypoints()) +
                                    " channels, network expects " + std::to_string(cfg.input_channels));
    }
    const int n = cfg.input_size;
    const int g = cfg.grid_size();
    const int f = cfg.pool;
    const double inv = 1.0 / (f * f);
    NetInput out = NetInput::Zero(cfg.input_channels, static_cast<Eigen::Index>(g) * g);
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    auto accumulate = [&](const auto* src, double* row) {
        for (int q = 0; q < g; ++q) {
            double acc = 0.0;
            for (int k = 0; k < f; ++k) acc += src[q * f + k];
            row[q] += acc;
        }
    };
    for (int ch = 0; ch < cfg.input_channels; ++ch) {
        double* dst = out.row(ch).data();
        for (int r = 0; r < n; ++r) {
            double* row = dst + static_cast<std::size_t>(r / f) * g;
            if (ch == 0) {
                accumulate(x.silhouette.data() + static_cast<std::size_t>(r) * n, row);
            } else {
                accumulate(x.heatmaps.data() + plane * (ch - 1) + static_cast<std::size_t>(r) * n, row);
            }
        }
    }
    out *= inv;
    return out;
}

PredictorNet::PredictorNet(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg)
{
    cfg_.validate();
    build_layout();
    Rng rng = make_rng(seed, "init");
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        const Block& b = blocks_[k];
        const bool last = k + 1 == blocks_.size();
        const double sd = (last ? 0.1 : std::sqrt(2.0)) / std::sqrt(static_cast<double>(b.cols));
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(b.rows) * b.cols; ++i) {
            params_[b.w + i] = sd * standard_normal(rng);
        }
    }
    const Block& out = blocks_.back();
    params_[out.b + cfg_.output.cam()] = std::log(0.9);
}

void PredictorNet::build_layout()
{
    blocks_.clear();
    Eigen::Index off = 0;
    auto add = [&](int rows, int cols) {
        Block b{off, off + static_cast<Eigen::Index>(rows) * cols, rows, cols};
        off = b.b + rows;
        blocks_.push_back(b);
    };
    int in_c = cfg_.input_channels;
    for (int c : cfg_.channels) {
        add(c, in_c * 9);
        in_c = c;
    }
    add(cfg_.hidden, cfg_.feature_dim());
    add(cfg_.output.size(), cfg_.hidden);
    params_ = Eigen::VectorXd::Zero(off);
}

Eigen::VectorXd PredictorNet::forward(const NetInput& x, Cache* cache) const
{
    const int g = cfg_.grid_size();
    if (x.rows() != cfg_.input_channels || x.cols() != static_cast<Eigen::Index>(g) * g) {
        throw std::invalid_argument("network input has the wrong shape");
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    const std::size_t ns = cfg_.channels.size();
    c.act.resize(ns + 1);
    c.pre.resize(ns);
    c.cols.resize(ns);
    c.act[0] = x;
    for (std::size_t k = 0; k < ns; ++k) {
        const Block& b = blocks_[k];
        const int side = cfg_.stage_size(static_cast<int>(k));
        const int out_side = cfg_.stage_size(static_cast<int>(k) + 1);
        im2col(c.act[k], side, out_side, c.cols[k]);
        const ConstMapMat w(params_.data() + b.w, b.rows, b.cols);
        const Eigen::Map<const Eigen::VectorXd> bias(params_.data() + b.b, b.rows);
        c.pre[k] = w * c.cols[k];
        c.pre[k].colwise() += bias;
        c.act[k + 1] = c.pre[k].unaryExpr(&elu);
    }
    c.feature = Eigen::Map<const Eigen::VectorXd>(c.act[ns].data(), c.act[ns].size());

    const Block& h = blocks_[ns];
    c.hidden_pre = ConstMapMat(params_.data() + h.w, h.rows, h.cols) * c.feature +
                   Eigen::Map<const Eigen::VectorXd>(params_.data() + h.b, h.rows);
    c.hidden = c.hidden_pre.unaryExpr(&elu);

    const Block& o = blocks_[ns + 1];
    c.raw = ConstMapMat(params_.data() + o.w, o.rows, o.cols) * c.hidden +
            Eigen::Map<const Eigen::VectorXd>(params_.data() + o.b, o.rows);
    c.y = c.raw;
    for (int i = 0; i < c.y.size(); ++i) {
        if (is_exp_output(cfg_.output, i)) c.y[i] = std::exp(std::clamp(c.raw[i], -kRawClamp, kRawClamp));
    }
    return c.y;
}

PredictionSet PredictorNet::predict(const ProxyRepresentation& x) const
{
    return from_vector(forward(x), cfg_.output);
}

void PredictorNet::backward(const Cache& c, const Eigen::VectorXd& dy, Eigen::VectorXd& grad) const
{
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has the wrong size");
    if (dy.size() != cfg_.output.size()) throw std::invalid_argument("output gradient has the wrong size");
    const std::size_t ns = cfg_.channels.size();

    Eigen::VectorXd draw = dy;
    for (int i = 0; i < draw.size(); ++i) {
        if (!is_exp_output(cfg_.output, i)) continue;
        const bool inside = c.raw[i] > -kRawClamp && c.raw[i] < kRawClamp;
        draw[i] = inside ? dy[i] * c.y[i] : 0.0;
    }

    const Block& o = blocks_[ns + 1];
    MapMat(grad.data() + o.w, o.rows, o.cols).noalias() += draw * c.hidden.transpose();
    grad.segment(o.b, o.rows) += draw;
    Eigen::VectorXd dh = ConstMapMat(params_.data() + o.w, o.rows, o.cols).transpose() * draw;
    dh.array() *= c.hidden_pre.unaryExpr(&elu_grad).array();

    const Block& h = blocks_[ns];
    MapMat(grad.data() + h.w, h.rows, h.cols).noalias() += dh * c.feature.transpose();
    grad.segment(h.b, h.rows) += dh;
    const Eigen::VectorXd dfeat = ConstMapMat(params_.data() + h.w, h.rows, h.cols).transpose() * dh;

    NetInput dact = Eigen::Map<const NetInput>(dfeat.data(), c.act[ns].rows(), c.act[ns].cols());
    for (std::size_t k = ns; k-- > 0;) {
        const Block& b = blocks_[k];
        const NetInput dpre = dact.array() * c.pre[k].unaryExpr(&elu_grad).array();
        MapMat(grad.data() + b.w, b.rows, b.cols).noalias() += dpre * c.cols[k].transpose();
        grad.segment(b.b, b.rows) += dpre.rowwise().sum();
        if (k == 0) break;
        const Eigen::MatrixXd dcols = ConstMapMat(params_.data() + b.w, b.rows, b.cols).transpose() * dpre;
        col2im(dcols, cfg_.stage_size(static_cast<int>(k)), cfg_.stage_size(static_cast<int>(k) + 1), dact);
    }
}

bool PredictorNet::operator==(const PredictorNet& o) const
{
    return nlohmann::json(cfg_) == nlohmann::json(o.cfg_) && params_.size() == o.params_.size() &&
           params_ == o.params_;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad)
{
    if (m.size() != params.size()) {
        m = Eigen::VectorXd::Zero(params.size());
        v = Eigen::VectorXd::Zero(params.size());
    }
    if (grad.size() != params.size()) throw std::invalid_argument("Adam: gradient size mismatch");
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
}

namespace {
constexpr const char* kNetMagic = "PBNET";
}

void save_weights(const PredictorNet& net, const std::string& path, const Adam* adam, const nlohmann::json& meta)
{
    io::ContainerWriter w(kNetMagic);
    auto& m = w.meta();
    m["kind"] = "weights";
    m["version"] = kWeightsVersion;
    m["encoder"] = net.config();
    m["num_params"] = net.num_params();
    m["meta"] = meta;
    const auto n = static_cast<std::int64_t>(net.num_params());
    w.add_f64("params", std::vector<double>(net.params().data(), net.params().data() + n), {n});
    if (adam) {
        m["adam"] = {{"lr", adam->lr}, {"beta1", adam->beta1}, {"beta2", adam->beta2}, {"eps", adam->eps},
                     {"t", adam->t}};
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
        const Eigen::VectorXd& am = adam->m.size() == n ? adam->m : zero;
        const Eigen::VectorXd& av = adam->v.size() == n ? adam->v : zero;
        w.add_f64("adam_m", std::vector<double>(am.data(), am.data() + n), {n});
        w.add_f64("adam_v", std::vector<double>(av.data(), av.data() + n), {n});
    }
    w.write(path);
}

Checkpoint load_checkpoint(const std::string& path)
{
    io::ContainerReader r(path, kNetMagic);
    const auto& m = r.meta();
    Checkpoint ck;
    try {
        const int version = m.at("version").get<int>();
        if (version != kWeightsVersion) {
            throw io::FormatError("'" + path + "': weight format version " + std::to_string(version) +
                                  ", expected " + std::to_string(kWeightsVersion));
        }
        ck.net = PredictorNet(m.at("encoder").get<EncoderConfig>(), 0);
        ck.meta = m.value("meta", nlohmann::json::object());
        const auto params = r.f64("params");
        if (params.size() != ck.net.num_params() || m.at("num_params").get<std::size_t>() != params.size()) {
            throw io::FormatError("'" + path + "': parameter count does not match the encoder config");
        }
        ck.net.params() = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
        if (m.contains("adam")) {
            const auto& a = m.at("adam");
            ck.has_optimizer = true;
            ck.adam.lr = a.at("lr").get<double>();
            ck.adam.beta1 = a.at("beta1").get<double>();
            ck.adam.beta2 = a.at("beta2").get<double>();
            ck.adam.eps = a.at("eps").get<double>();
            ck.adam.t = a.at("t").get<std::int64_t>();
            const auto am = r.f64("adam_m");
            const auto av = r.f64("adam_v");
            if (am.size() != params.size() || av.size() != params.size()) {
                throw io::FormatError("'" + path + "': optimizer state size mismatch");
            }
            ck.adam.m = Eigen::Map<const Eigen::VectorXd>(am.data(), static_cast<Eigen::Index>(am.size()));
            ck.adam.v = Eigen::Map<const Eigen::VectorXd>(av.data(), static_cast<Eigen::Index>(av.size()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError("'" + path + "': malformed weight header: " + e.what());
    } catch (const std::invalid_argument& e) {
        throw io::FormatError("'" + path + "': " + e.what());
    }
    return ck;
}

PredictorNet load_weights(const std::string& path) { return load_checkpoint(path).net; }

std::vector<PredictionSet> PredictionFile::sets() const
{
    std::vector<PredictionSet> out;
    out.reserve(outputs.size());
    for (const auto& y : outputs) out.push_back(from_vector(y, layout));
    return out;
}

void save_predictions(const PredictionFile& p, const std::string& path)
{
    if (p.index.size() != p.outputs.size()) throw std::invalid_argument("prediction index and outputs differ in size");
    const auto n = static_cast<std::int64_t>(p.outputs.size());
    const auto d = static_cast<std::int64_t>(p.layout.size());
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(n * d));
    for (const auto& y : p.outputs) {
        if (y.size() != d) throw std::invalid_argument("prediction vector has the wrong size");
        flat.insert(flat.end(), y.data(), y.data() + d);
    }
    io::ContainerWriter w("PBPRED");
    w.meta()["kind"] = "predictions";
    w.meta()["version"] = kWeightsVersion;
    w.meta()["pose_dim"] = p.layout.pose_dim;
    w.meta()["shape_dim"] = p.layout.shape_dim;
    w.meta()["meta"] = p.meta;
    w.add_i64("index", p.index, {n});
    w.add_f64("outputs", flat, {n, d});
    w.write(path);
}

PredictionFile load_predictions(const std::string& path)
{
    io::ContainerReader r(path, "PBPRED");
    PredictionFile p;
    try {
        p.layout.pose_dim = r.meta().at("pose_dim").get<int>();
        p.layout.shape_dim = r.meta().at("shape_dim").get<int>();
        p.meta = r.meta().value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError("'" + path + "': malformed prediction header: " + e.what());
    }
    p.index = r.i64("index");
    const auto flat = r.f64("outputs");
    const std::size_t d = static_cast<std::size_t>(p.layout.size());
    if (flat.size() != p.index.size() * d) throw io::FormatError("'" + path + "': output table has the wrong size");
    for (std::size_t i = 0; i < p.index.size(); ++i) {
        p.outputs.push_back(Eigen::Map<const Eigen::VectorXd>(flat.data() + i * d, static_cast<Eigen::Index>(d)));
    }
    return p;
}

}  // namespace pbody
