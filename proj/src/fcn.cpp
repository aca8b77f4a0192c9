#include "slhsi/fcn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <Eigen/Core>
#include <json.hpp>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

constexpr int kFormatVersion = 1;

ConvLayer make_layer(std::string name, int in, int out, int kernel, bool relu) {
    ConvLayer l;
    l.name = std::move(name);
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = kernel;
    l.relu = relu;
    l.weight.assign(static_cast<std::size_t>(out) * in * kernel * kernel, 0.0);
    l.bias.assign(out, 0.0);
    return l;
}

// Layer order: enc{s}a, enc{s}b for s = 0..3; dec{j}skip, dec{j}conv for j = 3..0; head.
std::vector<ConvLayer> architecture(int base_dim) {
    if (base_dim < 2 || base_dim % 2 != 0) {
        throw Error(ErrorCode::InvalidArgument, "FCN base_dim must be even and >= 2");
    }
    std::vector<ConvLayer> layers;
    int in = 3;
    for (int s = 0; s < FcnModel::kSteps; ++s) {
        const int c = base_dim << s;
        layers.push_back(make_layer("enc" + std::to_string(s) + "a", in, c, 3, true));
        layers.push_back(make_layer("enc" + std::to_string(s) + "b", c, c, 3, true));
        in = c;
    }
    for (int j = FcnModel::kSteps - 1; j >= 0; --j) {
        const int c = base_dim << j;
        layers.push_back(make_layer("dec" + std::to_string(j) + "skip", c, c, 1, true));
        layers.push_back(make_layer("dec" + std::to_string(j) + "conv", c, c / 2, 3, true));
    }
    layers.push_back(make_layer("head", base_dim / 2, 2, 1, false));
    return layers;
}

int enc_layer(int step, int which) { return 2 * step + which; }
int dec_skip_layer(int step) { return 2 * FcnModel::kSteps + 2 * (FcnModel::kSteps - 1 - step); }
int dec_conv_layer(int step) { return dec_skip_layer(step) + 1; }
int head_layer() { return 4 * FcnModel::kSteps; }

// ---------------------------------------------------------------------------
// Primitive ops

RowMatrix im2col(const Tensor& x, int kernel) {
    const int pad = kernel / 2;
    const int hw = x.height * x.width;
    RowMatrix cols(x.channels * kernel * kernel, hw);
    for (int c = 0; c < x.channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                double* row = cols.row((c * kernel + ky) * kernel + kx).data();
                for (int y = 0; y < x.height; ++y) {
                    const int sy = y + ky - pad;
                    for (int xx = 0; xx < x.width; ++xx) {
                        const int sx = xx + kx - pad;
                        row[y * x.width + xx] =
                            (sy < 0 || sy >= x.height || sx < 0 || sx >= x.width) ? 0.0 : x.at(c, sy, sx);
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const RowMatrix& cols, int kernel, Tensor& dx) {
    const int pad = kernel / 2;
    for (int c = 0; c < dx.channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const double* row = cols.row((c * kernel + ky) * kernel + kx).data();
                for (int y = 0; y < dx.height; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= dx.height) continue;
                    for (int xx = 0; xx < dx.width; ++xx) {
                        const int sx = xx + kx - pad;
                        if (sx < 0 || sx >= dx.width) continue;
                        dx.at(c, sy, sx) += row[y * dx.width + xx];
                    }
                }
            }
        }
    }
}

Tensor conv_forward(const ConvLayer& layer, const Tensor& x) {
    Tensor y(layer.out_channels, x.height, x.width);
    const int hw = x.height * x.width;
    ConstMatMap w(layer.weight.data(), layer.out_channels, layer.in_channels * layer.kernel * layer.kernel);
    MatMap out(y.data.data(), layer.out_channels, hw);
    if (layer.kernel == 1) {
        out.noalias() = w * ConstMatMap(x.data.data(), x.channels, hw);
    } else {
        out.noalias() = w * im2col(x, layer.kernel);
    }
    for (int c = 0; c < layer.out_channels; ++c) out.row(c).array() += layer.bias[c];
    if (layer.relu) {
        for (double& v : y.data) v = std::max(v, 0.0);
    }
    return y;
}

// `dy` is the gradient w.r.t. the layer output (after ReLU); `y` is that output.
Tensor conv_backward(const ConvLayer& layer, const Tensor& x, const Tensor& y, Tensor dy, std::vector<double>& dw,
                     std::vector<double>& db) {
    const int hw = x.height * x.width;
    if (layer.relu) {
        for (std::size_t i = 0; i < dy.data.size(); ++i)
            if (y.data[i] <= 0.0) dy.data[i] = 0.0;
    }
    ConstMatMap w(layer.weight.data(), layer.out_channels, layer.in_channels * layer.kernel * layer.kernel);
    MatMap gw(dw.data(), layer.out_channels, layer.in_channels * layer.kernel * layer.kernel);
    ConstMatMap g(dy.data.data(), layer.out_channels, hw);
    for (int c = 0; c < layer.out_channels; ++c) db[c] += g.row(c).sum();
    Tensor dx(x.channels, x.height, x.width);
    if (layer.kernel == 1) {
        ConstMatMap xm(x.data.data(), x.channels, hw);
        gw.noalias() += g * xm.transpose();
        MatMap(dx.data.data(), x.channels, hw).noalias() = w.transpose() * g;
    } else {
        const RowMatrix cols = im2col(x, layer.kernel);
        gw.noalias() += g * cols.transpose();
        const RowMatrix dcols = w.transpose() * g;
        col2im_add(dcols, layer.kernel, dx);
    }
    return dx;
}

struct PoolResult {
    Tensor out;
    std::vector<int> argmax;  // flat index into the input plane
};

PoolResult maxpool_forward(const Tensor& x) {
    PoolResult r{Tensor(x.channels, x.height / 2, x.width / 2), {}};
    r.argmax.resize(r.out.data.size());
    std::size_t k = 0;
    for (int c = 0; c < x.channels; ++c) {
        for (int y = 0; y < r.out.height; ++y) {
            for (int xx = 0; xx < r.out.width; ++xx, ++k) {
                int best = (2 * y) * x.width + 2 * xx;
                double best_v = x.at(c, 2 * y, 2 * xx);
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const double v = x.at(c, 2 * y + dy, 2 * xx + dx);
                        if (v > best_v) {
                            best_v = v;
                            best = (2 * y + dy) * x.width + 2 * xx + dx;
                        }
                    }
                }
                r.out.data[k] = best_v;
                r.argmax[k] = best;
            }
        }
    }
    return r;
}

Tensor maxpool_backward(const Tensor& dout, const std::vector<int>& argmax, int height, int width) {
    Tensor dx(dout.channels, height, width);
    const std::size_t out_plane = dout.plane();
    for (std::size_t k = 0; k < dout.data.size(); ++k) {
        const std::size_t c = k / out_plane;
        dx.data[c * dx.plane() + argmax[k]] += dout.data[k];
    }
    return dx;
}

struct Tap {
    int i0;
    int i1;
    double w1;
};

// Half-pixel aligned 2x linear taps, clamped at the borders.
std::vector<Tap> upsample_taps(int in_size) {
    std::vector<Tap> taps(2 * in_size);
    for (int o = 0; o < 2 * in_size; ++o) {
        double s = (o + 0.5) / 2.0 - 0.5;
        s = std::clamp(s, 0.0, in_size - 1.0);
        const int i0 = std::min(static_cast<int>(s), in_size - 1);
        const int i1 = std::min(i0 + 1, in_size - 1);
        taps[o] = {i0, i1, s - i0};
    }
    return taps;
}

Tensor upsample_forward(const Tensor& x) {
    Tensor y(x.channels, 2 * x.height, 2 * x.width);
    const auto ty = upsample_taps(x.height);
    const auto tx = upsample_taps(x.width);
    for (int c = 0; c < x.channels; ++c) {
        for (int oy = 0; oy < y.height; ++oy) {
            const Tap& a = ty[oy];
            for (int ox = 0; ox < y.width; ++ox) {
                const Tap& b = tx[ox];
                const double top = (1 - b.w1) * x.at(c, a.i0, b.i0) + b.w1 * x.at(c, a.i0, b.i1);
                const double bot = (1 - b.w1) * x.at(c, a.i1, b.i0) + b.w1 * x.at(c, a.i1, b.i1);
                y.at(c, oy, ox) = (1 - a.w1) * top + a.w1 * bot;
            }
        }
    }
    return y;
}

Tensor upsample_backward(const Tensor& dy, int height, int width) {
    Tensor dx(dy.channels, height, width);
    const auto ty = upsample_taps(height);
    const auto tx = upsample_taps(width);
    for (int c = 0; c < dy.channels; ++c) {
        for (int oy = 0; oy < dy.height; ++oy) {
            const Tap& a = ty[oy];
            for (int ox = 0; ox < dy.width; ++ox) {
                const Tap& b = tx[ox];
                const double g = dy.at(c, oy, ox);
                dx.at(c, a.i0, b.i0) += (1 - a.w1) * (1 - b.w1) * g;
                dx.at(c, a.i0, b.i1) += (1 - a.w1) * b.w1 * g;
                dx.at(c, a.i1, b.i0) += a.w1 * (1 - b.w1) * g;
                dx.at(c, a.i1, b.i1) += a.w1 * b.w1 * g;
            }
        }
    }
    return dx;
}

void add_inplace(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// ---------------------------------------------------------------------------
// Network

struct ForwardState {
    // Conv inputs/outputs by layer index.
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
    std::vector<PoolResult> pools;
    std::vector<Tensor> upsample_inputs;    // one per decoder step, indexed by step
    Tensor scores;
};

void check_input(const FcnModel& model, const Image& image) {
    if (image.width() % FcnModel::kTotalStride != 0 || image.height() % FcnModel::kTotalStride != 0) {
        throw Error(ErrorCode::PadRequired, "pad required: FCN input sides must be multiples of 16");
    }
    if (image.channels() != 3) throw Error(ErrorCode::InvalidArgument, "FCN expects an RGB image");
    if (model.layers.size() != static_cast<std::size_t>(head_layer() + 1)) {
        throw Error(ErrorCode::InvalidArgument, "FCN model has an unexpected layer count");
    }
}

ForwardState run_forward(const FcnModel& model, const Image& image) {
    check_input(model, image);
    ForwardState st;
    const std::size_t n = model.layers.size();
    st.inputs.resize(n);
    st.outputs.resize(n);
    st.upsample_inputs.resize(FcnModel::kSteps);

    const auto apply = [&](int idx, const Tensor& in) -> const Tensor& {
        st.inputs[idx] = in;
        st.outputs[idx] = conv_forward(model.layers[idx], in);
        return st.outputs[idx];
    };

    Tensor x = to_tensor(image);
    for (int s = 0; s < FcnModel::kSteps; ++s) {
        const Tensor& a = apply(enc_layer(s, 0), x);
        const Tensor& b = apply(enc_layer(s, 1), a);
        st.pools.push_back(maxpool_forward(b));
        x = st.pools.back().out;
    }
    for (int j = FcnModel::kSteps - 1; j >= 0; --j) {
        st.upsample_inputs[j] = x;
        Tensor fused = upsample_forward(x);
        add_inplace(fused, apply(dec_skip_layer(j), st.outputs[enc_layer(j, 1)]));
        x = apply(dec_conv_layer(j), fused);
    }
    st.scores = apply(head_layer(), x);
    return st;
}

void run_backward(const FcnModel& model, const ForwardState& st, const Tensor& dscores, ParameterGrads& grads) {
    const auto back = [&](int idx, const Tensor& dy) {
        return conv_backward(model.layers[idx], st.inputs[idx], st.outputs[idx], dy, grads.weight[idx],
                             grads.bias[idx]);
    };
    std::vector<Tensor> dskip(FcnModel::kSteps);
    Tensor dx = back(head_layer(), dscores);
    for (int j = 0; j < FcnModel::kSteps; ++j) {
        const Tensor dfused = back(dec_conv_layer(j), dx);
        dskip[j] = back(dec_skip_layer(j), dfused);
        const Tensor& up_in = st.upsample_inputs[j];
        dx = upsample_backward(dfused, up_in.height, up_in.width);
    }
    for (int s = FcnModel::kSteps - 1; s >= 0; --s) {
        const Tensor& pool_in = st.outputs[enc_layer(s, 1)];
        Tensor db = maxpool_backward(dx, st.pools[s].argmax, pool_in.height, pool_in.width);
        add_inplace(db, dskip[s]);
        const Tensor da = back(enc_layer(s, 1), db);
        dx = back(enc_layer(s, 0), da);
    }
}

}  // namespace

Tensor to_tensor(const Image& image) {
    Tensor t(image.channels(), image.height(), image.width());
    for (int c = 0; c < image.channels(); ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x) t.at(c, y, x) = image.at(x, y, c);
    return t;
}

FcnModel FcnModel::create(int base_dim, std::uint64_t seed) {
    FcnModel model = zeros(base_dim);
    std::mt19937_64 rng(seed);
    for (auto& layer : model.layers) {
        const double fan_in = static_cast<double>(layer.in_channels) * layer.kernel * layer.kernel;
        const double stddev = layer.relu ? std::sqrt(2.0 / fan_in) : std::sqrt(1.0 / fan_in);
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& w : layer.weight) w = dist(rng);
    }
    return model;
}

FcnModel FcnModel::zeros(int base_dim) {
    FcnModel model;
    model.base_dim = base_dim;
    model.layers = architecture(base_dim);
    return model;
}

std::size_t FcnModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

void FcnModel::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "slhsi-fcn";
    j["version"] = kFormatVersion;
    j["base_dim"] = base_dim;
    for (const auto& l : layers) {
        j["layers"].push_back({{"name", l.name},
                               {"in_channels", l.in_channels},
                               {"out_channels", l.out_channels},
                               {"kernel", l.kernel},
                               {"relu", l.relu},
                               {"weight", l.weight},
                               {"bias", l.bias}});
    }
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write model " + path.string());
    out << j.dump();
    if (!out) throw Error(ErrorCode::Io, "model write failed: " + path.string());
}

FcnModel FcnModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open model " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Io, "malformed model " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "slhsi-fcn" || j.value("version", 0) != kFormatVersion) {
        throw Error(ErrorCode::Io, "unsupported model format in " + path.string());
    }
    FcnModel model = zeros(j.at("base_dim").get<int>());
    const auto& jl = j.at("layers");
    if (jl.size() != model.layers.size()) throw Error(ErrorCode::Io, "layer count mismatch in " + path.string());
    for (std::size_t i = 0; i < jl.size(); ++i) {
        auto& l = model.layers[i];
        l.weight = jl[i].at("weight").get<std::vector<double>>();
        l.bias = jl[i].at("bias").get<std::vector<double>>();
        if (l.weight.size() != static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel ||
            l.bias.size() != static_cast<std::size_t>(l.out_channels)) {
            throw Error(ErrorCode::Io, "tensor shape mismatch for layer " + l.name);
        }
    }
    return model;
}

Tensor fcn_forward(const FcnModel& model, const Image& image) { return run_forward(model, image).scores; }

Tensor softmax_probabilities(const Tensor& scores) {
    Tensor p(scores.channels, scores.height, scores.width);
    const std::size_t plane = scores.plane();
    for (std::size_t i = 0; i < plane; ++i) {
        double m = scores.data[i];
        for (int c = 1; c < scores.channels; ++c) m = std::max(m, scores.data[c * plane + i]);
        double z = 0.0;
        for (int c = 0; c < scores.channels; ++c) z += std::exp(scores.data[c * plane + i] - m);
        for (int c = 0; c < scores.channels; ++c) p.data[c * plane + i] = std::exp(scores.data[c * plane + i] - m) / z;
    }
    return p;
}

ClassWeights inverse_frequency_weights(const std::vector<TrainingSample>& samples) {
    double fg = 0.0;
    double total = 0.0;
    for (const auto& s : samples) {
        for (float v : s.mask.data()) fg += v > 0.5f ? 1.0 : 0.0;
        total += static_cast<double>(s.mask.data().size());
    }
    const double bg = total - fg;
    if (fg <= 0.0 || bg <= 0.0) return {};
    return {total / (2.0 * bg), total / (2.0 * fg)};
}

LossResult softmax_loss(const Tensor& scores, const Image& labels, const ClassWeights& weights) {
    if (scores.channels != 2 || labels.width() != scores.width || labels.height() != scores.height) {
        throw Error(ErrorCode::InvalidArgument, "softmax_loss shape mismatch");
    }
    LossResult r{0.0, Tensor(2, scores.height, scores.width)};
    const std::size_t plane = scores.plane();
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        const int y = labels.data()[i] > 0.5f ? 1 : 0;
        weight_sum += y ? weights.foreground : weights.background;
    }
    for (std::size_t i = 0; i < plane; ++i) {
        const int y = labels.data()[i] > 0.5f ? 1 : 0;
        const double w = (y ? weights.foreground : weights.background) / weight_sum;
        const double s0 = scores.data[i];
        const double s1 = scores.data[plane + i];
        const double m = std::max(s0, s1);
        const double lse = m + std::log(std::exp(s0 - m) + std::exp(s1 - m));
        const double p0 = std::exp(s0 - lse);
        const double p1 = std::exp(s1 - lse);
        r.loss += w * (lse - (y ? s1 : s0));
        r.grad.data[i] = w * (p0 - (y == 0 ? 1.0 : 0.0));
        r.grad.data[plane + i] = w * (p1 - (y == 1 ? 1.0 : 0.0));
    }
    return r;
}

ParameterGrads ParameterGrads::zeros_like(const FcnModel& model) {
    ParameterGrads g;
    for (const auto& l : model.layers) {
        g.weight.emplace_back(l.weight.size(), 0.0);
        g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
}

void ParameterGrads::scale(double s) {
    for (auto& v : weight)
        for (double& x : v) x *= s;
    for (auto& v : bias)
        for (double& x : v) x *= s;
}

double fcn_loss_and_gradient(const FcnModel& model, const Image& image, const Image& labels,
                             const ClassWeights& weights, ParameterGrads& grads) {
    const ForwardState st = run_forward(model, image);
    const LossResult loss = softmax_loss(st.scores, labels, weights);
    run_backward(model, st, loss.grad, grads);
    return loss.loss;
}

void sgd_step(FcnModel& model, const ParameterGrads& grads, ParameterGrads& velocity, double lr, double momentum,
              double weight_decay) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto& l = model.layers[i];
        for (std::size_t k = 0; k < l.weight.size(); ++k) {
            double& v = velocity.weight[i][k];
            v = momentum * v - lr * (grads.weight[i][k] + weight_decay * l.weight[k]);
            l.weight[k] += v;
        }
        for (std::size_t k = 0; k < l.bias.size(); ++k) {
            double& v = velocity.bias[i][k];
            v = momentum * v - lr * grads.bias[i][k];
            l.bias[k] += v;
        }
    }
}

void TrainConfig::validate() const {
    if (!(coarse_lr > 0.0) || !(fine_lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rates must be > 0");
    if (coarse_iters < 0 || fine_iters < coarse_iters) {
        throw Error(ErrorCode::InvalidArgument, "fine_iters must be >= coarse_iters");
    }
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (patch_size != 0 && patch_size % FcnModel::kTotalStride != 0) {
        throw Error(ErrorCode::InvalidArgument, "patch_size must be a multiple of 16");
    }
    if (momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "momentum must be in [0, 1) and weight_decay >= 0");
    }
}

TrainResult train_fcn(FcnModel model, const std::vector<TrainingSample>& dataset, const TrainConfig& config,
                      const std::function<void(const LossRecord&)>& on_iteration) {
    config.validate();
    if (dataset.empty()) throw Error(ErrorCode::InvalidArgument, "training dataset is empty");
    std::mt19937_64 rng(config.seed);
    const ClassWeights weights = inverse_frequency_weights(dataset);
    ParameterGrads velocity = ParameterGrads::zeros_like(model);
    TrainResult result;

    for (int it = 0; it < config.fine_iters; ++it) {
        const double lr = it < config.coarse_iters ? config.coarse_lr : config.fine_lr;
        ParameterGrads grads = ParameterGrads::zeros_like(model);
        double loss = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const auto& sample =
                dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng)];
            const Image* image = &sample.image;
            const Image* mask = &sample.mask;
            Image patch;
            Image patch_mask;
            const int p = config.patch_size;
            if (p > 0 && (p < sample.image.width() || p < sample.image.height())) {
                const int x0 = std::uniform_int_distribution<int>(0, sample.image.width() - p)(rng);
                const int y0 = std::uniform_int_distribution<int>(0, sample.image.height() - p)(rng);
                patch = crop(sample.image, x0, y0, p, p);
                patch_mask = crop(sample.mask, x0, y0, p, p);
                image = &patch;
                mask = &patch_mask;
            }
            loss += fcn_loss_and_gradient(model, *image, *mask, weights, grads);
        }
        loss /= config.batch_size;
        if (!std::isfinite(loss)) {
            throw Error(ErrorCode::Divergence, "training diverged at iteration " + std::to_string(it) +
                                                   " (loss not finite, lr " + std::to_string(lr) + ")");
        }
        grads.scale(1.0 / config.batch_size);
        sgd_step(model, grads, velocity, lr, config.momentum, config.weight_decay);
        const LossRecord rec{it, loss, lr};
        result.curve.push_back(rec);
        if (on_iteration) on_iteration(rec);
    }
    result.model = std::move(model);
    return result;
}

void write_loss_csv(const std::vector<LossRecord>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write training log " + path.string());
    out << "iteration,loss,lr\n";
    char buf[96];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.iteration, r.loss, r.lr);
        out << buf;
    }
}

}  // namespace slhsi
