#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "slhsi/image.hpp"
#include "slhsi/simulator.hpp"

namespace slhsi {

/// Dense C x H x W activation volume.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    double& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    double at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
};

Tensor to_tensor(const Image& image);

struct ConvLayer {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;  // 3 (same padding) or 1
    bool relu = true;
    std::vector<double> weight;  // out x in x k x k
    std::vector<double> bias;    // out
};

/// Encoder-decoder FCN: four contractive steps (two 3x3 conv + 2x2 max pool,
/// width doubling from base_dim), four expansive steps (2x bilinear upsample,
/// additive skip fusion through a 1x1 conv, 3x3 conv halving width), and a 1x1
/// head producing (background, foreground) scores.
struct FcnModel {
    int base_dim = 8;
    std::vector<ConvLayer> layers;

    static constexpr int kSteps = 4;
    static constexpr int kTotalStride = 16;

    static FcnModel create(int base_dim, std::uint64_t seed);
    static FcnModel zeros(int base_dim);

    int bottleneck_channels() const { return base_dim << (kSteps - 1); }
    std::size_t parameter_count() const;

    void save(const std::filesystem::path& path) const;
    static FcnModel load(const std::filesystem::path& path);
};

/// Scores (channel 0 background, channel 1 foreground) at input resolution.
/// Input sides must be multiples of 16.
Tensor fcn_forward(const FcnModel& model, const Image& image);
Tensor softmax_probabilities(const Tensor& scores);

struct ClassWeights {
    double background = 1.0;
    double foreground = 1.0;
};

/// Inverse-frequency weights from label masks.
ClassWeights inverse_frequency_weights(const std::vector<TrainingSample>& samples);

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d scores
};

/// Class-weighted mean softmax cross-entropy, normalised by the summed weights.
LossResult softmax_loss(const Tensor& scores, const Image& labels, const ClassWeights& weights = {});

/// Parameter-shaped storage for gradients and momentum.
struct ParameterGrads {
    std::vector<std::vector<double>> weight;
    std::vector<std::vector<double>> bias;

    static ParameterGrads zeros_like(const FcnModel& model);
    void scale(double s);
};

/// Loss on one sample with gradients accumulated into `grads`.
double fcn_loss_and_gradient(const FcnModel& model, const Image& image, const Image& labels,
                             const ClassWeights& weights, ParameterGrads& grads);

/// v = momentum * v - lr * (g + weight_decay * w); w += v. Decay applies to weights, not biases.
void sgd_step(FcnModel& model, const ParameterGrads& grads, ParameterGrads& velocity, double lr, double momentum,
              double weight_decay);

struct TrainConfig {
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double coarse_lr = 0.02;
    int coarse_iters = 640;  // coarse stage runs until this iteration
    double fine_lr = 0.004;
    int fine_iters = 1200;   // fine stage runs until this iteration
    int batch_size = 2;
    int patch_size = 64;     // random sub-crop per sample and iteration; 0 = whole sample
    std::uint64_t seed = 1;
    int base_dim = 8;

    void validate() const;
};

struct LossRecord {
    int iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    FcnModel model;
    std::vector<LossRecord> curve;
};

TrainResult train_fcn(FcnModel model, const std::vector<TrainingSample>& dataset, const TrainConfig& config,
                      const std::function<void(const LossRecord&)>& on_iteration = {});

void write_loss_csv(const std::vector<LossRecord>& curve, const std::filesystem::path& path);

}  // namespace slhsi
