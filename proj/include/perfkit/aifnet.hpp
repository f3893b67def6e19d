#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "perfkit/random.hpp"
#include "perfkit/types.hpp"

namespace perfkit::aifnet {

/// One 3D convolution with same padding and stride 1.
/// Weights are laid out [out_ch][in_ch][kz][ky][kx].
struct ConvLayer {
    std::size_t out_ch = 0, in_ch = 0;
    std::size_t kz = 3, ky = 3, kx = 3;
    std::vector<double> weights;
    std::vector<double> bias;
    std::vector<double> weight_velocity;
    std::vector<double> bias_velocity;

    std::size_t kernel_volume() const { return kz * ky * kx; }
    std::size_t row_length() const { return in_ch * kernel_volume(); }
};

/// K ReLU feature layers (2^(3+k) filters; the first is 3x3x1) followed by a single
/// 3x3x3 output filter whose response feeds a volume-wide softmax.
struct AifNetModel {
    CurveKind kind = CurveKind::AIF;
    std::size_t t_train = 0;
    std::vector<ConvLayer> layers;  ///< K feature layers, then the output layer

    std::size_t feature_layers() const { return layers.empty() ? 0 : layers.size() - 1; }
    std::size_t parameter_count() const;

    /// Glorot-uniform weights (per-filter fan in/out), zero biases and velocities.
    static AifNetModel create(std::size_t feature_layers, std::size_t t_train, CurveKind kind, std::uint64_t seed);
    void validate() const;
};

inline constexpr std::size_t kDefaultAifLayers = 5;
inline constexpr std::size_t kDefaultVofLayers = 2;

struct Prediction {
    ProbVolume pvol;
    VascularFunction curve;
};

/// Weighted voxel average: out[t] = sum_v frame_t(v) * weights(v), for every frame of x.
std::vector<double> weighted_curve(const CtpVolume4D& x, std::span<const double> weights);

/// Network pass on exactly model.t_train frames.
Prediction forward(const AifNetModel& model, const CtpVolume4D& x);

/// Negative Pearson correlation. Throws on length mismatch or a zero-variance argument.
double pearson_loss(std::span<const double> y, std::span<const double> yhat);
double pearson_loss(const VascularFunction& y, const VascularFunction& yhat);
/// d(pearson_loss)/d(yhat).
std::vector<double> pearson_loss_gradient(std::span<const double> y, std::span<const double> yhat);

/// Same shapes as the model's weights and biases.
struct Gradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> bias;
};

struct LossGradients {
    double loss = 0.0;
    Gradients grads;
};

/// Reverse-mode gradients of pearson_loss(y, forward(model, x).curve).
LossGradients gradients(const AifNetModel& model, const CtpVolume4D& x, const VascularFunction& y);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int max_epochs = 200;
    int patience = 10;
    int shift_max_frames = 5;
    double scale_low = 0.8;
    double scale_high = 1.2;
    int baseline_frames = 3;
    bool augment = true;     ///< off for the no-augmentation ablation
    double clip_norm = 1.0;  ///< global gradient-norm cap per step; 0 disables
    std::uint64_t seed = 0;

    void validate() const;
};

/// Bolus-arrival shift (positive = later arrival) and peak-to-baseline scale.
struct AugmentDraw {
    int shift = 0;
    double scale = 1.0;
};

/// Applies `draw` to both the series and the label.
std::pair<CtpVolume4D, VascularFunction> apply_augmentation(const CtpVolume4D& x, const VascularFunction& y,
                                                            const AugmentDraw& draw, int baseline_frames);
AugmentDraw draw_augmentation(Rng& rng, const TrainConfig& cfg);
std::pair<CtpVolume4D, VascularFunction> augment(const CtpVolume4D& x, const VascularFunction& y, Rng& rng,
                                                 const TrainConfig& cfg);

/// Rescales the whole gradient to norm `max_norm` when it is longer; returns the original norm.
/// A non-positive `max_norm` leaves the gradient untouched.
double clip_gradient_norm(Gradients& grads, double max_norm);

/// One SGD-momentum step: v <- m v - lr g; w <- w + v.
void sgd_step(AifNetModel& model, const Gradients& grads, double learning_rate, double momentum);

struct Sample {
    CtpVolume4D ctp;
    VascularFunction label;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
};

struct TrainResult {
    AifNetModel model;  ///< best-validation snapshot
    std::vector<EpochRecord> history;
    double best_validation_loss = 0.0;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Samples are truncated to the shortest series before training.
TrainResult train(std::span<const Sample> dataset, const Split& split, const TrainConfig& cfg,
                  std::size_t feature_layers, CurveKind kind, const EpochCallback& on_epoch = {});

/// Probabilities from the first t_train frames (last frame replicated if x is shorter);
/// the curve spans every frame of x.
Prediction predict(const AifNetModel& model, const CtpVolume4D& x);

/// Rescales a predicted VOF so its peak-to-baseline matches the raw PTB of the voxel
/// with the largest probability-weighted PTB.
VascularFunction recalibrate_vof(const VascularFunction& vof_hat, const ProbVolume& pvol, const CtpVolume4D& x,
                                 int baseline_frames = 3);

void save_model(const std::filesystem::path& path, const AifNetModel& model);
AifNetModel load_model(const std::filesystem::path& path);

}  // namespace perfkit::aifnet
