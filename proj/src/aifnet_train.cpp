#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "perfkit/aifnet.hpp"

namespace perfkit::aifnet {

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0))
        throw ValidationError("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ValidationError("momentum must lie in [0, 1)");
    if (max_epochs < 1 || patience < 1 || patience > max_epochs)
        throw ValidationError("need max_epochs >= 1 and 1 <= patience <= max_epochs");
    if (shift_max_frames < 0)
        throw ValidationError("shift_max_frames must be nonnegative");
    if (!(scale_low > 0.0) || !(scale_low <= scale_high))
        throw ValidationError("scale range must satisfy 0 < low <= high");
    if (baseline_frames < 1)
        throw ValidationError("baseline_frames must be positive");
    if (!(clip_norm >= 0.0))
        throw ValidationError("clip_norm must be nonnegative");
}

std::pair<CtpVolume4D, VascularFunction> apply_augmentation(const CtpVolume4D& x, const VascularFunction& y,
                                                            const AugmentDraw& draw, int baseline_frames)
{
    const std::size_t T = x.frames();
    if (y.size() != T)
        throw ValidationError("label length differs from the series length");
    if (baseline_frames < 1 || static_cast<std::size_t>(baseline_frames) >= T)
        throw ValidationError("augmentation needs 1 <= baseline_frames < T");
    if (static_cast<std::size_t>(std::abs(draw.shift)) >= T)
        throw ValidationError("augmentation shift must be smaller than the series length");
    if (!(draw.scale > 0.0))
        throw ValidationError("augmentation scale must be positive");

    // Output frame t reads source frame clamp(t - shift): a positive shift replicates frame 0.
    auto source = [&](std::size_t t) {
        const long s = static_cast<long>(t) - draw.shift;
        return static_cast<std::size_t>(std::clamp(s, 0L, static_cast<long>(T) - 1));
    };

    const std::size_t V = x.voxels();
    std::vector<double> pre(V, 0.0);
    for (int t = 0; t < baseline_frames; ++t) {
        const auto f = x.frame(static_cast<std::size_t>(t));
        for (std::size_t v = 0; v < V; ++v)
            pre[v] += f[v];
    }
    for (auto& p : pre)
        p /= baseline_frames;

    std::vector<float> data(T * V);
    for (std::size_t t = 0; t < T; ++t) {
        const auto f = x.frame(source(t));
        float* dst = data.data() + t * V;
        for (std::size_t v = 0; v < V; ++v)
            dst[v] = static_cast<float>((f[v] - pre[v]) * draw.scale + pre[v]);
    }

    const auto yv = y.values();
    const double ypre =
        std::accumulate(yv.begin(), yv.begin() + baseline_frames, 0.0) / static_cast<double>(baseline_frames);
    std::vector<double> label(T);
    for (std::size_t t = 0; t < T; ++t)
        label[t] = (yv[source(t)] - ypre) * draw.scale + ypre;

    return {CtpVolume4D(T, x.dims(), x.dt(), std::move(data), x.brain_mask()),
            VascularFunction(std::move(label), y.dt(), y.kind())};
}

AugmentDraw draw_augmentation(Rng& rng, const TrainConfig& cfg)
{
    AugmentDraw d;
    d.shift = static_cast<int>(rng.uniform_int(-cfg.shift_max_frames, cfg.shift_max_frames));
    d.scale = rng.uniform(cfg.scale_low, cfg.scale_high);
    return d;
}

std::pair<CtpVolume4D, VascularFunction> augment(const CtpVolume4D& x, const VascularFunction& y, Rng& rng,
                                                 const TrainConfig& cfg)
{
    return apply_augmentation(x, y, draw_augmentation(rng, cfg), cfg.baseline_frames);
}

void sgd_step(AifNetModel& model, const Gradients& grads, double learning_rate, double momentum)
{
    if (grads.weights.size() != model.layers.size() || grads.bias.size() != model.layers.size())
        throw ValidationError("gradient set does not match the model");
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        ConvLayer& L = model.layers[l];
        const auto& gw = grads.weights[l];
        const auto& gb = grads.bias[l];
        if (gw.size() != L.weights.size() || gb.size() != L.bias.size())
            throw ValidationError("gradient shape mismatch in layer " + std::to_string(l));
        for (std::size_t i = 0; i < gw.size(); ++i) {
            L.weight_velocity[i] = momentum * L.weight_velocity[i] - learning_rate * gw[i];
            L.weights[i] += L.weight_velocity[i];
        }
        for (std::size_t i = 0; i < gb.size(); ++i) {
            L.bias_velocity[i] = momentum * L.bias_velocity[i] - learning_rate * gb[i];
            L.bias[i] += L.bias_velocity[i];
        }
    }
}

double clip_gradient_norm(Gradients& grads, double max_norm)
{
    double sq = 0.0;
    for (const auto* set : {&grads.weights, &grads.bias})
        for (const auto& g : *set)
            for (double v : g)
                sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double k = max_norm / norm;
        for (auto* set : {&grads.weights, &grads.bias})
            for (auto& g : *set)
                for (double& v : g)
                    v *= k;
    }
    return norm;
}

namespace {

Sample truncate(const Sample& s, std::size_t frames)
{
    if (s.ctp.frames() == frames && s.label.size() == frames)
        return s;
    const auto data = s.ctp.data().subspan(0, frames * s.ctp.voxels());
    const auto label = s.label.values().subspan(0, frames);
    return {CtpVolume4D(frames, s.ctp.dims(), s.ctp.dt(), std::vector<float>(data.begin(), data.end()),
                        s.ctp.brain_mask()),
            VascularFunction(std::vector<double>(label.begin(), label.end()), s.label.dt(), s.label.kind())};
}

}  // namespace

TrainResult train(std::span<const Sample> dataset, const Split& split, const TrainConfig& cfg,
                  std::size_t feature_layers, CurveKind kind, const EpochCallback& on_epoch)
{
    cfg.validate();
    if (split.train.empty() || split.validation.empty())
        throw ValidationError("training needs non-empty train and validation splits");
    for (const auto* part : {&split.train, &split.validation})
        for (std::size_t i : *part)
            if (i >= dataset.size())
                throw ValidationError("split index " + std::to_string(i) + " outside the dataset");

    std::size_t frames = std::numeric_limits<std::size_t>::max();
    for (const auto* part : {&split.train, &split.validation})
        for (std::size_t i : *part)
            frames = std::min({frames, dataset[i].ctp.frames(), dataset[i].label.size()});
    if (static_cast<std::size_t>(cfg.shift_max_frames) >= frames)
        throw ValidationError("shift_max_frames must be smaller than the training length");

    std::vector<Sample> train_set, val_set;
    for (std::size_t i : split.train)
        train_set.push_back(truncate(dataset[i], frames));
    for (std::size_t i : split.validation)
        val_set.push_back(truncate(dataset[i], frames));

    TrainResult result;
    AifNetModel model = AifNetModel::create(feature_layers, frames, kind, derive_seed(cfg.seed, 0x1417));
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5AF));
    Rng augment_rng(derive_seed(cfg.seed, 0xA06));

    result.model = model;
    result.best_validation_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::size_t> order(train_set.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order.begin(), order.end());
        double train_sum = 0.0;
        for (std::size_t i : order) {
            auto lg = cfg.augment
                                ? std::apply([&](const auto& x, const auto& y) { return gradients(model, x, y); },
                                             augment(train_set[i].ctp, train_set[i].label, augment_rng, cfg))
                                : gradients(model, train_set[i].ctp, train_set[i].label);
            if (!std::isfinite(lg.loss))
                throw ValidationError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
            clip_gradient_norm(lg.grads, cfg.clip_norm);
            sgd_step(model, lg.grads, cfg.learning_rate, cfg.momentum);
            train_sum += lg.loss;
        }
        double val_sum = 0.0;
        for (const auto& s : val_set)
            val_sum += pearson_loss(s.label, forward(model, s.ctp).curve);
        EpochRecord rec{epoch, train_sum / static_cast<double>(train_set.size()),
                        val_sum / static_cast<double>(val_set.size())};
        if (!std::isfinite(rec.validation_loss) || !std::isfinite(rec.train_loss))
            throw ValidationError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        result.history.push_back(rec);
        if (on_epoch)
            on_epoch(rec);

        if (rec.validation_loss < result.best_validation_loss) {
            result.best_validation_loss = rec.validation_loss;
            result.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return result;
}

}  // namespace perfkit::aifnet
