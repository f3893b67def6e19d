#include "perfkit/aifnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include <Eigen/Dense>

#include "perfkit/io.hpp"
#include "perfkit/metrics.hpp"

namespace perfkit::aifnet {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::size_t channels_for(std::size_t k) { return std::size_t{1} << (3 + k); }

// cols(v, c*kvol + (dz*ky + dy)*kx + dx) = in(v shifted by (dz,dy,dx) - k/2, c), zero outside.
void im2col(const Mat& in, const Dims3& d, const ConvLayer& L, Mat& cols)
{
    const std::size_t kvol = L.kernel_volume();
    cols.resize(idx(d.size()), idx(L.in_ch * kvol));
    const long hz = static_cast<long>(L.kz / 2), hy = static_cast<long>(L.ky / 2), hx = static_cast<long>(L.kx / 2);
    const long Z = static_cast<long>(d.z), Y = static_cast<long>(d.y), X = static_cast<long>(d.x);
    for (std::size_t c = 0; c < L.in_ch; ++c) {
        const double* src = in.col(idx(c)).data();
        for (std::size_t dz = 0; dz < L.kz; ++dz)
            for (std::size_t dy = 0; dy < L.ky; ++dy)
                for (std::size_t dx = 0; dx < L.kx; ++dx) {
                    double* dst = cols.col(idx(c * kvol + (dz * L.ky + dy) * L.kx + dx)).data();
                    const long oz = static_cast<long>(dz) - hz, oy = static_cast<long>(dy) - hy,
                               ox = static_cast<long>(dx) - hx;
                    for (long z = 0; z < Z; ++z) {
                        const long zz = z + oz;
                        for (long y = 0; y < Y; ++y) {
                            const long yy = y + oy;
                            double* row = dst + (z * Y + y) * X;
                            if (zz < 0 || zz >= Z || yy < 0 || yy >= Y) {
                                std::fill(row, row + X, 0.0);
                                continue;
                            }
                            const double* srow = src + (zz * Y + yy) * X;
                            for (long x = 0; x < X; ++x) {
                                const long xx = x + ox;
                                row[x] = (xx < 0 || xx >= X) ? 0.0 : srow[xx];
                            }
                        }
                    }
                }
    }
}

// Adjoint of im2col: din(v', c) += dcols(v, col).
void col2im_add(const Mat& dcols, const Dims3& d, const ConvLayer& L, Mat& din)
{
    const std::size_t kvol = L.kernel_volume();
    const long hz = static_cast<long>(L.kz / 2), hy = static_cast<long>(L.ky / 2), hx = static_cast<long>(L.kx / 2);
    const long Z = static_cast<long>(d.z), Y = static_cast<long>(d.y), X = static_cast<long>(d.x);
    for (std::size_t c = 0; c < L.in_ch; ++c) {
        double* dst = din.col(idx(c)).data();
        for (std::size_t dz = 0; dz < L.kz; ++dz)
            for (std::size_t dy = 0; dy < L.ky; ++dy)
                for (std::size_t dx = 0; dx < L.kx; ++dx) {
                    const double* src = dcols.col(idx(c * kvol + (dz * L.ky + dy) * L.kx + dx)).data();
                    const long oz = static_cast<long>(dz) - hz, oy = static_cast<long>(dy) - hy,
                               ox = static_cast<long>(dx) - hx;
                    for (long z = 0; z < Z; ++z) {
                        const long zz = z + oz;
                        if (zz < 0 || zz >= Z)
                            continue;
                        for (long y = 0; y < Y; ++y) {
                            const long yy = y + oy;
                            if (yy < 0 || yy >= Y)
                                continue;
                            const double* row = src + (z * Y + y) * X;
                            double* drow = dst + (zz * Y + yy) * X;
                            for (long x = 0; x < X; ++x) {
                                const long xx = x + ox;
                                if (xx >= 0 && xx < X)
                                    drow[xx] += row[x];
                            }
                        }
                    }
                }
    }
}

Eigen::Map<const RowMat> weight_matrix(const ConvLayer& L)
{
    return Eigen::Map<const RowMat>(L.weights.data(), idx(L.out_ch), idx(L.row_length()));
}

void check_spatial(const Dims3& d)
{
    if (d.y < 3 || d.x < 3)
        throw ValidationError("network input needs at least 3 voxels along y and x, got " + to_string(d));
}

// V x frames input; frames past the end of x replicate its last frame.
Mat input_matrix(const CtpVolume4D& x, std::size_t frames)
{
    const std::size_t V = x.voxels();
    Mat in(idx(V), idx(frames));
    for (std::size_t t = 0; t < frames; ++t) {
        const auto f = x.frame(std::min(t, x.frames() - 1));
        double* dst = in.col(idx(t)).data();
        for (std::size_t v = 0; v < V; ++v)
            dst[v] = f[v];
    }
    return in;
}

// Network input: each voxel's enhancement over its mean of the first frames, divided by
// the root mean square enhancement of the volume. Raw HU offsets against the zero padding
// otherwise dominate the first layer and saturate the softmax at the volume border.
Mat standardized(const Mat& in)
{
    const Eigen::Index n = std::min<Eigen::Index>(3, in.cols());
    const Eigen::VectorXd base = in.leftCols(n).rowwise().mean();
    Mat out = in.colwise() - base;
    const double rms = std::sqrt(out.squaredNorm() / static_cast<double>(out.size()));
    if (rms > 1e-12)
        out /= rms;
    return out;
}

struct Tape {
    std::vector<Mat> cols;     ///< im2col of each layer's input
    std::vector<Mat> outputs;  ///< post-ReLU features; logits for the output layer
    std::vector<double> probs;
};

void run_network(const AifNetModel& model, const Mat& input, const Dims3& d, Tape& tape)
{
    const std::size_t n = model.layers.size();
    tape.cols.resize(n);
    tape.outputs.resize(n);
    const Mat scaled = standardized(input);
    const Mat* current = &scaled;
    for (std::size_t l = 0; l < n; ++l) {
        const ConvLayer& L = model.layers[l];
        im2col(*current, d, L, tape.cols[l]);
        Mat& out = tape.outputs[l];
        out.noalias() = tape.cols[l] * weight_matrix(L).transpose();
        for (std::size_t c = 0; c < L.out_ch; ++c)
            out.col(idx(c)).array() += L.bias[c];
        if (l + 1 < n)
            out = out.cwiseMax(0.0);
        current = &out;
    }
    const auto logits = tape.outputs.back().col(0);
    if (!logits.allFinite())
        throw ValidationError("network produced non-finite activations");
    const double zmax = logits.maxCoeff();
    tape.probs.resize(d.size());
    double sum = 0.0;
    for (std::size_t v = 0; v < d.size(); ++v) {
        tape.probs[v] = std::exp(logits(idx(v)) - zmax);
        sum += tape.probs[v];
    }
    for (auto& p : tape.probs)
        p /= sum;
}

std::vector<double> weighted_columns(const Mat& input, std::span<const double> probs)
{
    const Eigen::Map<const Eigen::VectorXd> p(probs.data(), idx(probs.size()));
    const Eigen::VectorXd y = input.transpose() * p;
    return std::vector<double>(y.data(), y.data() + y.size());
}

void require_frames(const AifNetModel& model, const CtpVolume4D& x)
{
    if (x.frames() != model.t_train)
        throw ValidationError("network pass expects " + std::to_string(model.t_train) + " frames, got " +
                              std::to_string(x.frames()));
}

}  // namespace

std::size_t AifNetModel::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& L : layers)
        n += L.weights.size() + L.bias.size();
    return n;
}

AifNetModel AifNetModel::create(std::size_t feature_layers, std::size_t t_train, CurveKind kind, std::uint64_t seed)
{
    if (feature_layers < 1)
        throw ValidationError("network needs at least one feature layer");
    if (t_train < 2)
        throw ValidationError("network needs at least 2 input frames");
    AifNetModel m;
    m.kind = kind;
    m.t_train = t_train;
    Rng rng(seed);
    std::size_t in_ch = t_train;
    for (std::size_t k = 0; k <= feature_layers; ++k) {
        ConvLayer L;
        const bool output = k == feature_layers;
        L.in_ch = in_ch;
        L.out_ch = output ? 1 : channels_for(k + 1);
        L.kz = (k == 0) ? 1 : 3;
        const double fan_in = static_cast<double>(L.in_ch * L.kernel_volume());
        const double fan_out = static_cast<double>(L.out_ch * L.kernel_volume());
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        L.weights.resize(L.out_ch * L.row_length());
        for (auto& w : L.weights)
            w = rng.uniform(-limit, limit);
        L.bias.assign(L.out_ch, 0.0);
        L.weight_velocity.assign(L.weights.size(), 0.0);
        L.bias_velocity.assign(L.bias.size(), 0.0);
        in_ch = L.out_ch;
        m.layers.push_back(std::move(L));
    }
    return m;
}

void AifNetModel::validate() const
{
    if (layers.size() < 2)
        throw ValidationError("model needs at least one feature layer and an output layer");
    std::size_t in_ch = t_train;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const ConvLayer& L = layers[k];
        const bool output = k + 1 == layers.size();
        const std::size_t expect_out = output ? 1 : channels_for(k + 1);
        const std::size_t expect_kz = k == 0 ? 1 : 3;
        if (L.in_ch != in_ch || L.out_ch != expect_out || L.kz != expect_kz || L.ky != 3 || L.kx != 3)
            throw ValidationError("layer " + std::to_string(k) + " does not match the network architecture");
        if (L.weights.size() != L.out_ch * L.row_length() || L.bias.size() != L.out_ch ||
            L.weight_velocity.size() != L.weights.size() || L.bias_velocity.size() != L.bias.size())
            throw ValidationError("layer " + std::to_string(k) + " has inconsistent parameter buffers");
        in_ch = L.out_ch;
    }
}

std::vector<double> weighted_curve(const CtpVolume4D& x, std::span<const double> weights)
{
    if (weights.size() != x.voxels())
        throw ValidationError("weight volume does not match the series' spatial size");
    std::vector<double> out(x.frames(), 0.0);
    for (std::size_t t = 0; t < x.frames(); ++t) {
        const auto f = x.frame(t);
        double acc = 0.0;
        for (std::size_t v = 0; v < f.size(); ++v)
            acc += static_cast<double>(f[v]) * weights[v];
        out[t] = acc;
    }
    return out;
}

Prediction forward(const AifNetModel& model, const CtpVolume4D& x)
{
    require_frames(model, x);
    check_spatial(x.dims());
    const Mat input = input_matrix(x, model.t_train);
    Tape tape;
    run_network(model, input, x.dims(), tape);
    auto curve = weighted_curve(x, tape.probs);
    return {ProbVolume(x.dims(), std::move(tape.probs)), VascularFunction(std::move(curve), x.dt(), model.kind)};
}

double pearson_loss(std::span<const double> y, std::span<const double> yhat)
{
    if (y.size() != yhat.size())
        throw ValidationError("pearson_loss: length mismatch");
    if (y.size() < 2)
        throw ValidationError("pearson_loss needs at least 2 samples");
    const double n = static_cast<double>(y.size());
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    const double mp = std::accumulate(yhat.begin(), yhat.end(), 0.0) / n;
    double syp = 0.0, syy = 0.0, spp = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        syp += (y[t] - my) * (yhat[t] - mp);
        syy += (y[t] - my) * (y[t] - my);
        spp += (yhat[t] - mp) * (yhat[t] - mp);
    }
    const double ny = std::sqrt(syy), np = std::sqrt(spp);
    if (ny < 1e-12 || np < 1e-12)
        throw ValidationError("pearson_loss: degenerate (zero-variance) signal");
    return -std::clamp(syp / (ny * np), -1.0, 1.0);
}

double pearson_loss(const VascularFunction& y, const VascularFunction& yhat)
{
    return pearson_loss(y.values(), yhat.values());
}

std::vector<double> pearson_loss_gradient(std::span<const double> y, std::span<const double> yhat)
{
    const double loss = pearson_loss(y, yhat);
    const double rho = -loss;
    const double n = static_cast<double>(y.size());
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    const double mp = std::accumulate(yhat.begin(), yhat.end(), 0.0) / n;
    double syy = 0.0, spp = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        syy += (y[t] - my) * (y[t] - my);
        spp += (yhat[t] - mp) * (yhat[t] - mp);
    }
    const double ny = std::sqrt(syy), np = std::sqrt(spp);
    std::vector<double> g(y.size());
    for (std::size_t t = 0; t < y.size(); ++t)
        g[t] = -((y[t] - my) / (ny * np) - rho * (yhat[t] - mp) / (np * np));
    return g;
}

LossGradients gradients(const AifNetModel& model, const CtpVolume4D& x, const VascularFunction& y)
{
    require_frames(model, x);
    check_spatial(x.dims());
    if (y.size() != model.t_train)
        throw ValidationError("label length must equal the training length");
    const Dims3 d = x.dims();
    const Mat input = input_matrix(x, model.t_train);
    Tape tape;
    run_network(model, input, d, tape);
    const auto yhat = weighted_columns(input, tape.probs);

    LossGradients out;
    out.loss = pearson_loss(y.values(), yhat);
    const auto dyhat = pearson_loss_gradient(y.values(), yhat);

    // Through the weighted average and the softmax.
    const Eigen::Map<const Eigen::VectorXd> dy(dyhat.data(), idx(dyhat.size()));
    const Eigen::VectorXd g = input * dy;
    const Eigen::Map<const Eigen::VectorXd> p(tape.probs.data(), idx(tape.probs.size()));
    const double mean_g = p.dot(g);
    Mat dout = (p.array() * (g.array() - mean_g)).matrix();

    const std::size_t n = model.layers.size();
    out.grads.weights.resize(n);
    out.grads.bias.resize(n);
    for (std::size_t l = n; l-- > 0;) {
        const ConvLayer& L = model.layers[l];
        auto& gw = out.grads.weights[l];
        gw.resize(L.weights.size());
        Eigen::Map<RowMat>(gw.data(), idx(L.out_ch), idx(L.row_length())).noalias() =
            dout.transpose() * tape.cols[l];
        const Eigen::RowVectorXd gb = dout.colwise().sum();
        out.grads.bias[l].assign(gb.data(), gb.data() + gb.size());
        if (l == 0)
            break;
        const Mat dcols = dout * weight_matrix(L);
        Mat din = Mat::Zero(idx(d.size()), idx(L.in_ch));
        col2im_add(dcols, d, L, din);
        dout = (tape.outputs[l - 1].array() > 0.0).select(din, 0.0);
    }
    return out;
}

Prediction predict(const AifNetModel& model, const CtpVolume4D& x)
{
    model.validate();
    check_spatial(x.dims());
    const Mat input = input_matrix(x, model.t_train);
    Tape tape;
    run_network(model, input, x.dims(), tape);
    auto curve = weighted_curve(x, tape.probs);
    return {ProbVolume(x.dims(), std::move(tape.probs)), VascularFunction(std::move(curve), x.dt(), model.kind)};
}

VascularFunction recalibrate_vof(const VascularFunction& vof_hat, const ProbVolume& pvol, const CtpVolume4D& x,
                                 int baseline_frames)
{
    if (pvol.dims() != x.dims())
        throw ValidationError("probability volume and series differ spatially");
    const auto hat = metrics::ptb(vof_hat, baseline_frames);
    if (!(hat.ptb > 0.0))
        throw ValidationError("predicted VOF has non-positive peak-to-baseline");

    std::size_t best = 0;
    double best_weighted = -std::numeric_limits<double>::infinity();
    double best_ptb = 0.0;
    std::vector<double> curve(x.frames());
    for (std::size_t v = 0; v < x.voxels(); ++v) {
        for (std::size_t t = 0; t < x.frames(); ++t)
            curve[t] = x.at(t, v);
        const double voxel_ptb = metrics::ptb(curve, baseline_frames).ptb;
        const double weighted = voxel_ptb * pvol[v];
        if (weighted > best_weighted) {
            best_weighted = weighted;
            best = v;
            best_ptb = voxel_ptb;
        }
    }
    if (!(best_ptb > 0.0))
        throw ValidationError("voxel " + to_string(unravel(x.dims(), best)) + " selected for recalibration has "
                              "non-positive peak-to-baseline");
    const double scale = best_ptb / hat.ptb;
    std::vector<double> out(vof_hat.size());
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] = hat.baseline + (vof_hat[t] - hat.baseline) * scale;
    return VascularFunction(std::move(out), vof_hat.dt(), vof_hat.kind());
}

// ANET: "ANET" | u32 version | u32 K | u32 T_train | u8 kind |
//       per layer: u32 out_ch, in_ch, kz, ky, kx | f32 weights | f32 biases.
namespace {

constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void put(std::string& out, T value)
{
    static_assert(sizeof(T) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    if constexpr (std::endian::native == std::endian::big)
        bits = __builtin_bswap32(bits);
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.append(buf, 4);
}

class ModelReader {
public:
    explicit ModelReader(std::string bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T get()
    {
        static_assert(sizeof(T) == 4);
        need(4);
        std::uint32_t bits;
        std::memcpy(&bits, bytes_.data() + pos_, 4);
        if constexpr (std::endian::native == std::endian::big)
            bits = __builtin_bswap32(bits);
        pos_ += 4;
        T value;
        std::memcpy(&value, &bits, 4);
        return value;
    }
    std::uint8_t byte()
    {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    bool done() const { return pos_ == bytes_.size(); }
    const std::string& bytes() const { return bytes_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > bytes_.size())
            throw FormatError("model file is truncated");
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_model(const std::filesystem::path& path, const AifNetModel& model)
{
    model.validate();
    std::string out = "ANET";
    put(out, kModelVersion);
    put(out, static_cast<std::uint32_t>(model.feature_layers()));
    put(out, static_cast<std::uint32_t>(model.t_train));
    out.push_back(static_cast<char>(model.kind));
    for (const auto& L : model.layers) {
        for (std::size_t v : {L.out_ch, L.in_ch, L.kz, L.ky, L.kx})
            put(out, static_cast<std::uint32_t>(v));
        for (double w : L.weights)
            put(out, static_cast<float>(w));
        for (double b : L.bias)
            put(out, static_cast<float>(b));
    }
    io::write_atomic(path, out);
}

AifNetModel load_model(const std::filesystem::path& path)
{
    ModelReader r(io::read_text(path));
    if (r.bytes().size() < 4 || r.bytes().compare(0, 4, "ANET") != 0)
        throw FormatError(path.string() + ": bad magic, expected ANET");
    r.skip(4);
    if (r.get<std::uint32_t>() != kModelVersion)
        throw FormatError(path.string() + ": unsupported model version");
    const std::size_t K = r.get<std::uint32_t>();
    AifNetModel m;
    m.t_train = r.get<std::uint32_t>();
    const auto kind = r.byte();
    if (kind > 1)
        throw FormatError(path.string() + ": unknown model kind");
    m.kind = static_cast<CurveKind>(kind);
    if (K < 1 || K > 16)
        throw FormatError(path.string() + ": implausible layer count");
    for (std::size_t k = 0; k <= K; ++k) {
        ConvLayer L;
        L.out_ch = r.get<std::uint32_t>();
        L.in_ch = r.get<std::uint32_t>();
        L.kz = r.get<std::uint32_t>();
        L.ky = r.get<std::uint32_t>();
        L.kx = r.get<std::uint32_t>();
        if (L.out_ch * L.row_length() > (std::size_t{1} << 28))
            throw FormatError(path.string() + ": layer too large");
        L.weights.resize(L.out_ch * L.row_length());
        for (auto& w : L.weights)
            w = r.get<float>();
        L.bias.resize(L.out_ch);
        for (auto& b : L.bias)
            b = r.get<float>();
        L.weight_velocity.assign(L.weights.size(), 0.0);
        L.bias_velocity.assign(L.bias.size(), 0.0);
        m.layers.push_back(std::move(L));
    }
    if (!r.done())
        throw FormatError(path.string() + ": trailing bytes after the last layer");
    try {
        m.validate();
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return m;
}

}  // namespace perfkit::aifnet
