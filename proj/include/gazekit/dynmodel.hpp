#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazekit/image.hpp"
#include "gazekit/saleval.hpp"
#include "gazekit/salmap.hpp"

namespace gazekit::dyn {

// Planar c x h x w tensor, values in [0, 1]. Six channels only for a stacked
// (pre-highlight, post-highlight) pair.
struct ImageTensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> data;

    ImageTensor() = default;
    ImageTensor(int channels, int height, int width, double fill = 0.0);

    double& at(int ch, int y, int x) {
        return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    double at(int ch, int y, int x) const {
        return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

ImageTensor to_tensor(const Image& img);  // grey images are replicated to 3 channels
ImageTensor assemble_pair(const ImageTensor& pre_frame, const ImageTensor& post_frame);
ImageTensor resize_bilinear(const ImageTensor& x, int h, int w);
SaliencyMap resize_bilinear(const SaliencyMap& m, int w, int h);

enum class Mode { Train, Eval };

inline constexpr int kReduceIn = 6;
inline constexpr int kChannels = 3;
inline constexpr int kEnc1 = 8;
inline constexpr int kEnc2 = 16;
inline constexpr double kBnEps = 1e-8;

// reduce(1x1, 6->3) -> BN -> ReLU -> enc1(3x3, 3->8) -> ReLU -> maxpool2
// -> enc2(3x3, 8->16) -> ReLU -> maxpool2 -> bilinear x4 -> head(1x1, 16->1)
// -> logistic. Three-channel inputs skip the reduce layer.
struct ModelParams {
    std::vector<double> reduce_w;  // [3][6]
    std::vector<double> reduce_b;  // [3]
    std::vector<double> bn_gamma;  // [3]
    std::vector<double> bn_beta;   // [3]
    std::vector<double> bn_running_mean;
    std::vector<double> bn_running_var;
    double bn_momentum = 0.1;
    std::vector<double> enc1_w;  // [8][3][3][3]
    std::vector<double> enc1_b;  // [8]
    std::vector<double> enc2_w;  // [16][8][3][3]
    std::vector<double> enc2_b;  // [16]
    std::vector<double> head_w;  // [16]
    std::vector<double> head_b;  // [1]
    Mode mode = Mode::Train;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Same layout as the trainable part of ModelParams.
struct ParamGrads {
    std::vector<double> reduce_w, reduce_b, bn_gamma, bn_beta, enc1_w, enc1_b, enc2_w, enc2_b,
        head_w, head_b;

    static ParamGrads zeros_like(const ModelParams& p);
};

template <class P, class F>
void for_each_trainable(P& p, F&& f) {
    f(std::string_view("reduce_w"), p.reduce_w);
    f(std::string_view("reduce_b"), p.reduce_b);
    f(std::string_view("bn_gamma"), p.bn_gamma);
    f(std::string_view("bn_beta"), p.bn_beta);
    f(std::string_view("enc1_w"), p.enc1_w);
    f(std::string_view("enc1_b"), p.enc1_b);
    f(std::string_view("enc2_w"), p.enc2_w);
    f(std::string_view("enc2_b"), p.enc2_b);
    f(std::string_view("head_w"), p.head_w);
    f(std::string_view("head_b"), p.head_b);
}

// He fan-in weights, biases uniform in +-1/sqrt(fan_in); BN scale 1, shift 0,
// running stats (0, 1).
ModelParams init_params(std::uint64_t seed);

struct LossWeights {
    double w_kl = 1.0;
    double w_cc = 0.5;
    double w_nss = 0.1;

    void validate() const;
};

inline constexpr double kNssStdOffset = 1e-6;

struct ForwardCache;

struct ForwardResult {
    std::vector<SaliencyMap> maps;
    std::shared_ptr<ForwardCache> cache;
};

// Batch forward. In Train mode BN normalises with batch statistics and the
// updated running statistics are returned in the cache (see
// commit_running_stats); Eval mode uses the running statistics only and
// every item is computed independently of the rest of the batch.
ForwardResult forward(const ModelParams& p, std::span<const ImageTensor> batch);
SaliencyMap predict(const ModelParams& p, const ImageTensor& x);

void commit_running_stats(ModelParams& p, const ForwardCache& cache);

// Normalised activations after the reduce layer, before BN scale/shift
// (train-mode introspection).
const std::vector<double>& bn_normalized(const ForwardCache& cache);

struct LossResult {
    double value = 0;
    SaliencyMap grad;  // dL/dpred
};

// L = w_kl KL(gt || pred) - w_cc CC(pred, gt) - w_nss NSS(pred, fix), with
// the NSS standard deviation softened by kNssStdOffset.
LossResult loss(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fix,
                const LossWeights& w);

// Mean loss over the batch; stores dL/dpred in the cache for backward.
double apply_loss(ForwardCache& cache, std::span<const SaliencyMap> gts,
                  std::span<const FixationSet> fixes, const LossWeights& w);

// Gradient of upstream * mean loss w.r.t. every trainable parameter. Requires a
// train-mode cache with the loss applied.
ParamGrads backward(const ModelParams& p, const ForwardCache& cache, double upstream);

struct GradCheckOptions {
    double step = 1e-4;
    // Scales the analytic enc2 weight gradient; != 1 only for harness self-tests.
    double enc2_corruption = 1.0;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central differences on every trainable parameter (train mode, batch of one);
// error is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const ModelParams& p, const ImageTensor& x, const SaliencyMap& gt,
                           const FixationSet& fix, const LossWeights& w,
                           const GradCheckOptions& opts = {});

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ParamGrads m;
    ParamGrads v;
    long step = 0;

    static AdamState zeros_like(const ModelParams& p);
};

// One bias-corrected update of a flat parameter block at time step `step` (>= 1).
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, long step, double lr, const AdamOptions& opts);

void adam_step(ModelParams& p, const ParamGrads& g, AdamState& state, double lr,
               const AdamOptions& opts = {});

struct TrainConfig {
    double lr0 = 1e-4;
    double decay_factor = 0.1;
    int decay_every_epochs = 5;
    int epochs = 10;
    std::uint64_t seed = 7;
    int batch = 4;
    int resolution = 64;

    void validate() const;
};

double learning_rate(const TrainConfig& cfg, int epoch);

struct TrainSample {
    ImageTensor input;
    SaliencyMap gt;
    FixationSet fix;
};

struct TrainResult {
    ModelParams params;
    std::vector<double> history;  // mean train-mode loss per epoch
    double initial_eval_loss = 0;
    double final_eval_loss = 0;
    long steps = 0;
};

// Mean loss over the dataset, batch size 1, dataset order, BN in eval mode.
double evaluate_loss(const ModelParams& p, std::span<const TrainSample> data,
                     const LossWeights& w);

TrainResult train(std::span<const TrainSample> data, const TrainConfig& cfg,
                  const LossWeights& w);

// Little-endian: "GKMP", u32 version, then per array u32 rank, u32 dims[rank],
// f32 values, in declaration order.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string serialize_checkpoint(const ModelParams& p);
ModelParams deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& p);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gazekit::dyn
