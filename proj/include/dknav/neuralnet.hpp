#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dknav/dataset_io.hpp"
#include "dknav/errors.hpp"
#include "dknav/pose_core.hpp"

// A small convolutional pose regressor trained from scratch.
//
// Architecture: `blocks` repetitions of [3x3 conv (stride 1, pad 1),
// leaky-ReLU, 2x2 max-pool], channel widths doubling from `base_channels`;
// then spatial dropout, global average pooling, and two parallel affine
// heads producing a 3-vector translation and a 6-number rotation encoding
// (first two orthonormal frame columns; see pose_core Rot6D).
//
// The loss balances the two tasks with learnable log-std weights:
//   L = L_r * exp(-2*s_r) + L_t * exp(-2*s_t) + 2*(s_r + s_t)
// where L_r and L_t are batch sums of unsquared residual L2 norms.
//
// Everything is templated on the scalar type: float for production,
// double for finite-difference gradient verification.

namespace dknav {

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class EmptySplit : public Error {
 public:
  using Error::Error;
};

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    long long n = 1;
    for (int d : t.shape) n *= d;
    t.v.assign(static_cast<std::size_t>(n), T(0));
    return t;
  }
  long long numel() const { return static_cast<long long>(v.size()); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
};

struct NetworkConfig {
  int blocks = 5;
  int base_channels = 8;  // width doubles every block
  int in_channels = 3;
  double leaky_slope = 0.1;
  double dropout_p = 0.2;

  int channels_at(int block) const { return base_channels << block; }
  int feature_dim() const { return channels_at(blocks - 1); }
  int min_input_side() const { return 1 << blocks; }
};

template <typename T>
struct ConvLayer {
  Tensor<T> w;  // [C_out, C_in, 3, 3]
  Tensor<T> b;  // [C_out]
};

template <typename T>
struct NetworkParamsT {
  NetworkConfig config;
  std::vector<ConvLayer<T>> conv;  // one per block
  Tensor<T> head_t_w, head_t_b;    // [3, F], [3]
  Tensor<T> head_r_w, head_r_b;    // [6, F], [6]
  Tensor<T> sigma_t, sigma_r;      // scalars, shape [1], init 0

  // Applies fn to every learnable tensor in the fixed declaration order
  // (also the checkpoint serialization order).
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (std::size_t i = 0; i < conv.size(); ++i) {
      fn("conv" + std::to_string(i) + ".w", conv[i].w);
      fn("conv" + std::to_string(i) + ".b", conv[i].b);
    }
    fn("head_t.w", head_t_w);
    fn("head_t.b", head_t_b);
    fn("head_r.w", head_r_w);
    fn("head_r.b", head_r_b);
    fn("sigma_t", sigma_t);
    fn("sigma_r", sigma_r);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<NetworkParamsT*>(this)->for_each(
        [&](const std::string& name, Tensor<T>& t) { fn(name, const_cast<const Tensor<T>&>(t)); });
  }
};

using NetworkParams = NetworkParamsT<float>;

// He-uniform convolution kernels, uniform heads, zero biases, zero sigmas.
template <typename T>
NetworkParamsT<T> init_params(const NetworkConfig& config, std::uint64_t seed);

// Runs the backbone and heads on a batch [B, C, H, W]; returns t_hat [B, 3]
// and r_hat [B, 6].  `training` enables spatial dropout, whose mask is fully
// determined by dropout_seed.  Throws ShapeMismatch for bad input shapes
// (input sides must be at least 2^blocks).
template <typename T>
void forward(const NetworkParamsT<T>& params, const Tensor<T>& batch, bool training,
             std::uint64_t dropout_seed, Tensor<T>& t_hat, Tensor<T>& r_hat);

struct LossBreakdown {
  double total = 0.0;
  double l_r = 0.0;  // sum over batch of rotation residual norms
  double l_t = 0.0;  // sum over batch of translation residual norms
};

// Task-weighted loss; t_* are [B, 3], r_* are [B, 6].
template <typename T>
LossBreakdown loss_value(const Tensor<T>& t_hat, const Tensor<T>& r_hat,
                         const Tensor<T>& t_label, const Tensor<T>& r_label, T sigma_t,
                         T sigma_r);

// Forward + loss + reverse-mode gradients for every learnable.  The
// returned structure mirrors `params` shape-for-shape.  With the same
// dropout_seed this is the exact derivative of compute_loss.  The optional
// outputs expose the loss breakdown and the forward predictions so training
// can log metrics without a second pass.
template <typename T>
double compute_loss(const NetworkParamsT<T>& params, const Tensor<T>& batch,
                    const Tensor<T>& t_label, const Tensor<T>& r_label, bool training,
                    std::uint64_t dropout_seed);
template <typename T>
NetworkParamsT<T> compute_gradients(const NetworkParamsT<T>& params, const Tensor<T>& batch,
                                    const Tensor<T>& t_label, const Tensor<T>& r_label,
                                    bool training, std::uint64_t dropout_seed,
                                    LossBreakdown* loss_out = nullptr,
                                    Tensor<T>* t_hat_out = nullptr,
                                    Tensor<T>* r_hat_out = nullptr);

template <typename T>
struct AdamState {
  NetworkParamsT<T> m, v;
  long long step = 0;
};

// Standard Adam with bias correction: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
template <typename T>
void adam_step(NetworkParamsT<T>& params, const NetworkParamsT<T>& grads, AdamState<T>& state,
               double lr);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr_max = 1e-3;
  int cycles = 5;       // triangular learning-rate periods across the run
  double dropout_p = 0.2;
  std::uint64_t seed = 0;
  int downscale = 4;    // image downscale factor applied when loading
  bool augment = true;  // pose-warp + photometric augmentation on train data
  NetworkConfig network;
};

// Triangular wave: `cycles` periods across `epochs`, oscillating between
// lr_max/10 (cycle start and end) and lr_max (mid-cycle).
double cyclical_lr(int epoch, const TrainConfig& config);

struct EpochMetrics {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double mean_dt_m = 0.0;
  double mean_dq_deg = 0.0;
  double mean_dtr_frac = 0.0;
};

struct TrainResult {
  NetworkParams params;  // parameters of the best validation epoch
  std::vector<EpochMetrics> log;
  int best_epoch = -1;
};

// Trains on the plan's train slices with seeded shuffling and per-frame
// augmentation, evaluates the val slices each epoch, and returns the
// parameters with the lowest validation loss (last epoch when the plan has
// no val frames).  Deterministic for fixed inputs.  Throws EmptySplit when
// the plan yields no training frames.
TrainResult train(const std::vector<SequenceRecord>& records, const SplitPlan& plan,
                  const TrainConfig& config);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log);

struct EvalThresholds {
  double pos_frac = 0.05;  // range-normalised position compliance bound
  double att_deg = 5.0;    // attitude compliance bound, degrees
};

struct FrameEval {
  double t_s = 0.0;
  double dt_m = 0.0;       // translation error, metres
  double dq_deg = 0.0;     // attitude geodesic error, degrees
  double dtr_frac = 0.0;   // range-normalised translation error
  int phase = 1;
};

struct EvalSummary {
  double mean_dt_m = 0.0, median_dt_m = 0.0;
  double mean_dq_deg = 0.0, median_dq_deg = 0.0;
  double mean_dtr_frac = 0.0, median_dtr_frac = 0.0;
  double pos_compliance = 0.0;  // fraction of frames with dtr <= pos_frac
  double att_compliance = 0.0;  // fraction of frames with dq <= att_deg
};

struct EvalResult {
  std::vector<FrameEval> frames;
  EvalSummary summary;
};

// Runs the network over every frame of a sequence and reports pose errors.
// A degenerate rotation decoding falls back to the identity attitude.
EvalResult evaluate(const NetworkParams& params, const SequenceRecord& sequence,
                    const EvalThresholds& thresholds, int downscale);

void write_eval_csv(const std::string& path, const EvalResult& result);

// Checkpoints: magic "DKZ1", little-endian uint32 JSON header length, JSON
// header (config + tensor shapes), then raw little-endian float32 values in
// declaration order.
void save_checkpoint(const std::string& path, const NetworkParams& params);
NetworkParams load_checkpoint(const std::string& path);

// Per-frame deterministic augmentation used by train(): pose warp followed
// by photometric jitter, both derived from `seed`.  Exposed for tests.
struct AugmentedFrame {
  Image image;
  Pose pose;
};
AugmentedFrame augment_frame(const Image& image, const Pose& pose, const CameraIntrinsics& intr,
                             std::uint64_t seed);

// Median with the average-of-middle-two convention for even counts.
double median(std::vector<double> values);

}  // namespace dknav
