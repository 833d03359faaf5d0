#pragma once

#include "wnet/autograd.hpp"
#include "wnet/tensor.hpp"

namespace wnet {

/// Batch-norm mode: batch statistics vs running statistics.
enum class BnMode { kTrain, kEval };

/// Running statistics + hyperparameters of one batch-norm layer.
/// gamma/beta live outside as ordinary parameters; this struct owns only
/// the non-learned state.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // (1, c, 1, 1)
  Tensor<T> running_var;   // (1, c, 1, 1), elementwise >= 0
  T momentum = T(0.1);
  T eps = T(1e-5);
  BnMode mode = BnMode::kTrain;

  explicit BatchNormState(int channels = 0)
      : running_mean(Shape4(1, channels, 1, 1), T(0)),
        running_var(Shape4(1, channels, 1, 1), T(1)) {}

  int channels() const { return running_mean.dims().c; }
};

namespace ops {

/// Cross-correlation (no kernel flip). weight is (c_out, c_in, kh, kw),
/// bias is (1, c_out, 1, 1) and may be an empty tensor for no bias.
/// Output spatial dims are (h + 2p - kh)/s + 1; the division must be exact.
template <typename T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& weight,
                  const NodePtr<T>& bias, int stride, int padding);

/// Train mode normalizes with batch statistics and updates state's running
/// stats; eval mode uses the running stats. Backward through the batch
/// statistics is exact.
template <typename T>
NodePtr<T> batchnorm2d(const NodePtr<T>& x, const NodePtr<T>& gamma,
                       const NodePtr<T>& beta, BatchNormState<T>& state);

/// 2x2 non-overlapping max. Requires even h, w. Backward routes the whole
/// gradient to the argmax position (first occurrence in row-major order).
template <typename T>
NodePtr<T> maxpool2x2(const NodePtr<T>& x);

/// Each pixel replicated into a 2x2 block.
template <typename T>
NodePtr<T> nn_upsample2x(const NodePtr<T>& x);

/// Fractionally-strided convolution. weight is (c_in, c_out, kh, kw), no
/// bias, no padding: output spatial dims are (in - 1) * stride + k.
template <typename T>
NodePtr<T> transpose_conv2d(const NodePtr<T>& x, const NodePtr<T>& weight, int stride);

template <typename T>
NodePtr<T> relu(const NodePtr<T>& x);

template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x);

/// Stacks a then b along the channel axis; n, h, w must match.
template <typename T>
NodePtr<T> concat_channels(const NodePtr<T>& a, const NodePtr<T>& b);

/// Channels [c_begin, c_end) of x.
template <typename T>
NodePtr<T> slice_channels(const NodePtr<T>& x, int c_begin, int c_end);

/// Multiplies the single-channel gate into every channel of x.
/// gate gradient is the channel sum of x * upstream.
template <typename T>
NodePtr<T> mul_broadcast(const NodePtr<T>& x, const NodePtr<T>& gate);

/// Spatial window [h0, h0+h) x [w0, w0+w); backward zero-embeds.
template <typename T>
NodePtr<T> crop_spatial(const NodePtr<T>& x, int h0, int w0, int h, int w);

}  // namespace ops
}  // namespace wnet
