#include "wnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "wnet/parallel.hpp"

namespace wnet::ops {

namespace {

template <typename T>
const T* plane(const Tensor<T>& t, int n, int c) {
  return t.data() + ((static_cast<std::int64_t>(n) * t.dims().c + c) *
                     t.dims().h) * t.dims().w;
}

template <typename T>
T* plane(Tensor<T>& t, int n, int c) {
  return t.data() + ((static_cast<std::int64_t>(n) * t.dims().c + c) *
                     t.dims().h) * t.dims().w;
}

int conv_out_dim(int in, int pad, int k, int stride, const char* axis) {
  const int span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw DimError(std::string("conv2d: spatial size ") + std::to_string(in) +
                   " with kernel " + std::to_string(k) + ", pad " +
                   std::to_string(pad) + ", stride " + std::to_string(stride) +
                   " gives no integral output (axis " + axis + ")");
  }
  const int out = span / stride + 1;
  if (out <= 0) {
    throw DimError(std::string("conv2d: non-positive output on axis ") + axis);
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b, int stride, int pad) {
  const Shape4& xd = x.dims();
  const Shape4& wd = w.dims();
  const int oh = conv_out_dim(xd.h, pad, wd.h, stride, "h");
  const int ow = conv_out_dim(xd.w, pad, wd.w, stride, "w");
  Tensor<T> y(Shape4(xd.n, wd.n, oh, ow));

  parallel_for(static_cast<std::int64_t>(xd.n) * wd.n, [&](std::int64_t t) {
    const int n = static_cast<int>(t / wd.n);
    const int oc = static_cast<int>(t % wd.n);
    T* yp = plane(y, n, oc);
    const T bias = b.empty() ? T(0) : b.data()[oc];
    std::fill(yp, yp + static_cast<std::int64_t>(oh) * ow, bias);
    for (int ic = 0; ic < xd.c; ++ic) {
      const T* xp = plane(x, n, ic);
      for (int kh = 0; kh < wd.h; ++kh) {
        for (int kw = 0; kw < wd.w; ++kw) {
          const T wv = w.at(oc, ic, kh, kw);
          int ow_lo = 0;
          if (pad - kw > 0) ow_lo = (pad - kw + stride - 1) / stride;
          const int num = xd.w - 1 - kw + pad;
          const int ow_hi = num < 0 ? -1 : std::min(ow - 1, num / stride);
          for (int r = 0; r < oh; ++r) {
            const int ih = r * stride + kh - pad;
            if (ih < 0 || ih >= xd.h) continue;
            const T* xrow = xp + static_cast<std::int64_t>(ih) * xd.w;
            T* yrow = yp + static_cast<std::int64_t>(r) * ow;
            if (stride == 1) {
              const T* xs = xrow + (ow_lo + kw - pad);
              for (int q = ow_lo; q <= ow_hi; ++q) yrow[q] += wv * xs[q - ow_lo];
            } else {
              for (int q = ow_lo; q <= ow_hi; ++q) {
                yrow[q] += wv * xrow[q * stride + kw - pad];
              }
            }
          }
        }
      }
    }
  });
  return y;
}

// dx += dy (*) w
template <typename T>
void conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& w, int stride,
                           int pad, Tensor<T>& dx) {
  const Shape4& xd = dx.dims();
  const Shape4& yd = dy.dims();
  const Shape4& wd = w.dims();
  parallel_for(static_cast<std::int64_t>(xd.n) * xd.c, [&](std::int64_t t) {
    const int n = static_cast<int>(t / xd.c);
    const int ic = static_cast<int>(t % xd.c);
    T* dxp = plane(dx, n, ic);
    for (int oc = 0; oc < yd.c; ++oc) {
      const T* dyp = plane(dy, n, oc);
      for (int kh = 0; kh < wd.h; ++kh) {
        for (int kw = 0; kw < wd.w; ++kw) {
          const T wv = w.at(oc, ic, kh, kw);
          int ow_lo = 0;
          if (pad - kw > 0) ow_lo = (pad - kw + stride - 1) / stride;
          const int num = xd.w - 1 - kw + pad;
          const int ow_hi = num < 0 ? -1 : std::min(yd.w - 1, num / stride);
          for (int r = 0; r < yd.h; ++r) {
            const int ih = r * stride + kh - pad;
            if (ih < 0 || ih >= xd.h) continue;
            T* dxrow = dxp + static_cast<std::int64_t>(ih) * xd.w;
            const T* dyrow = dyp + static_cast<std::int64_t>(r) * yd.w;
            if (stride == 1) {
              T* ds = dxrow + (ow_lo + kw - pad);
              for (int q = ow_lo; q <= ow_hi; ++q) ds[q - ow_lo] += wv * dyrow[q];
            } else {
              for (int q = ow_lo; q <= ow_hi; ++q) {
                dxrow[q * stride + kw - pad] += wv * dyrow[q];
              }
            }
          }
        }
      }
    }
  });
}

// dw += x (*) dy, db += sum(dy)
template <typename T>
void conv2d_backward_params(const Tensor<T>& dy, const Tensor<T>& x, int stride,
                            int pad, Tensor<T>& dw, Tensor<T>* db) {
  const Shape4& xd = x.dims();
  const Shape4& yd = dy.dims();
  const Shape4& wd = dw.dims();
  parallel_for(yd.c, [&](std::int64_t occ) {
    const int oc = static_cast<int>(occ);
    for (int n = 0; n < yd.n; ++n) {
      const T* dyp = plane(dy, n, oc);
      if (db) {
        T acc = T(0);
        const std::int64_t count = static_cast<std::int64_t>(yd.h) * yd.w;
        for (std::int64_t i = 0; i < count; ++i) acc += dyp[i];
        db->data()[oc] += acc;
      }
      for (int ic = 0; ic < xd.c; ++ic) {
        const T* xp = plane(x, n, ic);
        for (int kh = 0; kh < wd.h; ++kh) {
          for (int kw = 0; kw < wd.w; ++kw) {
            int ow_lo = 0;
            if (pad - kw > 0) ow_lo = (pad - kw + stride - 1) / stride;
            const int num = xd.w - 1 - kw + pad;
            const int ow_hi = num < 0 ? -1 : std::min(yd.w - 1, num / stride);
            T acc = T(0);
            for (int r = 0; r < yd.h; ++r) {
              const int ih = r * stride + kh - pad;
              if (ih < 0 || ih >= xd.h) continue;
              const T* xrow = xp + static_cast<std::int64_t>(ih) * xd.w;
              const T* dyrow = dyp + static_cast<std::int64_t>(r) * yd.w;
              if (stride == 1) {
                const T* xs = xrow + (ow_lo + kw - pad);
                for (int q = ow_lo; q <= ow_hi; ++q) acc += dyrow[q] * xs[q - ow_lo];
              } else {
                for (int q = ow_lo; q <= ow_hi; ++q) {
                  acc += dyrow[q] * xrow[q * stride + kw - pad];
                }
              }
            }
            dw.at(oc, ic, kh, kw) += acc;
          }
        }
      }
    }
  });
}

}  // namespace

template <typename T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& weight,
                  const NodePtr<T>& bias, int stride, int padding) {
  const Shape4& xd = x->value.dims();
  const Shape4& wd = weight->value.dims();
  if (stride < 1) throw DimError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimError("conv2d: padding must be >= 0");
  if (xd.c != wd.c) {
    throw DimError("conv2d: input channels " + std::to_string(xd.c) +
                   " != weight c_in " + std::to_string(wd.c) + " (axis c)");
  }
  const bool has_bias = bias && !bias->value.empty();
  if (has_bias && bias->value.numel() != wd.n) {
    throw DimError("conv2d: bias length " + std::to_string(bias->value.numel()) +
                   " != c_out " + std::to_string(wd.n) + " (axis c)");
  }

  static const Tensor<T> kNoBias;
  Tensor<T> y = conv2d_forward(x->value, weight->value,
                               has_bias ? bias->value : kNoBias, stride, padding);

  std::vector<NodePtr<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  const int s = stride, p = padding;
  return make_op_node<T>(
      std::move(y), std::move(inputs), [s, p, has_bias](Node<T>& self) {
        const NodePtr<T>& xin = self.inputs[0];
        const NodePtr<T>& win = self.inputs[1];
        if (xin->requires_grad) {
          conv2d_backward_input(self.grad, win->value, s, p, xin->grad_ref());
        }
        if (win->requires_grad) {
          Tensor<T>* db = nullptr;
          if (has_bias && self.inputs[2]->requires_grad) {
            db = &self.inputs[2]->grad_ref();
          }
          conv2d_backward_params(self.grad, xin->value, s, p, win->grad_ref(), db);
        } else if (has_bias && self.inputs[2]->requires_grad) {
          const NodePtr<T>& bin = self.inputs[2];
          Tensor<T>& db = bin->grad_ref();
          const Shape4& yd = self.grad.dims();
          for (int n = 0; n < yd.n; ++n) {
            for (int oc = 0; oc < yd.c; ++oc) {
              const T* dyp = plane(self.grad, n, oc);
              T acc = T(0);
              const std::int64_t count = static_cast<std::int64_t>(yd.h) * yd.w;
              for (std::int64_t i = 0; i < count; ++i) acc += dyp[i];
              db.data()[oc] += acc;
            }
          }
        }
      });
}

template <typename T>
NodePtr<T> batchnorm2d(const NodePtr<T>& x, const NodePtr<T>& gamma,
                       const NodePtr<T>& beta, BatchNormState<T>& state) {
  const Shape4& xd = x->value.dims();
  const int c = xd.c;
  if (state.channels() != c) {
    throw DimError("batchnorm2d: state has " + std::to_string(state.channels()) +
                   " channels, input has " + std::to_string(c) + " (axis c)");
  }
  if (gamma->value.numel() != c || beta->value.numel() != c) {
    throw DimError("batchnorm2d: affine size mismatch (axis c)");
  }
  const std::int64_t per_channel = static_cast<std::int64_t>(xd.n) * xd.h * xd.w;
  if (state.mode == BnMode::kTrain && per_channel < 2) {
    throw DimError("batchnorm2d: train mode needs >= 2 values per channel, got " +
                   std::to_string(per_channel));
  }

  Tensor<T> y(xd);
  // mean / inv-std actually used for normalization, kept for backward
  auto mean = std::make_shared<std::vector<T>>(c);
  auto inv_std = std::make_shared<std::vector<T>>(c);
  const bool train = state.mode == BnMode::kTrain;

  for (int ch = 0; ch < c; ++ch) {
    T m, v;
    if (train) {
      double sum = 0.0, sum_sq = 0.0;
      for (int n = 0; n < xd.n; ++n) {
        const T* xp = plane(x->value, n, ch);
        const std::int64_t count = static_cast<std::int64_t>(xd.h) * xd.w;
        for (std::int64_t i = 0; i < count; ++i) {
          const double val = static_cast<double>(xp[i]);
          sum += val;
          sum_sq += val * val;
        }
      }
      const double dm = sum / static_cast<double>(per_channel);
      const double dv = std::max(0.0, sum_sq / static_cast<double>(per_channel) - dm * dm);
      m = static_cast<T>(dm);
      v = static_cast<T>(dv);
      // running stats use the unbiased variance
      const double unbiased = dv * static_cast<double>(per_channel) /
                              static_cast<double>(per_channel - 1);
      state.running_mean.data()[ch] =
          (T(1) - state.momentum) * state.running_mean.data()[ch] + state.momentum * m;
      state.running_var.data()[ch] =
          (T(1) - state.momentum) * state.running_var.data()[ch] +
          state.momentum * static_cast<T>(unbiased);
    } else {
      m = state.running_mean.data()[ch];
      v = state.running_var.data()[ch];
    }
    (*mean)[ch] = m;
    (*inv_std)[ch] = T(1) / std::sqrt(v + state.eps);
  }

  parallel_for(static_cast<std::int64_t>(xd.n) * c, [&](std::int64_t t) {
    const int n = static_cast<int>(t / c);
    const int ch = static_cast<int>(t % c);
    const T g = gamma->value.data()[ch];
    const T b = beta->value.data()[ch];
    const T m = (*mean)[ch];
    const T is = (*inv_std)[ch];
    const T* xp = plane(x->value, n, ch);
    T* yp = plane(y, n, ch);
    const std::int64_t count = static_cast<std::int64_t>(xd.h) * xd.w;
    for (std::int64_t i = 0; i < count; ++i) yp[i] = g * (xp[i] - m) * is + b;
  });

  return make_op_node<T>(
      std::move(y), {x, gamma, beta},
      [mean, inv_std, train, per_channel](Node<T>& self) {
        const NodePtr<T>& xin = self.inputs[0];
        const NodePtr<T>& gin = self.inputs[1];
        const NodePtr<T>& bin = self.inputs[2];
        const Shape4& xd = xin->value.dims();
        const std::int64_t count = static_cast<std::int64_t>(xd.h) * xd.w;

        for (int ch = 0; ch < xd.c; ++ch) {
          const T m = (*mean)[ch];
          const T is = (*inv_std)[ch];
          const T g = gin->value.data()[ch];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < xd.n; ++n) {
            const T* xp = plane(xin->value, n, ch);
            const T* dyp = plane(self.grad, n, ch);
            for (std::int64_t i = 0; i < count; ++i) {
              const double xhat = static_cast<double>((xp[i] - m) * is);
              sum_dy += static_cast<double>(dyp[i]);
              sum_dy_xhat += static_cast<double>(dyp[i]) * xhat;
            }
          }
          if (gin->requires_grad) gin->grad_ref().data()[ch] += static_cast<T>(sum_dy_xhat);
          if (bin->requires_grad) bin->grad_ref().data()[ch] += static_cast<T>(sum_dy);
          if (!xin->requires_grad) continue;

          Tensor<T>& dx = xin->grad_ref();
          if (train) {
            // exact gradient through the batch statistics
            const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(per_channel));
            const T mean_dy_xhat =
                static_cast<T>(sum_dy_xhat / static_cast<double>(per_channel));
            for (int n = 0; n < xd.n; ++n) {
              const T* xp = plane(xin->value, n, ch);
              const T* dyp = plane(self.grad, n, ch);
              T* dxp = plane(dx, n, ch);
              for (std::int64_t i = 0; i < count; ++i) {
                const T xhat = (xp[i] - m) * is;
                dxp[i] += g * is * (dyp[i] - mean_dy - xhat * mean_dy_xhat);
              }
            }
          } else {
            for (int n = 0; n < xd.n; ++n) {
              const T* dyp = plane(self.grad, n, ch);
              T* dxp = plane(dx, n, ch);
              for (std::int64_t i = 0; i < count; ++i) dxp[i] += g * is * dyp[i];
            }
          }
        }
      });
}

template <typename T>
NodePtr<T> maxpool2x2(const NodePtr<T>& x) {
  const Shape4& xd = x->value.dims();
  if (xd.h % 2 != 0) throw DimError("maxpool2x2: odd input height " + std::to_string(xd.h) + " (axis h)");
  if (xd.w % 2 != 0) throw DimError("maxpool2x2: odd input width " + std::to_string(xd.w) + " (axis w)");
  const int oh = xd.h / 2, ow = xd.w / 2;
  Tensor<T> y(Shape4(xd.n, xd.c, oh, ow));

  const bool need_grad = autograd::grad_enabled() && x->requires_grad;
  auto argmax = need_grad
                    ? std::make_shared<std::vector<std::int64_t>>(y.numel())
                    : nullptr;

  parallel_for(static_cast<std::int64_t>(xd.n) * xd.c, [&](std::int64_t t) {
    const int n = static_cast<int>(t / xd.c);
    const int c = static_cast<int>(t % xd.c);
    const T* xp = plane(x->value, n, c);
    T* yp = plane(y, n, c);
    const std::int64_t xbase = ((static_cast<std::int64_t>(n) * xd.c + c) * xd.h) * xd.w;
    const std::int64_t ybase = ((static_cast<std::int64_t>(n) * xd.c + c) * oh) * ow;
    for (int r = 0; r < oh; ++r) {
      for (int q = 0; q < ow; ++q) {
        // first occurrence in row-major order wins ties
        std::int64_t best = static_cast<std::int64_t>(2 * r) * xd.w + 2 * q;
        T best_v = xp[best];
        const std::int64_t cand[3] = {best + 1, best + xd.w, best + xd.w + 1};
        for (std::int64_t idx : cand) {
          if (xp[idx] > best_v) {
            best_v = xp[idx];
            best = idx;
          }
        }
        yp[static_cast<std::int64_t>(r) * ow + q] = best_v;
        if (argmax) (*argmax)[ybase + r * ow + q] = xbase + best;
      }
    }
  });

  return make_op_node<T>(std::move(y), {x}, [argmax](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    if (!xin->requires_grad || !argmax) return;
    Tensor<T>& dx = xin->grad_ref();
    const T* dyp = self.grad.data();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      dx.data()[(*argmax)[i]] += dyp[i];
    }
  });
}

template <typename T>
NodePtr<T> nn_upsample2x(const NodePtr<T>& x) {
  const Shape4& xd = x->value.dims();
  const int oh = xd.h * 2, ow = xd.w * 2;
  Tensor<T> y(Shape4(xd.n, xd.c, oh, ow));
  parallel_for(static_cast<std::int64_t>(xd.n) * xd.c, [&](std::int64_t t) {
    const int n = static_cast<int>(t / xd.c);
    const int c = static_cast<int>(t % xd.c);
    const T* xp = plane(x->value, n, c);
    T* yp = plane(y, n, c);
    for (int r = 0; r < xd.h; ++r) {
      const T* xrow = xp + static_cast<std::int64_t>(r) * xd.w;
      T* y0 = yp + static_cast<std::int64_t>(2 * r) * ow;
      T* y1 = y0 + ow;
      for (int q = 0; q < xd.w; ++q) {
        const T v = xrow[q];
        y0[2 * q] = v;
        y0[2 * q + 1] = v;
        y1[2 * q] = v;
        y1[2 * q + 1] = v;
      }
    }
  });

  return make_op_node<T>(std::move(y), {x}, [](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    if (!xin->requires_grad) return;
    Tensor<T>& dx = xin->grad_ref();
    const Shape4& xd = xin->value.dims();
    const int ow = xd.w * 2;
    parallel_for(static_cast<std::int64_t>(xd.n) * xd.c, [&](std::int64_t t) {
      const int n = static_cast<int>(t / xd.c);
      const int c = static_cast<int>(t % xd.c);
      const T* dyp = plane(self.grad, n, c);
      T* dxp = plane(dx, n, c);
      for (int r = 0; r < xd.h; ++r) {
        const T* d0 = dyp + static_cast<std::int64_t>(2 * r) * ow;
        const T* d1 = d0 + ow;
        T* dxrow = dxp + static_cast<std::int64_t>(r) * xd.w;
        for (int q = 0; q < xd.w; ++q) {
          dxrow[q] += d0[2 * q] + d0[2 * q + 1] + d1[2 * q] + d1[2 * q + 1];
        }
      }
    });
  });
}

template <typename T>
NodePtr<T> transpose_conv2d(const NodePtr<T>& x, const NodePtr<T>& weight, int stride) {
  const Shape4& xd = x->value.dims();
  const Shape4& wd = weight->value.dims();  // (c_in, c_out, kh, kw)
  if (stride < 1) throw DimError("transpose_conv2d: stride must be >= 1");
  if (xd.c != wd.n) {
    throw DimError("transpose_conv2d: input channels " + std::to_string(xd.c) +
                   " != weight c_in " + std::to_string(wd.n) + " (axis c)");
  }
  const int oh = (xd.h - 1) * stride + wd.h;
  const int ow = (xd.w - 1) * stride + wd.w;
  Tensor<T> y(Shape4(xd.n, wd.c, oh, ow), T(0));

  const int s = stride;
  parallel_for(static_cast<std::int64_t>(xd.n) * wd.c, [&](std::int64_t t) {
    const int n = static_cast<int>(t / wd.c);
    const int oc = static_cast<int>(t % wd.c);
    T* yp = plane(y, n, oc);
    for (int ic = 0; ic < xd.c; ++ic) {
      const T* xp = plane(x->value, n, ic);
      for (int kh = 0; kh < wd.h; ++kh) {
        for (int kw = 0; kw < wd.w; ++kw) {
          const T wv = weight->value.at(ic, oc, kh, kw);
          for (int r = 0; r < xd.h; ++r) {
            const T* xrow = xp + static_cast<std::int64_t>(r) * xd.w;
            T* yrow = yp + static_cast<std::int64_t>(r * s + kh) * ow + kw;
            for (int q = 0; q < xd.w; ++q) yrow[q * s] += wv * xrow[q];
          }
        }
      }
    }
  });

  return make_op_node<T>(std::move(y), {x, weight}, [s](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    const NodePtr<T>& win = self.inputs[1];
    const Shape4& xd = xin->value.dims();
    const Shape4& wd = win->value.dims();
    const int ow = self.grad.dims().w;

    if (xin->requires_grad) {
      Tensor<T>& dx = xin->grad_ref();
      parallel_for(static_cast<std::int64_t>(xd.n) * xd.c, [&](std::int64_t t) {
        const int n = static_cast<int>(t / xd.c);
        const int ic = static_cast<int>(t % xd.c);
        T* dxp = plane(dx, n, ic);
        for (int oc = 0; oc < wd.c; ++oc) {
          const T* dyp = plane(self.grad, n, oc);
          for (int kh = 0; kh < wd.h; ++kh) {
            for (int kw = 0; kw < wd.w; ++kw) {
              const T wv = win->value.at(ic, oc, kh, kw);
              for (int r = 0; r < xd.h; ++r) {
                T* dxrow = dxp + static_cast<std::int64_t>(r) * xd.w;
                const T* dyrow = dyp + static_cast<std::int64_t>(r * s + kh) * ow + kw;
                for (int q = 0; q < xd.w; ++q) dxrow[q] += wv * dyrow[q * s];
              }
            }
          }
        }
      });
    }
    if (win->requires_grad) {
      Tensor<T>& dw = win->grad_ref();
      for (int n = 0; n < xd.n; ++n) {
        for (int ic = 0; ic < xd.c; ++ic) {
          const T* xp = plane(xin->value, n, ic);
          for (int oc = 0; oc < wd.c; ++oc) {
            const T* dyp = plane(self.grad, n, oc);
            for (int kh = 0; kh < wd.h; ++kh) {
              for (int kw = 0; kw < wd.w; ++kw) {
                T acc = T(0);
                for (int r = 0; r < xd.h; ++r) {
                  const T* xrow = xp + static_cast<std::int64_t>(r) * xd.w;
                  const T* dyrow = dyp + static_cast<std::int64_t>(r * s + kh) * ow + kw;
                  for (int q = 0; q < xd.w; ++q) acc += xrow[q] * dyrow[q * s];
                }
                dw.at(ic, oc, kh, kw) += acc;
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& x) {
  Tensor<T> y(x->value.dims());
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);

  return make_op_node<T>(std::move(y), {x}, [](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    if (!xin->requires_grad) return;
    Tensor<T>& dx = xin->grad_ref();
    const T* xp = xin->value.data();
    const T* dyp = self.grad.data();
    T* dxp = dx.data();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      if (xp[i] > T(0)) dxp[i] += dyp[i];
    }
  });
}

template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x) {
  Tensor<T> y(x->value.dims());
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    yp[i] = T(1) / (T(1) + std::exp(-xp[i]));
  }

  return make_op_node<T>(std::move(y), {x}, [](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    if (!xin->requires_grad) return;
    Tensor<T>& dx = xin->grad_ref();
    const T* yp = self.value.data();
    const T* dyp = self.grad.data();
    T* dxp = dx.data();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      dxp[i] += dyp[i] * yp[i] * (T(1) - yp[i]);
    }
  });
}

template <typename T>
NodePtr<T> concat_channels(const NodePtr<T>& a, const NodePtr<T>& b) {
  const Shape4& ad = a->value.dims();
  const Shape4& bd = b->value.dims();
  if (ad.n != bd.n) throw DimError("concat_channels: batch mismatch (axis n)");
  if (ad.h != bd.h) throw DimError("concat_channels: height mismatch (axis h)");
  if (ad.w != bd.w) throw DimError("concat_channels: width mismatch (axis w)");

  Tensor<T> y(Shape4(ad.n, ad.c + bd.c, ad.h, ad.w));
  const std::int64_t spatial = static_cast<std::int64_t>(ad.h) * ad.w;
  for (int n = 0; n < ad.n; ++n) {
    std::copy(plane(a->value, n, 0), plane(a->value, n, 0) + ad.c * spatial,
              plane(y, n, 0));
    std::copy(plane(b->value, n, 0), plane(b->value, n, 0) + bd.c * spatial,
              plane(y, n, ad.c));
  }

  const int ca = ad.c;
  return make_op_node<T>(std::move(y), {a, b}, [ca, spatial](Node<T>& self) {
    const NodePtr<T>& ain = self.inputs[0];
    const NodePtr<T>& bin = self.inputs[1];
    const Shape4& yd = self.grad.dims();
    const int cb = yd.c - ca;
    for (int n = 0; n < yd.n; ++n) {
      const T* dyp = plane(self.grad, n, 0);
      if (ain->requires_grad) {
        T* da = plane(ain->grad_ref(), n, 0);
        for (std::int64_t i = 0; i < ca * spatial; ++i) da[i] += dyp[i];
      }
      if (bin->requires_grad) {
        T* db = plane(bin->grad_ref(), n, 0);
        const T* src = dyp + ca * spatial;
        for (std::int64_t i = 0; i < cb * spatial; ++i) db[i] += src[i];
      }
    }
  });
}

template <typename T>
NodePtr<T> slice_channels(const NodePtr<T>& x, int c_begin, int c_end) {
  const Shape4& xd = x->value.dims();
  if (c_begin < 0 || c_end > xd.c || c_begin >= c_end) {
    throw DimError("slice_channels: range [" + std::to_string(c_begin) + ", " +
                   std::to_string(c_end) + ") invalid for " +
                   std::to_string(xd.c) + " channels (axis c)");
  }
  const int cs = c_end - c_begin;
  Tensor<T> y(Shape4(xd.n, cs, xd.h, xd.w));
  const std::int64_t spatial = static_cast<std::int64_t>(xd.h) * xd.w;
  for (int n = 0; n < xd.n; ++n) {
    std::copy(plane(x->value, n, c_begin),
              plane(x->value, n, c_begin) + cs * spatial, plane(y, n, 0));
  }

  return make_op_node<T>(std::move(y), {x}, [c_begin, cs, spatial](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    if (!xin->requires_grad) return;
    Tensor<T>& dx = xin->grad_ref();
    const Shape4& yd = self.grad.dims();
    for (int n = 0; n < yd.n; ++n) {
      const T* dyp = plane(self.grad, n, 0);
      T* dxp = plane(dx, n, c_begin);
      for (std::int64_t i = 0; i < cs * spatial; ++i) dxp[i] += dyp[i];
    }
  });
}

template <typename T>
NodePtr<T> mul_broadcast(const NodePtr<T>& x, const NodePtr<T>& gate) {
  const Shape4& xd = x->value.dims();
  const Shape4& gd = gate->value.dims();
  if (gd.c != 1) throw DimError("mul_broadcast: gate must have 1 channel (axis c)");
  if (gd.n != xd.n || gd.h != xd.h || gd.w != xd.w) {
    throw DimError("mul_broadcast: gate dims " + gd.str() +
                   " incompatible with input " + xd.str());
  }

  Tensor<T> y(xd);
  const std::int64_t spatial = static_cast<std::int64_t>(xd.h) * xd.w;
  for (int n = 0; n < xd.n; ++n) {
    const T* gp = plane(gate->value, n, 0);
    for (int c = 0; c < xd.c; ++c) {
      const T* xp = plane(x->value, n, c);
      T* yp = plane(y, n, c);
      for (std::int64_t i = 0; i < spatial; ++i) yp[i] = xp[i] * gp[i];
    }
  }

  return make_op_node<T>(std::move(y), {x, gate}, [spatial](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    const NodePtr<T>& gin = self.inputs[1];
    const Shape4& xd = xin->value.dims();
    for (int n = 0; n < xd.n; ++n) {
      const T* gp = plane(gin->value, n, 0);
      if (xin->requires_grad) {
        Tensor<T>& dx = xin->grad_ref();
        for (int c = 0; c < xd.c; ++c) {
          const T* dyp = plane(self.grad, n, c);
          T* dxp = plane(dx, n, c);
          for (std::int64_t i = 0; i < spatial; ++i) dxp[i] += dyp[i] * gp[i];
        }
      }
      if (gin->requires_grad) {
        // gate gradient is the channel sum of x * upstream
        Tensor<T>& dg = gin->grad_ref();
        T* dgp = plane(dg, n, 0);
        for (int c = 0; c < xd.c; ++c) {
          const T* dyp = plane(self.grad, n, c);
          const T* xp = plane(xin->value, n, c);
          for (std::int64_t i = 0; i < spatial; ++i) dgp[i] += dyp[i] * xp[i];
        }
      }
    }
  });
}

template <typename T>
NodePtr<T> crop_spatial(const NodePtr<T>& x, int h0, int w0, int h, int w) {
  const Shape4& xd = x->value.dims();
  if (h0 < 0 || w0 < 0 || h <= 0 || w <= 0 || h0 + h > xd.h || w0 + w > xd.w) {
    throw DimError("crop_spatial: window (" + std::to_string(h0) + "," +
                   std::to_string(w0) + "," + std::to_string(h) + "," +
                   std::to_string(w) + ") out of bounds for " + xd.str());
  }
  Tensor<T> y(Shape4(xd.n, xd.c, h, w));
  for (int n = 0; n < xd.n; ++n) {
    for (int c = 0; c < xd.c; ++c) {
      const T* xp = plane(x->value, n, c);
      T* yp = plane(y, n, c);
      for (int r = 0; r < h; ++r) {
        std::copy(xp + static_cast<std::int64_t>(h0 + r) * xd.w + w0,
                  xp + static_cast<std::int64_t>(h0 + r) * xd.w + w0 + w,
                  yp + static_cast<std::int64_t>(r) * w);
      }
    }
  }

  return make_op_node<T>(std::move(y), {x}, [h0, w0, h, w](Node<T>& self) {
    const NodePtr<T>& xin = self.inputs[0];
    if (!xin->requires_grad) return;
    Tensor<T>& dx = xin->grad_ref();
    const Shape4& xd = xin->value.dims();
    for (int n = 0; n < xd.n; ++n) {
      for (int c = 0; c < xd.c; ++c) {
        const T* dyp = plane(self.grad, n, c);
        T* dxp = plane(dx, n, c);
        for (int r = 0; r < h; ++r) {
          const T* src = dyp + static_cast<std::int64_t>(r) * w;
          T* dst = dxp + static_cast<std::int64_t>(h0 + r) * xd.w + w0;
          for (int q = 0; q < w; ++q) dst[q] += src[q];
        }
      }
    }
  });
}

#define WNET_INSTANTIATE_OPS(T)                                                   \
  template NodePtr<T> conv2d<T>(const NodePtr<T>&, const NodePtr<T>&,             \
                                const NodePtr<T>&, int, int);                     \
  template NodePtr<T> batchnorm2d<T>(const NodePtr<T>&, const NodePtr<T>&,        \
                                     const NodePtr<T>&, BatchNormState<T>&);      \
  template NodePtr<T> maxpool2x2<T>(const NodePtr<T>&);                           \
  template NodePtr<T> nn_upsample2x<T>(const NodePtr<T>&);                        \
  template NodePtr<T> transpose_conv2d<T>(const NodePtr<T>&, const NodePtr<T>&,   \
                                          int);                                   \
  template NodePtr<T> relu<T>(const NodePtr<T>&);                                 \
  template NodePtr<T> sigmoid<T>(const NodePtr<T>&);                              \
  template NodePtr<T> concat_channels<T>(const NodePtr<T>&, const NodePtr<T>&);   \
  template NodePtr<T> slice_channels<T>(const NodePtr<T>&, int, int);             \
  template NodePtr<T> mul_broadcast<T>(const NodePtr<T>&, const NodePtr<T>&);     \
  template NodePtr<T> crop_spatial<T>(const NodePtr<T>&, int, int, int, int);

WNET_INSTANTIATE_OPS(float)
WNET_INSTANTIATE_OPS(double)

#undef WNET_INSTANTIATE_OPS

}  // namespace wnet::ops
