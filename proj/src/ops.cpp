#include "dforge/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace dforge::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

bool recording(const Tensor& a) { return Tape::active() && a.requires_grad(); }
bool recording(const Tensor& a, const Tensor& b) {
  return Tape::active() && (a.requires_grad() || b.requires_grad());
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
  fail(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
       shape_str(b.shape()) + " are neither equal nor scalar-broadcastable");
}

// Applies an elementwise binary op with scalar broadcasting. fwd(x, y) gives
// the value; dfdx/dfdy give the partials at (x, y).
template <class F, class Dx, class Dy>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F fwd, Dx dfdx, Dy dfdy) {
  check_broadcast(a, b, name);
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  const std::vector<int>& out_shape = a_scalar ? b.shape() : a.shape();
  const int n = a_scalar ? b.numel() : a.numel();

  Tensor out = recording(a, b) ? make_interior(out_shape) : Tensor::zeros(out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i)
    po[i] = fwd(pa[a_scalar ? 0 : i], pb[b_scalar ? 0 : i]);

  if (recording(a, b)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = const_cast<Tensor&>(a).grad();
        for (int i = 0; i < n; ++i)
          ga[a_scalar ? 0 : i] += go[i] * dfdx(pa[a_scalar ? 0 : i], pb[b_scalar ? 0 : i]);
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = const_cast<Tensor&>(b).grad();
        for (int i = 0; i < n; ++i)
          gb[b_scalar ? 0 : i] += go[i] * dfdy(pa[a_scalar ? 0 : i], pb[b_scalar ? 0 : i]);
      }
    });
  }
  return out;
}

template <class F, class D>
Tensor unary_op(const Tensor& a, F fwd, D dfdx) {
  const int n = a.numel();
  Tensor out = recording(a) ? make_interior(a.shape()) : Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = fwd(pa[i]);

  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      const double* pv = out.data();
      for (int i = 0; i < n; ++i) ga[i] += go[i] * dfdx(pa[i], pv[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return c * x; },
                  [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
                  [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double s) { return s * (1.0 - s); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_op(a, [](double x) { return std::tanh(x); },
                  [](double, double t) { return 1.0 - t * t; });
}

Tensor sqrt_op(const Tensor& a) {
  for (int i = 0; i < a.numel(); ++i)
    if (!(a.data()[i] > 0.0))
      fail("sqrt: non-positive element " + std::to_string(a.data()[i]) +
           " at index " + std::to_string(i));
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double s) { return 0.5 / s; });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary_op(a, [lo](double x) { return x > lo ? x : lo; },
                  [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  const int n = a.numel();
  Tensor out = recording(a) ? make_interior({1}) : Tensor::zeros({1});
  double acc = 0.0;
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) acc += pa[i];
  out.data()[0] = acc;
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const double g = out.grad()[0];
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const int n = a.numel();
  Tensor out = recording(a) ? make_interior({1}) : Tensor::zeros({1});
  double acc = 0.0;
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) acc += pa[i];
  out.data()[0] = acc / n;
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const double g = out.grad()[0] / n;
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean_per_sample(const Tensor& a) {
  if (a.shape().size() < 2)
    fail("mean_per_sample: rank must be >= 2, got " + shape_str(a.shape()));
  const int batch = a.dim(0);
  const int per = a.numel() / batch;
  Tensor out = recording(a) ? make_interior({batch}) : Tensor::zeros({batch});
  const double* pa = a.data();
  for (int n = 0; n < batch; ++n) {
    double acc = 0.0;
    for (int i = 0; i < per; ++i) acc += pa[n * per + i];
    out.data()[n] = acc / per;
  }
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int n = 0; n < batch; ++n) {
        const double g = go[n] / per;
        for (int i = 0; i < per; ++i) ga[n * per + i] += g;
      }
    });
  }
  return out;
}

Tensor spatial_mean(const Tensor& a) {
  if (a.shape().size() != 4)
    fail("spatial_mean: expected [N,C,H,W], got " + shape_str(a.shape()));
  const int batch = a.dim(0), ch = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out = recording(a) ? make_interior({batch, ch}) : Tensor::zeros({batch, ch});
  const double* pa = a.data();
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < ch; ++c) {
      double acc = 0.0;
      const double* p = pa + (static_cast<size_t>(n) * ch + c) * hw;
      for (int i = 0; i < hw; ++i) acc += p[i];
      out.data()[n * ch + c] = acc / hw;
    }
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int n = 0; n < batch; ++n)
        for (int c = 0; c < ch; ++c) {
          const double g = go[n * ch + c] / hw;
          double* p = ga.data() + (static_cast<size_t>(n) * ch + c) * hw;
          for (int i = 0; i < hw; ++i) p[i] += g;
        }
    });
  }
  return out;
}

Tensor binary_cross_entropy(const Tensor& scores, int target) {
  if (target != 0 && target != 1)
    fail("binary_cross_entropy: target must be 0 or 1, got " + std::to_string(target));
  const int n = scores.numel();
  if (n == 0) fail("binary_cross_entropy: empty score tensor");
  constexpr double kEps = 1e-7;
  const double* ps = scores.data();
  for (int i = 0; i < n; ++i)
    if (ps[i] < -1e-12 || ps[i] > 1.0 + 1e-12)
      fail("binary_cross_entropy: score " + std::to_string(ps[i]) +
           " at index " + std::to_string(i) + " outside [0,1]");

  Tensor out = recording(scores) ? make_interior({1}) : Tensor::zeros({1});
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = std::clamp(ps[i], kEps, 1.0 - kEps);
    acc += target == 1 ? -std::log(s) : -std::log(1.0 - s);
  }
  out.data()[0] = acc / n;

  if (recording(scores)) {
    Tape::active()->record([=]() mutable {
      const double g = out.grad()[0] / n;
      std::vector<double>& gs = const_cast<Tensor&>(scores).grad();
      for (int i = 0; i < n; ++i) {
        if (ps[i] <= kEps || ps[i] >= 1.0 - kEps) continue;  // clamped: no grad
        gs[i] += g * (target == 1 ? -1.0 / ps[i] : 1.0 / (1.0 - ps[i]));
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    fail("matmul: both operands must be rank 2, got " + shape_str(a.shape()) +
         " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    fail("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  Tensor out = recording(a, b) ? make_interior({m, n}) : Tensor::zeros({m, n});
  MapConst ma(a.data(), m, k), mb(b.data(), k, n);
  MapMat mo(out.data(), m, n);
  mo.noalias() = ma * mb;

  if (recording(a, b)) {
    Tape::active()->record([=]() mutable {
      MapConst go(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MapMat ga(const_cast<Tensor&>(a).grad().data(), m, k);
        MapConst vb(b.data(), k, n);
        ga.noalias() += go * vb.transpose();
      }
      if (b.requires_grad()) {
        MapMat gb(const_cast<Tensor&>(b).grad().data(), k, n);
        MapConst va(a.data(), m, k);
        gb.noalias() += va.transpose() * go;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    fail("transpose: expected rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = recording(a) ? make_interior({n, m}) : Tensor::zeros({n, m});
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j * m + i] = pa[i * n + j];
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    });
  }
  return out;
}

Tensor trace(const Tensor& a) {
  if (a.shape().size() != 2 || a.dim(0) != a.dim(1))
    fail("trace: expected a square matrix, got " + shape_str(a.shape()));
  const int n = a.dim(0);
  Tensor out = recording(a) ? make_interior({1}) : Tensor::zeros({1});
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a.data()[static_cast<size_t>(i) * n + i];
  out.data()[0] = acc;
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const double g = out.grad()[0];
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int i = 0; i < n; ++i) ga[static_cast<size_t>(i) * n + i] += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  int n = 1;
  for (int e : shape) n *= e;
  if (n != a.numel())
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor out = recording(a) ? make_interior(shape) : Tensor::zeros(shape);
  std::copy(a.data(), a.data() + n, out.data());
  if (recording(a)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      for (int i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.shape().size() != 4)
    fail("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (kernel.shape().size() != 4)
    fail("conv2d: kernel must be [O,I,K,K], got " + shape_str(kernel.shape()));
  if (stride < 1) fail("conv2d: stride must be positive");
  if (padding < 0) fail("conv2d: padding must be non-negative");
  const int batch = input.dim(0), in_c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int out_c = kernel.dim(0), ker_in = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh != kw) fail("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
  if (in_c != ker_in)
    fail("conv2d: input channel count " + std::to_string(in_c) +
         " does not match kernel input extent " + std::to_string(ker_in));
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  if (oh < 1 || ow < 1)
    fail("conv2d: non-positive output extents " + std::to_string(oh) + "x" +
         std::to_string(ow));

  const int ckk = in_c * kh * kw;
  const int ohw = oh * ow;
  const bool rec = recording(input, kernel);
  Tensor out = rec ? make_interior({batch, out_c, oh, ow})
                   : Tensor::zeros({batch, out_c, oh, ow});

  // im2col per sample, then [O x CKK] * [CKK x OHW] writes the sample's
  // output block directly in NCHW order.
  auto cols = std::make_shared<std::vector<double>>(
      static_cast<size_t>(batch) * ckk * ohw);
  const double* px = input.data();
  for (int n = 0; n < batch; ++n) {
    double* col = cols->data() + static_cast<size_t>(n) * ckk * ohw;
    for (int c = 0; c < in_c; ++c)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const int r = (c * kh + ky) * kw + kx;
          double* dst = col + static_cast<size_t>(r) * ohw;
          const double* src = px + (static_cast<size_t>(n) * in_c + c) * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) {
              for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = 0.0;
              continue;
            }
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - padding + kx;
              dst[oy * ow + ox] = (ix < 0 || ix >= w) ? 0.0 : src[iy * w + ix];
            }
          }
        }
    MapConst wm(kernel.data(), out_c, ckk);
    MapConst cm(col, ckk, ohw);
    MapMat om(out.data() + (static_cast<size_t>(n) * out_c) * ohw, out_c, ohw);
    om.noalias() = wm * cm;
  }

  if (rec) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      if (kernel.requires_grad()) {
        MapMat gw(const_cast<Tensor&>(kernel).grad().data(), out_c, ckk);
        for (int n = 0; n < batch; ++n) {
          MapConst gy(go.data() + (static_cast<size_t>(n) * out_c) * ohw, out_c, ohw);
          MapConst cm(cols->data() + static_cast<size_t>(n) * ckk * ohw, ckk, ohw);
          gw.noalias() += gy * cm.transpose();
        }
      }
      if (input.requires_grad()) {
        std::vector<double>& gx = const_cast<Tensor&>(input).grad();
        RowMat dcol(ckk, ohw);
        MapConst wm(kernel.data(), out_c, ckk);
        for (int n = 0; n < batch; ++n) {
          MapConst gy(go.data() + (static_cast<size_t>(n) * out_c) * ohw, out_c, ohw);
          dcol.noalias() = wm.transpose() * gy;
          // col2im scatter-add
          for (int c = 0; c < in_c; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int r = (c * kh + ky) * kw + kx;
                const double* src = dcol.data() + static_cast<size_t>(r) * ohw;
                double* dst = gx.data() + (static_cast<size_t>(n) * in_c + c) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride - padding + kx;
                    if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
                  }
                }
              }
        }
      }
    });
  }
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 4)
    fail("bias_add: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (bias.shape().size() != 1 || bias.dim(0) != x.dim(1))
    fail("bias_add: bias " + shape_str(bias.shape()) +
         " does not match channel count " + std::to_string(x.dim(1)));
  const int batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = recording(x, bias) ? make_interior(x.shape()) : Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* pb = bias.data();
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < ch; ++c) {
      const double b = pb[c];
      const size_t base = (static_cast<size_t>(n) * ch + c) * hw;
      for (int i = 0; i < hw; ++i) out.data()[base + i] = px[base + i] + b;
    }
  if (recording(x, bias)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      if (x.requires_grad()) {
        std::vector<double>& gx = const_cast<Tensor&>(x).grad();
        for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        std::vector<double>& gb = const_cast<Tensor&>(bias).grad();
        for (int n = 0; n < batch; ++n)
          for (int c = 0; c < ch; ++c) {
            const size_t base = (static_cast<size_t>(n) * ch + c) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += go[base + i];
            gb[c] += acc;
          }
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 4 || b.shape().size() != 4)
    fail("concat_channels: both inputs must be [N,C,H,W]");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    fail("concat_channels: mismatched extents " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out = recording(a, b)
                   ? make_interior({batch, ca + cb, a.dim(2), a.dim(3)})
                   : Tensor::zeros({batch, ca + cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < batch; ++n) {
    std::copy(a.data() + static_cast<size_t>(n) * ca * hw,
              a.data() + static_cast<size_t>(n + 1) * ca * hw,
              out.data() + static_cast<size_t>(n) * (ca + cb) * hw);
    std::copy(b.data() + static_cast<size_t>(n) * cb * hw,
              b.data() + static_cast<size_t>(n + 1) * cb * hw,
              out.data() + (static_cast<size_t>(n) * (ca + cb) + ca) * hw);
  }
  if (recording(a, b)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      for (int n = 0; n < batch; ++n) {
        if (a.requires_grad()) {
          std::vector<double>& ga = const_cast<Tensor&>(a).grad();
          const size_t src = static_cast<size_t>(n) * (ca + cb) * hw;
          const size_t dst = static_cast<size_t>(n) * ca * hw;
          for (int i = 0; i < ca * hw; ++i) ga[dst + i] += go[src + i];
        }
        if (b.requires_grad()) {
          std::vector<double>& gb = const_cast<Tensor&>(b).grad();
          const size_t src = (static_cast<size_t>(n) * (ca + cb) + ca) * hw;
          const size_t dst = static_cast<size_t>(n) * cb * hw;
          for (int i = 0; i < cb * hw; ++i) gb[dst + i] += go[src + i];
        }
      }
    });
  }
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.shape().size() != 4)
    fail("upsample_nearest2: expected [N,C,H,W], got " + shape_str(x.shape()));
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  Tensor out = recording(x) ? make_interior({batch, ch, oh, ow})
                            : Tensor::zeros({batch, ch, oh, ow});
  for (int nc = 0; nc < batch * ch; ++nc) {
    const double* src = x.data() + static_cast<size_t>(nc) * h * w;
    double* dst = out.data() + static_cast<size_t>(nc) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / 2) * w + (xx / 2)];
  }
  if (recording(x)) {
    Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = const_cast<Tensor&>(x).grad();
      for (int nc = 0; nc < batch * ch; ++nc) {
        const double* src = go.data() + static_cast<size_t>(nc) * oh * ow;
        double* dst = gx.data() + static_cast<size_t>(nc) * h * w;
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) dst[(y / 2) * w + (xx / 2)] += src[y * ow + xx];
      }
    });
  }
  return out;
}

}  // namespace dforge::ad
