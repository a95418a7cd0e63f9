#include "ssc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ssc/parallel.hpp"

namespace ssc {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

namespace {

thread_local OpCounters* g_counters = nullptr;

constexpr const char* kAxisName[3] = {"depth", "height", "width"};

void count_elementwise(std::size_t n) {
  if (g_counters) g_counters->elementwise += n;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

void require_same_shape(const std::string& op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    shape_error(op, "rank mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      shape_error(op, "extent mismatch on axis " + std::to_string(i) + ": " +
                          shape_to_string(a) + " vs " + shape_to_string(b));
    }
  }
}

// Input/weight/bias validation shared by forward and backward; returns the
// output dims.
VolumeDims check_conv(const std::string& op, const VolumeDims& in, const Shape& wshape,
                      const Shape* bshape, const ConvSpec& spec) {
  spec.validate();
  if (in.c != spec.in_channels) {
    shape_error(op, "input channel axis has " + std::to_string(in.c) + ", spec expects " +
                        std::to_string(spec.in_channels));
  }
  Shape expect = spec.weight_shape();
  if (wshape.size() != 5) shape_error(op, "weights must be rank 5, got " + shape_to_string(wshape));
  static constexpr const char* kWeightAxis[5] = {"out-channel", "in-channel", "kernel-depth",
                                                 "kernel-height", "kernel-width"};
  for (std::size_t i = 0; i < 5; ++i) {
    if (wshape[i] != expect[i]) {
      shape_error(op, std::string("weight ") + kWeightAxis[i] + " axis is " +
                          std::to_string(wshape[i]) + ", expected " + std::to_string(expect[i]));
    }
  }
  if (bshape && !(bshape->size() == 1 && (*bshape)[0] == spec.out_channels)) {
    shape_error(op, "bias must be [" + std::to_string(spec.out_channels) + "], got " +
                        shape_to_string(*bshape));
  }
  const std::size_t ins[3] = {in.d, in.h, in.w};
  VolumeDims out{spec.out_channels, 0, 0, 0};
  std::size_t* outs[3] = {&out.d, &out.h, &out.w};
  for (std::size_t a = 0; a < 3; ++a) {
    try {
      *outs[a] = spec.output_extent(a, ins[a]);
    } catch (const std::invalid_argument& e) {
      shape_error(op, e.what());
    }
  }
  return out;
}

// Range of output positions o with 0 <= o*s - p + t*d < in, for each tap t.
struct TapRange {
  std::size_t lo = 0, hi = 0;  // [lo, hi)
  std::ptrdiff_t shift = 0;    // input index = o*s + shift
};

std::vector<TapRange> tap_ranges(std::size_t in, std::size_t out, std::size_t k, std::size_t s,
                                 std::size_t d, std::size_t p) {
  std::vector<TapRange> r(k);
  for (std::size_t t = 0; t < k; ++t) {
    const std::ptrdiff_t shift =
        static_cast<std::ptrdiff_t>(t * d) - static_cast<std::ptrdiff_t>(p);
    // o*s + shift >= 0  ->  o >= ceil(-shift / s)
    std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + static_cast<std::ptrdiff_t>(s) - 1) /
                                              static_cast<std::ptrdiff_t>(s);
    // o*s + shift <= in-1 -> o <= floor((in-1-shift)/s)
    std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 - shift;
    std::ptrdiff_t hi = top < 0 ? 0 : top / static_cast<std::ptrdiff_t>(s) + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out));
    if (lo > hi) lo = hi;
    r[t] = {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi), shift};
  }
  return r;
}

struct ConvGeometry {
  VolumeDims in, out;
  std::vector<TapRange> rd, rh, rw;
  ConvGeometry(const VolumeDims& i, const VolumeDims& o, const ConvSpec& s)
      : in(i),
        out(o),
        rd(tap_ranges(i.d, o.d, s.kernel[0], s.stride[0], s.dilation[0], s.padding[0])),
        rh(tap_ranges(i.h, o.h, s.kernel[1], s.stride[1], s.dilation[1], s.padding[1])),
        rw(tap_ranges(i.w, o.w, s.kernel[2], s.stride[2], s.dilation[2], s.padding[2])) {}
};

template <typename T>
Tensor<T> conv3d_optimized(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                           const ConvSpec& spec, const VolumeDims& in, const VolumeDims& out) {
  const ConvGeometry g(in, out, spec);
  Tensor<T> result({out.c, out.d, out.h, out.w});
  const std::size_t osp = out.spatial(), isp = in.spatial();
  const std::size_t kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const std::size_t sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const T* x = input.raw();
  const T* w = weights.raw();
  T* y = result.raw();
  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(out.c);

#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t kk = 0; kk < K; ++kk) {
    const std::size_t k = static_cast<std::size_t>(kk);
    std::vector<double> acc(osp, static_cast<double>(bias[k]));
    for (std::size_t c = 0; c < in.c; ++c) {
      const T* xc = x + c * isp;
      const T* wkc = w + (k * in.c + c) * kd * kh * kw;
      for (std::size_t a = 0; a < kd; ++a) {
        const TapRange& ra = g.rd[a];
        for (std::size_t b = 0; b < kh; ++b) {
          const TapRange& rb = g.rh[b];
          for (std::size_t e = 0; e < kw; ++e) {
            const TapRange& re = g.rw[e];
            const double wv = static_cast<double>(wkc[(a * kh + b) * kw + e]);
            if (re.lo >= re.hi) continue;
            for (std::size_t od = ra.lo; od < ra.hi; ++od) {
              const std::size_t id = od * sd + ra.shift;
              for (std::size_t oh = rb.lo; oh < rb.hi; ++oh) {
                const std::size_t ih = oh * sh + rb.shift;
                double* arow = acc.data() + (od * out.h + oh) * out.w;
                const T* xrow = xc + (id * in.h + ih) * in.w + re.shift;
                if (sw == 1) {
                  for (std::size_t ow = re.lo; ow < re.hi; ++ow) {
                    arow[ow] += wv * static_cast<double>(xrow[ow]);
                  }
                } else {
                  for (std::size_t ow = re.lo; ow < re.hi; ++ow) {
                    arow[ow] += wv * static_cast<double>(xrow[ow * sw]);
                  }
                }
              }
            }
          }
        }
      }
    }
    T* yk = y + k * osp;
    for (std::size_t i = 0; i < osp; ++i) yk[i] = static_cast<T>(acc[i]);
  }
  return result;
}

}  // namespace

ScopedOpCounting::ScopedOpCounting(OpCounters& sink) : previous_(g_counters) {
  g_counters = &sink;
}
ScopedOpCounting::~ScopedOpCounting() { g_counters = previous_; }
OpCounters* active_op_counters() { return g_counters; }

ConvSpec ConvSpec::cubic(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                         std::size_t dilation) {
  ConvSpec s;
  s.kernel = {k, k, k};
  s.stride = {stride, stride, stride};
  s.dilation = {dilation, dilation, dilation};
  const std::size_t p = dilation * (k - 1) / 2;
  s.padding = {p, p, p};
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

void ConvSpec::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw std::invalid_argument("conv kernel extent < 1 on " + std::string(kAxisName[a]));
    if (stride[a] < 1) throw std::invalid_argument("conv stride < 1 on " + std::string(kAxisName[a]));
    if (dilation[a] < 1) throw std::invalid_argument("conv dilation < 1 on " + std::string(kAxisName[a]));
  }
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("conv channel count < 1");
}

std::size_t ConvSpec::output_extent(std::size_t axis, std::size_t in) const {
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(in + 2 * padding[axis]) -
                              static_cast<std::ptrdiff_t>(dilation[axis] * (kernel[axis] - 1)) - 1;
  if (span < 0) {
    throw std::invalid_argument(std::string(kAxisName[axis]) + " axis: input extent " +
                                std::to_string(in) + " too small for dilated kernel extent " +
                                std::to_string(dilation[axis] * (kernel[axis] - 1) + 1));
  }
  return static_cast<std::size_t>(span) / stride[axis] + 1;
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
}

template <typename T>
Tensor<T> conv3d_reference(const Tensor<T>& input, const Tensor<T>& weights,
                           const Tensor<T>& bias, const ConvSpec& spec) {
  const VolumeDims in = volume_dims(input, "conv3d input");
  const VolumeDims out = check_conv("conv3d", in, weights.shape(), &bias.shape(), spec);
  Tensor<T> y({out.c, out.d, out.h, out.w});
  OpCounters* counters = g_counters;
  std::uint64_t macs = 0;
  for (std::size_t k = 0; k < out.c; ++k)
    for (std::size_t od = 0; od < out.d; ++od)
      for (std::size_t oh = 0; oh < out.h; ++oh)
        for (std::size_t ow = 0; ow < out.w; ++ow) {
          double acc = static_cast<double>(bias[k]);
          for (std::size_t c = 0; c < in.c; ++c)
            for (std::size_t a = 0; a < spec.kernel[0]; ++a)
              for (std::size_t b = 0; b < spec.kernel[1]; ++b)
                for (std::size_t e = 0; e < spec.kernel[2]; ++e) {
                  ++macs;
                  const auto id = static_cast<std::ptrdiff_t>(od * spec.stride[0] + a * spec.dilation[0]) -
                                  static_cast<std::ptrdiff_t>(spec.padding[0]);
                  const auto ih = static_cast<std::ptrdiff_t>(oh * spec.stride[1] + b * spec.dilation[1]) -
                                  static_cast<std::ptrdiff_t>(spec.padding[1]);
                  const auto iw = static_cast<std::ptrdiff_t>(ow * spec.stride[2] + e * spec.dilation[2]) -
                                  static_cast<std::ptrdiff_t>(spec.padding[2]);
                  if (id < 0 || ih < 0 || iw < 0 || id >= static_cast<std::ptrdiff_t>(in.d) ||
                      ih >= static_cast<std::ptrdiff_t>(in.h) || iw >= static_cast<std::ptrdiff_t>(in.w))
                    continue;
                  acc += static_cast<double>(weights.at({k, c, a, b, e})) *
                         static_cast<double>(input.at({c, static_cast<std::size_t>(id),
                                                       static_cast<std::size_t>(ih),
                                                       static_cast<std::size_t>(iw)}));
                }
          y.at({k, od, oh, ow}) = static_cast<T>(acc);
        }
  if (counters) counters->macs += macs;
  return y;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  if (g_counters) return conv3d_reference(input, weights, bias, spec);
  const VolumeDims in = volume_dims(input, "conv3d input");
  const VolumeDims out = check_conv("conv3d", in, weights.shape(), &bias.shape(), spec);
  return conv3d_optimized(input, weights, bias, spec, in, out);
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights, const ConvSpec& spec,
                             bool need_input_grad) {
  const VolumeDims in = volume_dims(input, "conv3d_backward input");
  const VolumeDims out = check_conv("conv3d_backward", in, weights.shape(), nullptr, spec);
  const Shape expect{out.c, out.d, out.h, out.w};
  if (grad_out.shape() != expect) {
    shape_error("conv3d_backward", "grad_out shape " + shape_to_string(grad_out.shape()) +
                                       " does not match forward output " + shape_to_string(expect));
  }
  const ConvGeometry g(in, out, spec);
  const std::size_t osp = out.spatial(), isp = in.spatial();
  const std::size_t kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const std::size_t taps = kd * kh * kw;
  const std::size_t sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const T* x = input.raw();
  const T* w = weights.raw();
  const T* go = grad_out.raw();

  ConvGrads<T> grads;
  grads.weights = Tensor<T>(weights.shape());
  grads.bias = Tensor<T>({out.c});
  T* gw = grads.weights.raw();

  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(out.c);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t kk = 0; kk < K; ++kk) {
    const std::size_t k = static_cast<std::size_t>(kk);
    const T* gk = go + k * osp;
    double bsum = 0.0;
    for (std::size_t i = 0; i < osp; ++i) bsum += static_cast<double>(gk[i]);
    grads.bias[k] = static_cast<T>(bsum);
    for (std::size_t c = 0; c < in.c; ++c) {
      const T* xc = x + c * isp;
      T* gwkc = gw + (k * in.c + c) * taps;
      for (std::size_t a = 0; a < kd; ++a) {
        const TapRange& ra = g.rd[a];
        for (std::size_t b = 0; b < kh; ++b) {
          const TapRange& rb = g.rh[b];
          for (std::size_t e = 0; e < kw; ++e) {
            const TapRange& re = g.rw[e];
            double acc = 0.0;
            if (re.lo < re.hi) {
              for (std::size_t od = ra.lo; od < ra.hi; ++od) {
                const std::size_t id = od * sd + ra.shift;
                for (std::size_t oh = rb.lo; oh < rb.hi; ++oh) {
                  const std::size_t ih = oh * sh + rb.shift;
                  const T* grow = gk + (od * out.h + oh) * out.w;
                  const T* xrow = xc + (id * in.h + ih) * in.w + re.shift;
                  double racc = 0.0;
                  if (sw == 1) {
                    for (std::size_t ow = re.lo; ow < re.hi; ++ow)
                      racc += static_cast<double>(grow[ow]) * static_cast<double>(xrow[ow]);
                  } else {
                    for (std::size_t ow = re.lo; ow < re.hi; ++ow)
                      racc += static_cast<double>(grow[ow]) * static_cast<double>(xrow[ow * sw]);
                  }
                  acc += racc;
                }
              }
            }
            gwkc[(a * kh + b) * kw + e] = static_cast<T>(acc);
          }
        }
      }
    }
  }

  if (need_input_grad) {
    grads.input = Tensor<T>(input.shape());
    T* gi = grads.input.raw();
    const std::ptrdiff_t C = static_cast<std::ptrdiff_t>(in.c);
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (std::ptrdiff_t cc = 0; cc < C; ++cc) {
      const std::size_t c = static_cast<std::size_t>(cc);
      std::vector<double> acc(isp, 0.0);
      for (std::size_t k = 0; k < out.c; ++k) {
        const T* gk = go + k * osp;
        const T* wkc = w + (k * in.c + c) * taps;
        for (std::size_t a = 0; a < kd; ++a) {
          const TapRange& ra = g.rd[a];
          for (std::size_t b = 0; b < kh; ++b) {
            const TapRange& rb = g.rh[b];
            for (std::size_t e = 0; e < kw; ++e) {
              const TapRange& re = g.rw[e];
              if (re.lo >= re.hi) continue;
              const double wv = static_cast<double>(wkc[(a * kh + b) * kw + e]);
              for (std::size_t od = ra.lo; od < ra.hi; ++od) {
                const std::size_t id = od * sd + ra.shift;
                for (std::size_t oh = rb.lo; oh < rb.hi; ++oh) {
                  const std::size_t ih = oh * sh + rb.shift;
                  const T* grow = gk + (od * out.h + oh) * out.w;
                  double* arow = acc.data() + (id * in.h + ih) * in.w + re.shift;
                  if (sw == 1) {
                    for (std::size_t ow = re.lo; ow < re.hi; ++ow)
                      arow[ow] += wv * static_cast<double>(grow[ow]);
                  } else {
                    for (std::size_t ow = re.lo; ow < re.hi; ++ow)
                      arow[ow * sw] += wv * static_cast<double>(grow[ow]);
                  }
                }
              }
            }
          }
        }
      }
      T* gic = gi + c * isp;
      for (std::size_t i = 0; i < isp; ++i) gic[i] = static_cast<T>(acc[i]);
    }
  }
  return grads;
}

// ---- pointwise -------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  count_elementwise(x.size());
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& out) {
  require_same_shape("relu_backward", grad_out.shape(), out.shape());
  Tensor<T> g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) g[i] = out[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    // Branches keep exp() from overflowing for large |v|.
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  count_elementwise(x.size());
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& out) {
  require_same_shape("sigmoid_backward", grad_out.shape(), out.shape());
  Tensor<T> g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) g[i] = grad_out[i] * out[i] * (T(1) - out[i]);
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  count_elementwise(a.size());
  return y;
}

template <typename T>
Tensor<T> scale_per_channel(const Tensor<T>& x, const Tensor<T>& scale) {
  const VolumeDims d = volume_dims(x, "scale_per_channel input");
  if (scale.size() != d.c) {
    shape_error("scale_per_channel", "scale has " + std::to_string(scale.size()) +
                                         " entries for " + std::to_string(d.c) + " channels");
  }
  Tensor<T> y(x.shape());
  const std::size_t sp = d.spatial();
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < sp; ++i) y[c * sp + i] = x[c * sp + i] * scale[c];
  count_elementwise(x.size());
  return y;
}

template <typename T>
ScaleGrads<T> scale_per_channel_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                         const Tensor<T>& scale) {
  require_same_shape("scale_per_channel_backward", grad_out.shape(), x.shape());
  const VolumeDims d = volume_dims(x);
  ScaleGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(scale.shape())};
  const std::size_t sp = d.spatial();
  for (std::size_t c = 0; c < d.c; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sp; ++i) {
      g.x[c * sp + i] = grad_out[c * sp + i] * scale[c];
      acc += static_cast<double>(grad_out[c * sp + i]) * static_cast<double>(x[c * sp + i]);
    }
    g.scale[c] = static_cast<T>(acc);
  }
  return g;
}

// ---- pooling / resampling --------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool3d(const Tensor<T>& x) {
  const VolumeDims d = volume_dims(x, "global_avg_pool3d input");
  Tensor<T> y({d.c, 1, 1, 1});
  const std::size_t sp = d.spatial();
  for (std::size_t c = 0; c < d.c; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sp; ++i) acc += static_cast<double>(x[c * sp + i]);
    y[c] = static_cast<T>(acc / static_cast<double>(sp));
  }
  count_elementwise(x.size());
  return y;
}

template <typename T>
Tensor<T> global_avg_pool3d_backward(const Tensor<T>& grad_out, const VolumeDims& d) {
  if (grad_out.size() != d.c) {
    shape_error("global_avg_pool3d_backward",
                "grad_out has " + std::to_string(grad_out.size()) + " entries for " +
                    std::to_string(d.c) + " channels");
  }
  Tensor<T> g({d.c, d.d, d.h, d.w});
  const std::size_t sp = d.spatial();
  for (std::size_t c = 0; c < d.c; ++c) {
    const T v = static_cast<T>(static_cast<double>(grad_out[c]) / static_cast<double>(sp));
    for (std::size_t i = 0; i < sp; ++i) g[c * sp + i] = v;
  }
  return g;
}

namespace {

struct LerpTap {
  std::size_t i0, i1;
  double t;
};

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double pos = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) /
                                     static_cast<double>(out - 1)
                               : 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, pos - static_cast<double>(i0)};
  }
  return taps;
}

void check_factor(const Triple& f) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (f[a] < 1) throw std::invalid_argument("upsample3d: factor < 1 on " + std::string(kAxisName[a]));
  }
}

}  // namespace

template <typename T>
Tensor<T> upsample3d(const Tensor<T>& x, const Triple& factor) {
  check_factor(factor);
  const VolumeDims in = volume_dims(x, "upsample3d input");
  const VolumeDims out{in.c, in.d * factor[0], in.h * factor[1], in.w * factor[2]};
  if (factor == Triple{1, 1, 1}) {
    count_elementwise(x.size());
    return x;
  }
  const auto td = lerp_taps(in.d, out.d), th = lerp_taps(in.h, out.h), tw = lerp_taps(in.w, out.w);
  Tensor<T> y({out.c, out.d, out.h, out.w});
  const std::size_t isp = in.spatial();
  for (std::size_t c = 0; c < in.c; ++c) {
    const T* xc = x.raw() + c * isp;
    T* yc = y.raw() + c * out.spatial();
    for (std::size_t od = 0; od < out.d; ++od) {
      const LerpTap& a = td[od];
      for (std::size_t oh = 0; oh < out.h; ++oh) {
        const LerpTap& b = th[oh];
        for (std::size_t ow = 0; ow < out.w; ++ow) {
          const LerpTap& e = tw[ow];
          auto v = [&](std::size_t i, std::size_t j, std::size_t k) {
            return static_cast<double>(xc[(i * in.h + j) * in.w + k]);
          };
          const double c00 = v(a.i0, b.i0, e.i0) * (1 - e.t) + v(a.i0, b.i0, e.i1) * e.t;
          const double c01 = v(a.i0, b.i1, e.i0) * (1 - e.t) + v(a.i0, b.i1, e.i1) * e.t;
          const double c10 = v(a.i1, b.i0, e.i0) * (1 - e.t) + v(a.i1, b.i0, e.i1) * e.t;
          const double c11 = v(a.i1, b.i1, e.i0) * (1 - e.t) + v(a.i1, b.i1, e.i1) * e.t;
          const double c0 = c00 * (1 - b.t) + c01 * b.t;
          const double c1 = c10 * (1 - b.t) + c11 * b.t;
          yc[(od * out.h + oh) * out.w + ow] = static_cast<T>(c0 * (1 - a.t) + c1 * a.t);
        }
      }
    }
  }
  count_elementwise(y.size());
  return y;
}

template <typename T>
Tensor<T> upsample3d_backward(const Tensor<T>& grad_out, const VolumeDims& in,
                              const Triple& factor) {
  check_factor(factor);
  const VolumeDims out{in.c, in.d * factor[0], in.h * factor[1], in.w * factor[2]};
  const Shape expect{out.c, out.d, out.h, out.w};
  if (grad_out.shape() != expect) {
    shape_error("upsample3d_backward", "grad_out shape " + shape_to_string(grad_out.shape()) +
                                           " does not match " + shape_to_string(expect));
  }
  if (factor == Triple{1, 1, 1}) return grad_out;
  const auto td = lerp_taps(in.d, out.d), th = lerp_taps(in.h, out.h), tw = lerp_taps(in.w, out.w);
  Tensor<T> g({in.c, in.d, in.h, in.w});
  std::vector<double> acc(in.spatial());
  for (std::size_t c = 0; c < in.c; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* gc = grad_out.raw() + c * out.spatial();
    for (std::size_t od = 0; od < out.d; ++od) {
      const LerpTap& a = td[od];
      for (std::size_t oh = 0; oh < out.h; ++oh) {
        const LerpTap& b = th[oh];
        for (std::size_t ow = 0; ow < out.w; ++ow) {
          const LerpTap& e = tw[ow];
          const double go = static_cast<double>(gc[(od * out.h + oh) * out.w + ow]);
          auto put = [&](std::size_t i, std::size_t j, std::size_t k, double wgt) {
            acc[(i * in.h + j) * in.w + k] += go * wgt;
          };
          put(a.i0, b.i0, e.i0, (1 - a.t) * (1 - b.t) * (1 - e.t));
          put(a.i0, b.i0, e.i1, (1 - a.t) * (1 - b.t) * e.t);
          put(a.i0, b.i1, e.i0, (1 - a.t) * b.t * (1 - e.t));
          put(a.i0, b.i1, e.i1, (1 - a.t) * b.t * e.t);
          put(a.i1, b.i0, e.i0, a.t * (1 - b.t) * (1 - e.t));
          put(a.i1, b.i0, e.i1, a.t * (1 - b.t) * e.t);
          put(a.i1, b.i1, e.i0, a.t * b.t * (1 - e.t));
          put(a.i1, b.i1, e.i1, a.t * b.t * e.t);
        }
      }
    }
    T* dst = g.raw() + c * in.spatial();
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
  }
  return g;
}

// ---- concat ----------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const VolumeDims first = volume_dims(*parts[0], "concat_channels input");
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const VolumeDims d = volume_dims(*parts[i], "concat_channels input");
    if (d.d != first.d || d.h != first.h || d.w != first.w) {
      shape_error("concat_channels", "input " + std::to_string(i) + " spatial extents " +
                                         shape_to_string(parts[i]->shape()) + " differ from " +
                                         shape_to_string(parts[0]->shape()));
    }
    total += d.c;
  }
  Tensor<T> y({total, first.d, first.h, first.w});
  T* dst = y.raw();
  for (const Tensor<T>* p : parts) dst = std::copy(p->raw(), p->raw() + p->size(), dst);
  return y;
}

template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const Tensor<T>& grad_out,
                                                const std::vector<std::size_t>& channels) {
  const VolumeDims d = volume_dims(grad_out, "concat_channels_backward grad");
  std::size_t total = 0;
  for (auto c : channels) total += c;
  if (total != d.c) {
    shape_error("concat_channels_backward", "channel split sums to " + std::to_string(total) +
                                                ", grad has " + std::to_string(d.c));
  }
  std::vector<Tensor<T>> out;
  out.reserve(channels.size());
  const T* src = grad_out.raw();
  for (auto c : channels) {
    Tensor<T> g({c, d.d, d.h, d.w});
    std::copy(src, src + g.size(), g.raw());
    src += g.size();
    out.push_back(std::move(g));
  }
  return out;
}

// ---- softmax / cross entropy ----------------------------------------------

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const VolumeDims d = volume_dims(logits, "softmax_channels input");
  Tensor<T> p(logits.shape());
  const std::size_t sp = d.spatial();
  for (std::size_t v = 0; v < sp; ++v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < d.c; ++c) mx = std::max(mx, static_cast<double>(logits[c * sp + v]));
    double sum = 0.0;
    for (std::size_t c = 0; c < d.c; ++c) sum += std::exp(static_cast<double>(logits[c * sp + v]) - mx);
    for (std::size_t c = 0; c < d.c; ++c)
      p[c * sp + v] = static_cast<T>(std::exp(static_cast<double>(logits[c * sp + v]) - mx) / sum);
  }
  count_elementwise(logits.size());
  return p;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& grad_out, const Tensor<T>& probs) {
  require_same_shape("softmax_channels_backward", grad_out.shape(), probs.shape());
  const VolumeDims d = volume_dims(probs);
  const std::size_t sp = d.spatial();
  Tensor<T> g(probs.shape());
  for (std::size_t v = 0; v < sp; ++v) {
    double dot = 0.0;
    for (std::size_t c = 0; c < d.c; ++c)
      dot += static_cast<double>(grad_out[c * sp + v]) * static_cast<double>(probs[c * sp + v]);
    for (std::size_t c = 0; c < d.c; ++c)
      g[c * sp + v] = static_cast<T>(static_cast<double>(probs[c * sp + v]) *
                                     (static_cast<double>(grad_out[c * sp + v]) - dot));
  }
  return g;
}

template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits, const TensorU8& labels,
                                    const TensorU8& ignore) {
  const VolumeDims d = volume_dims(logits, "cross_entropy logits");
  const Shape spatial{d.d, d.h, d.w};
  if (labels.shape() != spatial) {
    shape_error("cross_entropy", "labels shape " + shape_to_string(labels.shape()) +
                                     " does not match logits spatial extents " +
                                     shape_to_string(spatial));
  }
  if (!ignore.empty() && ignore.shape() != spatial) {
    shape_error("cross_entropy", "ignore mask shape " + shape_to_string(ignore.shape()) +
                                     " does not match " + shape_to_string(spatial));
  }
  const std::size_t sp = d.spatial();
  CrossEntropyResult<T> r;
  r.grad = Tensor<T>(logits.shape());
  for (std::size_t v = 0; v < sp; ++v) {
    if (!ignore.empty() && ignore[v]) continue;
    if (labels[v] >= d.c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[v]) +
                                  " at voxel " + std::to_string(v) + " outside [0, " +
                                  std::to_string(d.c - 1) + "]");
    }
    ++r.count;
  }
  if (r.count == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.count);
  double total = 0.0;
  for (std::size_t v = 0; v < sp; ++v) {
    if (!ignore.empty() && ignore[v]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < d.c; ++c) mx = std::max(mx, static_cast<double>(logits[c * sp + v]));
    double sum = 0.0;
    for (std::size_t c = 0; c < d.c; ++c) sum += std::exp(static_cast<double>(logits[c * sp + v]) - mx);
    const double lse = mx + std::log(sum);
    const std::size_t y = labels[v];
    total += lse - static_cast<double>(logits[y * sp + v]);
    for (std::size_t c = 0; c < d.c; ++c) {
      const double p = std::exp(static_cast<double>(logits[c * sp + v]) - lse);
      r.grad[c * sp + v] = static_cast<T>((p - (c == y ? 1.0 : 0.0)) * inv);
    }
  }
  r.loss = total * inv;
  return r;
}

template <typename T>
TensorU8 argmax_channels(const Tensor<T>& logits) {
  const VolumeDims d = volume_dims(logits, "argmax_channels input");
  if (d.c > 256) throw std::invalid_argument("argmax_channels: more than 256 channels");
  TensorU8 out({d.d, d.h, d.w});
  const std::size_t sp = d.spatial();
  for (std::size_t v = 0; v < sp; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < d.c; ++c)
      if (logits[c * sp + v] > logits[best * sp + v]) best = c;
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

#define SSC_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                            const ConvSpec&);                                                   \
  template Tensor<T> conv3d_reference(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      const ConvSpec&);                                         \
  template ConvGrads<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                        const ConvSpec&, bool);                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale_per_channel(const Tensor<T>&, const Tensor<T>&);                     \
  template ScaleGrads<T> scale_per_channel_backward(const Tensor<T>&, const Tensor<T>&,         \
                                                    const Tensor<T>&);                          \
  template Tensor<T> global_avg_pool3d(const Tensor<T>&);                                       \
  template Tensor<T> global_avg_pool3d_backward(const Tensor<T>&, const VolumeDims&);           \
  template Tensor<T> upsample3d(const Tensor<T>&, const Triple&);                               \
  template Tensor<T> upsample3d_backward(const Tensor<T>&, const VolumeDims&, const Triple&);   \
  template Tensor<T> concat_channels(const std::vector<const Tensor<T>*>&);                     \
  template std::vector<Tensor<T>> concat_channels_backward(const Tensor<T>&,                    \
                                                           const std::vector<std::size_t>&);    \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                        \
  template Tensor<T> softmax_channels_backward(const Tensor<T>&, const Tensor<T>&);             \
  template CrossEntropyResult<T> cross_entropy(const Tensor<T>&, const TensorU8&,               \
                                               const TensorU8&);                                \
  template TensorU8 argmax_channels(const Tensor<T>&);

SSC_INSTANTIATE_OPS(float)
SSC_INSTANTIATE_OPS(double)

#undef SSC_INSTANTIATE_OPS

}  // namespace ssc
