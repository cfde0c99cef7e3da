#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "scnn/common.hpp"
#include "scnn/tensor.hpp"

namespace scnn {

enum class Mode { train, eval };

// Per-forward-call context; dropout masks are a pure function of
// (seed, iteration, node_id), so replays and parallel schedules agree.
struct LayerCtx {
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  int node_id = 0;
};

// Everything a layer caches during forward that backward needs, beyond the
// inputs and output themselves.
template <typename T>
struct NodeCache {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // max-pool winner indices (flat, per out)
  Tensor<T> mask;                   // dropout keep/scale mask
};

template <typename T>
struct ParamRef {
  std::string field;
  Tensor<T>* value;
};

template <typename T>
using Inputs = std::vector<const Tensor<T>*>;

template <typename T>
using ParamGrads = std::vector<std::pair<std::string, Tensor<T>>>;

using HyperParams = std::vector<std::pair<std::string, std::string>>;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(const Inputs<T>& in, const LayerCtx& ctx,
                            NodeCache<T>& cache) const = 0;
  // Returns the gradient w.r.t. each input; parameter gradients are appended
  // to `param_grads` when non-null (null means the layer is frozen).
  virtual std::vector<Tensor<T>> backward(const Inputs<T>& in,
                                          const NodeCache<T>& cache,
                                          const Tensor<T>& grad_out,
                                          ParamGrads<T>* param_grads) const = 0;
  virtual std::vector<ParamRef<T>> parameters() { return {}; }
  virtual HyperParams hyperparams() const { return {}; }
  virtual std::shared_ptr<Layer<T>> clone() const = 0;
};

namespace detail {
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t pad,
                                   const std::string& who) {
  std::size_t padded = in + 2 * pad;
  if (padded < kernel || stride == 0)
    throw Error(ErrorCode::spatial_underflow,
                who + ": output size would be < 1 (input " +
                    std::to_string(in) + ", kernel " + std::to_string(kernel) +
                    ")");
  return (padded - kernel) / stride + 1;
}
}  // namespace detail

// Spatial cross-correlation (sliding dot product, no kernel flip) plus a
// per-filter bias. "Convolution" throughout follows this modern convention.
template <typename T>
class ConvLayer final : public Layer<T> {
 public:
  ConvLayer(std::size_t num_filters, std::size_t in_channels,
            std::size_t kernel_h, std::size_t kernel_w, std::size_t stride,
            std::size_t zero_padding)
      : num_filters_(num_filters),
        in_channels_(in_channels),
        kernel_h_(kernel_h),
        kernel_w_(kernel_w),
        stride_(stride),
        zero_padding_(zero_padding),
        weights_(Tensor<T>({num_filters, in_channels, kernel_h, kernel_w})),
        biases_(Tensor<T>({num_filters})) {}

  std::string kind() const override { return "conv"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>&) const override {
    const Tensor<T>& x = *in.at(0);
    Shape4 s = x.shape4();
    if (s.channels != in_channels_)
      throw Error(ErrorCode::shape_mismatch,
                  "conv: input has " + std::to_string(s.channels) +
                      " channels, layer expects " +
                      std::to_string(in_channels_));
    std::size_t oh =
        detail::conv_out_extent(s.height, kernel_h_, stride_, zero_padding_,
                                "conv");
    std::size_t ow =
        detail::conv_out_extent(s.width, kernel_w_, stride_, zero_padding_,
                                "conv");
    Tensor<T> y({s.batch, num_filters_, oh, ow});
    const T* xd = x.data();
    const T* wd = weights_.data();
    const T* bd = biases_.data();
    T* yd = y.data();
    parallel_for(s.batch * num_filters_, [&](std::size_t nf) {
      std::size_t n = nf / num_filters_;
      std::size_t f = nf % num_filters_;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = bd[f];
          for (std::size_t c = 0; c < in_channels_; ++c)
            for (std::size_t ky = 0; ky < kernel_h_; ++ky) {
              std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ +
                                                              ky) -
                                  static_cast<std::ptrdiff_t>(zero_padding_);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height))
                continue;
              const T* xrow =
                  xd + ((n * s.channels + c) * s.height + iy) * s.width;
              const T* wrow =
                  wd + ((f * in_channels_ + c) * kernel_h_ + ky) * kernel_w_;
              for (std::size_t kx = 0; kx < kernel_w_; ++kx) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ +
                                                                kx) -
                                    static_cast<std::ptrdiff_t>(zero_padding_);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width))
                  continue;
                acc += wrow[kx] * xrow[ix];
              }
            }
          yd[((n * num_filters_ + f) * oh + oy) * ow + ox] = acc;
        }
    });
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in, const NodeCache<T>&,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>* param_grads) const override {
    const Tensor<T>& x = *in.at(0);
    Shape4 s = x.shape4();
    Shape4 os = grad_out.shape4();
    const T* xd = x.data();
    const T* gd = grad_out.data();
    const T* wd = weights_.data();

    Tensor<T> grad_x(x.shape());
    T* gxd = grad_x.data();
    parallel_for(s.batch, [&](std::size_t n) {
      for (std::size_t f = 0; f < num_filters_; ++f)
        for (std::size_t oy = 0; oy < os.height; ++oy)
          for (std::size_t ox = 0; ox < os.width; ++ox) {
            T g = gd[((n * num_filters_ + f) * os.height + oy) * os.width + ox];
            if (g == T(0)) continue;
            for (std::size_t c = 0; c < in_channels_; ++c)
              for (std::size_t ky = 0; ky < kernel_h_; ++ky) {
                std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                    static_cast<std::ptrdiff_t>(zero_padding_);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height))
                  continue;
                for (std::size_t kx = 0; kx < kernel_w_; ++kx) {
                  std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                      static_cast<std::ptrdiff_t>(zero_padding_);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width))
                    continue;
                  gxd[((n * s.channels + c) * s.height + iy) * s.width + ix] +=
                      wd[((f * in_channels_ + c) * kernel_h_ + ky) * kernel_w_ +
                         kx] *
                      g;
                }
              }
          }
    });

    if (param_grads) {
      Tensor<T> grad_w(weights_.shape());
      Tensor<T> grad_b(biases_.shape());
      T* gwd = grad_w.data();
      T* gbd = grad_b.data();
      parallel_for(num_filters_, [&](std::size_t f) {
        for (std::size_t n = 0; n < s.batch; ++n)
          for (std::size_t oy = 0; oy < os.height; ++oy)
            for (std::size_t ox = 0; ox < os.width; ++ox) {
              T g = gd[((n * num_filters_ + f) * os.height + oy) * os.width +
                       ox];
              gbd[f] += g;
              if (g == T(0)) continue;
              for (std::size_t c = 0; c < in_channels_; ++c)
                for (std::size_t ky = 0; ky < kernel_h_; ++ky) {
                  std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                      static_cast<std::ptrdiff_t>(zero_padding_);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height))
                    continue;
                  for (std::size_t kx = 0; kx < kernel_w_; ++kx) {
                    std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                        static_cast<std::ptrdiff_t>(zero_padding_);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width))
                      continue;
                    gwd[((f * in_channels_ + c) * kernel_h_ + ky) * kernel_w_ +
                        kx] +=
                        g *
                        xd[((n * s.channels + c) * s.height + iy) * s.width +
                           ix];
                  }
                }
            }
      });
      param_grads->emplace_back("weights", std::move(grad_w));
      param_grads->emplace_back("biases", std::move(grad_b));
    }
    return {std::move(grad_x)};
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"weights", &weights_}, {"biases", &biases_}};
  }

  HyperParams hyperparams() const override {
    return {{"filters", std::to_string(num_filters_)},
            {"in_channels", std::to_string(in_channels_)},
            {"kernel_h", std::to_string(kernel_h_)},
            {"kernel_w", std::to_string(kernel_w_)},
            {"stride", std::to_string(stride_)},
            {"pad", std::to_string(zero_padding_)}};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<ConvLayer<T>>(*this);
  }

  Tensor<T>& weights() { return weights_; }
  Tensor<T>& biases() { return biases_; }
  std::size_t num_filters() const { return num_filters_; }
  std::size_t in_channels() const { return in_channels_; }

 private:
  std::size_t num_filters_, in_channels_, kernel_h_, kernel_w_, stride_,
      zero_padding_;
  Tensor<T> weights_;
  Tensor<T> biases_;
};

enum class PoolKind { max, avg };

// Windowed max (ties break to the first index in row-major order) or mean.
// With pad = 0 the output-size rule matches conv with zero_padding = 0.
// Padded cells are excluded: max ranges over in-bounds cells only and the
// mean divides by the in-bounds count.
template <typename T>
class PoolLayer final : public Layer<T> {
 public:
  PoolLayer(PoolKind pool_kind, std::size_t window, std::size_t stride,
            std::size_t pad = 0)
      : kind_(pool_kind), window_(window), stride_(stride), pad_(pad) {}

  std::string kind() const override { return "pool"; }
  PoolKind pool_kind() const { return kind_; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>& cache) const override {
    const Tensor<T>& x = *in.at(0);
    Shape4 s = x.shape4();
    std::size_t oh = detail::conv_out_extent(s.height, window_, stride_, pad_,
                                             "pool");
    std::size_t ow = detail::conv_out_extent(s.width, window_, stride_, pad_,
                                             "pool");
    Tensor<T> y({s.batch, s.channels, oh, ow});
    const T* xd = x.data();
    T* yd = y.data();
    if (kind_ == PoolKind::max) cache.argmax.assign(y.size(), 0);
    std::size_t* am = cache.argmax.data();
    parallel_for(s.batch * s.channels, [&](std::size_t nc) {
      const T* plane = xd + nc * s.height * s.width;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t out_idx = (nc * oh + oy) * ow + ox;
          bool first = true;
          T best = T(0);
          std::size_t best_idx = 0;
          T acc = T(0);
          std::size_t count = 0;
          for (std::size_t wy = 0; wy < window_; ++wy) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + wy) -
                                static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height))
              continue;
            for (std::size_t wx = 0; wx < window_; ++wx) {
              std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride_ + wx) -
                  static_cast<std::ptrdiff_t>(pad_);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width))
                continue;
              std::size_t idx = iy * s.width + ix;
              if (kind_ == PoolKind::max) {
                if (first || plane[idx] > best) {
                  best = plane[idx];
                  best_idx = idx;
                  first = false;
                }
              } else {
                acc += plane[idx];
                ++count;
              }
            }
          }
          if (kind_ == PoolKind::max) {
            yd[out_idx] = best;
            am[out_idx] = nc * s.height * s.width + best_idx;
          } else {
            yd[out_idx] = acc / static_cast<T>(count);
          }
        }
    });
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in,
                                  const NodeCache<T>& cache,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>*) const override {
    const Tensor<T>& x = *in.at(0);
    Shape4 s = x.shape4();
    Shape4 os = grad_out.shape4();
    Tensor<T> grad_x(x.shape());
    T* gxd = grad_x.data();
    const T* gd = grad_out.data();
    if (kind_ == PoolKind::max) {
      for (std::size_t i = 0; i < grad_out.size(); ++i)
        gxd[cache.argmax[i]] += gd[i];
    } else {
      parallel_for(s.batch * s.channels, [&](std::size_t nc) {
        T* plane = gxd + nc * s.height * s.width;
        for (std::size_t oy = 0; oy < os.height; ++oy)
          for (std::size_t ox = 0; ox < os.width; ++ox) {
            // replay the window to find the in-bounds count
            std::size_t count = 0;
            for (std::size_t wy = 0; wy < window_; ++wy) {
              std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride_ + wy) -
                  static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height))
                continue;
              for (std::size_t wx = 0; wx < window_; ++wx) {
                std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride_ + wx) -
                    static_cast<std::ptrdiff_t>(pad_);
                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(s.width))
                  ++count;
              }
            }
            T g = gd[(nc * os.height + oy) * os.width + ox] /
                  static_cast<T>(count);
            for (std::size_t wy = 0; wy < window_; ++wy) {
              std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride_ + wy) -
                  static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height))
                continue;
              for (std::size_t wx = 0; wx < window_; ++wx) {
                std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride_ + wx) -
                    static_cast<std::ptrdiff_t>(pad_);
                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(s.width))
                  plane[iy * s.width + ix] += g;
              }
            }
          }
      });
    }
    return {std::move(grad_x)};
  }

  HyperParams hyperparams() const override {
    return {{"kind", kind_ == PoolKind::max ? "max" : "avg"},
            {"window", std::to_string(window_)},
            {"stride", std::to_string(stride_)},
            {"pad", std::to_string(pad_)}};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<PoolLayer<T>>(*this);
  }

 private:
  PoolKind kind_;
  std::size_t window_, stride_, pad_;
};

// ReLU; the subgradient at exactly 0 is 0.
template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>&) const override {
    Tensor<T> y = *in.at(0);
    T* yd = y.data();
    for (std::size_t i = 0; i < y.size(); ++i)
      yd[i] = yd[i] > T(0) ? yd[i] : T(0);
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>&, const NodeCache<T>& cache,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>*) const override {
    Tensor<T> gx = grad_out;
    const T* yd = cache.output.data();
    T* gd = gx.data();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(yd[i] > T(0))) gd[i] = T(0);
    return {std::move(gx)};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<ReluLayer<T>>(*this);
  }
};

// Cross-channel local response normalization:
//   y[c] = x[c] / (k + alpha * sum_{c' in window(c)} x[c']^2)^beta
// with a window of `size` channels centered on c, truncated at boundaries.
template <typename T>
class LrnLayer final : public Layer<T> {
 public:
  LrnLayer(std::size_t size, T alpha, T beta, T k)
      : size_(size), alpha_(alpha), beta_(beta), k_(k) {}

  std::string kind() const override { return "lrn"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>&) const override {
    const Tensor<T>& x = *in.at(0);
    Shape4 s = x.shape4();
    Tensor<T> y(x.shape());
    const T* xd = x.data();
    T* yd = y.data();
    std::size_t plane = s.height * s.width;
    parallel_for(s.batch, [&](std::size_t n) {
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < s.channels; ++c) {
          auto [lo, hi] = window(c, s.channels);
          T sum = T(0);
          for (std::size_t cc = lo; cc < hi; ++cc) {
            T v = xd[(n * s.channels + cc) * plane + p];
            sum += v * v;
          }
          T denom = std::pow(k_ + alpha_ * sum, beta_);
          yd[(n * s.channels + c) * plane + p] =
              xd[(n * s.channels + c) * plane + p] / denom;
        }
    });
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in, const NodeCache<T>&,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>*) const override {
    const Tensor<T>& x = *in.at(0);
    Shape4 s = x.shape4();
    Tensor<T> gx(x.shape());
    const T* xd = x.data();
    const T* gd = grad_out.data();
    T* gxd = gx.data();
    std::size_t plane = s.height * s.width;
    parallel_for(s.batch, [&](std::size_t n) {
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < s.channels; ++c) {
          auto [lo, hi] = window(c, s.channels);
          T sum = T(0);
          for (std::size_t cc = lo; cc < hi; ++cc) {
            T v = xd[(n * s.channels + cc) * plane + p];
            sum += v * v;
          }
          T base = k_ + alpha_ * sum;
          T denom = std::pow(base, beta_);
          T g = gd[(n * s.channels + c) * plane + p];
          T xc = xd[(n * s.channels + c) * plane + p];
          gxd[(n * s.channels + c) * plane + p] += g / denom;
          // d/dx_j of the denominator term, for every j in c's window
          T factor = -g * xc * beta_ * std::pow(base, -beta_ - 1) * alpha_ *
                     T(2);
          for (std::size_t cc = lo; cc < hi; ++cc)
            gxd[(n * s.channels + cc) * plane + p] +=
                factor * xd[(n * s.channels + cc) * plane + p];
        }
    });
    return {std::move(gx)};
  }

  HyperParams hyperparams() const override {
    return {{"size", std::to_string(size_)},
            {"alpha", std::to_string(static_cast<double>(alpha_))},
            {"beta", std::to_string(static_cast<double>(beta_))},
            {"k", std::to_string(static_cast<double>(k_))}};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<LrnLayer<T>>(*this);
  }

 private:
  std::pair<std::size_t, std::size_t> window(std::size_t c,
                                             std::size_t channels) const {
    std::size_t half_lo = (size_ - 1) / 2;
    std::size_t lo = c >= half_lo ? c - half_lo : 0;
    std::size_t hi = std::min(channels, c + size_ / 2 + 1);
    return {lo, hi};
  }

  std::size_t size_;
  T alpha_, beta_, k_;
};

// Inverted-scaling dropout: eval mode is the identity; train mode zeros each
// activation with probability p and scales survivors by 1/(1-p).
template <typename T>
class DropoutLayer final : public Layer<T> {
 public:
  explicit DropoutLayer(T drop_probability) : p_(drop_probability) {}

  std::string kind() const override { return "dropout"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx& ctx,
                    NodeCache<T>& cache) const override {
    const Tensor<T>& x = *in.at(0);
    if (ctx.mode == Mode::eval || p_ <= T(0)) return x;
    Prng rng(ctx.seed,
             derive_stream(ctx.iteration, static_cast<std::uint64_t>(
                                              ctx.node_id)));
    T keep_scale = T(1) / (T(1) - p_);
    cache.mask = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    T* md = cache.mask.data();
    const T* xd = x.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      md[i] = rng.next_double() < static_cast<double>(p_) ? T(0) : keep_scale;
      yd[i] = xd[i] * md[i];
    }
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in,
                                  const NodeCache<T>& cache,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>*) const override {
    if (cache.mask.empty()) return {grad_out};  // eval-mode forward
    Tensor<T> gx = grad_out;
    gx *= cache.mask;
    return {std::move(gx)};
  }

  HyperParams hyperparams() const override {
    return {{"p", std::to_string(static_cast<double>(p_))}};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<DropoutLayer<T>>(*this);
  }

 private:
  T p_;
};

enum class Activation { identity, relu };

// Fully-connected layer computing o_j = phi(sum_i w_ij x_i - theta_j);
// note the minus sign on the threshold.
template <typename T>
class DenseLayer final : public Layer<T> {
 public:
  DenseLayer(std::size_t out_units, std::size_t in_units, Activation act)
      : out_units_(out_units),
        in_units_(in_units),
        act_(act),
        weights_(Tensor<T>({out_units, in_units})),
        thresholds_(Tensor<T>({out_units})) {}

  std::string kind() const override { return "dense"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>&) const override {
    const Tensor<T>& x = *in.at(0);
    if (x.rank() != 2 || x.shape()[1] != in_units_)
      throw Error(ErrorCode::shape_mismatch,
                  "dense: expected input [batch," + std::to_string(in_units_) +
                      "], got " + x.shape_str());
    std::size_t batch = x.shape()[0];
    Tensor<T> y({batch, out_units_});
    const T* xd = x.data();
    const T* wd = weights_.data();
    const T* td = thresholds_.data();
    T* yd = y.data();
    parallel_for(batch, [&](std::size_t n) {
      for (std::size_t j = 0; j < out_units_; ++j) {
        T acc = -td[j];
        const T* wrow = wd + j * in_units_;
        const T* xrow = xd + n * in_units_;
        for (std::size_t i = 0; i < in_units_; ++i) acc += wrow[i] * xrow[i];
        if (act_ == Activation::relu && acc < T(0)) acc = T(0);
        yd[n * out_units_ + j] = acc;
      }
    });
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in,
                                  const NodeCache<T>& cache,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>* param_grads) const override {
    const Tensor<T>& x = *in.at(0);
    std::size_t batch = x.shape()[0];
    // Gradient through phi; for ReLU use the cached output (0 where clamped).
    Tensor<T> gpre = grad_out;
    if (act_ == Activation::relu) {
      const T* yd = cache.output.data();
      T* gd = gpre.data();
      for (std::size_t i = 0; i < gpre.size(); ++i)
        if (!(yd[i] > T(0))) gd[i] = T(0);
    }
    const T* gd = gpre.data();
    const T* xd = x.data();
    const T* wd = weights_.data();

    Tensor<T> grad_x({batch, in_units_});
    T* gxd = grad_x.data();
    parallel_for(batch, [&](std::size_t n) {
      for (std::size_t j = 0; j < out_units_; ++j) {
        T g = gd[n * out_units_ + j];
        if (g == T(0)) continue;
        const T* wrow = wd + j * in_units_;
        T* gxrow = gxd + n * in_units_;
        for (std::size_t i = 0; i < in_units_; ++i) gxrow[i] += g * wrow[i];
      }
    });

    if (param_grads) {
      Tensor<T> grad_w(weights_.shape());
      Tensor<T> grad_t(thresholds_.shape());
      T* gwd = grad_w.data();
      T* gtd = grad_t.data();
      parallel_for(out_units_, [&](std::size_t j) {
        for (std::size_t n = 0; n < batch; ++n) {
          T g = gd[n * out_units_ + j];
          gtd[j] -= g;
          if (g == T(0)) continue;
          const T* xrow = xd + n * in_units_;
          T* gwrow = gwd + j * in_units_;
          for (std::size_t i = 0; i < in_units_; ++i) gwrow[i] += g * xrow[i];
        }
      });
      param_grads->emplace_back("weights", std::move(grad_w));
      param_grads->emplace_back("thresholds", std::move(grad_t));
    }
    return {std::move(grad_x)};
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"weights", &weights_}, {"thresholds", &thresholds_}};
  }

  HyperParams hyperparams() const override {
    return {{"out_units", std::to_string(out_units_)},
            {"in_units", std::to_string(in_units_)},
            {"activation", act_ == Activation::relu ? "relu" : "identity"}};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<DenseLayer<T>>(*this);
  }

  Tensor<T>& weights() { return weights_; }
  Tensor<T>& thresholds() { return thresholds_; }
  std::size_t out_units() const { return out_units_; }
  std::size_t in_units() const { return in_units_; }
  Activation activation() const { return act_; }

 private:
  std::size_t out_units_, in_units_;
  Activation act_;
  Tensor<T> weights_;
  Tensor<T> thresholds_;
};

// Collapses [batch, ...] to [batch, features]; pure reshape.
template <typename T>
class FlattenLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>&) const override {
    const Tensor<T>& x = *in.at(0);
    if (x.rank() < 1)
      throw Error(ErrorCode::shape_mismatch, "flatten: rank-0 input");
    std::size_t batch = x.shape()[0];
    return x.reshape({batch, batch ? x.size() / batch : 0});
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in, const NodeCache<T>&,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>*) const override {
    return {grad_out.reshape(in.at(0)->shape())};
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<FlattenLayer<T>>(*this);
  }
};

// Channel-axis concatenation in declared input order.
template <typename T>
class ConcatLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "concat"; }

  Tensor<T> forward(const Inputs<T>& in, const LayerCtx&,
                    NodeCache<T>&) const override {
    if (in.empty())
      throw Error(ErrorCode::shape_mismatch, "concat: no inputs");
    Shape4 first = in[0]->shape4();
    std::size_t total_channels = 0;
    for (const Tensor<T>* t : in) {
      Shape4 s = t->shape4();
      if (s.batch != first.batch || s.height != first.height ||
          s.width != first.width)
        throw Error(ErrorCode::shape_mismatch,
                    "concat: inputs disagree on batch/height/width");
      total_channels += s.channels;
    }
    Tensor<T> y({first.batch, total_channels, first.height, first.width});
    std::size_t plane = first.height * first.width;
    T* yd = y.data();
    for (std::size_t n = 0; n < first.batch; ++n) {
      std::size_t coff = 0;
      for (const Tensor<T>* t : in) {
        std::size_t ch = t->shape()[1];
        const T* src = t->data() + n * ch * plane;
        std::copy(src, src + ch * plane,
                  yd + (n * total_channels + coff) * plane);
        coff += ch;
      }
    }
    return y;
  }

  std::vector<Tensor<T>> backward(const Inputs<T>& in, const NodeCache<T>&,
                                  const Tensor<T>& grad_out,
                                  ParamGrads<T>*) const override {
    Shape4 os = grad_out.shape4();
    std::size_t plane = os.height * os.width;
    const T* gd = grad_out.data();
    std::vector<Tensor<T>> grads;
    std::size_t coff = 0;
    for (const Tensor<T>* t : in) {
      std::size_t ch = t->shape()[1];
      Tensor<T> g(t->shape());
      for (std::size_t n = 0; n < os.batch; ++n) {
        const T* src = gd + (n * os.channels + coff) * plane;
        std::copy(src, src + ch * plane, g.data() + n * ch * plane);
      }
      grads.push_back(std::move(g));
      coff += ch;
    }
    return grads;
  }

  std::shared_ptr<Layer<T>> clone() const override {
    return std::make_shared<ConcatLayer<T>>(*this);
  }
};

template <typename T>
struct SoftmaxXentResult {
  Tensor<T> probabilities;  // [batch, classes]
  T mean_loss;
  Tensor<T> grad_logits;  // (prob - onehot) / batch
};

// Numerically stabilized softmax + mean cross-entropy over a batch.
template <typename T>
SoftmaxXentResult<T> softmax_xent(const Tensor<T>& logits,
                                  const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw Error(ErrorCode::shape_mismatch, "softmax: expected [batch,classes]");
  std::size_t batch = logits.shape()[0];
  std::size_t classes = logits.shape()[1];
  if (labels.size() != batch)
    throw Error(ErrorCode::shape_mismatch, "softmax: one label per sample");
  SoftmaxXentResult<T> r{Tensor<T>(logits.shape()), T(0),
                         Tensor<T>(logits.shape())};
  const T* ld = logits.data();
  T* pd = r.probabilities.data();
  T* gd = r.grad_logits.data();
  double loss = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw Error(ErrorCode::label_out_of_range,
                  "softmax: label " + std::to_string(label) + " outside [0," +
                      std::to_string(classes) + ")");
    const T* row = ld + n * classes;
    T max_logit = row[0];
    for (std::size_t c = 1; c < classes; ++c)
      max_logit = std::max(max_logit, row[c]);
    double denom = 0;
    for (std::size_t c = 0; c < classes; ++c)
      denom += std::exp(static_cast<double>(row[c] - max_logit));
    for (std::size_t c = 0; c < classes; ++c) {
      double p = std::exp(static_cast<double>(row[c] - max_logit)) / denom;
      pd[n * classes + c] = static_cast<T>(p);
      gd[n * classes + c] = static_cast<T>(
          (p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) /
          static_cast<double>(batch));
    }
    loss -= std::log(
        std::max(static_cast<double>(pd[n * classes + label]), 1e-300));
  }
  r.mean_loss = static_cast<T>(loss / static_cast<double>(batch));
  return r;
}

}  // namespace scnn
