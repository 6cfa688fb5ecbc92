#include "mtseg/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "mtseg/error.hpp"

namespace mtseg {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

constexpr double kBnEps = 1e-5;

// Double-precision sum of f(0..n-1) over interleaved lanes. The lanes break
// the serial dependency while keeping a fixed summation order.
template <class F>
double lane_sum(std::size_t n, F&& f) {
  constexpr std::size_t kLanes = 8;
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += f(i + l);
  double total = 0.0;
  for (; i < n; ++i) total += f(i);
  for (double a : acc) total += a;
  return total;
}

template <class T>
Parameter<T> make_param(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return Parameter<T>{std::move(name), std::move(shape), AlignedVector<T>(n, T{}), AlignedVector<T>(n, T{})};
}

template <class T>
void he_init(Parameter<T>& p, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------
// k x k convolution, stride 1, zero padding k/2, as im2col + GEMM.

template <class T>
struct Conv {
  using Tensor = BasicTensor<T>;
  int cin = 0, cout = 0, k = 3;
  bool has_bias = false;
  bool input_grad = true;
  Parameter<T> weight, bias;
  AlignedVector<T> col;
  AlignedVector<T> scratch;  // im2col buffer for unrecorded passes
  int n = 0, h = 0, w = 0;

  Conv() = default;
  Conv(std::string name, int in, int out, int ksize, bool with_bias, std::mt19937_64& rng)
      : cin(in), cout(out), k(ksize), has_bias(with_bias) {
    weight = make_param<T>(name + ".weight", {out, in, ksize, ksize});
    he_init(weight, in * ksize * ksize, rng);
    if (has_bias) bias = make_param<T>(name + ".bias", {out});
  }

  // Writes every element of dst, so the buffer can be reused without clearing.
  void im2col(const Tensor& x, AlignedVector<T>& dst) const {
    const std::size_t m = x.channel_size();
    dst.resize(static_cast<std::size_t>(cin) * k * k * m);
    const int pad = k / 2;
    const int w = x.width;
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* row = dst.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * m;
          const int dy = ky - pad;
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          for (int i = 0; i < x.items; ++i) {
            const T* src_plane = x.data.data() + (static_cast<std::size_t>(c) * x.items + i) * x.plane();
            T* dst_plane = row + static_cast<std::size_t>(i) * x.plane();
            for (int y = 0; y < x.height; ++y) {
              T* out = dst_plane + static_cast<std::size_t>(y) * w;
              const int sy = y + dy;
              if (sy < 0 || sy >= x.height) {
                std::fill(out, out + w, T{});
                continue;
              }
              const T* src = src_plane + static_cast<std::size_t>(sy) * w;
              std::fill(out, out + x0, T{});
              std::memcpy(out + x0, src + x0 + dx, sizeof(T) * (x1 - x0));
              std::fill(out + x1, out + w, T{});
            }
          }
        }
      }
    }
  }

  void col2im(const AlignedVector<T>& src, Tensor& dx_out) const {
    const std::size_t m = dx_out.channel_size();
    const int pad = k / 2;
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T* row = src.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * m;
          const int dy = ky - pad;
          const int dxo = kx - pad;
          for (int i = 0; i < dx_out.items; ++i) {
            T* dst_plane = dx_out.data.data() + (static_cast<std::size_t>(c) * dx_out.items + i) * dx_out.plane();
            const T* src_plane = row + static_cast<std::size_t>(i) * dx_out.plane();
            for (int y = 0; y < dx_out.height; ++y) {
              const int sy = y + dy;
              if (sy < 0 || sy >= dx_out.height) continue;
              T* dst = dst_plane + static_cast<std::size_t>(sy) * dx_out.width;
              const T* in = src_plane + static_cast<std::size_t>(y) * dx_out.width;
              const int x0 = std::max(0, -dxo);
              const int x1 = std::min(dx_out.width, dx_out.width - dxo);
              for (int xx = x0; xx < x1; ++xx) dst[xx + dxo] += in[xx];
            }
          }
        }
      }
    }
  }

  Tensor forward(const Tensor& x, bool record) {
    if (x.channels != cin) throw ContractViolation("conv: input channel mismatch at " + weight.name);
    const Eigen::Index m = static_cast<Eigen::Index>(x.channel_size());
    const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
    Tensor y(cout, x.items, x.height, x.width);
    const T* src = x.data.data();
    if (k == 1) {
      if (record) col = x.data;
    } else {
      AlignedVector<T>& c = record ? col : scratch;
      im2col(x, c);
      src = c.data();
    }
    MatMap<T> out(y.data.data(), cout, m);
    out.noalias() = ConstMatMap<T>(weight.value.data(), cout, kk) * ConstMatMap<T>(src, kk, m);
    if (has_bias) {
      for (int o = 0; o < cout; ++o) out.row(o).array() += bias.value[o];
    }
    if (record) {
      n = x.items;
      h = x.height;
      w = x.width;
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    const Eigen::Index m = static_cast<Eigen::Index>(dy.channel_size());
    const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
    ConstMatMap<T> g(dy.data.data(), cout, m);
    ConstMatMap<T> c(col.data(), kk, m);
    MatMap<T>(weight.grad.data(), cout, kk).noalias() += g * c.transpose();
    if (has_bias) {
      for (int o = 0; o < cout; ++o) bias.grad[o] += g.row(o).sum();
    }
    if (!input_grad) return {};
    Tensor dx(cin, n, h, w);
    if (k == 1) {
      MatMap<T>(dx.data.data(), kk, m).noalias() = ConstMatMap<T>(weight.value.data(), cout, kk).transpose() * g;
    } else {
      scratch.resize(static_cast<std::size_t>(kk) * m);
      MatMap<T>(scratch.data(), kk, m).noalias() = ConstMatMap<T>(weight.value.data(), cout, kk).transpose() * g;
      col2im(scratch, dx);
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Batch normalisation over (items, height, width) per channel.

template <class T>
struct BatchNorm {
  using Tensor = BasicTensor<T>;
  int channels = 0;
  double momentum = 0.9;
  Parameter<T> gamma, beta;
  NamedTensor<T> running_mean, running_var;
  std::vector<T> xhat;
  std::vector<T> inv_std;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int c, double mom) : channels(c), momentum(mom) {
    gamma = make_param<T>(name + ".gamma", {c});
    beta = make_param<T>(name + ".beta", {c});
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
    running_mean = NamedTensor<T>{name + ".running_mean", {c}, std::vector<T>(c, T(0))};
    running_var = NamedTensor<T>{name + ".running_var", {c}, std::vector<T>(c, T(1))};
  }

  // In place, with an optional fused ReLU.
  void forward(Tensor& x, ForwardMode mode, bool record, bool relu) {
    const std::size_t m = x.channel_size();
    if (record) {
      xhat.resize(x.data.size());
      inv_std.resize(channels);
    }
    for (int c = 0; c < channels; ++c) {
      T* v = x.data.data() + static_cast<std::size_t>(c) * m;
      double mean, var;
      if (mode == ForwardMode::kEval) {
        mean = running_mean.data[c];
        var = running_var.data[c];
      } else {
        mean = lane_sum(m, [&](std::size_t i) { return static_cast<double>(v[i]); }) / static_cast<double>(m);
        const double ss = lane_sum(m, [&](std::size_t i) {
          const double d = v[i] - mean;
          return d * d;
        });
        var = ss / static_cast<double>(m);
        if (mode == ForwardMode::kTrain) {
          const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
          running_mean.data[c] = static_cast<T>(momentum * running_mean.data[c] + (1.0 - momentum) * mean);
          running_var.data[c] = static_cast<T>(momentum * running_var.data[c] + (1.0 - momentum) * unbiased);
        }
      }
      const T istd = static_cast<T>(1.0 / std::sqrt(var + kBnEps));
      const T mu = static_cast<T>(mean);
      const T g = gamma.value[c];
      const T b = beta.value[c];
      const T floor = relu ? T(0) : -std::numeric_limits<T>::infinity();
      if (record) {
        inv_std[c] = istd;
        T* xh = xhat.data() + static_cast<std::size_t>(c) * m;
        for (std::size_t i = 0; i < m; ++i) {
          xh[i] = (v[i] - mu) * istd;
          v[i] = std::max(g * xh[i] + b, floor);
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) v[i] = std::max(g * ((v[i] - mu) * istd) + b, floor);
      }
    }
  }

  // In place: dy -> dx. Assumes the recorded pass used batch statistics. The
  // ReLU mask is recovered from the normalised input.
  void backward(Tensor& dy, bool relu) {
    const std::size_t m = dy.channel_size();
    const double inv_m = 1.0 / static_cast<double>(m);
    for (int c = 0; c < channels; ++c) {
      T* g = dy.data.data() + static_cast<std::size_t>(c) * m;
      const T* xh = xhat.data() + static_cast<std::size_t>(c) * m;
      if (relu) {
        const T gm = gamma.value[c];
        const T bt = beta.value[c];
        for (std::size_t i = 0; i < m; ++i) {
          if (!(gm * xh[i] + bt > T(0))) g[i] = T(0);
        }
      }
      const double sum_g = lane_sum(m, [&](std::size_t i) { return static_cast<double>(g[i]); });
      const double sum_gx = lane_sum(m, [&](std::size_t i) { return static_cast<double>(g[i]) * xh[i]; });
      gamma.grad[c] += static_cast<T>(sum_gx);
      beta.grad[c] += static_cast<T>(sum_g);
      const T scale = static_cast<T>(gamma.value[c] * inv_std[c]);
      const T mean_g = static_cast<T>(sum_g * inv_m);
      const T mean_gx = static_cast<T>(sum_gx * inv_m);
      for (std::size_t i = 0; i < m; ++i) g[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
    }
  }
};

// conv -> batch norm -> ReLU
template <class T>
struct ConvBnRelu {
  using Tensor = BasicTensor<T>;
  Conv<T> conv;
  BatchNorm<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, int in, int out, double momentum, std::mt19937_64& rng)
      : conv(name + ".conv", in, out, 3, false, rng), bn(name + ".bn", out, momentum) {}

  Tensor forward(const Tensor& x, ForwardMode mode, bool record) {
    Tensor y = conv.forward(x, record);
    bn.forward(y, mode, record, true);
    return y;
  }

  Tensor backward(Tensor dy) {
    bn.backward(dy, true);
    return conv.backward(dy);
  }
};

template <class T>
struct MaxPool2 {
  using Tensor = BasicTensor<T>;
  std::vector<std::uint8_t> argmax;
  int in_h = 0, in_w = 0;

  Tensor forward(const Tensor& x, bool record) {
    Tensor y(x.channels, x.items, x.height / 2, x.width / 2);
    if (record) {
      argmax.resize(y.data.size());
      in_h = x.height;
      in_w = x.width;
    }
    const std::size_t planes = static_cast<std::size_t>(x.channels) * x.items;
    std::size_t o = 0;
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = x.data.data() + p * x.plane();
      for (int yy = 0; yy < y.height; ++yy) {
        const T* r0 = src + static_cast<std::size_t>(2 * yy) * x.width;
        const T* r1 = r0 + x.width;
        for (int xx = 0; xx < y.width; ++xx, ++o) {
          T best = r0[2 * xx];
          std::uint8_t idx = 0;
          if (r0[2 * xx + 1] > best) best = r0[2 * xx + 1], idx = 1;
          if (r1[2 * xx] > best) best = r1[2 * xx], idx = 2;
          if (r1[2 * xx + 1] > best) best = r1[2 * xx + 1], idx = 3;
          y.data[o] = best;
          if (record) argmax[o] = idx;
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) const {
    Tensor dx(dy.channels, dy.items, in_h, in_w);
    const std::size_t planes = static_cast<std::size_t>(dy.channels) * dy.items;
    std::size_t o = 0;
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = dx.data.data() + p * dx.plane();
      for (int yy = 0; yy < dy.height; ++yy) {
        for (int xx = 0; xx < dy.width; ++xx, ++o) {
          const int a = argmax[o];
          dst[static_cast<std::size_t>(2 * yy + (a >> 1)) * in_w + 2 * xx + (a & 1)] += dy.data[o];
        }
      }
    }
    return dx;
  }
};

// 2x upsampling: stride-2 transposed 2x2 convolution, or parameter-free nearest.
template <class T>
struct Upsample {
  using Tensor = BasicTensor<T>;
  UpsampleMode mode = UpsampleMode::kTransposed;
  int cin = 0, cout = 0;
  Parameter<T> weight, bias;  // weight laid out (cout, 2, 2, cin)
  Tensor input;

  Upsample() = default;
  Upsample(const std::string& name, int in, int out, UpsampleMode m, std::mt19937_64& rng)
      : mode(m), cin(in), cout(m == UpsampleMode::kTransposed ? out : in) {
    if (mode == UpsampleMode::kTransposed) {
      weight = make_param<T>(name + ".weight", {cout, 2, 2, cin});
      he_init(weight, cin, rng);
      bias = make_param<T>(name + ".bias", {cout});
    }
  }

  Tensor forward(const Tensor& x, bool record) {
    Tensor y(cout, x.items, x.height * 2, x.width * 2);
    const int h = x.height, w = x.width;
    if (mode == UpsampleMode::kNearest) {
      const std::size_t planes = static_cast<std::size_t>(x.channels) * x.items;
      for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data.data() + p * x.plane();
        T* dst = y.data.data() + p * y.plane();
        for (int yy = 0; yy < 2 * h; ++yy)
          for (int xx = 0; xx < 2 * w; ++xx) dst[static_cast<std::size_t>(yy) * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
      }
      if (record) input = Tensor(x.channels, x.items, h, w);
      return y;
    }
    const Eigen::Index m = static_cast<Eigen::Index>(x.channel_size());
    RowMat<T> tmp = ConstMatMap<T>(weight.value.data(), cout * 4, cin) * ConstMatMap<T>(x.data.data(), cin, m);
    for (int o = 0; o < cout; ++o) {
      for (int q = 0; q < 4; ++q) {
        const T* row = tmp.data() + (static_cast<std::size_t>(o) * 4 + q) * m;
        const int oy = q >> 1, ox = q & 1;
        for (int i = 0; i < x.items; ++i) {
          T* dst = y.data.data() + (static_cast<std::size_t>(o) * x.items + i) * y.plane();
          const T* src = row + static_cast<std::size_t>(i) * x.plane();
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx)
              dst[static_cast<std::size_t>(2 * yy + oy) * 2 * w + 2 * xx + ox] = src[yy * w + xx] + bias.value[o];
        }
      }
    }
    if (record) input = x;
    return y;
  }

  Tensor backward(const Tensor& dy) {
    const int h = dy.height / 2, w = dy.width / 2;
    Tensor dx(cin, dy.items, h, w);
    if (mode == UpsampleMode::kNearest) {
      const std::size_t planes = static_cast<std::size_t>(dy.channels) * dy.items;
      for (std::size_t p = 0; p < planes; ++p) {
        const T* src = dy.data.data() + p * dy.plane();
        T* dst = dx.data.data() + p * dx.plane();
        for (int yy = 0; yy < 2 * h; ++yy)
          for (int xx = 0; xx < 2 * w; ++xx) dst[(yy / 2) * w + xx / 2] += src[static_cast<std::size_t>(yy) * 2 * w + xx];
      }
      return dx;
    }
    const Eigen::Index m = static_cast<Eigen::Index>(dx.channel_size());
    RowMat<T> gt(cout * 4, m);
    for (int o = 0; o < cout; ++o) {
      for (int q = 0; q < 4; ++q) {
        T* row = gt.data() + (static_cast<std::size_t>(o) * 4 + q) * m;
        const int oy = q >> 1, ox = q & 1;
        for (int i = 0; i < dy.items; ++i) {
          const T* src = dy.data.data() + (static_cast<std::size_t>(o) * dy.items + i) * dy.plane();
          T* dst = row + static_cast<std::size_t>(i) * dx.plane();
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) dst[yy * w + xx] = src[static_cast<std::size_t>(2 * yy + oy) * 2 * w + 2 * xx + ox];
        }
        bias.grad[o] += ConstMatMap<T>(row, 1, m).sum();
      }
    }
    ConstMatMap<T> xin(input.data.data(), cin, m);
    MatMap<T>(weight.grad.data(), cout * 4, cin).noalias() += gt * xin.transpose();
    MatMap<T>(dx.data.data(), cin, m).noalias() = ConstMatMap<T>(weight.value.data(), cout * 4, cin).transpose() * gt;
    return dx;
  }
};

template <class T>
struct Dropout {
  using Tensor = BasicTensor<T>;
  double rate = 0.5;
  std::vector<std::uint8_t> keep;
  bool applied = false;

  void forward(Tensor& x, ForwardMode mode, std::mt19937_64* rng, bool record) {
    applied = mode != ForwardMode::kEval && rate > 0.0;
    if (!applied) return;
    if (rng == nullptr) throw ContractViolation("dropout: training-mode forward needs an rng");
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    if (record) keep.resize(x.data.size());
    if (rate == 0.5) {
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        if ((i & 63u) == 0) bits = (*rng)();
        const bool on = (bits >> (i & 63u)) & 1u;
        x.data[i] = on ? x.data[i] * scale : T(0);
        if (record) keep[i] = on;
      }
    } else {
      std::bernoulli_distribution coin(1.0 - rate);
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        const bool on = coin(*rng);
        x.data[i] = on ? x.data[i] * scale : T(0);
        if (record) keep[i] = on;
      }
    }
  }

  void backward(Tensor& dy) const {
    if (!applied) return;
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] = keep[i] ? dy.data[i] * scale : T(0);
  }
};

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> out(a.channels + b.channels, a.items, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

template <class T>
void split_channels(const BasicTensor<T>& g, int first_channels, BasicTensor<T>& a, BasicTensor<T>& b) {
  a = BasicTensor<T>(first_channels, g.items, g.height, g.width);
  b = BasicTensor<T>(g.channels - first_channels, g.items, g.height, g.width);
  std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), a.data.begin());
  std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), g.data.end(), b.data.begin());
}

template <class T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

UpsampleMode parse_upsample_mode(std::string_view name) {
  if (name == "transposed") return UpsampleMode::kTransposed;
  if (name == "nearest") return UpsampleMode::kNearest;
  throw ConfigError("unknown upsample mode '" + std::string(name) + "' (expected transposed or nearest)");
}

std::string_view to_string(UpsampleMode mode) { return mode == UpsampleMode::kTransposed ? "transposed" : "nearest"; }

void UNetConfig::validate() const {
  if (base_channels <= 0) throw ConfigError("model: base_channels must be positive");
  if (depth < 1 || depth > 6) throw ConfigError("model: depth must lie in [1, 6]");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must lie in [0, 1)");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("model: bn_momentum must lie in [0, 1]");
  if (in_channels != 1 || out_channels != 1) throw ConfigError("model: only single-channel input/output is supported");
}

float sigmoid(float logit) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(logit)))); }

template <class T>
struct BasicUNet<T>::Impl {
  using Tensor = BasicTensor<T>;

  std::vector<ConvBnRelu<T>> encoder;  // 2 per stage
  std::vector<MaxPool2<T>> pools;
  std::vector<ConvBnRelu<T>> bottleneck;
  std::vector<Upsample<T>> ups;         // deepest first
  std::vector<ConvBnRelu<T>> decoder;   // 2 per stage, deepest first
  std::vector<Dropout<T>> dropouts;     // bottleneck, then each decoder stage
  Conv<T> head;
  std::vector<int> skip_channels;       // per encoder stage

  Impl(const UNetConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int base = cfg.base_channels;
    int in = cfg.in_channels;
    for (int s = 0; s < cfg.depth; ++s) {
      const int out = base << s;
      const std::string name = "enc" + std::to_string(s + 1);
      encoder.emplace_back(name + ".block1", in, out, cfg.bn_momentum, rng);
      encoder.emplace_back(name + ".block2", out, out, cfg.bn_momentum, rng);
      pools.emplace_back();
      skip_channels.push_back(out);
      in = out;
    }
    const int mid = base << cfg.depth;
    bottleneck.emplace_back("bottleneck.block1", in, mid, cfg.bn_momentum, rng);
    bottleneck.emplace_back("bottleneck.block2", mid, mid, cfg.bn_momentum, rng);
    encoder.front().conv.input_grad = false;
    dropouts.push_back(Dropout<T>{cfg.dropout_rate, {}, false});
    in = mid;
    for (int s = cfg.depth - 1; s >= 0; --s) {
      const int out = base << s;
      const std::string name = "dec" + std::to_string(s + 1);
      ups.emplace_back("up" + std::to_string(s + 1), in, out, cfg.upsample, rng);
      const int cat = skip_channels[s] + ups.back().cout;
      decoder.emplace_back(name + ".block1", cat, out, cfg.bn_momentum, rng);
      decoder.emplace_back(name + ".block2", out, out, cfg.bn_momentum, rng);
      dropouts.push_back(Dropout<T>{cfg.dropout_rate, {}, false});
      in = out;
    }
    head = Conv<T>("head", in, cfg.out_channels, 1, true, rng);
    if (cfg.zero_head) std::fill(head.weight.value.begin(), head.weight.value.end(), T(0));
  }

  template <class Fn>
  void for_each_block(Fn&& fn) {
    for (auto& b : encoder) fn(b);
    for (auto& b : bottleneck) fn(b);
    for (auto& b : decoder) fn(b);
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    const int depth = static_cast<int>(pools.size());
    auto block = [&](ConvBnRelu<T>& b) {
      out.push_back(&b.conv.weight);
      out.push_back(&b.bn.gamma);
      out.push_back(&b.bn.beta);
    };
    for (auto& b : encoder) block(b);
    for (auto& b : bottleneck) block(b);
    for (int s = 0; s < depth; ++s) {
      if (ups[s].mode == UpsampleMode::kTransposed) {
        out.push_back(&ups[s].weight);
        out.push_back(&ups[s].bias);
      }
      block(decoder[2 * s]);
      block(decoder[2 * s + 1]);
    }
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
  }

  std::vector<NamedTensor<T>*> buffer_refs() {
    std::vector<NamedTensor<T>*> out;
    for_each_block([&](ConvBnRelu<T>& b) {
      out.push_back(&b.bn.running_mean);
      out.push_back(&b.bn.running_var);
    });
    return out;
  }

  Tensor forward(const Tensor& input, ForwardMode mode, std::mt19937_64* rng, bool record) {
    const int depth = static_cast<int>(pools.size());
    std::vector<Tensor> skips(depth);
    Tensor a = input;
    for (int s = 0; s < depth; ++s) {
      a = encoder[2 * s].forward(a, mode, record);
      a = encoder[2 * s + 1].forward(a, mode, record);
      skips[s] = a;
      a = pools[s].forward(a, record);
    }
    a = bottleneck[0].forward(a, mode, record);
    a = bottleneck[1].forward(a, mode, record);
    dropouts[0].forward(a, mode, rng, record);
    for (int j = 0; j < depth; ++j) {
      const int s = depth - 1 - j;
      Tensor u = ups[j].forward(a, record);
      a = concat_channels(skips[s], u);
      a = decoder[2 * j].forward(a, mode, record);
      a = decoder[2 * j + 1].forward(a, mode, record);
      dropouts[j + 1].forward(a, mode, rng, record);
    }
    return head.forward(a, record);
  }

  void backward(const Tensor& grad_logits) {
    const int depth = static_cast<int>(pools.size());
    std::vector<Tensor> skip_grads(depth);
    Tensor g = head.backward(grad_logits);
    for (int j = depth - 1; j >= 0; --j) {
      const int s = depth - 1 - j;
      dropouts[j + 1].backward(g);
      g = decoder[2 * j + 1].backward(std::move(g));
      g = decoder[2 * j].backward(std::move(g));
      Tensor gu;
      split_channels(g, skip_channels[s], skip_grads[s], gu);
      g = ups[j].backward(gu);
    }
    dropouts[0].backward(g);
    g = bottleneck[1].backward(std::move(g));
    g = bottleneck[0].backward(std::move(g));
    for (int s = depth - 1; s >= 0; --s) {
      g = pools[s].backward(g);
      add_into(g, skip_grads[s]);
      g = encoder[2 * s + 1].backward(std::move(g));
      g = encoder[2 * s].backward(std::move(g));
    }
  }
};

template <class T>
BasicUNet<T>::BasicUNet(const UNetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  impl_ = std::make_unique<Impl>(cfg_, init_seed);
}

template <class T>
BasicUNet<T>::~BasicUNet() = default;
template <class T>
BasicUNet<T>::BasicUNet(const BasicUNet& o) : cfg_(o.cfg_), impl_(std::make_unique<Impl>(*o.impl_)) {}
template <class T>
BasicUNet<T>& BasicUNet<T>::operator=(const BasicUNet& o) {
  if (this != &o) {
    cfg_ = o.cfg_;
    impl_ = std::make_unique<Impl>(*o.impl_);
  }
  return *this;
}
template <class T>
BasicUNet<T>::BasicUNet(BasicUNet&&) noexcept = default;
template <class T>
BasicUNet<T>& BasicUNet<T>::operator=(BasicUNet&&) noexcept = default;

template <class T>
int BasicUNet<T>::conv_layer_count() const {
  return static_cast<int>(impl_->encoder.size() + impl_->bottleneck.size() + impl_->decoder.size()) + 1;
}

template <class T>
BasicTensor<T> BasicUNet<T>::forward(const Tensor& input, ForwardMode mode, std::mt19937_64* dropout_rng,
                                     bool record) {
  const int factor = 1 << cfg_.depth;
  if (input.channels != cfg_.in_channels) throw ContractViolation("forward: expected a single input channel");
  if (input.height % factor != 0 || input.width % factor != 0 || input.height == 0 || input.width == 0) {
    throw ContractViolation("forward: spatial dims " + std::to_string(input.height) + "x" +
                            std::to_string(input.width) + " are not divisible by " + std::to_string(factor));
  }
  if (record && mode == ForwardMode::kEval) throw ContractViolation("forward: gradients need batch statistics");
  return impl_->forward(input, mode, dropout_rng, record);
}

template <class T>
void BasicUNet<T>::backward(const Tensor& grad_logits) {
  impl_->backward(grad_logits);
}

template <class T>
void BasicUNet<T>::zero_grad() {
  for (auto* p : impl_->params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
std::vector<Parameter<T>*> BasicUNet<T>::parameters() {
  return impl_->params();
}

template <class T>
std::vector<const Parameter<T>*> BasicUNet<T>::parameters() const {
  auto mutable_params = impl_->params();
  return {mutable_params.begin(), mutable_params.end()};
}

template <class T>
WeightSet<T> BasicUNet<T>::weights() const {
  WeightSet<T> out;
  for (const auto* p : impl_->params()) out.push_back(NamedTensor<T>{p->name, p->shape, {p->value.begin(), p->value.end()}});
  return out;
}

template <class T>
WeightSet<T> BasicUNet<T>::buffers() const {
  WeightSet<T> out;
  for (const auto* b : impl_->buffer_refs()) out.push_back(*b);
  return out;
}

template <class T>
void BasicUNet<T>::set_weights(const WeightSet<T>& w) {
  auto params = impl_->params();
  WeightSet<T> mine = weights();
  detail::require_isomorphic(mine, w, "set_weights");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.assign(w[i].data.begin(), w[i].data.end());
}

template <class T>
void BasicUNet<T>::set_buffers(const WeightSet<T>& b) {
  auto refs = impl_->buffer_refs();
  WeightSet<T> mine = buffers();
  detail::require_isomorphic(mine, b, "set_buffers");
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i]->data = b[i].data;
}

template <class T>
std::size_t BasicUNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : impl_->params()) n += p->value.size();
  return n;
}

template class BasicUNet<float>;
template class BasicUNet<double>;

}  // namespace mtseg
