#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mtseg/ema.hpp"

namespace mtseg {

// Channel-major activation tensor: shape (channels, items, height, width).
// Keeping channels outermost makes every convolution a single GEMM over the
// whole batch and keeps batch-norm statistics contiguous per channel.
// Storage handed to the GEMM kernels. A fixed 64-byte alignment keeps their
// summation order, and so the results, independent of where buffers land.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct BasicTensor {
  int channels = 0;
  int items = 0;
  int height = 0;
  int width = 0;
  AlignedVector<T> data;

  BasicTensor() = default;
  BasicTensor(int c, int n, int h, int w, T fill = T{})
      : channels(c), items(n), height(h), width(w), data(static_cast<std::size_t>(c) * n * h * w, fill) {}

  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  [[nodiscard]] std::size_t channel_size() const { return plane() * items; }
  [[nodiscard]] bool same_shape(const BasicTensor& o) const {
    return channels == o.channels && items == o.items && height == o.height && width == o.width;
  }
};

template <class T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  AlignedVector<T> value;
  AlignedVector<T> grad;
};

enum class UpsampleMode { kTransposed, kNearest };

[[nodiscard]] UpsampleMode parse_upsample_mode(std::string_view name);
[[nodiscard]] std::string_view to_string(UpsampleMode mode);

struct UNetConfig {
  int base_channels = 64;
  int depth = 3;
  double dropout_rate = 0.5;
  double bn_momentum = 0.9;
  int in_channels = 1;
  int out_channels = 1;
  UpsampleMode upsample = UpsampleMode::kTransposed;
  bool zero_head = false;

  void validate() const;
};

enum class ForwardMode {
  kTrain,    // batch statistics, running stats updated, dropout active
  kPerturb,  // batch statistics and dropout, running stats left untouched
  kEval,     // running statistics, no dropout
};

// Fully convolutional 2D U-Net: three encoder blocks of two 3x3 convs, a
// two-conv bottleneck, three decoder blocks with skip concatenation and a 1x1
// head. Every feature conv is followed by batch norm and ReLU; dropout follows
// the bottleneck and each decoder block.
template <class T>
class BasicUNet {
 public:
  using Tensor = BasicTensor<T>;

  BasicUNet(const UNetConfig& cfg, std::uint64_t init_seed);
  ~BasicUNet();
  BasicUNet(const BasicUNet&);
  BasicUNet& operator=(const BasicUNet&);
  BasicUNet(BasicUNet&&) noexcept;
  BasicUNet& operator=(BasicUNet&&) noexcept;

  [[nodiscard]] const UNetConfig& config() const { return cfg_; }
  [[nodiscard]] int conv_layer_count() const;

  // Input shape (1, N, H, W) with H, W divisible by 8. Returns logits (1, N, H, W).
  // `record` keeps the intermediate values needed by backward(); the teacher
  // always runs with record = false. `dropout_rng` may be null in kEval mode.
  Tensor forward(const Tensor& input, ForwardMode mode, std::mt19937_64* dropout_rng, bool record);

  // Accumulates parameter gradients from d(loss)/d(logits) of the last
  // recorded forward pass.
  void backward(const Tensor& grad_logits);

  void zero_grad();

  [[nodiscard]] std::vector<Parameter<T>*> parameters();
  [[nodiscard]] std::vector<const Parameter<T>*> parameters() const;

  [[nodiscard]] WeightSet<T> weights() const;
  [[nodiscard]] WeightSet<T> buffers() const;
  void set_weights(const WeightSet<T>& w);
  void set_buffers(const WeightSet<T>& b);

  [[nodiscard]] std::size_t parameter_count() const;

 private:
  struct Impl;
  UNetConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

extern template class BasicUNet<float>;
extern template class BasicUNet<double>;

using Tensor = BasicTensor<float>;
using UNet = BasicUNet<float>;

[[nodiscard]] float sigmoid(float logit);

}  // namespace mtseg
