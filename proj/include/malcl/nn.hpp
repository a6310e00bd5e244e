#pragma once

// Minimal convolutional network over a flat parameter vector: strided 3x3
// convolutions with leaky-ReLU and a linear 1x1 head. Templated on the
// scalar so training runs in float and gradient checks in double.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "malcl/core.hpp"

namespace malcl::nn {

struct ConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  bool activation = true;

  std::size_t weight_count() const { return static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel; }
  std::size_t param_count() const { return weight_count() + out_ch; }
  bool operator==(const ConvSpec&) const = default;
};

struct Architecture {
  int input_size = 256;
  std::vector<ConvSpec> layers;

  int output_size() const {
    int s = input_size;
    for (const auto& l : layers) s = (s + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
    return s;
  }

  int output_channels() const { return layers.empty() ? 3 : layers.back().out_ch; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  std::string descriptor() const {
    std::ostringstream os;
    os << "in" << input_size;
    for (const auto& l : layers)
      os << "|c" << l.in_ch << "-" << l.out_ch << "k" << l.kernel << "s" << l.stride << (l.activation ? "a" : "l");
    return os.str();
  }

  void validate() const {
    if (layers.empty()) throw Error("architecture has no layers");
    if (layers.front().in_ch != 3) throw Error("first layer must take 3 input channels");
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i].in_ch != layers[i - 1].out_ch) throw Error("architecture channel mismatch");
    for (const auto& l : layers)
      if (l.kernel < 1 || l.kernel % 2 == 0 || l.stride < 1 || l.out_ch < 1)
        throw Error("invalid convolution spec");
  }

  bool operator==(const Architecture&) const = default;

  // Four stride-2 blocks, one stride-1 context block and a 1x1 head with
  // `head_channels` outputs: 256x256 input -> 16x16 grid.
  static Architecture reference(int input_size = 256, int head_channels = 5) {
    Architecture a;
    a.input_size = input_size;
    a.layers = {{3, 8, 3, 2, true},   {8, 16, 3, 2, true},  {16, 24, 3, 2, true},
                {24, 32, 3, 2, true}, {32, 32, 3, 1, true}, {32, head_channels, 1, 1, false}};
    return a;
  }
};

template <class T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}

  T* plane(int ch) { return data.data() + static_cast<std::size_t>(ch) * h * w; }
  const T* plane(int ch) const { return data.data() + static_cast<std::size_t>(ch) * h * w; }
};

template <class T>
Tensor<T> image_tensor(const Image& img) {
  Tensor<T> t(3, img.height, img.width);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) t.data[c * n + i] = static_cast<T>(img.rgb[3 * i + c]) / T(255) - T(0.5);
  return t;
}

// Activations kept for the backward pass; inputs[l] is the input of layer l.
template <class T>
struct ForwardCache {
  std::vector<Tensor<T>> inputs;
  Tensor<T> output;
};

namespace detail {

template <class T>
void im2col(const Tensor<T>& in, const ConvSpec& s, int oh, int ow, std::vector<T>& col) {
  const int k = s.kernel, pad = k / 2, P = oh * ow;
  col.assign(static_cast<std::size_t>(in.c) * k * k * P, T(0));
  for (int ic = 0; ic < in.c; ++ic) {
    const T* src = in.plane(ic);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + static_cast<std::size_t>((ic * k + ky) * k + kx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride + ky - pad;
          if (iy < 0 || iy >= in.h) continue;
          const T* srow = src + static_cast<std::size_t>(iy) * in.w;
          T* drow = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride + kx - pad;
            if (ix >= 0 && ix < in.w) drow[ox] = srow[ix];
          }
        }
      }
  }
}

template <class T>
void col2im(const std::vector<T>& col, const ConvSpec& s, int oh, int ow, Tensor<T>& din) {
  const int k = s.kernel, pad = k / 2, P = oh * ow;
  for (int ic = 0; ic < din.c; ++ic) {
    T* dst = din.plane(ic);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + static_cast<std::size_t>((ic * k + ky) * k + kx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride + ky - pad;
          if (iy < 0 || iy >= din.h) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * din.w;
          const T* srow = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride + kx - pad;
            if (ix >= 0 && ix < din.w) drow[ix] += srow[ox];
          }
        }
      }
  }
}

// Dot product with eight independent partial sums; fixed summation order.
template <class T>
T dot(const T* a, const T* b, int n) {
  T acc[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
constexpr T leak() {
  return T(0.1);
}

}  // namespace detail

template <class T>
Tensor<T> conv_forward(std::span<const T> params, const ConvSpec& s, const Tensor<T>& in, std::vector<T>& col) {
  const int oh = (in.h + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1;
  const int ow = (in.w + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1;
  const int P = oh * ow;
  const int K = s.in_ch * s.kernel * s.kernel;
  detail::im2col(in, s, oh, ow, col);
  Tensor<T> out(s.out_ch, oh, ow);
  const T* W = params.data();
  const T* B = params.data() + s.weight_count();
  for (int oc = 0; oc < s.out_ch; ++oc) {
    T* o = out.plane(oc);
    std::fill(o, o + P, B[oc]);
    for (int kk = 0; kk < K; ++kk) {
      const T w = W[static_cast<std::size_t>(oc) * K + kk];
      const T* c = col.data() + static_cast<std::size_t>(kk) * P;
      for (int p = 0; p < P; ++p) o[p] += w * c[p];
    }
    if (s.activation)
      for (int p = 0; p < P; ++p) o[p] = o[p] > T(0) ? o[p] : detail::leak<T>() * o[p];
  }
  return out;
}

template <class T>
Tensor<T> forward(const Architecture& arch, std::span<const T> params, const Tensor<T>& x,
                  ForwardCache<T>* cache = nullptr) {
  std::vector<T> col;
  Tensor<T> cur = x;
  std::size_t off = 0;
  if (cache) cache->inputs.clear();
  for (const auto& l : arch.layers) {
    if (cache) cache->inputs.push_back(cur);
    cur = conv_forward<T>(params.subspan(off, l.param_count()), l, cur, col);
    off += l.param_count();
  }
  if (cache) cache->output = cur;
  return cur;
}

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
template <class T>
void backward(const Architecture& arch, std::span<const T> params, const ForwardCache<T>& cache, Tensor<T> dout,
              std::span<T> grad) {
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& l : arch.layers) {
    offsets.push_back(off);
    off += l.param_count();
  }
  std::vector<T> col, dcol;
  for (int li = static_cast<int>(arch.layers.size()) - 1; li >= 0; --li) {
    const auto& s = arch.layers[li];
    const auto& in = cache.inputs[li];
    const Tensor<T>& out = li + 1 < static_cast<int>(arch.layers.size()) ? cache.inputs[li + 1] : cache.output;
    const int oh = dout.h, ow = dout.w, P = oh * ow;
    const int K = s.in_ch * s.kernel * s.kernel;
    if (s.activation)
      for (std::size_t i = 0; i < dout.data.size(); ++i)
        if (!(out.data[i] > T(0))) dout.data[i] *= detail::leak<T>();
    detail::im2col(in, s, oh, ow, col);
    const T* W = params.data() + offsets[li];
    T* dW = grad.data() + offsets[li];
    T* dB = dW + s.weight_count();
    for (int oc = 0; oc < s.out_ch; ++oc) {
      const T* d = dout.plane(oc);
      T sum = 0;
      for (int p = 0; p < P; ++p) sum += d[p];
      dB[oc] += sum;
      for (int kk = 0; kk < K; ++kk)
        dW[static_cast<std::size_t>(oc) * K + kk] += detail::dot(d, col.data() + static_cast<std::size_t>(kk) * P, P);
    }
    if (li == 0) break;
    dcol.assign(static_cast<std::size_t>(K) * P, T(0));
    for (int oc = 0; oc < s.out_ch; ++oc) {
      const T* d = dout.plane(oc);
      for (int kk = 0; kk < K; ++kk) {
        const T w = W[static_cast<std::size_t>(oc) * K + kk];
        T* dc = dcol.data() + static_cast<std::size_t>(kk) * P;
        for (int p = 0; p < P; ++p) dc[p] += w * d[p];
      }
    }
    Tensor<T> din(in.c, in.h, in.w);
    detail::col2im(dcol, s, oh, ow, din);
    dout = std::move(din);
  }
}

// He-normal body weights, small head weights, zero biases except the first
// head channel, which gets `head_bias0`.
template <class T>
std::vector<T> init_params(const Architecture& arch, std::uint64_t seed, T head_bias0) {
  std::vector<T> p(arch.param_count(), T(0));
  std::mt19937_64 rng(seed);
  std::size_t off = 0;
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    const auto& l = arch.layers[li];
    const bool head = li + 1 == arch.layers.size();
    const double fan_in = static_cast<double>(l.in_ch) * l.kernel * l.kernel;
    std::normal_distribution<double> nd(0.0, head ? 0.01 : std::sqrt(2.0 / fan_in));
    for (std::size_t i = 0; i < l.weight_count(); ++i) p[off + i] = static_cast<T>(nd(rng));
    if (head) p[off + l.weight_count()] = head_bias0;
    off += l.param_count();
  }
  return p;
}

}  // namespace malcl::nn
