#include "sparsearch/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sparsearch {

namespace {

constexpr std::string_view kKindNames[] = {
    "sep_conv_3x3", "sep_conv_5x5", "avg_pool_3x3", "max_pool_3x3", "reduction_conv",
    "identity",     "conv_1x1",     "conv_3x3",     "linear",
};

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw TensorError(std::string(op) + ": expected NCHW input, got " + shape_to_string(x.shape()));
  }
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                            const char* op) {
  if (in + 2 * pad < k) throw TensorError(std::string(op) + ": kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// Output positions o with 0 <= o*stride + tap - pad < in, as [lo, hi).
struct Range {
  std::size_t lo, hi;
};
Range valid_outputs(std::size_t in, std::size_t out, std::size_t stride, std::size_t tap,
                    std::size_t pad) {
  const long long s = static_cast<long long>(stride);
  const long long shift = static_cast<long long>(tap) - static_cast<long long>(pad);
  long long lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  long long last = static_cast<long long>(in) - 1 - shift;
  long long hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
  std::size_t n, c_in, h, w, c_out, k, stride, pad, ho, wo;
  bool depthwise;
};

// out[n, co] += sum over taps; depthwise pairs co with ci == co.
void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> wt,
                  std::span<double> out) {
  parallel_for(g.n, [&](std::size_t b) {
    for (std::size_t co = 0; co < g.c_out; ++co) {
      double* o = out.data() + (b * g.c_out + co) * g.ho * g.wo;
      const std::size_t ci_begin = g.depthwise ? co : 0;
      const std::size_t ci_end = g.depthwise ? co + 1 : g.c_in;
      for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
        const double* xp = x.data() + (b * g.c_in + ci) * g.h * g.w;
        const double* wp = wt.data() + ((g.depthwise ? co : co * g.c_in + ci) * g.k * g.k);
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const Range rh = valid_outputs(g.h, g.ho, g.stride, kh, g.pad);
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const double wv = wp[kh * g.k + kw];
            if (wv == 0.0) continue;
            const Range rw = valid_outputs(g.w, g.wo, g.stride, kw, g.pad);
            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
              const double* xr = xp + (oh * g.stride + kh - g.pad) * g.w + kw - g.pad;
              double* orow = o + oh * g.wo;
              for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += wv * xr[ow * g.stride];
            }
          }
        }
      }
    }
  });
}

void conv_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> wt,
                   std::span<const double> gy, std::vector<double>* gx, std::vector<double>* gw) {
  if (gx) {
    parallel_for(g.n, [&](std::size_t b) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const double* gyp = gy.data() + (b * g.c_out + co) * g.ho * g.wo;
        const std::size_t ci_begin = g.depthwise ? co : 0;
        const std::size_t ci_end = g.depthwise ? co + 1 : g.c_in;
        for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
          double* gxp = gx->data() + (b * g.c_in + ci) * g.h * g.w;
          const double* wp = wt.data() + ((g.depthwise ? co : co * g.c_in + ci) * g.k * g.k);
          for (std::size_t kh = 0; kh < g.k; ++kh) {
            const Range rh = valid_outputs(g.h, g.ho, g.stride, kh, g.pad);
            for (std::size_t kw = 0; kw < g.k; ++kw) {
              const double wv = wp[kh * g.k + kw];
              if (wv == 0.0) continue;
              const Range rw = valid_outputs(g.w, g.wo, g.stride, kw, g.pad);
              for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                double* xr = gxp + (oh * g.stride + kh - g.pad) * g.w + kw - g.pad;
                const double* grow = gyp + oh * g.wo;
                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) xr[ow * g.stride] += wv * grow[ow];
              }
            }
          }
        }
      }
    });
  }
  if (gw) {
    for (std::size_t b = 0; b < g.n; ++b) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const double* gyp = gy.data() + (b * g.c_out + co) * g.ho * g.wo;
        const std::size_t ci_begin = g.depthwise ? co : 0;
        const std::size_t ci_end = g.depthwise ? co + 1 : g.c_in;
        for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
          const double* xp = x.data() + (b * g.c_in + ci) * g.h * g.w;
          double* gwp = gw->data() + ((g.depthwise ? co : co * g.c_in + ci) * g.k * g.k);
          for (std::size_t kh = 0; kh < g.k; ++kh) {
            const Range rh = valid_outputs(g.h, g.ho, g.stride, kh, g.pad);
            for (std::size_t kw = 0; kw < g.k; ++kw) {
              const Range rw = valid_outputs(g.w, g.wo, g.stride, kw, g.pad);
              double acc = 0.0;
              for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                const double* xr = xp + (oh * g.stride + kh - g.pad) * g.w + kw - g.pad;
                const double* grow = gyp + oh * g.wo;
                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) acc += xr[ow * g.stride] * grow[ow];
              }
              gwp[kh * g.k + kw] += acc;
            }
          }
        }
      }
    }
  }
}

Tensor conv_impl(Tape& tape, const Tensor& x, const Tensor& weight, std::size_t stride,
                 std::size_t padding, bool depthwise) {
  const char* name = depthwise ? "depthwise_conv2d" : "conv2d";
  require_rank4(x, name);
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw TensorError(std::string(name) + ": bad weight shape " + shape_to_string(weight.shape()));
  }
  if (stride == 0) throw TensorError(std::string(name) + ": stride must be >= 1");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c_in = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.depthwise = depthwise;
  if (depthwise) {
    if (weight.dim(0) != g.c_in || weight.dim(1) != 1) {
      throw TensorError("depthwise_conv2d: channel mismatch, input " + shape_to_string(x.shape()) +
                        " weight " + shape_to_string(weight.shape()));
    }
    g.c_out = g.c_in;
  } else {
    if (weight.dim(1) != g.c_in) {
      throw TensorError("conv2d: channel mismatch, input " + shape_to_string(x.shape()) +
                        " weight " + shape_to_string(weight.shape()));
    }
    g.c_out = weight.dim(0);
  }
  g.ho = conv_out_extent(g.h, g.k, stride, padding, name);
  g.wo = conv_out_extent(g.w, g.k, stride, padding, name);

  Tensor out = Tensor::zeros({g.n, g.c_out, g.ho, g.wo});
  conv_forward(g, x.data(), weight.data(), out.data());
  tape.finish(out);
  if (tape.needs_grad({&x, &weight})) {
    tape.record(out, [x, weight, out, g]() mutable {
      std::vector<double> gx, gw;
      if (x.requires_grad()) gx.assign(x.numel(), 0.0);
      if (weight.requires_grad()) gw.assign(weight.numel(), 0.0);
      conv_backward(g, x.data(), weight.data(), out.grad(), x.requires_grad() ? &gx : nullptr,
                    weight.requires_grad() ? &gw : nullptr);
      if (!gx.empty()) accumulate_grad(x, gx);
      if (!gw.empty()) accumulate_grad(weight, gw);
    });
  }
  return out;
}

}  // namespace

bool is_block_op(OpKind kind) {
  return kind == OpKind::SepConv3x3 || kind == OpKind::SepConv5x5 ||
         kind == OpKind::AvgPool3x3 || kind == OpKind::MaxPool3x3;
}

std::string_view op_kind_name(OpKind kind) { return kKindNames[static_cast<int>(kind)]; }

OpKind op_kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kKindNames); ++i) {
    if (kKindNames[i] == name) return static_cast<OpKind>(i);
  }
  throw std::invalid_argument("unknown operation kind '" + std::string(name) + "'");
}

int sep_conv_kernel(OpKind kind) {
  switch (kind) {
    case OpKind::SepConv3x3: return 3;
    case OpKind::SepConv5x5: return 5;
    default: throw std::invalid_argument("not a separable convolution");
  }
}

// ---- parameter construction --------------------------------------------------

Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

BatchNormParams BatchNormParams::make(std::size_t channels, bool freeze_scale) {
  BatchNormParams bn;
  bn.scale = Tensor::ones({channels});
  bn.bias = Tensor::zeros({channels});
  bn.bias.set_requires_grad(true);
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::ones({channels});
  bn.set_freeze_scale(freeze_scale);
  return bn;
}

void BatchNormParams::set_freeze_scale(bool on) {
  freeze_scale = on;
  if (on) std::fill(scale.data().begin(), scale.data().end(), 1.0);
  scale.set_requires_grad(!on);
}

OpParams OpParams::make(OpKind kind, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng,
                        bool freeze_bn_scale) {
  if (!is_block_op(kind)) throw std::invalid_argument("OpParams: not a block operation");
  OpParams p;
  p.kind = kind;
  p.c_in = c_in;
  p.c_out = c_out;
  if (kind == OpKind::SepConv3x3 || kind == OpKind::SepConv5x5) {
    const std::size_t k = static_cast<std::size_t>(sep_conv_kernel(kind));
    p.depthwise = kaiming_normal({c_in, 1, k, k}, k * k, rng);
    p.pointwise = kaiming_normal({c_out, c_in, 1, 1}, c_in, rng);
    p.bn = BatchNormParams::make(c_out, freeze_bn_scale);
  } else if (c_in != c_out) {
    throw std::invalid_argument("OpParams: pooling cannot change the channel count");
  }
  return p;
}

ConvBnParams ConvBnParams::make(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                                std::mt19937_64& rng, bool freeze_bn_scale) {
  return {kaiming_normal({c_out, c_in, kernel, kernel}, c_in * kernel * kernel, rng),
          BatchNormParams::make(c_out, freeze_bn_scale)};
}

ReductionParams ReductionParams::make(std::size_t c_in, std::mt19937_64& rng,
                                      bool freeze_bn_scale) {
  ReductionParams p;
  p.path1x1 = ConvBnParams::make(c_in, 2 * c_in, 1, rng, freeze_bn_scale);
  p.path3x3 = ConvBnParams::make(c_in, 2 * c_in, 3, rng, freeze_bn_scale);
  return p;
}

LinearParams LinearParams::make(std::size_t c_in, std::size_t classes, std::mt19937_64& rng) {
  LinearParams p;
  p.weight = kaiming_normal({classes, c_in}, c_in, rng);
  p.bias = Tensor::zeros({classes});
  p.bias.set_requires_grad(true);
  return p;
}

// ---- primitives ------------------------------------------------------------------

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, std::size_t stride,
              std::size_t padding) {
  return conv_impl(tape, x, weight, stride, padding, false);
}

Tensor depthwise_conv2d(Tape& tape, const Tensor& x, const Tensor& weight, std::size_t stride,
                        std::size_t padding) {
  return conv_impl(tape, x, weight, stride, padding, true);
}

Tensor batch_norm(Tape& tape, const Tensor& x, const BatchNormParams& bn, bool training) {
  require_rank4(x, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (bn.channels() != c) {
    throw TensorError("batch_norm: expected " + std::to_string(bn.channels()) +
                      " channels, got " + shape_to_string(x.shape()));
  }
  const double m = static_cast<double>(n * plane);
  std::vector<double> mean(c), invstd(c);
  auto xd = x.data();
  Tensor running_mean = bn.running_mean, running_var = bn.running_var;
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xd.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / m;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xd.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      v /= m;
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(v + kBatchNormEps);
      running_mean[ch] = kBatchNormMomentum * running_mean[ch] + (1.0 - kBatchNormMomentum) * mu;
      running_var[ch] = kBatchNormMomentum * running_var[ch] + (1.0 - kBatchNormMomentum) * v;
    } else {
      mean[ch] = running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(running_var[ch] + kBatchNormEps);
    }
  }

  Tensor scale = bn.scale, bias = bn.bias;
  auto gamma = [&](std::size_t ch) { return bn.freeze_scale ? 1.0 : scale[ch]; };
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      const double a = gamma(ch) * invstd[ch], beta = bias[ch], mu = mean[ch];
      for (std::size_t i = 0; i < plane; ++i) od[off + i] = a * (xd[off + i] - mu) + beta;
    }
  }
  tape.finish(out);

  if (tape.needs_grad({&x, &scale, &bias})) {
    const bool frozen = bn.freeze_scale;
    tape.record(out, [x, scale, bias, out, mean, invstd, training, frozen, n, c, plane, m]() mutable {
      auto gy = out.grad();
      auto xd = x.data();
      std::vector<double> gx(x.requires_grad() ? x.numel() : 0, 0.0);
      std::vector<double> gscale(c, 0.0), gbias(c, 0.0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = frozen ? 1.0 : scale[ch];
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (xd[off + i] - mean[ch]) * invstd[ch];
            sum_gy += gy[off + i];
            sum_gy_xhat += gy[off + i] * xhat;
          }
        }
        gscale[ch] = sum_gy_xhat;
        gbias[ch] = sum_gy;
        if (gx.empty()) continue;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (training) {
              const double xhat = (xd[off + i] - mean[ch]) * invstd[ch];
              gx[off + i] =
                  g * invstd[ch] / m * (m * gy[off + i] - sum_gy - xhat * sum_gy_xhat);
            } else {
              gx[off + i] = g * invstd[ch] * gy[off + i];
            }
          }
        }
      }
      if (!gx.empty()) accumulate_grad(x, gx);
      if (!frozen) accumulate_grad(scale, gscale);
      accumulate_grad(bias, gbias);
    });
  }
  return out;
}

Tensor pool3x3(Tape& tape, const Tensor& x, PoolMode mode) {
  require_rank4(x, "pool3x3");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto od = out.data();
  // argmax for max mode, window element count for avg mode
  std::vector<std::size_t> aux(out.numel());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t i0 = i == 0 ? 0 : i - 1, i1 = std::min(h, i + 2);
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t j0 = j == 0 ? 0 : j - 1, j1 = std::min(w, j + 2);
        const std::size_t o = base + i * w + j;
        if (mode == PoolMode::Avg) {
          double s = 0.0;
          for (std::size_t a = i0; a < i1; ++a)
            for (std::size_t b = j0; b < j1; ++b) s += xd[base + a * w + b];
          aux[o] = (i1 - i0) * (j1 - j0);
          od[o] = s / static_cast<double>(aux[o]);
        } else {
          std::size_t best = base + i0 * w + j0;
          for (std::size_t a = i0; a < i1; ++a)
            for (std::size_t b = j0; b < j1; ++b)
              if (xd[base + a * w + b] > xd[best]) best = base + a * w + b;
          aux[o] = best;
          od[o] = xd[best];
        }
      }
    }
  }
  tape.finish(out);
  if (tape.needs_grad({&x})) {
    tape.record(out, [x, out, aux = std::move(aux), mode, n, c, h, w]() mutable {
      auto gy = out.grad();
      std::vector<double> gx(x.numel(), 0.0);
      if (mode == PoolMode::Max) {
        for (std::size_t o = 0; o < gy.size(); ++o) gx[aux[o]] += gy[o];
      } else {
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          const std::size_t base = plane * h * w;
          for (std::size_t i = 0; i < h; ++i) {
            const std::size_t i0 = i == 0 ? 0 : i - 1, i1 = std::min(h, i + 2);
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t j0 = j == 0 ? 0 : j - 1, j1 = std::min(w, j + 2);
              const std::size_t o = base + i * w + j;
              const double share = gy[o] / static_cast<double>(aux[o]);
              for (std::size_t a = i0; a < i1; ++a)
                for (std::size_t b = j0; b < j1; ++b) gx[base + a * w + b] += share;
            }
          }
        }
      }
      accumulate_grad(x, gx);
    });
  }
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  auto xd = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xd[p * plane + i];
    out[p] = s / static_cast<double>(plane);
  }
  tape.finish(out);
  if (tape.needs_grad({&x})) {
    tape.record(out, [x, out, n, c, plane]() mutable {
      auto gy = out.grad();
      std::vector<double> gx(x.numel());
      for (std::size_t p = 0; p < n * c; ++p) {
        const double share = gy[p] / static_cast<double>(plane);
        std::fill_n(gx.begin() + p * plane, plane, share);
      }
      accumulate_grad(x, gx);
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) ||
      bias.numel() != weight.dim(0)) {
    throw TensorError("linear: incompatible shapes " + shape_to_string(x.shape()) + " x " +
                      shape_to_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), k = weight.dim(0);
  Tensor out = Tensor::zeros({n, k});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = bias[j];
      for (std::size_t i = 0; i < c; ++i) s += x[b * c + i] * weight[j * c + i];
      out[b * k + j] = s;
    }
  }
  tape.finish(out);
  if (tape.needs_grad({&x, &weight, &bias})) {
    tape.record(out, [x, weight, bias, out, n, c, k]() mutable {
      auto gy = out.grad();
      std::vector<double> gx(n * c, 0.0), gw(k * c, 0.0), gb(k, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          const double g = gy[b * k + j];
          gb[j] += g;
          for (std::size_t i = 0; i < c; ++i) {
            gx[b * c + i] += g * weight[j * c + i];
            gw[j * c + i] += g * x[b * c + i];
          }
        }
      }
      accumulate_grad(x, gx);
      accumulate_grad(weight, gw);
      accumulate_grad(bias, gb);
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw TensorError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) +
                      " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw TensorError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                        std::to_string(k) + ")");
    }
  }
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.data().data() + b * k;
    const double zmax = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(s);
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] = std::exp(z[j] - lse);
    total += lse - z[labels[b]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  tape.finish(out);
  if (tape.needs_grad({&logits})) {
    tape.record(out, [logits, out, probs = std::move(probs), labels, n, k]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      std::vector<double> gz(n * k);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          gz[b * k + j] = g * (probs[b * k + j] - (static_cast<int>(j) == labels[b] ? 1.0 : 0.0));
        }
      }
      accumulate_grad(logits, gz);
    });
  }
  return out;
}

// ---- composites ------------------------------------------------------------------

Tensor conv_bn_relu(Tape& tape, const Tensor& x, const ConvBnParams& p, std::size_t stride,
                    bool training) {
  const std::size_t pad = p.weight.dim(2) / 2;
  return relu(tape, batch_norm(tape, conv2d(tape, x, p.weight, stride, pad), p.bn, training));
}

Tensor sep_conv(Tape& tape, const Tensor& x, const OpParams& p, bool training) {
  require_rank4(x, "sep_conv");
  if (x.dim(1) != p.c_in) {
    throw TensorError("sep_conv: input has " + std::to_string(x.dim(1)) + " channels, op expects " +
                      std::to_string(p.c_in));
  }
  const std::size_t pad = p.depthwise.dim(2) / 2;
  Tensor y = depthwise_conv2d(tape, x, p.depthwise, 1, pad);
  y = conv2d(tape, y, p.pointwise, 1, 0);
  return relu(tape, batch_norm(tape, y, p.bn, training));
}

Tensor reduction_block(Tape& tape, const Tensor& x, const ReductionParams& p, bool training) {
  require_rank4(x, "reduction_block");
  Tensor a = conv_bn_relu(tape, x, p.path1x1, 2, training);
  Tensor b = conv_bn_relu(tape, x, p.path3x3, 2, training);
  return add(tape, a, b);
}

Tensor classifier_head(Tape& tape, const Tensor& x, const LinearParams& p) {
  return linear(tape, global_avg_pool(tape, x), p.weight, p.bias);
}

Tensor apply_block_op(Tape& tape, const Tensor& x, const OpParams& p, bool training) {
  switch (p.kind) {
    case OpKind::SepConv3x3:
    case OpKind::SepConv5x5: return sep_conv(tape, x, p, training);
    case OpKind::AvgPool3x3: return pool3x3(tape, x, PoolMode::Avg);
    case OpKind::MaxPool3x3: return pool3x3(tape, x, PoolMode::Max);
    default: throw TensorError("apply_block_op: not a block operation");
  }
}

}  // namespace sparsearch
