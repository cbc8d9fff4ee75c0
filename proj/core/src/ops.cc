// Copyright 2026 The ATFM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "atfm/ops.h"

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "atfm/error.h"

namespace atfm {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

struct ConvGeometry {
  int64_t in_channels, height, width;
  int64_t out_channels, kernel_h, kernel_w;
  int64_t out_h, out_w;
  int stride, pad;

  int64_t patch() const { return in_channels * kernel_h * kernel_w; }
  int64_t pixels() const { return out_h * out_w; }
  bool is_pointwise() const {
    return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad == 0;
  }
};

// Unfolds x into a [Cin*kh*kw, out_h*out_w] row-major matrix.
void Im2Col(const double* x, const ConvGeometry& g, double* col) {
  for (int64_t c = 0; c < g.in_channels; ++c) {
    for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.pixels();
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            for (int64_t ox = 0; ox < g.out_w; ++ox) dst[ox] = 0.0;
            continue;
          }
          const double* src = x + (c * g.height + iy) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of Im2Col: scatters-adds col back into dx.
void Col2ImAdd(const double* col, const ConvGeometry& g, double* dx) {
  for (int64_t c = 0; c < g.in_channels; ++c) {
    for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row =
            col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.pixels();
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + oy * g.out_w;
          double* dst = dx + (c * g.height + iy) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool AnyRequiresGrad(const Tape& tape, std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.valid() && tape.RequiresGrad(v.id())) return true;
  }
  return false;
}

template <typename F, typename D>
Var Unary(Var x, F forward, D derivative) {
  Tape& tape = Tape::Of({x});
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  const int xid = x.id();
  const bool rg = tape.RequiresGrad(xid);
  return tape.Record(std::move(out), rg,
                     [xid, derivative](Tape& t, const Tensor& g) {
                       const Tensor& xv = t.value(xid);
                       Tensor& dx = t.GradBuffer(xid);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         dx[i] += g[i] * derivative(xv[i]);
                       }
                     });
}

double StableSigmoid(double v) {
  if (v >= 0) {
    const double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var Conv2d(Var x, Var kernels, Var bias, int stride, int pad) {
  Tape& tape = Tape::Of({x, kernels, bias});
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  if (xv.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + xv.shape().ToString());
  if (kv.rank() != 4) throw ShapeError("conv2d: kernels must be [Cout,Cin,kh,kw], got " + kv.shape().ToString());
  if (kv.dim(1) != xv.dim(0)) {
    throw ShapeError("conv2d: input has " + std::to_string(xv.dim(0)) +
                     " channels but kernels expect " + std::to_string(kv.dim(1)));
  }
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), kv.dim(0), kv.dim(2), kv.dim(3),
                 0, 0, stride, pad};
  if (g.kernel_h % 2 == 0 || g.kernel_w % 2 == 0) {
    throw ArgumentError("conv2d: kernel extents must be odd, got " + kv.shape().ToString());
  }
  const int64_t span_h = g.height + 2 * pad - g.kernel_h;
  const int64_t span_w = g.width + 2 * pad - g.kernel_w;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d: geometry of input " + xv.shape().ToString() +
                     " with kernel " + kv.shape().ToString() + " stride " +
                     std::to_string(stride) + " pad " + std::to_string(pad) +
                     " does not tile");
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  if (bias.valid() && !(bias.shape() == Shape{g.out_channels})) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.out_channels) +
                     "], got " + bias.shape().ToString());
  }

  auto col = std::make_shared<AlignedVector>();
  const double* col_data = xv.data();
  if (!g.is_pointwise()) {
    col->resize(static_cast<std::size_t>(g.patch() * g.pixels()));
    Im2Col(xv.data(), g, col->data());
    col_data = col->data();
  }

  Tensor out(Shape{g.out_channels, g.out_h, g.out_w});
  MatrixMap out_m(out.data(), g.out_channels, g.pixels());
  ConstMatrixMap k_m(kv.data(), g.out_channels, g.patch());
  ConstMatrixMap col_m(col_data, g.patch(), g.pixels());
  out_m.noalias() = k_m * col_m;
  if (bias.valid()) {
    ConstVectorMap b(bias.value().data(), g.out_channels);
    out_m.colwise() += b;
  }

  const int xid = x.id(), kid = kernels.id(), bid = bias.valid() ? bias.id() : -1;
  const bool rg = AnyRequiresGrad(tape, {x, kernels, bias});
  return tape.Record(std::move(out), rg, [=](Tape& t, const Tensor& grad) {
    ConstMatrixMap g_m(grad.data(), g.out_channels, g.pixels());
    const double* cols = g.is_pointwise() ? t.value(xid).data() : col->data();
    ConstMatrixMap c_m(cols, g.patch(), g.pixels());
    if (t.RequiresGrad(kid)) {
      MatrixMap dk(t.GradBuffer(kid).data(), g.out_channels, g.patch());
      dk.noalias() += g_m * c_m.transpose();
    }
    if (bid >= 0 && t.RequiresGrad(bid)) {
      VectorMap db(t.GradBuffer(bid).data(), g.out_channels);
      db += g_m.rowwise().sum();
    }
    if (t.RequiresGrad(xid)) {
      ConstMatrixMap k(t.value(kid).data(), g.out_channels, g.patch());
      Tensor& dx = t.GradBuffer(xid);
      if (g.is_pointwise()) {
        MatrixMap dx_m(dx.data(), g.patch(), g.pixels());
        dx_m.noalias() += k.transpose() * g_m;
      } else {
        RowMatrix dcol = k.transpose() * g_m;
        Col2ImAdd(dcol.data(), g, dx.data());
      }
    }
  });
}

Var FullyConnected(Var x, Var weight, Var bias) {
  Tape& tape = Tape::Of({x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 1) throw ShapeError("fully_connected: input must be a vector, got " + xv.shape().ToString());
  if (wv.rank() != 2 || wv.dim(1) != xv.dim(0)) {
    throw ShapeError("fully_connected: weight " + wv.shape().ToString() +
                     " does not accept input " + xv.shape().ToString());
  }
  const int64_t m = wv.dim(0), n = wv.dim(1);
  if (bias.valid() && !(bias.shape() == Shape{m})) {
    throw ShapeError("fully_connected: bias must be [" + std::to_string(m) +
                     "], got " + bias.shape().ToString());
  }
  Tensor out(Shape{m});
  VectorMap out_v(out.data(), m);
  out_v.noalias() = ConstMatrixMap(wv.data(), m, n) * ConstVectorMap(xv.data(), n);
  if (bias.valid()) out_v += ConstVectorMap(bias.value().data(), m);

  const int xid = x.id(), wid = weight.id(), bid = bias.valid() ? bias.id() : -1;
  const bool rg = AnyRequiresGrad(tape, {x, weight, bias});
  return tape.Record(std::move(out), rg, [=](Tape& t, const Tensor& grad) {
    ConstVectorMap g(grad.data(), m);
    if (t.RequiresGrad(wid)) {
      MatrixMap dw(t.GradBuffer(wid).data(), m, n);
      dw.noalias() += g * ConstVectorMap(t.value(xid).data(), n).transpose();
    }
    if (bid >= 0 && t.RequiresGrad(bid)) {
      VectorMap(t.GradBuffer(bid).data(), m) += g;
    }
    if (t.RequiresGrad(xid)) {
      VectorMap dx(t.GradBuffer(xid).data(), n);
      dx.noalias() += ConstMatrixMap(t.value(wid).data(), m, n).transpose() * g;
    }
  });
}

Var Sigmoid(Var x) {
  return Unary(x, StableSigmoid, [](double v) {
    const double s = StableSigmoid(v);
    return s * (1.0 - s);
  });
}

Var Tanh(Var x) {
  return Unary(x, [](double v) { return std::tanh(v); },
               [](double v) {
                 const double t = std::tanh(v);
                 return 1.0 - t * t;
               });
}

namespace {
thread_local ActivationTrace* active_trace = nullptr;
}  // namespace

ActivationTrace::ActivationTrace() : previous_(active_trace) { active_trace = this; }

ActivationTrace::~ActivationTrace() { active_trace = previous_; }

Var Relu(Var x) {
  if (active_trace != nullptr) {
    for (double v : x.value().values()) active_trace->pattern_.push_back(v > 0.0);
  }
  return Unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var Add(Var a, Var b) {
  Tape& tape = Tape::Of({a, b});
  CheckSameShape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  out.Add(b.value());
  const int aid = a.id(), bid = b.id();
  return tape.Record(std::move(out), AnyRequiresGrad(tape, {a, b}),
                     [aid, bid](Tape& t, const Tensor& g) {
                       if (t.RequiresGrad(aid)) t.GradBuffer(aid).Add(g);
                       if (t.RequiresGrad(bid)) t.GradBuffer(bid).Add(g);
                     });
}

Var Sub(Var a, Var b) {
  Tape& tape = Tape::Of({a, b});
  CheckSameShape(a.shape(), b.shape(), "sub");
  Tensor out = a.value();
  out.AddScaled(b.value(), -1.0);
  const int aid = a.id(), bid = b.id();
  return tape.Record(std::move(out), AnyRequiresGrad(tape, {a, b}),
                     [aid, bid](Tape& t, const Tensor& g) {
                       if (t.RequiresGrad(aid)) t.GradBuffer(aid).Add(g);
                       if (t.RequiresGrad(bid)) t.GradBuffer(bid).AddScaled(g, -1.0);
                     });
}

Var Hadamard(Var a, Var b) {
  Tape& tape = Tape::Of({a, b});
  CheckSameShape(a.shape(), b.shape(), "hadamard");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int aid = a.id(), bid = b.id();
  return tape.Record(std::move(out), AnyRequiresGrad(tape, {a, b}),
                     [aid, bid](Tape& t, const Tensor& g) {
                       if (t.RequiresGrad(aid)) {
                         const Tensor& bv = t.value(bid);
                         Tensor& da = t.GradBuffer(aid);
                         for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
                       }
                       if (t.RequiresGrad(bid)) {
                         const Tensor& av = t.value(aid);
                         Tensor& db = t.GradBuffer(bid);
                         for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
                       }
                     });
}

Var Affine(Var x, double alpha, double beta) {
  Tape& tape = Tape::Of({x});
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * xv[i] + beta;
  const int xid = x.id();
  return tape.Record(std::move(out), tape.RequiresGrad(xid),
                     [xid, alpha](Tape& t, const Tensor& g) {
                       t.GradBuffer(xid).AddScaled(g, alpha);
                     });
}

Var ScaleBy(Var x, Var scalar) {
  Tape& tape = Tape::Of({x, scalar});
  if (scalar.value().size() != 1) {
    throw ShapeError("scale_by: expected a one-element scale, got " + scalar.shape().ToString());
  }
  const double s = scalar.value()[0];
  Tensor out = x.value();
  for (double& v : out.values()) v *= s;
  const int xid = x.id(), sid = scalar.id();
  return tape.Record(std::move(out), AnyRequiresGrad(tape, {x, scalar}),
                     [xid, sid](Tape& t, const Tensor& g) {
                       if (t.RequiresGrad(xid)) {
                         t.GradBuffer(xid).AddScaled(g, t.value(sid)[0]);
                       }
                       if (t.RequiresGrad(sid)) {
                         const Tensor& xv = t.value(xid);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                         t.GradBuffer(sid)[0] += acc;
                       }
                     });
}

Var BroadcastMulChannelwise(Var x, Var map) {
  Tape& tape = Tape::Of({x, map});
  const Tensor& xv = x.value();
  const Tensor& mv = map.value();
  if (xv.rank() != 3 || mv.rank() != 3 || mv.dim(0) != 1 ||
      mv.dim(1) != xv.dim(1) || mv.dim(2) != xv.dim(2)) {
    throw ShapeError("broadcast_mul_channelwise: cannot apply map " +
                     mv.shape().ToString() + " to " + xv.shape().ToString());
  }
  const int64_t channels = xv.dim(0);
  const int64_t plane = xv.dim(1) * xv.dim(2);
  Tensor out(xv.shape());
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t p = 0; p < plane; ++p) out[c * plane + p] = xv[c * plane + p] * mv[p];
  }
  const int xid = x.id(), mid = map.id();
  return tape.Record(std::move(out), AnyRequiresGrad(tape, {x, map}),
                     [=](Tape& t, const Tensor& g) {
                       const Tensor& xv = t.value(xid);
                       const Tensor& mv = t.value(mid);
                       if (t.RequiresGrad(xid)) {
                         Tensor& dx = t.GradBuffer(xid);
                         for (int64_t c = 0; c < channels; ++c) {
                           for (int64_t p = 0; p < plane; ++p) {
                             dx[c * plane + p] += g[c * plane + p] * mv[p];
                           }
                         }
                       }
                       if (t.RequiresGrad(mid)) {
                         Tensor& dm = t.GradBuffer(mid);
                         for (int64_t c = 0; c < channels; ++c) {
                           for (int64_t p = 0; p < plane; ++p) {
                             dm[p] += g[c * plane + p] * xv[c * plane + p];
                           }
                         }
                       }
                     });
}

Var AddN(std::span<const Var> xs) {
  if (xs.empty()) throw ArgumentError("add_n: no operands");
  Tape& tape = Tape::Of({xs.front()});
  Tensor out = xs.front().value();
  std::vector<int> ids{xs.front().id()};
  bool rg = tape.RequiresGrad(xs.front().id());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].tape() != &tape) throw ArgumentError("add_n: operands on different tapes");
    CheckSameShape(out.shape(), xs[i].shape(), "add_n");
    out.Add(xs[i].value());
    ids.push_back(xs[i].id());
    rg = rg || tape.RequiresGrad(xs[i].id());
  }
  return tape.Record(std::move(out), rg, [ids](Tape& t, const Tensor& g) {
    for (int id : ids) {
      if (t.RequiresGrad(id)) t.GradBuffer(id).Add(g);
    }
  });
}

Var ConcatChannels(std::span<const Var> xs) {
  if (xs.empty()) throw ArgumentError("concat: no operands");
  Tape& tape = Tape::Of({xs.front()});
  const Shape& first = xs.front().shape();
  if (first.rank() < 1) throw ShapeError("concat: rank-0 operand");
  std::vector<int64_t> trailing(first.dims().begin() + 1, first.dims().end());
  int64_t total = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& v : xs) {
    if (v.tape() != &tape) throw ArgumentError("concat: operands on different tapes");
    const Shape& s = v.shape();
    std::vector<int64_t> tr(s.dims().begin() + (s.rank() > 0 ? 1 : 0), s.dims().end());
    if (s.rank() != first.rank() || tr != trailing) {
      throw ShapeError("concat: trailing extents of " + s.ToString() +
                       " do not match " + first.ToString());
    }
    total += s[0];
    ids.push_back(v.id());
    offsets.push_back(offset);
    offset += v.value().size();
    rg = rg || tape.RequiresGrad(v.id());
  }
  std::vector<int64_t> dims{total};
  dims.insert(dims.end(), trailing.begin(), trailing.end());
  Tensor out{Shape(dims)};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& v = xs[i].value();
    std::copy(v.data(), v.data() + v.size(), out.data() + offsets[i]);
  }
  return tape.Record(std::move(out), rg, [ids, offsets](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.RequiresGrad(ids[i])) continue;
      Tensor& d = t.GradBuffer(ids[i]);
      const double* src = g.data() + offsets[i];
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += src[j];
    }
  });
}

Var ConcatChannels(Var a, Var b) {
  const Var xs[] = {a, b};
  return ConcatChannels(std::span<const Var>(xs));
}

Var SliceChannels(Var x, int64_t begin, int64_t end) {
  Tape& tape = Tape::Of({x});
  const Shape& s = x.shape();
  if (s.rank() < 1 || begin < 0 || end > s[0] || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + s.ToString());
  }
  std::vector<int64_t> dims = s.dims();
  dims[0] = end - begin;
  const int64_t inner = s.num_elements() / s[0];
  Tensor out{Shape(dims)};
  const double* src = x.value().data() + begin * inner;
  std::copy(src, src + out.size(), out.data());
  const int xid = x.id();
  const std::size_t start = static_cast<std::size_t>(begin * inner);
  return tape.Record(std::move(out), tape.RequiresGrad(xid),
                     [xid, start](Tape& t, const Tensor& g) {
                       double* dst = t.GradBuffer(xid).data() + start;
                       for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
                     });
}

Var Reshape(Var x, Shape shape) {
  Tape& tape = Tape::Of({x});
  Tensor out = x.value().Reshaped(std::move(shape));
  const int xid = x.id();
  return tape.Record(std::move(out), tape.RequiresGrad(xid),
                     [xid](Tape& t, const Tensor& g) {
                       Tensor& d = t.GradBuffer(xid);
                       for (std::size_t j = 0; j < g.size(); ++j) d[j] += g[j];
                     });
}

Var Sum(Var x) {
  Tape& tape = Tape::Of({x});
  const int xid = x.id();
  return tape.Record(Tensor::Scalar(x.value().Sum()), tape.RequiresGrad(xid),
                     [xid](Tape& t, const Tensor& g) {
                       for (double& v : t.GradBuffer(xid).values()) v += g[0];
                     });
}

Var MeanSquaredError(Var prediction, Var target) {
  Tape& tape = Tape::Of({prediction, target});
  CheckSameShape(prediction.shape(), target.shape(), "mean_squared_error");
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  if (p.size() == 0) throw ShapeError("mean_squared_error: empty operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    acc += d * d;
  }
  const double count = static_cast<double>(p.size());
  const int pid = prediction.id(), yid = target.id();
  return tape.Record(Tensor::Scalar(acc / count),
                     AnyRequiresGrad(tape, {prediction, target}),
                     [pid, yid, count](Tape& t, const Tensor& g) {
                       const Tensor& p = t.value(pid);
                       const Tensor& y = t.value(yid);
                       const double k = 2.0 * g[0] / count;
                       if (t.RequiresGrad(pid)) {
                         Tensor& dp = t.GradBuffer(pid);
                         for (std::size_t i = 0; i < p.size(); ++i) dp[i] += k * (p[i] - y[i]);
                       }
                       if (t.RequiresGrad(yid)) {
                         Tensor& dy = t.GradBuffer(yid);
                         for (std::size_t i = 0; i < p.size(); ++i) dy[i] -= k * (p[i] - y[i]);
                       }
                     });
}

}  // namespace atfm
