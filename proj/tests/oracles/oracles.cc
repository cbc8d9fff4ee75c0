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

#include "oracles.h"

#include <algorithm>
#include <cmath>

namespace atfm::oracle {
namespace {

double Sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Same-padded stride-1 conv accumulated into out[o][y][x].
double ConvAt(const Tensor& in, const Tensor& k, int64_t o, int64_t y, int64_t x) {
  const int64_t cin = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int64_t h = in.dim(1), w = in.dim(2);
  double s = 0.0;
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx) {
        const int64_t yy = y + dy - kh / 2, xx = x + dx - kw / 2;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        s += k[((o * cin + c) * kh + dy) * kw + dx] * in[(c * h + yy) * w + xx];
      }
    }
  }
  return s;
}

}  // namespace

Tensor RandomTensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor Conv2d(const Tensor& x, const Tensor& kernels, const Tensor* bias, int stride, int pad) {
  const int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{cout, oh, ow});
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xo = 0; xo < ow; ++xo) {
        double s = bias != nullptr ? (*bias)[o] : 0.0;
        for (int64_t c = 0; c < cin; ++c) {
          for (int64_t dy = 0; dy < kh; ++dy) {
            for (int64_t dx = 0; dx < kw; ++dx) {
              const int64_t yy = y * stride + dy - pad;
              const int64_t xx = xo * stride + dx - pad;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += kernels[((o * cin + c) * kh + dy) * kw + dx] * x[(c * h + yy) * w + xx];
            }
          }
        }
        out[(o * oh + y) * ow + xo] = s;
      }
    }
  }
  return out;
}

Tensor FullyConnected(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const int64_t m = w.dim(0), n = w.dim(1);
  Tensor y(Shape{m});
  for (int64_t i = 0; i < m; ++i) {
    double s = bias != nullptr ? (*bias)[i] : 0.0;
    for (int64_t j = 0; j < n; ++j) s += w[i * n + j] * x[j];
    y[i] = s;
  }
  return y;
}

LstmValues ConvLstmStep(const LstmWeights& p, const Tensor& x, const LstmValues& st) {
  const int64_t hid = p.bi.dim(0), h = x.dim(1), w = x.dim(2);
  LstmValues out{Tensor(Shape{hid, h, w}), Tensor(Shape{hid, h, w})};
  for (int64_t o = 0; o < hid; ++o) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t xx = 0; xx < w; ++xx) {
        const std::size_t at = static_cast<std::size_t>((o * h + y) * w + xx);
        const double c = st.c[at];
        const double i = Sigmoid(ConvAt(x, p.wxi, o, y, xx) + ConvAt(st.h, p.whi, o, y, xx) +
                                 p.wci[at] * c + p.bi[o]);
        const double f = Sigmoid(ConvAt(x, p.wxf, o, y, xx) + ConvAt(st.h, p.whf, o, y, xx) +
                                 p.wcf[at] * c + p.bf[o]);
        const double g = std::tanh(ConvAt(x, p.wxc, o, y, xx) + ConvAt(st.h, p.whc, o, y, xx) +
                                   p.bc[o]);
        const double c_new = f * c + i * g;
        const double og = Sigmoid(ConvAt(x, p.wxo, o, y, xx) + ConvAt(st.h, p.who, o, y, xx) +
                                  p.wco[at] * c_new + p.bo[o]);
        out.c[at] = c_new;
        out.h[at] = og * std::tanh(c_new);
      }
    }
  }
  return out;
}

AtfmValues AtfmStep(const LstmWeights& first, const LstmWeights& second,
                    const Tensor& attention_kernel, double attention_bias, const Tensor& x,
                    const LstmValues& state1, const LstmValues& state2) {
  AtfmValues out;
  out.first = ConvLstmStep(first, x, state1);
  const int64_t hid = out.first.h.dim(0), cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  out.attention = Tensor(Shape{1, h, w});
  Tensor weighted(x.shape());
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t xx = 0; xx < w; ++xx) {
      double a = attention_bias;
      for (int64_t c = 0; c < hid; ++c) a += attention_kernel[c] * out.first.h[(c * h + y) * w + xx];
      for (int64_t c = 0; c < cin; ++c) a += attention_kernel[hid + c] * x[(c * h + y) * w + xx];
      out.attention[y * w + xx] = a;
      for (int64_t c = 0; c < cin; ++c) {
        weighted[(c * h + y) * w + xx] = x[(c * h + y) * w + xx] * a;
      }
    }
  }
  out.second = ConvLstmStep(second, weighted, state2);
  return out;
}

FusionValues TvfFuse(const Tensor& s, const Tensor& p, const Tensor& e, const Tensor& w1,
                     const Tensor& b1, const Tensor& w2, double b2) {
  std::vector<double> flat;
  for (const Tensor* t : {&s, &p, &e}) flat.insert(flat.end(), t->values().begin(), t->values().end());
  const int64_t hidden = w1.dim(0);
  double z = b2;
  for (int64_t i = 0; i < hidden; ++i) {
    double a = b1[i];
    for (std::size_t j = 0; j < flat.size(); ++j) a += w1[i * static_cast<int64_t>(flat.size()) + j] * flat[j];
    z += w2[i] * std::max(a, 0.0);
  }
  FusionValues out;
  out.r = Sigmoid(z);
  const int64_t c = s.dim(0), h = s.dim(1), w = s.dim(2);
  out.fused = Tensor(Shape{2 * c, h, w});
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.fused[i] = out.r * s[i];
    out.fused[s.size() + i] = (1.0 - out.r) * p[i];
  }
  return out;
}

Tensor NumericGradient(const std::function<double(const Tensor&)>& f, Tensor x, double step) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = f(x);
    x[i] = saved - step;
    const double minus = f(x);
    x[i] = saved;
    g[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

std::vector<double> CountFlows(std::span<const data::TripRecord> trips, const data::GridSpec& grid) {
  const int64_t per_day = 86400 / grid.interval_seconds;
  const int64_t total = grid.days * per_day;
  const int64_t plane = grid.rows * grid.cols;
  std::vector<double> counts(static_cast<std::size_t>(total * 2 * plane), 0.0);
  auto edge = [](double lo, double hi, int64_t n, int64_t k) {
    return k == n ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n);
  };
  auto cell = [&](double lat, double lon) -> std::optional<int64_t> {
    for (int64_t r = 0; r < grid.rows; ++r) {
      const double lo = edge(grid.lat_min, grid.lat_max, grid.rows, r);
      const double hi = edge(grid.lat_min, grid.lat_max, grid.rows, r + 1);
      const bool in_row = (lat >= lo && lat < hi) || (r == grid.rows - 1 && lat == hi);
      if (!in_row) continue;
      for (int64_t c = 0; c < grid.cols; ++c) {
        const double clo = edge(grid.lon_min, grid.lon_max, grid.cols, c);
        const double chi = edge(grid.lon_min, grid.lon_max, grid.cols, c + 1);
        if ((lon >= clo && lon < chi) || (c == grid.cols - 1 && lon == chi)) return r * grid.cols + c;
      }
    }
    return std::nullopt;
  };
  auto interval = [&](int64_t t) -> std::optional<int64_t> {
    if (t < grid.epoch_start) return std::nullopt;
    const int64_t i = (t - grid.epoch_start) / grid.interval_seconds;
    if (i >= total) return std::nullopt;
    return i;
  };
  for (const data::TripRecord& t : trips) {
    if (!std::isfinite(t.pickup_lat) || !std::isfinite(t.pickup_lon) ||
        !std::isfinite(t.dropoff_lat) || !std::isfinite(t.dropoff_lon) ||
        t.dropoff_time < t.pickup_time) {
      continue;
    }
    auto pi = interval(t.pickup_time);
    auto pc = cell(t.pickup_lat, t.pickup_lon);
    if (pi && pc) counts[static_cast<std::size_t>((*pi * 2 + 1) * plane + *pc)] += 1.0;
    auto di = interval(t.dropoff_time);
    auto dc = cell(t.dropoff_lat, t.dropoff_lon);
    if (di && dc) counts[static_cast<std::size_t>((*di * 2 + 0) * plane + *dc)] += 1.0;
  }
  return counts;
}

std::vector<WindowKey> EnumerateWindows(int64_t days, int64_t per_day, int n, int m, int horizon,
                                        const std::vector<bool>& flow_present,
                                        const std::vector<bool>& external_present) {
  std::vector<WindowKey> out;
  auto idx = [&](int64_t d, int64_t s) { return d * per_day + s; };
  auto input_ok = [&](int64_t i) { return flow_present[i] && external_present[i]; };
  for (int64_t d = 0; d < days; ++d) {
    for (int64_t last = 0; last < per_day; ++last) {
      if (last - n + 1 < 0 || last + horizon > per_day - 1 || d - m < 0) continue;
      WindowKey w;
      bool ok = true;
      for (int64_t s = last - n + 1; s <= last; ++s) {
        w.sequential.push_back(idx(d, s));
        ok = ok && input_ok(idx(d, s));
      }
      for (int k = 1; k <= horizon; ++k) {
        std::vector<int64_t> per;
        for (int64_t pd = d - m; pd < d; ++pd) {
          per.push_back(idx(pd, last + k));
          ok = ok && input_ok(idx(pd, last + k));
        }
        w.periodic.push_back(per);
        w.targets.push_back(idx(d, last + k));
        ok = ok && flow_present[idx(d, last + k)];
      }
      if (ok) out.push_back(w);
    }
  }
  return out;
}

std::vector<bool> TopPCells(const std::vector<std::vector<double>>& train_maps, int64_t plane,
                            double percent) {
  std::vector<std::pair<double, int64_t>> ranked;
  for (int64_t k = 0; k < plane; ++k) {
    double total = 0.0;
    for (const auto& m : train_maps) total += m[k] + m[plane + k];
    ranked.push_back({total / static_cast<double>(train_maps.size()), k});
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  int64_t keep = 0;
  while (100.0 * static_cast<double>(keep) < percent * static_cast<double>(plane)) ++keep;
  std::vector<bool> mask(static_cast<std::size_t>(plane), false);
  for (int64_t i = 0; i < keep; ++i) mask[ranked[i].second] = true;
  return mask;
}

}  // namespace atfm::oracle
