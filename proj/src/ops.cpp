#include "teaf/ops.hpp"

#include <algorithm>
#include <cmath>

#include "teaf/macount.hpp"

namespace teaf {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Tensor linear_project(const Tensor& x, const Tensor& w) {
  require(x.rank() == 2, "linear_project: x must be rank 2");
  require(w.rank() == 2, "linear_project: w must be rank 2");
  require(x.dim(1) == w.dim(0), "linear_project: inner dims disagree");
  const int n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  Tensor out({n, dout});
  const double* xp = x.data();
  const double* wp = w.data();
  double* op = out.data();
  for (int i = 0; i < n; ++i) {
    const double* xi = xp + static_cast<std::int64_t>(i) * din;
    double* oi = op + static_cast<std::int64_t>(i) * dout;
    for (int j = 0; j < dout; ++j) {
      double acc = 0.0;
      for (int d = 0; d < din; ++d) acc += xi[d] * wp[static_cast<std::int64_t>(d) * dout + j];
      oi[j] = acc;
    }
  }
  count_macs(static_cast<std::uint64_t>(n) * din * dout);
  ensure_finite(out, "linear_project");
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() == 2, "softmax_rows: x must be rank 2");
  const int n = x.dim(0), m = x.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < m; ++j) {
      double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < m; ++j) out.at(i, j) /= sum;
  }
  count_aux("softmax_exp", static_cast<std::uint64_t>(n) * m);
  count_aux("softmax_div", static_cast<std::uint64_t>(n) * m);
  ensure_finite(out, "softmax_rows");
  return out;
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& kernel, PadMode pad) {
  require(x.rank() == 3, "conv2d_depthwise: x must be rank 3");
  require(kernel.rank() == 3, "conv2d_depthwise: kernel must be rank 3");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int k = kernel.dim(0);
  require(kernel.dim(1) == k, "conv2d_depthwise: kernel must be square");
  require(kernel.dim(2) == c, "conv2d_depthwise: kernel channels must match input");
  require(k % 2 == 1, "conv2d_depthwise: kernel size must be odd");
  const int r = k / 2;
  Tensor out({h, w, c});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            int sy = i + ky - r;
            int sx = j + kx - r;
            double v;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
              if (pad == PadMode::Zero) {
                v = 0.0;
              } else {
                v = x.at(std::clamp(sy, 0, h - 1), std::clamp(sx, 0, w - 1), ch);
              }
            } else {
              v = x.at(sy, sx, ch);
            }
            acc += v * kernel.at(ky, kx, ch);
          }
        }
        out.at(i, j, ch) = acc;
      }
    }
  }
  count_macs(static_cast<std::uint64_t>(h) * w * c * k * k);
  ensure_finite(out, "conv2d_depthwise");
  return out;
}

namespace {

template <bool Avg>
Tensor pool_adaptive(const Tensor& x, int oh, int ow) {
  require(x.rank() == 3, "pool_adaptive: x must be rank 3");
  require(oh >= 1 && ow >= 1, "pool_adaptive: output dims must be positive");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(oh <= h && ow <= w, "pool_adaptive: output dims exceed input");
  Tensor out({oh, ow, c});
  std::uint64_t adds = 0;
  for (int i = 0; i < oh; ++i) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(i) * h / oh);
    const int y1 = static_cast<int>(static_cast<std::int64_t>(i + 1) * h / oh);
    for (int j = 0; j < ow; ++j) {
      const int x0 = static_cast<int>(static_cast<std::int64_t>(j) * w / ow);
      const int x1 = static_cast<int>(static_cast<std::int64_t>(j + 1) * w / ow);
      for (int ch = 0; ch < c; ++ch) {
        if constexpr (Avg) {
          double acc = 0.0;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) acc += x.at(y, xx, ch);
          out.at(i, j, ch) = acc / (static_cast<double>(y1 - y0) * (x1 - x0));
        } else {
          double best = x.at(y0, x0, ch);
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) best = std::max(best, x.at(y, xx, ch));
          out.at(i, j, ch) = best;
        }
      }
      adds += static_cast<std::uint64_t>(y1 - y0) * (x1 - x0) * c;
    }
  }
  count_aux(Avg ? "pool_add" : "pool_cmp", adds);
  ensure_finite(out, "pool_adaptive");
  return out;
}

}  // namespace

Tensor avg_pool_adaptive(const Tensor& x, int oh, int ow) { return pool_adaptive<true>(x, oh, ow); }
Tensor max_pool_adaptive(const Tensor& x, int oh, int ow) { return pool_adaptive<false>(x, oh, ow); }

int round_clamp(double v, int lo, int hi) {
  /* std::round ties away from zero, as required */
  double r = std::round(v);
  if (r < lo) return lo;
  if (r > hi) return hi;
  return static_cast<int>(r);
}

Tensor gather_hw(const Tensor& x, const Tensor& coords) {
  require(x.rank() == 3, "gather_hw: x must be rank 3");
  require(coords.rank() == 3, "gather_hw: coords must be rank 3");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(coords.dim(0) == h && coords.dim(1) == w, "gather_hw: coords spatial dims must match x");
  require(coords.dim(2) == 2, "gather_hw: coords last dim must be 2");
  ensure_finite(coords, "gather_hw coords");
  Tensor out({h, w, c});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const int sy = round_clamp(coords.at(i, j, 0), 0, h - 1);
      const int sx = round_clamp(coords.at(i, j, 1), 0, w - 1);
      for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = x.at(sy, sx, ch);
    }
  }
  ensure_finite(out, "gather_hw");
  return out;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  require(x.rank() == 3, "pixel_shuffle: x must be rank 3");
  require(r >= 1, "pixel_shuffle: r must be >= 1");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(c % (r * r) == 0, "pixel_shuffle: channels must be divisible by r^2");
  const int co = c / (r * r);
  Tensor out({h * r, w * r, co});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int ch = 0; ch < co; ++ch)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx)
            out.at(i * r + dy, j * r + dx, ch) = x.at(i, j, ch * r * r + dy * r + dx);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
  ensure_finite(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  ensure_finite(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  ensure_finite(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  ensure_finite(out, "scale");
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_err(const Tensor& got, const Tensor& want) {
  if (!got.same_shape(want)) throw std::invalid_argument("rel_err: shape mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::int64_t i = 0; i < got.size(); ++i) {
    diff = std::max(diff, std::abs(got[i] - want[i]));
    ref = std::max(ref, std::abs(want[i]));
  }
  return diff / std::max(ref, 1e-30);
}

}  // namespace teaf
