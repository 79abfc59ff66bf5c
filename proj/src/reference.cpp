#include "teaf/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "teaf/ops.hpp"
#include "teaf/rng.hpp"

namespace teaf::ref {

namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

/* per-axis tap positions, three-case anchoring */
std::vector<int> axis_taps(int pos, int len, int w, int s) {
  if (w * s > len) throw std::invalid_argument("reference: window footprint exceeds axis");
  int lo = pos - ((w - 1) / 2) * s;
  const int span = (w - 1) * s;
  if (lo < 0)
    lo = 0;
  else if (lo + span > len - 1)
    lo = (len - 1) - span;
  std::vector<int> t(static_cast<std::size_t>(w));
  for (int a = 0; a < w; ++a) t[static_cast<std::size_t>(a)] = lo + a * s;
  return t;
}

/* exp-weighted mean of the listed value rows, no max subtraction */
void attend(const std::vector<double>& q, const Tensor& kf, const Tensor& vf,
            const std::vector<int>& keys, int d, double* out) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> e(keys.size());
  double denom = 0.0;
  for (std::size_t t = 0; t < keys.size(); ++t) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += q[static_cast<std::size_t>(j)] * kf[static_cast<std::int64_t>(keys[t]) * d + j];
    e[t] = std::exp(s * inv);
    denom += e[t];
  }
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < keys.size(); ++t)
      acc += e[t] * vf[static_cast<std::int64_t>(keys[t]) * d + j];
    out[j] = acc / denom;
  }
}

std::vector<double> row_of(const Tensor& m, int i) {
  const int d = m.dim(static_cast<int>(m.rank()) - 1);
  std::vector<double> r(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) r[static_cast<std::size_t>(j)] = m[static_cast<std::int64_t>(i) * d + j];
  return r;
}

/* offset field: depthwise conv (replicate pad) reduced to 2 channels, added
 * to the base coordinate grid */
Tensor offset_coords(const Tensor& x, const OffsetGen& gen) {
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  const int k = gen.depthwise.dim(0), half = (k - 1) / 2;
  Tensor coords({h, w, 2});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      for (int ch = 0; ch < 2; ++ch) {
        double delta = 0.0;
        for (int c = 0; c < d; ++c) {
          double f = 0.0;
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int si = clampi(i + a - half, 0, h - 1);
              const int sj = clampi(j + b - half, 0, w - 1);
              f += x.at(si, sj, c) * gen.depthwise.at(a, b, c);
            }
          delta += f * gen.reduce.at(c, ch);
        }
        coords.at(i, j, ch) = (ch == 0 ? i : j) + delta;
      }
    }
  return coords;
}

Tensor gather(const Tensor& x, const Tensor& coords) {
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  Tensor out({h, w, d});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int si = clampi(static_cast<int>(std::round(coords.at(i, j, 0))), 0, h - 1);
      const int sj = clampi(static_cast<int>(std::round(coords.at(i, j, 1))), 0, w - 1);
      for (int c = 0; c < d; ++c) out.at(i, j, c) = x.at(si, sj, c);
    }
  return out;
}

Tensor pool_mean(const Tensor& x, int g) {
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  Tensor out({g, g, d});
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const int r0 = i * h / g, r1 = (i + 1) * h / g;
      const int c0 = j * w / g, c1 = (j + 1) * w / g;
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int cc = c0; cc < c1; ++cc) acc += x.at(r, cc, c);
        out.at(i, j, c) = acc / ((r1 - r0) * (c1 - c0));
      }
    }
  return out;
}

Tensor proj_img(const Tensor& x, const Tensor& w) {
  const int n = x.dim(0) * x.dim(1);
  return matmul(x.reshaped({n, x.dim(2)}), w).reshaped({x.dim(0), x.dim(1), x.dim(2)});
}

std::vector<int> window_keys(int i, int j, int H, int W, const SlideSpec& spec) {
  const auto rt = axis_taps(i, H, spec.w, spec.s);
  const auto ct = axis_taps(j, W, spec.w, spec.s);
  std::vector<int> keys;
  keys.reserve(rt.size() * ct.size());
  for (int a : rt)
    for (int b : ct) keys.push_back(a * W + b);
  return keys;
}

}  // namespace

Tensor matmul(const Tensor& x, const Tensor& w) {
  const int n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  Tensor out({n, dout});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < dout; ++o) {
      double acc = 0.0;
      for (int j = 0; j < din; ++j) acc += x.at(i, j) * w.at(j, o);
      out.at(i, o) = acc;
    }
  return out;
}

Tensor sa(const Tensor& x, const AttnParams& p) {
  const int n = x.dim(0), d = x.dim(1);
  const Tensor q = matmul(x, p.w_q), k = matmul(x, p.w_k), v = matmul(x, p.w_v);
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) attend(row_of(q, i), k, v, all, d, out.data() + static_cast<std::int64_t>(i) * d);
  return out;
}

Tensor skv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec) {
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  const Tensor q = proj_img(x, p.w_q), k = proj_img(x, p.w_k), v = proj_img(x, p.w_v);
  Tensor out({h, w, d});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      attend(row_of(q, i * w + j), k, v, window_keys(i, j, h, w, spec), d,
             out.data() + (static_cast<std::int64_t>(i) * w + j) * d);
  return out;
}

AskvOut askv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec) {
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  const Tensor q = proj_img(x, p.w_q);
  const Tensor k = proj_img(x, p.w_k), v = proj_img(x, p.w_v);
  AskvOut r;
  r.k_shuf = gather(k, offset_coords(k, p.off_k));
  r.v_shuf = gather(v, offset_coords(v, p.off_v));
  r.out = Tensor({h, w, d});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      attend(row_of(q, i * w + j), r.k_shuf, r.v_shuf, window_keys(i, j, h, w, spec), d,
             r.out.data() + (static_cast<std::int64_t>(i) * w + j) * d);
  return r;
}

Tensor dsa(const Tensor& q_src, const Tensor& k_shuf, const Tensor& v_shuf, const AttnParams& p,
           const SlideSpec& spec) {
  const int h = q_src.dim(0), w = q_src.dim(1), d = q_src.dim(2);
  const int g = spec.pool_grid();
  const Tensor q = proj_img(q_src, p.w_q);
  const Tensor kp = pool_mean(k_shuf, g), vp = pool_mean(v_shuf, g);
  std::vector<int> all(static_cast<std::size_t>(g) * g);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  Tensor out({h, w, d});
  for (int i = 0; i < h * w; ++i)
    attend(row_of(q, i), kp, vp, all, d, out.data() + static_cast<std::int64_t>(i) * d);
  return out;
}

Tensor tea(const Tensor& x, const AttnParams& p, const SlideSpec& spec) {
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  const Tensor q = proj_img(x, p.w_q);
  const Tensor k = proj_img(x, p.w_k), v = proj_img(x, p.w_v);
  const Tensor ks = gather(k, offset_coords(k, p.off_k));
  const Tensor vs = gather(v, offset_coords(v, p.off_v));
  const int g = spec.pool_grid();
  const Tensor kp = pool_mean(ks, g), vp = pool_mean(vs, g);
  std::vector<int> all(static_cast<std::size_t>(g) * g);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  Tensor out({h, w, d});
  std::vector<double> slide(static_cast<std::size_t>(d)), down(static_cast<std::size_t>(d));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const auto qrow = row_of(q, i * w + j);
      attend(qrow, ks, vs, window_keys(i, j, h, w, spec), d, slide.data());
      attend(qrow, kp, vp, all, d, down.data());
      for (int c = 0; c < d; ++c)
        out.at(i, j, c) = p.alpha_s * slide[static_cast<std::size_t>(c)] +
                          p.alpha_d * down[static_cast<std::size_t>(c)];
    }
  return out;
}

namespace {

AttnParams sample_params(int d, int k, Rng& rng) {
  AttnParams p;
  p.w_q = rng.normal_tensor({d, d}, 0.0, 0.4);
  p.w_k = rng.normal_tensor({d, d}, 0.0, 0.4);
  p.w_v = rng.normal_tensor({d, d}, 0.0, 0.4);
  p.off_k.depthwise = rng.normal_tensor({k, k, d}, 0.0, 0.5);
  p.off_k.reduce = rng.normal_tensor({d, 2}, 0.0, 0.5);
  p.off_v.depthwise = rng.normal_tensor({k, k, d}, 0.0, 0.5);
  p.off_v.reduce = rng.normal_tensor({d, 2}, 0.0, 0.5);
  p.alpha_s = rng.uniform(0.5, 1.5);
  p.alpha_d = rng.uniform(0.5, 1.5);
  return p;
}

SlideSpec sample_spec(int h, int w, Rng& rng) {
  const int m = std::min(h, w);
  SlideSpec spec;
  spec.s = m >= 2 ? rng.uniform_int(1, 2) : 1;
  const int wmax = m / spec.s;
  spec.w = 1 + 2 * rng.uniform_int(0, (wmax - 1) / 2);
  spec.k = m >= 3 ? (rng.uniform_int(0, 1) ? 3 : 1) : 1;
  const int g = rng.uniform_int(1, m);
  spec.n_d = g * g;
  return spec;
}

}  // namespace

OracleResult run_oracle(const std::string& op, int cases, std::uint64_t seed, double perturb) {
  if (cases < 1) throw std::invalid_argument("oracle: cases must be >= 1");
  Rng rng(seed);
  OracleResult res;
  res.op = op;
  res.cases = cases;
  for (int c = 0; c < cases; ++c) {
    const int d = rng.uniform_int(1, 8);
    double err = 0.0;
    if (op == "sa") {
      const int n = rng.uniform_int(1, 32);
      const Tensor x = rng.normal_tensor({n, d}, 0.0, 1.0);
      const AttnParams p = sample_params(d, 1, rng);
      Tensor got = self_attention(x, p);
      if (perturb != 0.0) got[0] += perturb;
      err = rel_err(got, sa(x, p));
    } else {
      const int h = rng.uniform_int(2, 16), w = rng.uniform_int(2, 16);
      const SlideSpec spec = sample_spec(h, w, rng);
      const Tensor x = rng.normal_tensor({h, w, d}, 0.0, 1.0);
      const AttnParams p = sample_params(d, spec.k, rng);
      if (op == "skvsa") {
        Tensor got = teaf::skv_sa(x, p, spec);
        if (perturb != 0.0) got[0] += perturb;
        err = rel_err(got, ref::skv_sa(x, p, spec));
      } else if (op == "askvsa") {
        AskvResult got = teaf::askv_sa(x, p, spec);
        if (perturb != 0.0) got.out[0] += perturb;
        const AskvOut want = ref::askv_sa(x, p, spec);
        err = std::max({rel_err(got.out, want.out), rel_err(got.k_shuf, want.k_shuf),
                        rel_err(got.v_shuf, want.v_shuf)});
      } else if (op == "dsa") {
        const Tensor ks = rng.normal_tensor({h, w, d}, 0.0, 1.0);
        const Tensor vs = rng.normal_tensor({h, w, d}, 0.0, 1.0);
        Tensor got = teaf::dsa(x, ks, vs, p, spec);
        if (perturb != 0.0) got[0] += perturb;
        err = rel_err(got, ref::dsa(x, ks, vs, p, spec));
      } else if (op == "tea") {
        Tensor got = teaf::tea(x, p, spec);
        if (perturb != 0.0) got[0] += perturb;
        err = rel_err(got, ref::tea(x, p, spec));
      } else {
        throw std::invalid_argument("oracle: unknown operator '" + op + "'");
      }
    }
    res.max_rel_err = std::max(res.max_rel_err, err);
  }
  return res;
}

const std::vector<std::string>& oracle_ops() {
  static const std::vector<std::string> ops = {"sa", "skvsa", "askvsa", "dsa", "tea"};
  return ops;
}

}  // namespace teaf::ref
