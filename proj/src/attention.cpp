#include "teaf/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "teaf/macount.hpp"
#include "teaf/ops.hpp"

namespace teaf {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

int isqrt_exact(int n) {
  int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  for (int c = std::max(0, g - 1); c <= g + 1; ++c)
    if (c * c == n) return c;
  return -1;
}

void check_params(const AttnParams& p, int d) {
  require(p.w_q.rank() == 2 && p.w_q.dim(0) == d && p.w_q.dim(1) == d, "attention: w_q must be DxD");
  require(p.w_k.rank() == 2 && p.w_k.dim(0) == d && p.w_k.dim(1) == d, "attention: w_k must be DxD");
  require(p.w_v.rank() == 2 && p.w_v.dim(0) == d && p.w_v.dim(1) == d, "attention: w_v must be DxD");
}

/* Softmax-weighted aggregation of one query against an explicit key set.
 * Max subtraction keeps the exponentials bounded; the ratio is unchanged.
 * Reduction order is fixed (tap order) so repeated runs are bit-identical. */
void attend_one(const double* q, const double* kf, const double* vf, const int* taps, int ntaps,
                int d, double inv_sqrt_d, double* out, AttnProbe* probe,
                std::vector<double>& scores) {
  scores.resize(static_cast<std::size_t>(ntaps));
  double mx = -1e300;
  for (int t = 0; t < ntaps; ++t) {
    const double* k = kf + static_cast<std::int64_t>(taps[t]) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += q[j] * k[j];
    scores[static_cast<std::size_t>(t)] = acc * inv_sqrt_d;
    mx = std::max(mx, scores[static_cast<std::size_t>(t)]);
  }
  double denom = 0.0;
  for (int t = 0; t < ntaps; ++t) {
    double e = std::exp(scores[static_cast<std::size_t>(t)] - mx);
    scores[static_cast<std::size_t>(t)] = e;
    denom += e;
  }
  for (int j = 0; j < d; ++j) out[j] = 0.0;
  for (int t = 0; t < ntaps; ++t) {
    const double e = scores[static_cast<std::size_t>(t)];
    const double* v = vf + static_cast<std::int64_t>(taps[t]) * d;
    for (int j = 0; j < d; ++j) out[j] += e * v[j];
  }
  for (int j = 0; j < d; ++j) out[j] /= denom;
  if (probe) {
    double wsum = 0.0, wmin = 1e300, wmax = -1e300;
    for (int t = 0; t < ntaps; ++t) {
      double a = scores[static_cast<std::size_t>(t)] / denom;
      wsum += a;
      wmin = std::min(wmin, a);
      wmax = std::max(wmax, a);
    }
    probe->weight_sum.push_back(wsum);
    probe->weight_min.push_back(wmin);
    probe->weight_max.push_back(wmax);
  }
}

}  // namespace

void SlideSpec::validate() const {
  require(w >= 1 && w % 2 == 1, "SlideSpec: w must be odd and >= 1");
  require(s >= 1, "SlideSpec: s must be >= 1");
  require(k >= 1 && k % 2 == 1, "SlideSpec: k must be odd and >= 1");
  require(n_d >= 1 && isqrt_exact(n_d) > 0, "SlideSpec: n_d must be a positive perfect square");
}

void SlideSpec::validate_for(int h, int wid) const {
  validate();
  const int m = std::min(h, wid);
  if (w * s > m)
    throw std::invalid_argument("SlideSpec: window footprint w*s = " + std::to_string(w * s) +
                                " exceeds min image axis " + std::to_string(m));
  if (pool_grid() > m)
    throw std::invalid_argument("SlideSpec: pooled grid " + std::to_string(pool_grid()) +
                                " exceeds min image axis " + std::to_string(m));
}

int SlideSpec::pool_grid() const {
  int g = isqrt_exact(n_d);
  require(g > 0, "SlideSpec: n_d must be a perfect square");
  return g;
}

AttnParams init_attn_params(int d, const SlideSpec& spec, Rng& rng, double proj_sigma,
                            double offset_sigma) {
  AttnParams p;
  p.w_q = rng.normal_tensor({d, d}, 0.0, proj_sigma);
  p.w_k = rng.normal_tensor({d, d}, 0.0, proj_sigma);
  p.w_v = rng.normal_tensor({d, d}, 0.0, proj_sigma);
  p.off_k.depthwise = rng.normal_tensor({spec.k, spec.k, d}, 0.0, offset_sigma);
  p.off_k.reduce = rng.normal_tensor({d, 2}, 0.0, offset_sigma);
  p.off_v.depthwise = rng.normal_tensor({spec.k, spec.k, d}, 0.0, offset_sigma);
  p.off_v.reduce = rng.normal_tensor({d, 2}, 0.0, offset_sigma);
  p.alpha_s = 1.0;
  p.alpha_d = 1.0;
  return p;
}

AxisTaps build_axis_taps(int pos, int len, int w, int s) {
  if (w * s > len)
    throw std::invalid_argument("build_axis_taps: window footprint exceeds axis length");
  if (pos < 0 || pos >= len) throw std::invalid_argument("build_axis_taps: query out of bounds");
  AxisTaps out;
  out.taps.resize(static_cast<std::size_t>(w));
  const int half = (w - 1) / 2;
  int start = pos - s * half;
  if (start < 0) {
    start = 0;
    out.anchor = Anchor::Low;
  } else if (pos + s * half > len - 1) {
    start = (len - 1) - s * (w - 1);
    out.anchor = Anchor::High;
  } else {
    out.anchor = Anchor::Centered;
  }
  for (int a = 0; a < w; ++a) out.taps[static_cast<std::size_t>(a)] = start + s * a;
  return out;
}

WindowIndex build_window_index(int h, int w_pos, int H, int W, const SlideSpec& spec) {
  spec.validate_for(H, W);
  WindowIndex idx;
  idx.rows = build_axis_taps(h, H, spec.w, spec.s);
  idx.cols = build_axis_taps(w_pos, W, spec.w, spec.s);
  return idx;
}

WindowTable build_window_table(int H, int W, const SlideSpec& spec) {
  spec.validate_for(H, W);
  WindowTable t;
  t.H = H;
  t.W = W;
  t.taps_per_query = spec.w * spec.w;
  t.taps.resize(static_cast<std::size_t>(H) * W * t.taps_per_query);
  std::vector<AxisTaps> row_taps(static_cast<std::size_t>(H)), col_taps(static_cast<std::size_t>(W));
  for (int i = 0; i < H; ++i) row_taps[static_cast<std::size_t>(i)] = build_axis_taps(i, H, spec.w, spec.s);
  for (int j = 0; j < W; ++j) col_taps[static_cast<std::size_t>(j)] = build_axis_taps(j, W, spec.w, spec.s);
  std::size_t o = 0;
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const auto& rt = row_taps[static_cast<std::size_t>(i)].taps;
      const auto& ct = col_taps[static_cast<std::size_t>(j)].taps;
      for (int a = 0; a < spec.w; ++a)
        for (int b = 0; b < spec.w; ++b) t.taps[o++] = rt[static_cast<std::size_t>(a)] * W + ct[static_cast<std::size_t>(b)];
    }
  }
  return t;
}

Tensor windowed_attention_core(const Tensor& qf, const Tensor& kf, const Tensor& vf,
                               const WindowTable& table, AttnProbe* probe) {
  const int n = qf.dim(0), d = qf.dim(1);
  require(n == table.H * table.W, "windowed_attention_core: table does not match query count");
  require(kf.dim(0) == n && vf.dim(0) == n, "windowed_attention_core: key/value count mismatch");
  Tensor out({n, d});
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> scratch;
  const int tpq = table.taps_per_query;
  for (int i = 0; i < n; ++i) {
    attend_one(qf.data() + static_cast<std::int64_t>(i) * d, kf.data(), vf.data(),
               table.taps.data() + static_cast<std::int64_t>(i) * tpq, tpq, d, inv_sqrt_d,
               out.data() + static_cast<std::int64_t>(i) * d, probe, scratch);
  }
  {
    PhaseScope ph(Phase::AttnMap);
    count_macs(static_cast<std::uint64_t>(n) * tpq * d);
  }
  {
    PhaseScope ph(Phase::Reweight);
    count_macs(static_cast<std::uint64_t>(n) * tpq * d);
  }
  count_aux("attn_exp", static_cast<std::uint64_t>(n) * tpq);
  count_aux("attn_scale", static_cast<std::uint64_t>(n) * tpq);
  count_aux("attn_div", static_cast<std::uint64_t>(n) * d);
  ensure_finite(out, "windowed_attention");
  return out;
}

Tensor global_attention_core(const Tensor& qf, const Tensor& ktok, const Tensor& vtok,
                             bool dsa_phase, AttnProbe* probe) {
  const int n = qf.dim(0), d = qf.dim(1), m = ktok.dim(0);
  require(ktok.dim(1) == d && vtok.dim(1) == d, "global_attention_core: dim mismatch");
  require(vtok.dim(0) == m, "global_attention_core: key/value count mismatch");
  Tensor out({n, d});
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<int> taps(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) taps[static_cast<std::size_t>(j)] = j;
  std::vector<double> scratch;
  for (int i = 0; i < n; ++i) {
    attend_one(qf.data() + static_cast<std::int64_t>(i) * d, ktok.data(), vtok.data(), taps.data(),
               m, d, inv_sqrt_d, out.data() + static_cast<std::int64_t>(i) * d, probe, scratch);
  }
  {
    PhaseScope ph(dsa_phase ? Phase::Dsa : Phase::AttnMap);
    count_macs(static_cast<std::uint64_t>(n) * m * d);
  }
  {
    PhaseScope ph(dsa_phase ? Phase::Dsa : Phase::Reweight);
    count_macs(static_cast<std::uint64_t>(n) * m * d);
  }
  count_aux("attn_exp", static_cast<std::uint64_t>(n) * m);
  count_aux("attn_scale", static_cast<std::uint64_t>(n) * m);
  count_aux("attn_div", static_cast<std::uint64_t>(n) * d);
  ensure_finite(out, "global_attention");
  return out;
}

Tensor self_attention(const Tensor& x, const AttnParams& p, AttnProbe* probe) {
  require(x.rank() == 2, "self_attention: x must be [N x D]");
  check_params(p, x.dim(1));
  Tensor q, k, v;
  {
    PhaseScope ph(Phase::QkvProj);
    q = linear_project(x, p.w_q);
    k = linear_project(x, p.w_k);
    v = linear_project(x, p.w_v);
  }
  return global_attention_core(q, k, v, /*dsa_phase=*/false, probe);
}

Tensor self_attention_abs_pos(const Tensor& x, const AttnParams& p, const Tensor& pos_bias,
                              AttnProbe* probe) {
  require(x.rank() == 2, "self_attention_abs_pos: x must be [N x D]");
  require(pos_bias.same_shape(x), "self_attention_abs_pos: bias shape must match x");
  return self_attention(add(x, pos_bias), p, probe);
}

Tensor skv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec, AttnProbe* probe) {
  require(x.rank() == 3, "skv_sa: x must be [H x W x D]");
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  spec.validate_for(h, w);
  check_params(p, d);
  const Tensor xf = x.reshaped({h * w, d});
  Tensor q, k, v;
  {
    PhaseScope ph(Phase::QkvProj);
    q = linear_project(xf, p.w_q);
    k = linear_project(xf, p.w_k);
    v = linear_project(xf, p.w_v);
  }
  const WindowTable table = build_window_table(h, w, spec);
  return windowed_attention_core(q, k, v, table, probe).reshaped({h, w, d});
}

Tensor adaptive_offsets(const Tensor& kv, const OffsetGen& gen) {
  require(kv.rank() == 3, "adaptive_offsets: kv must be [H x W x D]");
  const int h = kv.dim(0), w = kv.dim(1), d = kv.dim(2);
  require(gen.depthwise.rank() == 3 && gen.depthwise.dim(2) == d,
          "adaptive_offsets: depthwise kernel channels must match");
  require(gen.reduce.rank() == 2 && gen.reduce.dim(0) == d && gen.reduce.dim(1) == 2,
          "adaptive_offsets: reduce must be [D x 2]");
  Tensor feat;
  {
    PhaseScope ph(Phase::OffsetConv);
    feat = conv2d_depthwise(kv, gen.depthwise, PadMode::Replicate);
  }
  Tensor delta;
  {
    PhaseScope ph(Phase::OffsetReduce);
    delta = linear_project(feat.reshaped({h * w, d}), gen.reduce);
  }
  Tensor coords({h, w, 2});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      coords.at(i, j, 0) = static_cast<double>(i) + delta.at(i * w + j, 0);
      coords.at(i, j, 1) = static_cast<double>(j) + delta.at(i * w + j, 1);
    }
  ensure_finite(coords, "adaptive_offsets");
  return coords;
}

namespace {

struct ProjectedTriple {
  Tensor q, k, v;  /* flat [N x D] */
};

ProjectedTriple project_qkv(const Tensor& x, const AttnParams& p) {
  const int n = x.dim(0) * x.dim(1);
  const Tensor xf = x.reshaped({n, x.dim(2)});
  ProjectedTriple t;
  PhaseScope ph(Phase::QkvProj);
  t.q = linear_project(xf, p.w_q);
  t.k = linear_project(xf, p.w_k);
  t.v = linear_project(xf, p.w_v);
  return t;
}

struct ShuffledPair {
  Tensor k_shuf, v_shuf;  /* [H x W x D] */
};

ShuffledPair shuffle_kv(const Tensor& kmap, const Tensor& vmap, const AttnParams& p) {
  ShuffledPair s;
  const Tensor coords_k = adaptive_offsets(kmap, p.off_k);
  const Tensor coords_v = adaptive_offsets(vmap, p.off_v);
  s.k_shuf = gather_hw(kmap, coords_k);
  s.v_shuf = gather_hw(vmap, coords_v);
  return s;
}

}  // namespace

AskvResult askv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec, AttnProbe* probe) {
  require(x.rank() == 3, "askv_sa: x must be [H x W x D]");
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  spec.validate_for(h, w);
  check_params(p, d);
  const ProjectedTriple t = project_qkv(x, p);
  const ShuffledPair s = shuffle_kv(t.k.reshaped({h, w, d}), t.v.reshaped({h, w, d}), p);
  const WindowTable table = build_window_table(h, w, spec);
  AskvResult r;
  r.out = windowed_attention_core(t.q, s.k_shuf.reshaped({h * w, d}),
                                  s.v_shuf.reshaped({h * w, d}), table, probe)
              .reshaped({h, w, d});
  r.k_shuf = s.k_shuf;
  r.v_shuf = s.v_shuf;
  return r;
}

int max_sample_displacement(const Tensor& x, const AttnParams& p, const SlideSpec& spec) {
  require(x.rank() == 3, "max_sample_displacement: x must be [H x W x D]");
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  spec.validate_for(h, w);
  check_params(p, d);
  const ProjectedTriple t = project_qkv(x, p);
  const Tensor coords_k = adaptive_offsets(t.k.reshaped({h, w, d}), p.off_k);
  const Tensor coords_v = adaptive_offsets(t.v.reshaped({h, w, d}), p.off_v);
  long worst = 0;
  for (int i = 1; i + 1 < h; ++i)
    for (int j = 1; j + 1 < w; ++j) {
      worst = std::max(worst, std::labs(std::lround(coords_k.at(i, j, 0)) - i));
      worst = std::max(worst, std::labs(std::lround(coords_k.at(i, j, 1)) - j));
      worst = std::max(worst, std::labs(std::lround(coords_v.at(i, j, 0)) - i));
      worst = std::max(worst, std::labs(std::lround(coords_v.at(i, j, 1)) - j));
    }
  return static_cast<int>(worst);
}

Tensor dsa(const Tensor& q_src, const Tensor& k_shuf, const Tensor& v_shuf, const AttnParams& p,
           const SlideSpec& spec, AttnProbe* probe) {
  require(q_src.rank() == 3, "dsa: q_src must be [H x W x D]");
  require(k_shuf.same_shape(q_src) && v_shuf.same_shape(q_src),
          "dsa: key/value fields must match q_src shape");
  const int h = q_src.dim(0), w = q_src.dim(1), d = q_src.dim(2);
  check_params(p, d);
  const int g = spec.pool_grid();
  require(g <= std::min(h, w), "dsa: pooled grid exceeds image");
  Tensor q;
  {
    PhaseScope ph(Phase::QkvProj);
    q = linear_project(q_src.reshaped({h * w, d}), p.w_q);
  }
  const Tensor ktok = avg_pool_adaptive(k_shuf, g, g).reshaped({g * g, d});
  const Tensor vtok = avg_pool_adaptive(v_shuf, g, g).reshaped({g * g, d});
  return global_attention_core(q, ktok, vtok, /*dsa_phase=*/true, probe).reshaped({h, w, d});
}

Tensor tea(const Tensor& x, const AttnParams& p, const SlideSpec& spec, AttnProbe* probe) {
  require(x.rank() == 3, "tea: x must be [H x W x D]");
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  spec.validate_for(h, w);
  check_params(p, d);
  const ProjectedTriple t = project_qkv(x, p);
  const ShuffledPair s = shuffle_kv(t.k.reshaped({h, w, d}), t.v.reshaped({h, w, d}), p);
  const WindowTable table = build_window_table(h, w, spec);
  const Tensor slide = windowed_attention_core(t.q, s.k_shuf.reshaped({h * w, d}),
                                               s.v_shuf.reshaped({h * w, d}), table, probe);
  const int g = spec.pool_grid();
  const Tensor ktok = avg_pool_adaptive(s.k_shuf, g, g).reshaped({g * g, d});
  const Tensor vtok = avg_pool_adaptive(s.v_shuf, g, g).reshaped({g * g, d});
  const Tensor down = global_attention_core(t.q, ktok, vtok, /*dsa_phase=*/true, probe);
  Tensor out({h, w, d});
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = p.alpha_s * slide[i] + p.alpha_d * down[i];
  count_aux("combine_mul", 2 * static_cast<std::uint64_t>(h) * w * d);
  ensure_finite(out, "tea");
  return out;
}

Tensor window_attention(const Tensor& x, const AttnParams& p, int win, AttnProbe* probe) {
  require(x.rank() == 3, "window_attention: x must be [H x W x D]");
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  require(win >= 1 && h % win == 0 && w % win == 0,
          "window_attention: window must divide both image axes");
  check_params(p, d);
  const ProjectedTriple t = project_qkv(x, p);
  Tensor out({h * w, d});
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<int> taps(static_cast<std::size_t>(win) * win);
  std::vector<double> scratch;
  for (int by = 0; by < h; by += win) {
    for (int bx = 0; bx < w; bx += win) {
      std::size_t o = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) taps[o++] = (by + i) * w + (bx + j);
      for (std::size_t qi = 0; qi < taps.size(); ++qi) {
        const int qidx = taps[qi];
        attend_one(t.q.data() + static_cast<std::int64_t>(qidx) * d, t.k.data(), t.v.data(),
                   taps.data(), static_cast<int>(taps.size()), d, inv_sqrt_d,
                   out.data() + static_cast<std::int64_t>(qidx) * d, probe, scratch);
      }
    }
  }
  {
    PhaseScope ph(Phase::AttnMap);
    count_macs(static_cast<std::uint64_t>(h) * w * win * win * d);
  }
  {
    PhaseScope ph(Phase::Reweight);
    count_macs(static_cast<std::uint64_t>(h) * w * win * win * d);
  }
  count_aux("attn_exp", static_cast<std::uint64_t>(h) * w * win * win);
  ensure_finite(out, "window_attention");
  return out.reshaped({h, w, d});
}

}  // namespace teaf
