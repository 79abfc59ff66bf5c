#include "teaf/selfcheck.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "teaf/attention.hpp"
#include "teaf/autograd.hpp"
#include "teaf/costmodel.hpp"
#include "teaf/equivariance.hpp"
#include "teaf/io.hpp"
#include "teaf/model.hpp"
#include "teaf/ops.hpp"
#include "teaf/reference.hpp"
#include "teaf/rng.hpp"

namespace teaf {

namespace {

constexpr double kOracleTol = 1e-12;
constexpr double kTeTol = 1e-10;

struct Ctx {
  std::ostream& os;
  int failures = 0;

  void check(const std::string& name, bool ok, const std::string& detail = "") {
    os << (ok ? "ok   " : "FAIL ") << name;
    if (!detail.empty()) os << "  " << detail;
    os << "\n";
    if (!ok) ++failures;
  }
};

std::string temp_path(const char* leaf) {
  return (std::filesystem::temp_directory_path() / leaf).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void check_container(Ctx& c, Rng& rng) {
  {
    const Tensor t = rng.normal_tensor({3, 5, 2}, 0.0, 1.0);
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor u = read_tensor(ss);
    c.check("tensor.roundtrip.f64", u.same_shape(t) && max_abs_diff(t, u) == 0.0);
  }
  {
    Tensor t({4, 3}, DType::F32);
    for (std::int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(static_cast<float>(rng.normal()));
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor u = read_tensor(ss);
    c.check("tensor.roundtrip.f32", u.dtype() == DType::F32 && max_abs_diff(t, u) == 0.0);
  }
  {
    Tensor img({6, 7, 3});
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    const std::string path = temp_path("teaf-selfcheck.ppm");
    write_pnm(path, img);
    const Tensor back = read_pnm(path);
    double worst = 0.0;
    for (std::int64_t i = 0; i < img.size(); ++i)
      worst = std::max(worst, std::abs(back[i] - img[i]));
    std::filesystem::remove(path);
    c.check("image.roundtrip", back.same_shape(img) && worst <= 0.5 / 255.0 + 1e-12,
            "max_quantization_err=" + fmt_g17(worst));
  }
}

void check_oracles(Ctx& c, std::uint64_t seed, bool inject_bug) {
  for (const std::string& op : ref::oracle_ops()) {
    const double perturb = (inject_bug && op == "tea") ? 1e-9 : 0.0;
    const ref::OracleResult r = ref::run_oracle(op, 25, seed, perturb);
    c.check("oracle." + op, r.max_rel_err <= kOracleTol,
            "cases=25 max_rel_err=" + fmt_g17(r.max_rel_err));
  }
}

void check_degeneration(Ctx& c, std::uint64_t seed) {
  Rng rng(seed + 1);
  {
    const SlideSpec spec{5, 2, 3, 9};
    const Tensor x = rng.normal_tensor({12, 12, 4}, 0.0, 1.0);
    const AttnParams p = init_attn_params(4, spec, rng, 0.3, 0.0);
    const double e = rel_err(askv_sa(x, p, spec).out, skv_sa(x, p, spec));
    c.check("degenerate.zero-offsets", e <= kTeTol, "rel_err=" + fmt_g17(e));
  }
  {
    const SlideSpec spec{7, 1, 3, 4};
    const Tensor x = rng.normal_tensor({7, 7, 4}, 0.0, 1.0);
    const AttnParams p = init_attn_params(4, spec, rng, 0.3, 0.0);
    const double e = rel_err(skv_sa(x, p, spec), self_attention(x.reshaped({49, 4}), p).reshaped({7, 7, 4}));
    c.check("degenerate.full-window", e <= kTeTol, "rel_err=" + fmt_g17(e));
  }
  {
    const SlideSpec spec{3, 1, 3, 36};
    const Tensor x = rng.normal_tensor({6, 6, 4}, 0.0, 1.0);
    const AttnParams p = init_attn_params(4, spec, rng, 0.3, 0.0);
    const Tensor kf = linear_project(x.reshaped({36, 4}), p.w_k).reshaped({6, 6, 4});
    const Tensor vf = linear_project(x.reshaped({36, 4}), p.w_v).reshaped({6, 6, 4});
    const double e = rel_err(dsa(x, kf, vf, p, spec), self_attention(x.reshaped({36, 4}), p).reshaped({6, 6, 4}));
    c.check("degenerate.identity-pool", e <= kTeTol, "rel_err=" + fmt_g17(e));
  }
  {
    const SlideSpec spec{5, 1, 3, 9};
    const Tensor x = rng.normal_tensor({10, 10, 4}, 0.0, 1.0);
    AttnParams p = init_attn_params(4, spec, rng, 0.3, 0.4);
    p.alpha_s = 1.0;
    p.alpha_d = 0.0;
    const double e = rel_err(tea(x, p, spec), askv_sa(x, p, spec).out);
    c.check("degenerate.alpha-slide", e <= kTeTol, "rel_err=" + fmt_g17(e));
  }
}

ImageOp flat_sa_op(const AttnParams& p, const Tensor* bias) {
  ImageOp op;
  op.name = bias ? "sa+abs-pos" : "sa";
  op.global_margin = true;
  op.fn = [&p, bias](const Tensor& img) {
    const int h = img.dim(0), w = img.dim(1), d = img.dim(2);
    const Tensor flat = img.reshaped({h * w, d});
    const Tensor out = bias ? self_attention_abs_pos(flat, p, *bias) : self_attention(flat, p);
    return out.reshaped({h, w, d});
  };
  return op;
}

void check_audits(Ctx& c, std::uint64_t seed) {
  Rng rng(seed + 2);
  const Tensor x = rng.normal_tensor({24, 24, 4}, 0.0, 1.0);
  const Tensor kern = rng.normal_tensor({3, 3, 4}, 0.0, 0.5);
  ImageOp conv_op{"conv3x3", [&kern](const Tensor& t) {
                    return conv2d_depthwise(t, kern, PadMode::Replicate);
                  }, 1, false, 1};

  const std::vector<ShiftOp> shifts = {{1, 0, ShiftMode::Cyclic},
                                       {0, 1, ShiftMode::Cyclic},
                                       {3, 5, ShiftMode::Cyclic},
                                       {-2, 3, ShiftMode::Cyclic}};
  {
    const EquivReport r = audit(conv_op, x, shifts, kTeTol, conv_op.margin);
    c.check("audit.conv", r.verdict == Verdict::InteriorExact,
            "max_dev=" + fmt_g17(r.max_abs_dev));
  }
  const SlideSpec spec{7, 1, 3, 16};
  const AttnParams p = init_attn_params(4, spec, rng, 0.2, 0.0);
  ImageOp skv_op{"skvsa", [&p, &spec](const Tensor& t) { return skv_sa(t, p, spec); },
                 skv_margin(spec.w, spec.s), false, 1};
  {
    const EquivReport r = audit(skv_op, x, shifts, kTeTol, skv_op.margin);
    c.check("audit.skvsa", r.verdict == Verdict::InteriorExact,
            "max_dev=" + fmt_g17(r.max_abs_dev));
  }
  const SlideSpec aspec{5, 1, 3, 9};
  const AttnParams ap = init_attn_params(4, aspec, rng, 0.2, 0.3);
  {
    /* the margin must also cover the realized sampling displacement, which
     * the Gaussian offset fields do not bound a priori */
    const Tensor xa = rng.normal_tensor({32, 32, 4}, 0.0, 1.0);
    const int dmax = max_sample_displacement(xa, ap, aspec);
    const int m = skv_margin(aspec.w, aspec.s) + std::max((aspec.k - 1) / 2, dmax);
    ImageOp askv_op{"askvsa", [&ap, &aspec](const Tensor& t) { return askv_sa(t, ap, aspec).out; },
                    m, false, 1};
    const EquivReport r = audit(askv_op, xa, shifts, kTeTol, askv_op.margin);
    c.check("audit.askvsa", r.verdict == Verdict::InteriorExact,
            "margin=" + std::to_string(m) + " max_dev=" + fmt_g17(r.max_abs_dev));
  }
  ImageOp askv_op{"askvsa", [&ap, &aspec](const Tensor& t) { return askv_sa(t, ap, aspec).out; },
                  askv_margin(aspec.w, aspec.s, aspec.k), false, 1};
  {
    const Tensor xs = rng.normal_tensor({12, 12, 4}, 0.0, 1.0);
    const AttnParams sp = init_attn_params(4, spec, rng, 0.3, 0.0);
    const Tensor bias = rng.normal_tensor({144, 4}, 0.0, 1.0);
    const EquivReport r =
        audit(flat_sa_op(sp, &bias), xs, {{1, 0, ShiftMode::Cyclic}}, kTeTol, 0);
    c.check("audit.control-abs-pos", r.verdict == Verdict::Fail,
            std::string("verdict=") + verdict_name(r.verdict));
  }
  {
    const Tensor xs = rng.normal_tensor({16, 16, 4}, 0.0, 1.0);
    const SlideSpec dspec{3, 1, 3, 16};
    const AttnParams dp = init_attn_params(4, dspec, rng, 0.3, 0.0);
    ImageOp dsa_op{"dsa", [&dp, &dspec](const Tensor& t) {
                     const int n = t.dim(0) * t.dim(1);
                     const Tensor kf = linear_project(t.reshaped({n, 4}), dp.w_k).reshaped(t.shape());
                     const Tensor vf = linear_project(t.reshaped({n, 4}), dp.w_v).reshaped(t.shape());
                     return dsa(t, kf, vf, dp, dspec);
                   }, 0, true, 1};
    const std::vector<ShiftOp> aligned = {{4, 0, ShiftMode::Cyclic},
                                          {0, 4, ShiftMode::Cyclic},
                                          {4, 4, ShiftMode::Cyclic}};
    const EquivReport ra = audit(dsa_op, xs, aligned, kTeTol, 0);
    c.check("audit.dsa-aligned", ra.verdict == Verdict::Exact,
            "max_dev=" + fmt_g17(ra.max_abs_dev));
    const EquivReport ru = audit(dsa_op, xs, {{1, 0, ShiftMode::Cyclic}}, kTeTol, 0);
    c.check("audit.dsa-unaligned", ru.te_score < 1.0, "te_score=" + fmt_g17(ru.te_score));
  }
  {
    const EquivReport r = audit_composition({conv_op, skv_op}, Compose::Serial, x, shifts, kTeTol);
    c.check("audit.compose-serial",
            r.verdict == Verdict::InteriorExact && r.base_margin == conv_op.margin + skv_op.margin,
            "margin=" + std::to_string(r.base_margin) + " max_dev=" + fmt_g17(r.max_abs_dev));
  }
  {
    const EquivReport r = audit_composition({conv_op, skv_op}, Compose::Parallel, x, shifts, kTeTol);
    c.check("audit.compose-parallel",
            r.verdict == Verdict::InteriorExact && r.base_margin == skv_op.margin,
            "margin=" + std::to_string(r.base_margin) + " max_dev=" + fmt_g17(r.max_abs_dev));
  }
  {
    const bool ok = skv_margin(7, 1) == 3 && askv_margin(15, 4, 3) == 29 &&
                    serial_margin({conv_op, askv_op}).margin == 1 + 3 &&
                    parallel_margin({conv_op, askv_op}).margin == 3 &&
                    parallel_margin({conv_op, ImageOp{"g", nullptr, 0, true, 1}}).global;
    c.check("margin.calculus", ok);
  }
  {
    AttnProbe probe;
    (void)skv_sa(x, p, spec, &probe);
    double worst = 0.0, least = 1.0;
    for (double s : probe.weight_sum) worst = std::max(worst, std::abs(s - 1.0));
    for (double m : probe.weight_min) least = std::min(least, m);
    c.check("probe.weights", worst <= 1e-6 && least >= 0.0,
            "max_sum_err=" + fmt_g17(worst));
  }
}

void check_cost(Ctx& c, std::uint64_t seed) {
  {
    const CostBreakdown b = analytic_cost(1, 1, SlideSpec{1, 1, 1, 1});
    c.check("cost.unit",
            b.qkv_proj == 3 && b.offset_convs == 2 && b.attn_map == 1 && b.reweight == 1 &&
                b.dsa == 2 && b.total_macs() == 9);
  }
  {
    const CostBreakdown b = analytic_cost(4096, 32, SlideSpec{15, 4, 3, 16});
    c.check("cost.frozen-4096x32", b.total_macs() == 78118912ULL,
            "total=" + std::to_string(b.total_macs()));
  }
  {
    const std::uint64_t ours = per_token_nonproj_macs(1, SlideSpec{15, 4, 3, 16});
    const std::uint64_t win16 = per_token_window_attention_macs(1, 16);
    c.check("cost.per-token", ours == 500 && win16 == 512 && ours < win16,
            std::to_string(ours) + " vs " + std::to_string(win16));
  }
  {
    const SlideSpec spec{7, 2, 3, 16};
    const CostBreakdown a = analytic_cost(256, 8, spec);
    const MeasuredCost m = measured_cost_tea(16, 16, 8, spec, seed);
    const bool ok = m.macs.qkv_proj == a.qkv_proj && m.macs.offset_convs == a.offset_convs &&
                    m.macs.attn_map == a.attn_map && m.macs.reweight == a.reweight &&
                    m.macs.dsa == a.dsa;
    c.check("cost.measured.tea", ok,
            "measured_total=" + std::to_string(m.macs.total_macs()) +
                " analytic_total=" + std::to_string(a.total_macs()));
  }
  {
    const MeasuredSa m = measured_cost_sa(64, 4, seed);
    c.check("cost.measured.sa",
            m.attn_map == analytic_sa_score(64, 4) && m.qkv_proj == 3ULL * 64 * 4 * 4);
  }
  {
    const SlideSpec spec{7, 2, 3, 16};
    const auto rows = scaling_report(CostOp::Tea, {16, 32, 64}, 8, spec, seed);
    const bool ok = rows.size() == 3 && rows[1].ratio == 4.0 && rows[2].ratio == 4.0;
    c.check("cost.scaling.tea", ok,
            ok ? "non-projection ratio 4" : "unexpected ratios");
    const auto srows = scaling_report(CostOp::Sa, {16, 32, 64}, 8, spec, seed);
    const bool sok = srows.size() == 3 && srows[1].ratio == 16.0 && srows[2].ratio == 16.0;
    c.check("cost.scaling.sa", sok, sok ? "score ratio 16" : "unexpected ratios");
  }
}

void check_grads(Ctx& c, std::uint64_t seed) {
  Rng rng(seed + 3);
  const double tight = 1e-6;
  {
    const Tensor w = rng.normal_tensor({5, 3}, 0.0, 0.5);
    const Tensor r = rng.normal_tensor({4, 3}, 0.0, 1.0);
    auto f = [&w, &r](const ag::Var& x) {
      return ag::dot_const(ag::softmax_rows(ag::matmul(x, ag::Var::leaf(w))), r);
    };
    const double e = ag::grad_check(f, rng.normal_tensor({4, 5}, 0.0, 1.0), 1e-5);
    c.check("grad.matmul-softmax", e <= tight, "rel_err=" + fmt_g17(e));
  }
  {
    const Tensor k = rng.normal_tensor({3, 3, 2}, 0.0, 0.5);
    auto f = [&k](const ag::Var& x) {
      ag::Var y = ag::conv2d_depthwise(x, ag::Var::leaf(k), PadMode::Replicate);
      return ag::sum(ag::relu(ag::avg_pool_adaptive(y, 3, 2)));
    };
    const double e = ag::grad_check(f, rng.normal_tensor({6, 5, 2}, 0.0, 1.0), 1e-5);
    c.check("grad.conv-pool", e <= tight, "rel_err=" + fmt_g17(e));
  }
  {
    const SlideSpec spec{3, 2, 3, 4};
    Rng prng(seed + 4);
    const AttnParams p = init_attn_params(4, spec, prng, 0.3, 0.3);
    const Tensor readout = prng.normal_tensor({8 * 8, 4}, 0.0, 1.0);
    auto tea_readout = [&spec, &readout](const ag::Var& x, const AttnParams& pp) {
      const int h = 8, w = 8, d = 4, n = h * w;
      ag::Var xf = ag::reshape(x, {n, d});
      ag::Var q = ag::matmul(xf, ag::Var::leaf(pp.w_q));
      ag::Var k = ag::matmul(xf, ag::Var::leaf(pp.w_k));
      ag::Var v = ag::matmul(xf, ag::Var::leaf(pp.w_v));
      ag::Var kimg = ag::reshape(k, {h, w, d});
      ag::Var vimg = ag::reshape(v, {h, w, d});
      const Tensor ck = adaptive_offsets(kimg.value(), pp.off_k);
      const Tensor cv = adaptive_offsets(vimg.value(), pp.off_v);
      ag::Var ks = ag::gather_hw(kimg, ck);
      ag::Var vs = ag::gather_hw(vimg, cv);
      auto table = std::make_shared<const WindowTable>(build_window_table(h, w, spec));
      ag::Var slide = ag::windowed_attention(q, ag::reshape(ks, {n, d}), ag::reshape(vs, {n, d}),
                                             table);
      const int g = spec.pool_grid();
      ag::Var kp = ag::reshape(ag::avg_pool_adaptive(ks, g, g), {g * g, d});
      ag::Var vp = ag::reshape(ag::avg_pool_adaptive(vs, g, g), {g * g, d});
      ag::Var down = ag::global_attention(q, kp, vp, true);
      ag::Var out = ag::add(ag::scale_by(slide, ag::Var::leaf(Tensor::full({1}, pp.alpha_s))),
                            ag::scale_by(down, ag::Var::leaf(Tensor::full({1}, pp.alpha_d))));
      return ag::dot_const(out, readout);
    };
    const Tensor x0 = prng.normal_tensor({8, 8, 4}, 0.0, 1.0);
    auto f_x = [&](const ag::Var& x) { return tea_readout(x, p); };
    const double ex = ag::grad_check(f_x, x0, 1e-6);
    c.check("grad.tea-block.x", ex <= 1e-3, "rel_err=" + fmt_g17(ex));

    const ag::Var x_leaf = ag::Var::leaf(x0);
    auto f_wq = [&](const ag::Var& wq) {
      const int h = 8, w = 8, d = 4, n = h * w;
      ag::Var xf = ag::reshape(x_leaf, {n, d});
      ag::Var q = ag::matmul(xf, wq);
      ag::Var k = ag::matmul(xf, ag::Var::leaf(p.w_k));
      ag::Var v = ag::matmul(xf, ag::Var::leaf(p.w_v));
      ag::Var kimg = ag::reshape(k, {h, w, d});
      ag::Var vimg = ag::reshape(v, {h, w, d});
      const Tensor ck = adaptive_offsets(kimg.value(), p.off_k);
      const Tensor cv = adaptive_offsets(vimg.value(), p.off_v);
      ag::Var ks = ag::gather_hw(kimg, ck);
      ag::Var vs = ag::gather_hw(vimg, cv);
      auto table = std::make_shared<const WindowTable>(build_window_table(h, w, spec));
      ag::Var slide = ag::windowed_attention(q, ag::reshape(ks, {n, d}), ag::reshape(vs, {n, d}),
                                             table);
      const int g = spec.pool_grid();
      ag::Var kp = ag::reshape(ag::avg_pool_adaptive(ks, g, g), {g * g, d});
      ag::Var vp = ag::reshape(ag::avg_pool_adaptive(vs, g, g), {g * g, d});
      ag::Var down = ag::global_attention(q, kp, vp, true);
      ag::Var out = ag::add(ag::scale_by(slide, ag::Var::leaf(Tensor::full({1}, p.alpha_s))),
                            ag::scale_by(down, ag::Var::leaf(Tensor::full({1}, p.alpha_d))));
      return ag::dot_const(out, readout);
    };
    const double ew = ag::grad_check(f_wq, p.w_q, 1e-6);
    c.check("grad.tea-block.wq", ew <= 1e-3, "rel_err=" + fmt_g17(ew));
  }
}

void check_model(Ctx& c, std::uint64_t seed) {
  {
    ModelConfig hand;
    hand.d = 1;
    hand.n_groups = 1;
    hand.n_blocks = 1;
    hand.spec = SlideSpec{1, 1, 1, 1};
    hand.ffn_expansion = 1.0;
    const Model m(hand, seed);
    c.check("model.params.hand", count_params(hand) == 75 && m.param_count() == 75,
            "count=" + std::to_string(m.param_count()));
  }
  {
    ModelConfig cfg;  /* defaults: d=32, 2 groups, 2 blocks, spec(7,2,3,16) */
    const Model m(cfg, seed);
    ModelConfig wa = cfg;
    wa.attn = AttnKind::Wa;
    const Model mw(wa, seed);
    c.check("model.params.closed-form",
            count_params(cfg) == m.param_count() && count_params(wa) == mw.param_count(),
            "tea=" + std::to_string(m.param_count()) + " wa=" + std::to_string(mw.param_count()));
  }
  ModelConfig small;
  small.d = 8;
  small.n_groups = 1;
  small.n_blocks = 1;
  small.spec = SlideSpec{3, 1, 3, 16};
  {
    const Model a(small, seed), b(small, seed);
    const Tensor img = toy_pattern(16, 16, 2);
    c.check("model.determinism", max_abs_diff(a.infer(img), b.infer(img)) == 0.0);
  }
  {
    Model m(small, seed);
    for (auto& [name, p] : m.params()) {
      if (name.find("attn.wv") != std::string::npos || name.find("ffn.w2") != std::string::npos ||
          name.find("conv.pw") != std::string::npos || name == "deep.pw")
        p.mutable_value() = Tensor::zeros(p.value().shape());
    }
    const Tensor img = toy_pattern(16, 16, 1);
    const Tensor got = m.infer(img);
    auto sep = [&m](const Tensor& in, const std::string& dwn, const std::string& pwn) {
      const Tensor* dw = nullptr;
      const Tensor* pw = nullptr;
      for (const auto& [name, p] : m.params()) {
        if (name == dwn) dw = &p.value();
        if (name == pwn) pw = &p.value();
      }
      const Tensor y = conv2d_depthwise(in, *dw, PadMode::Replicate);
      const int n = in.dim(0) * in.dim(1);
      return linear_project(y.reshaped({n, y.dim(2)}), *pw)
          .reshaped({in.dim(0), in.dim(1), pw->dim(1)});
    };
    const Tensor want =
        add(sep(sep(img, "shallow.dw", "shallow.pw"), "head.dw", "head.pw"), img);
    const double e = rel_err(got, want);
    c.check("model.zero-body", e <= 1e-12, "rel_err=" + fmt_g17(e));
  }
  {
    ModelConfig toy;
    toy.d = 16;
    toy.n_groups = 1;
    toy.n_blocks = 2;
    toy.spec = SlideSpec{7, 2, 3, 16};
    const Model m(toy, seed);
    const Tensor img = toy_pattern(24, 24, 3);
    const double p = psnr(m.infer(img), img);
    c.check("model.psnr-init", p > 40.0, "psnr_db=" + fmt_g17(p));
  }
  {
    const Model m(small, seed);
    const std::string p1 = temp_path("teaf-selfcheck-a.ckpt");
    const std::string p2 = temp_path("teaf-selfcheck-b.ckpt");
    write_checkpoint(p1, m.to_checkpoint());
    write_checkpoint(p2, m.to_checkpoint());
    const Model back(read_checkpoint(p1));
    const Tensor img = toy_pattern(16, 16, 5);
    const bool same_bytes = file_bytes(p1) == file_bytes(p2);
    const bool same_out = max_abs_diff(m.infer(img), back.infer(img)) == 0.0;
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
    c.check("model.checkpoint", same_bytes && same_out);
  }
  {
    ModelConfig tiny;
    tiny.d = 8;
    tiny.n_groups = 1;
    tiny.n_blocks = 1;
    tiny.spec = SlideSpec{3, 1, 3, 4};
    Model m(tiny, seed);
    const Checkpoint before = m.to_checkpoint();
    TrainConfig tc;
    tc.steps = 3;
    tc.lr = 0.0;
    tc.patch = 16;
    tc.seed = seed;
    const TrainResult r = train_toy(m, tc);
    bool frozen = !r.diverged;
    const Checkpoint after = m.to_checkpoint();
    for (std::size_t i = 0; i < before.params.size() && frozen; ++i)
      frozen = max_abs_diff(before.params[i].second, after.params[i].second) == 0.0;
    c.check("train.lr0-frozen-params", frozen);

    TrainConfig tc2;
    tc2.steps = 8;
    tc2.lr = 1e-3;
    tc2.patch = 16;
    tc2.seed = seed;
    Model m2(tiny, seed);
    const Checkpoint init2 = m2.to_checkpoint();
    const TrainResult r2 = train_toy(m2, tc2);
    double moved = 0.0;
    const Checkpoint after2 = m2.to_checkpoint();
    for (std::size_t i = 0; i < init2.params.size(); ++i)
      if (init2.params[i].first.find("attn.wq") != std::string::npos)
        moved = std::max(moved, max_abs_diff(init2.params[i].second, after2.params[i].second));
    c.check("train.updates-params", !r2.diverged && moved > 0.0,
            "wq_max_update=" + fmt_g17(moved));
  }
}

}  // namespace

int run_selfcheck(std::ostream& os, const SelfcheckOptions& opt) {
  Ctx c{os};
  Rng rng(opt.seed);
  check_container(c, rng);
  check_oracles(c, opt.seed, opt.inject_bug);
  check_degeneration(c, opt.seed);
  check_audits(c, opt.seed);
  check_cost(c, opt.seed);
  check_grads(c, opt.seed);
  check_model(c, opt.seed);
  os << (c.failures == 0 ? "selfcheck: all checks passed\n"
                         : "selfcheck: " + std::to_string(c.failures) + " check(s) failed\n");
  return c.failures;
}

}  // namespace teaf
