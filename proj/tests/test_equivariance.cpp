#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "teaf/attention.hpp"
#include "teaf/equivariance.hpp"
#include "teaf/ops.hpp"
#include "teaf/rng.hpp"

using namespace teaf;

namespace {

constexpr double kTol = 1e-10;

ImageOp make_conv_op(const Tensor& kern) {
  return {"conv3x3",
          [kern](const Tensor& t) { return conv2d_depthwise(t, kern, PadMode::Replicate); }, 1,
          false, 1};
}

ImageOp make_skv_op(const AttnParams& p, const SlideSpec& spec) {
  return {"skvsa", [p, spec](const Tensor& t) { return skv_sa(t, p, spec); },
          skv_margin(spec.w, spec.s), false, 1};
}

}  // namespace

TEST_CASE("cyclic and crop shifts relocate pixels as documented") {
  Tensor x({2, 3, 1});
  for (int i = 0; i < 6; ++i) x[i] = i;  /* rows: [0 1 2; 3 4 5] */
  const Tensor c = shift_image(x, 0, 1, ShiftMode::Cyclic);
  CHECK(c.at(0, 0, 0) == 2.0);
  CHECK(c.at(0, 1, 0) == 0.0);
  CHECK(c.at(1, 2, 0) == 4.0);
  const Tensor r = shift_image(x, 1, 0, ShiftMode::Cyclic);
  CHECK(r.at(0, 0, 0) == 3.0);
  CHECK(r.at(1, 0, 0) == 0.0);
  const Tensor k = shift_image(x, 0, 1, ShiftMode::Crop);
  CHECK(k.at(0, 1, 0) == 0.0);
  CHECK(k.at(0, 0, 0) == 0.0);  /* source column -1 replicated from column 0 */
  const Tensor back = shift_image(shift_image(x, 2, -1, ShiftMode::Cyclic), -2, 1,
                                  ShiftMode::Cyclic);
  CHECK(max_abs_diff(back, x) == 0.0);
}

TEST_CASE("depthwise conv is interior-exact under shifts") {
  Rng rng(31);
  const Tensor x = rng.normal_tensor({20, 20, 3}, 0.0, 1.0);
  const ImageOp op = make_conv_op(rng.normal_tensor({3, 3, 3}, 0.0, 0.5));
  const EquivReport r = audit(op, x, all_shifts_upto(3, ShiftMode::Cyclic), kTol, op.margin);
  CHECK(r.verdict == Verdict::InteriorExact);
  CHECK(r.te_score == 1.0);
  CHECK(r.max_abs_dev == 0.0);
  CHECK(r.per_shift.size() == 48);
}

TEST_CASE("sliding window attention is interior-exact, including re-anchored specs") {
  Rng rng(32);
  const Tensor x = rng.normal_tensor({24, 24, 4}, 0.0, 1.0);
  for (const SlideSpec spec : {SlideSpec{7, 1, 3, 16}, SlideSpec{5, 2, 3, 9},
                               SlideSpec{3, 3, 3, 4}}) {
    const AttnParams p = init_attn_params(4, spec, rng, 0.25, 0.0);
    const ImageOp op = make_skv_op(p, spec);
    const EquivReport r = audit(
        op, x,
        {{1, 0, ShiftMode::Cyclic}, {0, 2, ShiftMode::Cyclic}, {-3, 4, ShiftMode::Cyclic}}, kTol,
        op.margin);
    INFO("spec w=", spec.w, " s=", spec.s, " margin=", op.margin);
    CHECK(r.verdict == Verdict::InteriorExact);
    CHECK(r.max_abs_dev == 0.0);
  }
}

TEST_CASE("adaptive resampling stays interior-exact once the margin covers the displacement") {
  Rng rng(33);
  const SlideSpec spec{5, 1, 3, 9};
  const Tensor x = rng.normal_tensor({32, 32, 4}, 0.0, 1.0);
  const AttnParams p = init_attn_params(4, spec, rng, 0.2, 0.3);
  const int dmax = max_sample_displacement(x, p, spec);
  const int margin = skv_margin(spec.w, spec.s) + std::max((spec.k - 1) / 2, dmax);
  const ImageOp op{"askvsa", [p, spec](const Tensor& t) { return askv_sa(t, p, spec).out; },
                   margin, false, 1};
  const EquivReport r = audit(op, x, all_shifts_upto(4, ShiftMode::Cyclic), kTol, margin);
  CHECK(r.verdict == Verdict::InteriorExact);
  CHECK(r.max_abs_dev == 0.0);
}

TEST_CASE("downsampled attention is exact only for pool-aligned shifts") {
  Rng rng(34);
  const SlideSpec spec{3, 1, 3, 16};  /* 4x4 pool grid on 16x16: cell side 4 */
  const Tensor x = rng.normal_tensor({16, 16, 4}, 0.0, 1.0);
  const AttnParams p = init_attn_params(4, spec, rng, 0.3, 0.0);
  const ImageOp op{"dsa",
                   [p, spec](const Tensor& t) {
                     const int n = t.dim(0) * t.dim(1);
                     const Tensor kf =
                         linear_project(t.reshaped({n, 4}), p.w_k).reshaped(t.shape());
                     const Tensor vf =
                         linear_project(t.reshaped({n, 4}), p.w_v).reshaped(t.shape());
                     return dsa(t, kf, vf, p, spec);
                   },
                   0, true, 1};
  const EquivReport aligned = audit(
      op, x, {{4, 0, ShiftMode::Cyclic}, {0, 4, ShiftMode::Cyclic}, {4, 4, ShiftMode::Cyclic}},
      kTol, 0);
  CHECK(aligned.verdict == Verdict::Exact);
  const EquivReport off = audit(op, x, {{1, 0, ShiftMode::Cyclic}}, kTol, 0);
  CHECK(off.te_score < 1.0);
  CHECK(off.verdict != Verdict::Exact);
  CHECK(off.verdict != Verdict::InteriorExact);
}

TEST_CASE("learned absolute position bias is caught as a hard failure") {
  Rng rng(35);
  const int h = 12, w = 12, d = 4;
  const Tensor x = rng.normal_tensor({h, w, d}, 0.0, 1.0);
  const AttnParams p = init_attn_params(d, SlideSpec{1, 1, 1, 1}, rng, 0.3, 0.0);
  const Tensor bias = rng.normal_tensor({h * w, d}, 0.0, 1.0);
  const ImageOp op{"sa+abs-pos",
                   [p, bias](const Tensor& t) {
                     const int n = t.dim(0) * t.dim(1);
                     return self_attention_abs_pos(t.reshaped({n, t.dim(2)}), p, bias)
                         .reshaped(t.shape());
                   },
                   0, true, 1};
  const EquivReport r = audit(op, x, {{1, 0, ShiftMode::Cyclic}}, kTol, 0);
  CHECK(r.verdict == Verdict::Fail);
  CHECK(r.te_score < 1.0);

  /* the same operator without the bias is exactly equivariant */
  const ImageOp clean{"sa",
                      [p](const Tensor& t) {
                        const int n = t.dim(0) * t.dim(1);
                        return self_attention(t.reshaped({n, t.dim(2)}), p).reshaped(t.shape());
                      },
                      0, true, 1};
  const EquivReport rc = audit(clean, x, all_shifts_upto(3, ShiftMode::Cyclic), kTol, 0);
  CHECK(rc.verdict == Verdict::Exact);
}

TEST_CASE("small position-dependent ripple lands in the approximate band") {
  Rng rng(36);
  const Tensor x = rng.normal_tensor({10, 10, 2}, 0.0, 1.0);
  const ImageOp op{"near-identity-ripple",
                   [](const Tensor& t) {
                     Tensor o = t;
                     for (int i = 0; i < t.dim(0); ++i)
                       for (int j = 0; j < t.dim(1); ++j)
                         for (int c = 0; c < t.dim(2); ++c)
                           o.at(i, j, c) += 1e-8 * ((i + j) % 2);
                     return o;
                   },
                   0, true, 1};
  const EquivReport r = audit(op, x, {{1, 0, ShiftMode::Cyclic}}, kTol, 0);
  CHECK(r.verdict == Verdict::Approximate);
  CHECK(r.max_abs_dev > kTol);
  CHECK(r.max_abs_dev / r.output_rms < kFailRelDev);
}

TEST_CASE("margin calculus composes serially and in parallel") {
  CHECK(skv_margin(7, 1) == 3);
  CHECK(skv_margin(7, 2) == 6);
  CHECK(skv_margin(15, 4) == 28);
  CHECK(skv_margin(1, 5) == 0);
  CHECK(askv_margin(15, 4, 3) == 29);
  CHECK(askv_margin(3, 1, 5) == 3);

  Rng rng(37);
  const ImageOp a = make_conv_op(rng.normal_tensor({3, 3, 4}, 0.0, 0.5));
  const SlideSpec spec{5, 1, 3, 9};
  const AttnParams p = init_attn_params(4, spec, rng, 0.25, 0.0);
  const ImageOp b = make_skv_op(p, spec);
  CHECK(serial_margin({a, b, a}).margin == 4);
  CHECK_FALSE(serial_margin({a, b}).global);
  CHECK(parallel_margin({a, b}).margin == 2);
  const ImageOp g{"global", nullptr, 0, true, 1};
  CHECK(serial_margin({a, g}).global);
  CHECK(parallel_margin({a, g}).global);
}

TEST_CASE("randomized compositions satisfy the margin calculus") {
  Rng rng(38);
  const Tensor x = rng.normal_tensor({28, 28, 4}, 0.0, 1.0);
  const std::vector<ShiftOp> shifts = {{2, 1, ShiftMode::Cyclic}, {-1, 3, ShiftMode::Cyclic}};
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<ImageOp> ops;
    const int len = rng.uniform_int(2, 3);
    for (int i = 0; i < len; ++i) {
      if (rng.uniform() < 0.5) {
        ops.push_back(make_conv_op(rng.normal_tensor({3, 3, 4}, 0.0, 0.4)));
      } else {
        const int w = 1 + 2 * rng.uniform_int(0, 2);
        const int s = rng.uniform_int(1, 2);
        const SlideSpec spec{w, s, 3, 4};
        ops.push_back(make_skv_op(init_attn_params(4, spec, rng, 0.25, 0.0), spec));
      }
    }
    const Compose how = rng.uniform() < 0.5 ? Compose::Serial : Compose::Parallel;
    const MarginInfo mi =
        how == Compose::Serial ? serial_margin(ops) : parallel_margin(ops);
    if (2 * (mi.margin + 3) >= 28) continue;  /* would empty the region */
    const EquivReport r = audit_composition(ops, how, x, shifts, kTol);
    INFO("trial=", trial, " ops=", r.op_name, " margin=", r.base_margin);
    CHECK(r.base_margin == mi.margin);
    CHECK(r.verdict == Verdict::InteriorExact);
    CHECK(r.max_abs_dev == 0.0);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("sub-pixel shuffle scales the shift by the upsampling factor") {
  Rng rng(39);
  const Tensor x = rng.normal_tensor({12, 12, 4}, 0.0, 1.0);
  const ImageOp op{"shuffle2", [](const Tensor& t) { return pixel_shuffle(t, 2); }, 0, false, 2};
  const EquivReport r = audit(
      op, x, {{1, 0, ShiftMode::Cyclic}, {0, 1, ShiftMode::Cyclic}, {2, 3, ShiftMode::Cyclic}},
      kTol, 0);
  CHECK(r.verdict == Verdict::Exact);
  CHECK(r.max_abs_dev == 0.0);
}

TEST_CASE("crop-mode shifts compare only the valid interior") {
  Rng rng(40);
  const Tensor x = rng.normal_tensor({18, 18, 3}, 0.0, 1.0);
  const ImageOp op = make_conv_op(rng.normal_tensor({3, 3, 3}, 0.0, 0.5));
  const EquivReport r =
      audit(op, x, {{1, 0, ShiftMode::Crop}, {-2, 3, ShiftMode::Crop}}, kTol, op.margin);
  CHECK(r.mode == ShiftMode::Crop);
  CHECK(r.verdict == Verdict::InteriorExact);
  CHECK(r.max_abs_dev == 0.0);
}

TEST_CASE("audit preconditions reject misuse") {
  Rng rng(41);
  const Tensor x = rng.normal_tensor({8, 8, 3}, 0.0, 1.0);
  const ImageOp op = make_conv_op(rng.normal_tensor({3, 3, 3}, 0.0, 0.5));
  CHECK_THROWS(audit(op, x, {{3, 0, ShiftMode::Cyclic}}, kTol, 1));   /* beyond side/4 */
  CHECK_THROWS(audit(op, x, {{1, 0, ShiftMode::Cyclic}}, kTol, 0));   /* below op margin */
  CHECK_THROWS(audit(op, x, {{2, 0, ShiftMode::Cyclic}}, kTol, 4));   /* empty interior */
  CHECK_THROWS(audit(op, x, {}, kTol, 1));                            /* no shifts */
  CHECK_THROWS(te_score_sweep(op, x, 0, kTol));
}

TEST_CASE("sweep score averages per-shift pass fractions") {
  Rng rng(42);
  const Tensor x = rng.normal_tensor({16, 16, 3}, 0.0, 1.0);
  const ImageOp op = make_conv_op(rng.normal_tensor({3, 3, 3}, 0.0, 0.5));
  CHECK(te_score_sweep(op, x, 4, kTol) == 1.0);

  const ImageOp broken{"row-bias",
                       [](const Tensor& t) {
                         Tensor o = t;
                         for (int j = 0; j < t.dim(1); ++j)
                           for (int c = 0; c < t.dim(2); ++c) o.at(0, j, c) += 10.0;
                         return o;
                       },
                       0, true, 1};
  const double s = te_score_sweep(broken, x, 4, kTol);
  CHECK(s < 1.0);
  CHECK(s > 0.0);
}

TEST_CASE("reports serialize deterministically in both formats") {
  Rng rng(43);
  const Tensor x = rng.normal_tensor({14, 14, 3}, 0.0, 1.0);
  const ImageOp op = make_conv_op(rng.normal_tensor({3, 3, 3}, 0.0, 0.5));
  const EquivReport r =
      audit(op, x, {{1, 0, ShiftMode::Cyclic}, {-1, 2, ShiftMode::Cyclic}}, kTol, op.margin);
  std::ostringstream t1, t2, k1;
  write_report_text(t1, r);
  write_report_text(t2, r);
  write_report_kv(k1, r);
  CHECK(t1.str() == t2.str());
  CHECK(t1.str().find("interior-exact") != std::string::npos);
  CHECK(k1.str().find("verdict=interior-exact") != std::string::npos);
  CHECK(k1.str().find("te_score=1") != std::string::npos);
}
