#include <sstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "teaf/attention.hpp"
#include "teaf/costmodel.hpp"

using namespace teaf;

namespace {

void check_termwise(const CostBreakdown& an, const MeasuredCost& m) {
  CHECK(m.macs.qkv_proj == an.qkv_proj);
  CHECK(m.macs.offset_convs == an.offset_convs);
  CHECK(m.macs.attn_map == an.attn_map);
  CHECK(m.macs.reweight == an.reweight);
  CHECK(m.macs.dsa == an.dsa);
}

}  // namespace

TEST_CASE("closed-form budget at the unit point") {
  const CostBreakdown b = analytic_cost(1, 1, SlideSpec{1, 1, 1, 1});
  CHECK(b.qkv_proj == 3);
  CHECK(b.offset_convs == 2);
  CHECK(b.attn_map == 1);
  CHECK(b.reweight == 1);
  CHECK(b.dsa == 2);
  CHECK(b.total_macs() == 9);
  CHECK(b.total_flops() == 18);
  CHECK(b.non_projection() == 6);
}

TEST_CASE("closed-form budget at the headline operating point") {
  const CostBreakdown b = analytic_cost(4096, 32, SlideSpec{15, 4, 3, 16});
  CHECK(b.qkv_proj == 12582912ULL);
  CHECK(b.offset_convs == 2359296ULL);
  CHECK(b.attn_map == 29491200ULL);
  CHECK(b.reweight == 29491200ULL);
  CHECK(b.dsa == 4194304ULL);
  CHECK(b.total_macs() == 78118912ULL);
  CHECK(b.total_flops() == 2 * 78118912ULL);
}

TEST_CASE("budget is linear in token count") {
  const SlideSpec spec{7, 2, 3, 16};
  const CostBreakdown a = analytic_cost(100, 8, spec);
  const CostBreakdown b = analytic_cost(700, 8, spec);
  CHECK(b.qkv_proj == 7 * a.qkv_proj);
  CHECK(b.offset_convs == 7 * a.offset_convs);
  CHECK(b.attn_map == 7 * a.attn_map);
  CHECK(b.dsa == 7 * a.dsa);
  CHECK(b.total_macs() == 7 * a.total_macs());
}

TEST_CASE("instrumented runs hit the analytic budget term by term") {
  const std::vector<int> sides = {8, 16, 32};
  const std::vector<SlideSpec> specs = {SlideSpec{7, 2, 3, 16}, SlideSpec{15, 4, 3, 16}};
  for (const SlideSpec& spec : specs) {
    for (int side : sides) {
      CAPTURE(spec.w);
      CAPTURE(side);
      const std::uint64_t n = static_cast<std::uint64_t>(side) * side;
      const CostBreakdown an = analytic_cost(n, 8, spec);  /* analytic is size-agnostic */
      CHECK(an.total_macs() > 0);
      if (spec.w * spec.s > side) {
        /* the operator cannot run below its geometric minimum */
        CHECK_THROWS_AS(measured_cost_tea(side, side, 8, spec, 7), std::invalid_argument);
        continue;
      }
      check_termwise(an, measured_cost_tea(side, side, 8, spec, 7));
    }
  }
}

TEST_CASE("instrumented headline run lands on the frozen total") {
  const SlideSpec spec{15, 4, 3, 16};
  const MeasuredCost m = measured_cost_tea(64, 64, 32, spec, 7);
  CHECK(m.macs.total_macs() == 78118912ULL);
  check_termwise(analytic_cost(4096, 32, spec), m);
  /* the learnable 1x1 offset reduction is tallied outside the budget */
  CHECK(m.offset_reduce == 4ULL * 4096 * 32);
  CHECK(m.aux.count("attn_exp") == 1);
  CHECK(m.aux.count("combine_mul") == 1);
  CHECK(m.aux.count("pool_add") == 1);
  CHECK(m.aux.at("combine_mul") == 2ULL * 4096 * 32);
}

TEST_CASE("sliding-only variant spends nothing on offsets or pooling") {
  const SlideSpec spec{7, 2, 3, 16};
  const MeasuredCost m = measured_cost_skv(16, 16, 8, spec, 7);
  const CostBreakdown an = analytic_cost(256, 8, spec);
  CHECK(m.macs.qkv_proj == an.qkv_proj);
  CHECK(m.macs.attn_map == an.attn_map);
  CHECK(m.macs.reweight == an.reweight);
  CHECK(m.macs.offset_convs == 0);
  CHECK(m.macs.dsa == 0);
  CHECK(m.offset_reduce == 0);
}

TEST_CASE("dense attention measures its quadratic score phase") {
  for (int n : {16, 64, 256}) {
    const MeasuredSa m = measured_cost_sa(n, 4, 7);
    CHECK(m.attn_map == analytic_sa_score(n, 4));
    CHECK(m.reweight == analytic_sa_score(n, 4));
    CHECK(m.qkv_proj == 3ULL * n * 4 * 4);
  }
  CHECK(analytic_sa_score(4096, 32) == 4096ULL * 4096 * 32);
}

TEST_CASE("measured scaling ratios separate linear from quadratic growth") {
  const SlideSpec spec{7, 2, 3, 16};
  const std::vector<int> sides = {16, 32, 64};
  const auto tea_rows = scaling_report(CostOp::Tea, sides, 8, spec, 7);
  REQUIRE(tea_rows.size() == 3);
  CHECK(tea_rows[0].ratio == 0.0);
  CHECK(tea_rows[1].ratio == 4.0);
  CHECK(tea_rows[2].ratio == 4.0);
  CHECK(tea_rows[0].n == 256);
  CHECK(tea_rows[2].n == 4096);

  const auto skv_rows = scaling_report(CostOp::Skv, sides, 8, spec, 7);
  CHECK(skv_rows[1].ratio == 4.0);
  CHECK(skv_rows[2].ratio == 4.0);

  const auto sa_rows = scaling_report(CostOp::Sa, sides, 8, spec, 7);
  CHECK(sa_rows[1].ratio == 16.0);
  CHECK(sa_rows[2].ratio == 16.0);
}

TEST_CASE("per-token comparison against single-window attention") {
  const SlideSpec spec{15, 4, 3, 16};
  CHECK(per_token_nonproj_macs(1, spec) == 500);
  CHECK(per_token_window_attention_macs(1, 16) == 512);
  CHECK(per_token_nonproj_macs(32, spec) == 16000);
  CHECK(per_token_window_attention_macs(32, 16) == 16384);
  CHECK(per_token_nonproj_macs(32, spec) < per_token_window_attention_macs(32, 16));
}

TEST_CASE("cost tables render both columns and stay deterministic") {
  const SlideSpec spec{7, 2, 3, 16};
  const CostBreakdown an = analytic_cost(256, 8, spec);
  const MeasuredCost m = measured_cost_tea(16, 16, 8, spec, 7);
  std::ostringstream t1, t2, c1;
  write_cost_text(t1, "probe", an, &m);
  write_cost_text(t2, "probe", an, &m);
  write_cost_csv(c1, "probe", an, &m);
  CHECK(t1.str() == t2.str());
  CHECK(t1.str().find("qkv_proj") != std::string::npos);
  CHECK(t1.str().find("total") != std::string::npos);
  CHECK(c1.str().find("qkv_proj") != std::string::npos);
  std::ostringstream s1;
  write_scaling_text(s1, CostOp::Tea, scaling_report(CostOp::Tea, {16, 32}, 8, spec, 7));
  CHECK(s1.str().find("4.0000") != std::string::npos);
}
