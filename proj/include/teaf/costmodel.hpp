#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "teaf/attention.hpp"
#include "teaf/macount.hpp"

namespace teaf {

/* Closed-form MAC budget of the two-branch attention operator on N tokens of
 * width D:
 *   qkv_proj     3 N D^2
 *   offset_convs 2 N D k^2
 *   attn_map       N w^2 D
 *   reweight       N w^2 D
 *   dsa          2 N n_d D
 * FLOPs = 2 * MACs. The learnable 1x1 offset reduction (4 N D MACs) is kept
 * outside the budget and reported separately, as are softmax exponentials,
 * divisions and pooling additions. */
struct CostBreakdown {
  std::uint64_t qkv_proj = 0;
  std::uint64_t offset_convs = 0;
  std::uint64_t attn_map = 0;
  std::uint64_t reweight = 0;
  std::uint64_t dsa = 0;

  std::uint64_t total_macs() const { return qkv_proj + offset_convs + attn_map + reweight + dsa; }
  std::uint64_t total_flops() const;
  std::uint64_t non_projection() const { return total_macs() - qkv_proj; }
};

CostBreakdown analytic_cost(std::uint64_t n, std::uint64_t d, const SlideSpec& spec);

/* Dense self-attention score-phase MACs, N^2 D (per phase; reweight equal). */
std::uint64_t analytic_sa_score(std::uint64_t n, std::uint64_t d);

/* Instrumented run of the attention operator on an H x W x D input (single
 * threaded). `extra` holds the measured counts excluded from the budget:
 * "offset_reduce" plus the auxiliary op tallies. */
struct MeasuredCost {
  CostBreakdown macs;
  std::uint64_t offset_reduce = 0;
  std::map<std::string, std::uint64_t> aux;
};

MeasuredCost measured_cost_tea(int h, int w, int d, const SlideSpec& spec, std::uint64_t seed);
MeasuredCost measured_cost_skv(int h, int w, int d, const SlideSpec& spec, std::uint64_t seed);

struct MeasuredSa {
  std::uint64_t attn_map = 0, reweight = 0, qkv_proj = 0;
};
MeasuredSa measured_cost_sa(int n, int d, std::uint64_t seed);

enum class CostOp { Sa, Skv, Tea };

struct ScalingRow {
  std::uint64_t n = 0;
  std::uint64_t macs = 0;        /* ratio basis: SA score phase, else non-projection total */
  std::uint64_t total_macs = 0;
  double ratio = 0.0;            /* macs relative to previous row; 0 for the first */
};

/* Measured scaling table across token counts (H = W = sqrt(N)). */
std::vector<ScalingRow> scaling_report(CostOp op, const std::vector<int>& sides, int d,
                                       const SlideSpec& spec, std::uint64_t seed);

void write_cost_text(std::ostream& os, const std::string& title, const CostBreakdown& analytic,
                     const MeasuredCost* measured);
void write_cost_csv(std::ostream& os, const std::string& title, const CostBreakdown& analytic,
                    const MeasuredCost* measured);
void write_scaling_text(std::ostream& os, CostOp op, const std::vector<ScalingRow>& rows);

/* Per-token non-projection MAC comparison against single-window attention
 * with the given window side (2*win^2*D vs 2D(k^2 + w^2 + n_d)). */
std::uint64_t per_token_nonproj_macs(std::uint64_t d, const SlideSpec& spec);
std::uint64_t per_token_window_attention_macs(std::uint64_t d, int win);

}  // namespace teaf
