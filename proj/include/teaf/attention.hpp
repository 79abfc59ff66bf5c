#pragma once

#include <cstdint>
#include <vector>

#include "teaf/rng.hpp"
#include "teaf/tensor.hpp"

namespace teaf {

/* Geometry bundle shared by the sliding-window attention family:
 *   w   window taps per axis (odd)
 *   s   tap stride (dilation) in pixels
 *   k   offset-generator kernel size (odd)
 *   n_d downsampled token count (perfect square) */
struct SlideSpec {
  int w = 15;
  int s = 4;
  int k = 3;
  int n_d = 16;

  void validate() const;
  /* additionally requires w*s <= min(H,W) and sqrt(n_d) <= min(H,W) */
  void validate_for(int h, int wid) const;
  /* side length of the pooled token grid, sqrt(n_d) */
  int pool_grid() const;
};

/* Depthwise k x k conv over D channels followed by a learnable 1x1 reduction
 * from D channels to 2, producing a per-pixel (row, col) offset field. */
struct OffsetGen {
  Tensor depthwise;  /* [k x k x D] */
  Tensor reduce;     /* [D x 2] */
};

struct AttnParams {
  Tensor w_q, w_k, w_v;  /* [D x D] each */
  OffsetGen off_k, off_v;
  double alpha_s = 1.0;  /* sliding-branch gain */
  double alpha_d = 1.0;  /* downsampled-branch gain */
};

/* Randomized parameter bundle. offset_sigma = 0 gives identically zero offset
 * fields (the init used by the toy model, matching deformable-conv practice);
 * small nonzero values keep gathered coordinates within a pixel of their
 * anchors so boundary clamping never fires for interior queries. */
AttnParams init_attn_params(int d, const SlideSpec& spec, Rng& rng, double proj_sigma = 0.2,
                            double offset_sigma = 0.0);

enum class Anchor { Centered, Low, High };

/* Tap positions along one axis for a query at `pos` (axis length `len`):
 * the centered dilated grid {pos + s*(a - (w-1)/2)} when it fits, otherwise
 * re-anchored to start at 0 (underflow) or to end at len-1 (overflow). Every
 * query gets exactly w in-bounds taps. */
struct AxisTaps {
  std::vector<int> taps;
  Anchor anchor = Anchor::Centered;
};

AxisTaps build_axis_taps(int pos, int len, int w, int s);

/* Cartesian product of the two per-axis grids for one query pixel. */
struct WindowIndex {
  AxisTaps rows, cols;
};

WindowIndex build_window_index(int h, int w_pos, int H, int W, const SlideSpec& spec);

/* Flattened tap table for all H*W queries; taps are indices into the
 * row-major [N x D] view of the feature map. */
struct WindowTable {
  int H = 0, W = 0, taps_per_query = 0;
  std::vector<int> taps;  /* H*W*w^2, query-major, row-tap-major inside */
};

WindowTable build_window_table(int H, int W, const SlideSpec& spec);

/* Optional instrumentation: per-query sum/min/max of the normalized
 * attention weights, appended in query order. */
struct AttnProbe {
  std::vector<double> weight_sum, weight_min, weight_max;
};

/* Dense softmax attention over all N tokens.
 * x:[N x D]; out[i] = sum_j softmax_j(q_i.k_j / sqrt(D)) v_j. */
Tensor self_attention(const Tensor& x, const AttnParams& p, AttnProbe* probe = nullptr);

/* Negative control: self-attention with a learned absolute position bias
 * added to the input embedding. Deliberately not translation equivariant. */
Tensor self_attention_abs_pos(const Tensor& x, const AttnParams& p, const Tensor& pos_bias,
                              AttnProbe* probe = nullptr);

/* Sliding key-value attention: each query attends to the w x w dilated
 * window around it (boundary windows re-anchored). x:[H x W x D]. */
Tensor skv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec,
              AttnProbe* probe = nullptr);

/* Per-pixel sampling coordinates for one shuffled field:
 * coords[h,w] = (h,w) + reduce(depthwise(kv)). Offsets are relative
 * displacements; the depthwise conv uses replicate padding. */
Tensor adaptive_offsets(const Tensor& kv, const OffsetGen& gen);

struct AskvResult {
  Tensor out;     /* [H x W x D] */
  Tensor k_shuf;  /* shuffled key field, reused by the downsampled branch */
  Tensor v_shuf;
};

/* Largest rounded sampling displacement produced by either offset field on
 * this input, scanned at least one pixel inside the border (where the offset
 * conv reads no padding). Interior exactness of the adaptive variants needs
 * the audit margin to cover (w-1)*s/2 plus this displacement whenever it
 * exceeds the generator's own (k-1)/2 reach, because a sample that lands
 * outside the image is clamped and clamping is anchored to the frame. */
int max_sample_displacement(const Tensor& x, const AttnParams& p, const SlideSpec& spec);

/* Adaptive shuffled variant: keys/values are re-sampled through learned
 * offset fields before the sliding-window attention. */
AskvResult askv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec,
                   AttnProbe* probe = nullptr);

/* Downsampled attention: every query attends over the n_d adaptively
 * average-pooled tokens of the (shuffled) key/value fields.
 * q_src:[H x W x D] is projected with p.w_q. */
Tensor dsa(const Tensor& q_src, const Tensor& k_shuf, const Tensor& v_shuf, const AttnParams& p,
           const SlideSpec& spec, AttnProbe* probe = nullptr);

/* Two-branch combination: alpha_s * askv_sa + alpha_d * dsa, with the
 * downsampled branch consuming the shuffled key/value pair and the query
 * projection shared between branches. */
Tensor tea(const Tensor& x, const AttnParams& p, const SlideSpec& spec,
           AttnProbe* probe = nullptr);

/* Baseline: attention within fixed non-overlapping win x win partitions.
 * The partition grid is anchored at the image origin, so this operator is
 * deliberately not translation equivariant. Requires win | H and win | W. */
Tensor window_attention(const Tensor& x, const AttnParams& p, int win, AttnProbe* probe = nullptr);

/* Shared cores (also used by the autodiff wrappers). The *_core functions
 * assume already-projected inputs and count MACs into the active phase via
 * the caller-selected map/reweight phases. */
Tensor windowed_attention_core(const Tensor& qf, const Tensor& kf, const Tensor& vf,
                               const WindowTable& table, AttnProbe* probe);
Tensor global_attention_core(const Tensor& qf, const Tensor& ktok, const Tensor& vtok,
                             bool dsa_phase, AttnProbe* probe);

}  // namespace teaf
