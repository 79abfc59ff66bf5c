#pragma once

#include "teaf/tensor.hpp"

namespace teaf {

enum class PadMode { Zero, Replicate };

/* x:[N x Din] * w:[Din x Dout] -> [N x Dout]. Counts N*Din*Dout MACs. */
Tensor linear_project(const Tensor& x, const Tensor& w);

/* Row-wise softmax with max subtraction; x:[N x M]. Each output row sums to
 * 1 within 1e-6. */
Tensor softmax_rows(const Tensor& x);

/* Per-channel 2-d correlation, same spatial size. x:[H x W x C],
 * kernel:[k x k x C] with k odd. Counts H*W*C*k^2 MACs. */
Tensor conv2d_depthwise(const Tensor& x, const Tensor& kernel, PadMode pad);

/* Adaptive pooling over the exact partition: output cell (i,j) covers input
 * rows [floor(i*H/oh), floor((i+1)*H/oh)) and the analogous columns. */
Tensor avg_pool_adaptive(const Tensor& x, int oh, int ow);
Tensor max_pool_adaptive(const Tensor& x, int oh, int ow);

/* Nearest-integer coordinate rounding: ties away from zero, then clamp. */
int round_clamp(double v, int lo, int hi);

/* out[h,w,:] = x[round_clamp(coords[h,w,0]), round_clamp(coords[h,w,1]), :].
 * x:[H x W x C], coords:[H x W x 2] (row, col). */
Tensor gather_hw(const Tensor& x, const Tensor& coords);

/* [H x W x (C*r^2)] -> [H*r x W*r x C];
 * out[h*r+dy, w*r+dx, c] = in[h, w, c*r^2 + dy*r + dx]. r=1 is the identity. */
Tensor pixel_shuffle(const Tensor& x, int r);

/* Elementwise helpers. */
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);

double max_abs_diff(const Tensor& a, const Tensor& b);

/* max_i |a_i - b_i| / max(max_i |b_i|, floor): norm-wise relative error used
 * by all oracle comparisons. */
double rel_err(const Tensor& got, const Tensor& want);

}  // namespace teaf
