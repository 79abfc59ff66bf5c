#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teaf/attention.hpp"
#include "teaf/tensor.hpp"

/* Brute-force re-implementations of the attention family, written as direct
 * per-query loops with their own windowing, offset, pooling and gather code.
 * They share nothing with the production operators except the parameter
 * structs, so agreement between the two paths is evidence, not tautology. */
namespace teaf::ref {

Tensor matmul(const Tensor& x, const Tensor& w);

Tensor sa(const Tensor& x, const AttnParams& p);
Tensor skv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec);

struct AskvOut {
  Tensor out, k_shuf, v_shuf;
};
AskvOut askv_sa(const Tensor& x, const AttnParams& p, const SlideSpec& spec);

Tensor dsa(const Tensor& q_src, const Tensor& k_shuf, const Tensor& v_shuf, const AttnParams& p,
           const SlideSpec& spec);
Tensor tea(const Tensor& x, const AttnParams& p, const SlideSpec& spec);

/* Randomized equivalence battery for one operator. Each case draws a fresh
 * shape (H,W <= 16, D <= 8), a valid SlideSpec, inputs and parameters with
 * nonzero offset generators, then compares the production operator against
 * the loop oracle norm-wise. `perturb` injects a deliberate defect into the
 * production output before comparison (self-sensitivity check). */
struct OracleResult {
  std::string op;
  int cases = 0;
  double max_rel_err = 0.0;
};

OracleResult run_oracle(const std::string& op, int cases, std::uint64_t seed,
                        double perturb = 0.0);

const std::vector<std::string>& oracle_ops();

}  // namespace teaf::ref
