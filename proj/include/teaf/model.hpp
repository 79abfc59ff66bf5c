#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "teaf/attention.hpp"
#include "teaf/autograd.hpp"
#include "teaf/equivariance.hpp"
#include "teaf/io.hpp"

namespace teaf {

enum class AttnKind { Tea, Wa };

/* Restoration model: shallow separable conv, n_groups groups of n_blocks
 * attention blocks each (block = residual attention + residual feed-forward,
 * no normalization), a separable conv with residual per group, a deep
 * separable conv, shallow+deep feature sum, and a restore head. scale = 1
 * adds a global input residual; scale > 1 ends in a sub-pixel shuffle. */
struct ModelConfig {
  int d = 32;
  int n_groups = 2;
  int n_blocks = 2;
  SlideSpec spec{7, 2, 3, 16};
  int scale = 1; /* 1, 2 or 4 */
  double ffn_expansion = 2.0;
  AttnKind attn = AttnKind::Tea;
  int wa_window = 8;

  void validate() const;
  int ffn_hidden() const;
  /* Boundary band, in input pixels, inside which edge handling may deviate
   * from pure translation: serial sum over the conv and attention stages.
   * Only meaningful for the sliding-window variant. */
  int margin() const;
  /* Smallest input side the forward pass accepts. */
  int min_side() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

/* Closed-form parameter count; matches the enumerated registry exactly. */
std::int64_t count_params(const ModelConfig& cfg);

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  explicit Model(const Checkpoint& ck);

  const ModelConfig& config() const { return cfg_; }

  /* Tape forward; img is [H x W x 3], output [H*scale x W*scale x 3]. */
  ag::Var forward(const ag::Var& img) const;
  /* Value-only forward for audits and inference. */
  Tensor infer(const Tensor& img) const;

  std::vector<std::pair<std::string, ag::Var>>& params() { return params_; }
  const std::vector<std::pair<std::string, ag::Var>>& params() const { return params_; }
  std::int64_t param_count() const;

  Checkpoint to_checkpoint() const;

 private:
  ag::Var block_forward(const ag::Var& x, int group, int block, int h, int w) const;
  const ag::Var& param(const std::string& name) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, ag::Var>> params_;
  std::map<std::string, std::size_t> index_;
};

/* Audit adapter. The sliding-window variant carries the config margin; the
 * fixed-partition variant makes no equivariance claim (global margin). */
ImageOp make_model_op(const Model& m, const std::string& name);

enum class ToyTask { DenoiseShift, Identity };

struct TrainConfig {
  int steps = 500;
  double lr = 1e-3;
  int patch = 24;
  std::uint64_t seed = 1;
  ToyTask task = ToyTask::DenoiseShift;
  double noise_sigma = 0.25;
};

struct TrainResult {
  std::vector<double> losses;
  bool diverged = false;
  int diverged_step = -1;
  double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }
};

/* Deterministic base pattern bank for the synthetic tasks: integer-frequency
 * sinusoid mixtures, so cyclic shifts stay inside the family. */
int toy_pattern_count();
Tensor toy_pattern(int h, int w, int idx);

/* One training sample: a randomly chosen base pattern under a random cyclic
 * shift; for the denoising task the input adds Gaussian noise. */
struct ToySample {
  Tensor input, target;
};
ToySample toy_sample(int patch, ToyTask task, double noise_sigma, Rng& rng);

/* Plain fixed-rate gradient descent on mean-L1 loss. Loss is recorded every
 * step; a non-finite loss aborts with the offending step index. */
TrainResult train_toy(Model& m, const TrainConfig& tc);

void write_curve(std::ostream& os, const std::vector<double>& losses);

double psnr(const Tensor& a, const Tensor& b);

}  // namespace teaf
