#include "teaf/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace teaf {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

constexpr int kConvK = 3;

std::string block_prefix(int g, int b) {
  return "g" + std::to_string(g) + ".b" + std::to_string(b) + ".";
}

/* Fixed non-overlapping win x win partition, expressed as a per-query tap
 * table so the windowed attention core can run it. */
WindowTable build_block_table(int H, int W, int win) {
  require(win >= 1 && H % win == 0 && W % win == 0,
          "model: partition window must divide both image axes");
  WindowTable t;
  t.H = H;
  t.W = W;
  t.taps_per_query = win * win;
  t.taps.resize(static_cast<std::size_t>(H) * W * t.taps_per_query);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const int by = (i / win) * win, bx = (j / win) * win;
      std::size_t o = (static_cast<std::size_t>(i) * W + j) * t.taps_per_query;
      for (int a = 0; a < win; ++a)
        for (int b = 0; b < win; ++b) t.taps[o++] = (by + a) * W + (bx + b);
    }
  }
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  require(d >= 1, "model: embed dim must be >= 1");
  require(n_groups >= 1 && n_blocks >= 1, "model: group/block counts must be >= 1");
  spec.validate();
  require(scale == 1 || scale == 2 || scale == 4, "model: scale must be 1, 2 or 4");
  require(ffn_expansion > 0.0, "model: ffn expansion must be positive");
  require(wa_window >= 1, "model: partition window must be >= 1");
}

int ModelConfig::ffn_hidden() const {
  const int h = static_cast<int>(std::lround(ffn_expansion * d));
  return h < 1 ? 1 : h;
}

int ModelConfig::margin() const {
  const int conv_m = (kConvK - 1) / 2;
  const int block_m = askv_margin(spec.w, spec.s, spec.k);
  /* shallow + per group (blocks + tail conv) + deep conv + head conv */
  return conv_m + n_groups * (n_blocks * block_m + conv_m) + conv_m + conv_m;
}

int ModelConfig::min_side() const {
  if (attn == AttnKind::Wa) return wa_window;
  return std::max(spec.w * spec.s, spec.pool_grid());
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["attn"] = attn == AttnKind::Tea ? "tea" : "wa";
  kv["d"] = std::to_string(d);
  kv["n_groups"] = std::to_string(n_groups);
  kv["n_blocks"] = std::to_string(n_blocks);
  kv["w"] = std::to_string(spec.w);
  kv["s"] = std::to_string(spec.s);
  kv["k"] = std::to_string(spec.k);
  kv["n_d"] = std::to_string(spec.n_d);
  kv["scale"] = std::to_string(scale);
  kv["ffn_expansion"] = fmt_g17(ffn_expansion);
  kv["wa_window"] = std::to_string(wa_window);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("model config: missing key '" + key + "'");
    return it->second;
  };
  ModelConfig cfg;
  const std::string& a = get("attn");
  if (a == "tea")
    cfg.attn = AttnKind::Tea;
  else if (a == "wa")
    cfg.attn = AttnKind::Wa;
  else
    throw std::runtime_error("model config: unknown attention kind '" + a + "'");
  cfg.d = std::stoi(get("d"));
  cfg.n_groups = std::stoi(get("n_groups"));
  cfg.n_blocks = std::stoi(get("n_blocks"));
  cfg.spec.w = std::stoi(get("w"));
  cfg.spec.s = std::stoi(get("s"));
  cfg.spec.k = std::stoi(get("k"));
  cfg.spec.n_d = std::stoi(get("n_d"));
  cfg.scale = std::stoi(get("scale"));
  cfg.ffn_expansion = std::stod(get("ffn_expansion"));
  cfg.wa_window = std::stoi(get("wa_window"));
  cfg.validate();
  return cfg;
}

std::int64_t count_params(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d, hid = cfg.ffn_hidden(), k = cfg.spec.k;
  const std::int64_t kk = kConvK * kConvK;
  std::int64_t block = 3 * d * d + d * hid + hid * d;
  if (cfg.attn == AttnKind::Tea) block += 2 * (k * k * d + 2 * d) + 2;
  const std::int64_t group = cfg.n_blocks * block + kk * d + d * d;
  const std::int64_t shallow = kk * 3 + 3 * d;
  const std::int64_t deep = kk * d + d * d;
  const std::int64_t head = kk * d + d * 3 * cfg.scale * cfg.scale;
  return shallow + cfg.n_groups * group + deep + head;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int d = cfg_.d, hid = cfg_.ffn_hidden(), k = cfg_.spec.k;
  auto push = [this](const std::string& name, Tensor t) {
    index_[name] = params_.size();
    params_.emplace_back(name, ag::Var::leaf(std::move(t)));
  };
  auto draw = [&rng, &push](const std::string& name, std::vector<int> shape, double sigma) {
    push(name, rng.normal_tensor(std::move(shape), 0.0, sigma));
  };
  const double conv_dw_sigma = 1.0 / 3.0;
  const double res_pw_sigma = 0.1 / std::sqrt(static_cast<double>(d));

  draw("shallow.dw", {kConvK, kConvK, 3}, conv_dw_sigma);
  draw("shallow.pw", {3, d}, std::sqrt(1.0 / 3.0));
  for (int g = 0; g < cfg_.n_groups; ++g) {
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string pre = block_prefix(g, b);
      draw(pre + "attn.wq", {d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
      draw(pre + "attn.wk", {d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
      draw(pre + "attn.wv", {d, d}, res_pw_sigma);
      draw(pre + "ffn.w1", {d, hid}, std::sqrt(2.0 / d));
      draw(pre + "ffn.w2", {hid, d}, 0.1 / std::sqrt(static_cast<double>(hid)));
      if (cfg_.attn == AttnKind::Tea) {
        push(pre + "attn.offk.dw", Tensor::zeros({k, k, d}));
        push(pre + "attn.offk.pw", Tensor::zeros({d, 2}));
        push(pre + "attn.offv.dw", Tensor::zeros({k, k, d}));
        push(pre + "attn.offv.pw", Tensor::zeros({d, 2}));
        push(pre + "attn.alpha_s", Tensor::full({1}, 1.0));
        push(pre + "attn.alpha_d", Tensor::full({1}, 1.0));
      }
    }
    const std::string gp = "g" + std::to_string(g) + ".conv.";
    draw(gp + "dw", {kConvK, kConvK, d}, conv_dw_sigma);
    draw(gp + "pw", {d, d}, res_pw_sigma);
  }
  draw("deep.dw", {kConvK, kConvK, d}, conv_dw_sigma);
  draw("deep.pw", {d, d}, res_pw_sigma);
  draw("head.dw", {kConvK, kConvK, d}, conv_dw_sigma);
  draw("head.pw", {d, 3 * cfg_.scale * cfg_.scale}, 0.003);
}

Model::Model(const Checkpoint& ck) : Model(ModelConfig::from_kv(parse_kv(ck.config_text)), 0) {
  if (ck.params.size() != params_.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(params_.size()) +
                             " parameters, found " + std::to_string(ck.params.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, t] = ck.params[i];
    if (name != params_[i].first)
      throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " is '" + name +
                               "', expected '" + params_[i].first + "'");
    if (!t.same_shape(params_[i].second.value()))
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    params_[i].second.mutable_value() = t;
  }
}

const ag::Var& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("model: unknown parameter '" + name + "'");
  return params_[it->second].second;
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().size();
  return n;
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ck;
  ck.config_text = encode_kv(cfg_.to_kv());
  for (const auto& [name, v] : params_) ck.params.emplace_back(name, v.value());
  return ck;
}

namespace {

/* depthwise conv + pointwise projection on the tape */
ag::Var sep_conv(const ag::Var& x, const ag::Var& dw, const ag::Var& pw, int h, int w) {
  ag::Var y = ag::conv2d_depthwise(x, dw, PadMode::Replicate);
  const int cin = pw.value().dim(0), cout = pw.value().dim(1);
  y = ag::reshape(y, {h * w, cin});
  y = ag::matmul(y, pw);
  return ag::reshape(y, {h, w, cout});
}

}  // namespace

ag::Var Model::block_forward(const ag::Var& x, int g, int b, int h, int w) const {
  const std::string pre = block_prefix(g, b);
  const int d = cfg_.d, n = h * w;
  ag::Var xf = ag::reshape(x, {n, d});
  ag::Var q = ag::matmul(xf, param(pre + "attn.wq"));
  ag::Var k = ag::matmul(xf, param(pre + "attn.wk"));
  ag::Var v = ag::matmul(xf, param(pre + "attn.wv"));
  ag::Var attn;
  if (cfg_.attn == AttnKind::Tea) {
    ag::Var kimg = ag::reshape(k, {h, w, d});
    ag::Var vimg = ag::reshape(v, {h, w, d});
    /* The rounded lookup has zero derivative in its coordinates, so the
     * offset fields are computed off the tape; their generators receive no
     * gradient either way. */
    const OffsetGen gen_k{param(pre + "attn.offk.dw").value(), param(pre + "attn.offk.pw").value()};
    const OffsetGen gen_v{param(pre + "attn.offv.dw").value(), param(pre + "attn.offv.pw").value()};
    const Tensor coords_k = adaptive_offsets(kimg.value(), gen_k);
    const Tensor coords_v = adaptive_offsets(vimg.value(), gen_v);
    ag::Var ks = ag::gather_hw(kimg, coords_k);
    ag::Var vs = ag::gather_hw(vimg, coords_v);
    auto table = std::make_shared<const WindowTable>(build_window_table(h, w, cfg_.spec));
    ag::Var slide = ag::windowed_attention(q, ag::reshape(ks, {n, d}), ag::reshape(vs, {n, d}),
                                           std::move(table));
    const int gr = cfg_.spec.pool_grid();
    ag::Var kp = ag::reshape(ag::avg_pool_adaptive(ks, gr, gr), {gr * gr, d});
    ag::Var vp = ag::reshape(ag::avg_pool_adaptive(vs, gr, gr), {gr * gr, d});
    ag::Var down = ag::global_attention(q, kp, vp, /*dsa_phase=*/true);
    attn = ag::add(ag::scale_by(slide, param(pre + "attn.alpha_s")),
                   ag::scale_by(down, param(pre + "attn.alpha_d")));
  } else {
    auto table = std::make_shared<const WindowTable>(build_block_table(h, w, cfg_.wa_window));
    attn = ag::windowed_attention(q, k, v, std::move(table));
  }
  ag::Var x1 = ag::add(x, ag::reshape(attn, {h, w, d}));
  ag::Var ff = ag::matmul(ag::reshape(x1, {n, d}), param(pre + "ffn.w1"));
  ff = ag::relu(ff);
  ff = ag::matmul(ff, param(pre + "ffn.w2"));
  return ag::add(x1, ag::reshape(ff, {h, w, d}));
}

ag::Var Model::forward(const ag::Var& img) const {
  const Tensor& t = img.value();
  require(t.rank() == 3 && t.dim(2) == 3, "model: input must be [H x W x 3]");
  const int h = t.dim(0), w = t.dim(1);
  if (cfg_.attn == AttnKind::Tea) {
    cfg_.spec.validate_for(h, w);
  } else {
    require(h % cfg_.wa_window == 0 && w % cfg_.wa_window == 0,
            "model: partition window must divide both image axes");
  }
  require(std::min(h, w) >= cfg_.min_side(),
          "model: input side below minimum " + std::to_string(cfg_.min_side()));

  ag::Var f0 = sep_conv(img, param("shallow.dw"), param("shallow.pw"), h, w);
  ag::Var f = f0;
  for (int g = 0; g < cfg_.n_groups; ++g) {
    ag::Var gin = f;
    for (int b = 0; b < cfg_.n_blocks; ++b) f = block_forward(f, g, b, h, w);
    const std::string gp = "g" + std::to_string(g) + ".conv.";
    f = ag::add(gin, sep_conv(f, param(gp + "dw"), param(gp + "pw"), h, w));
  }
  ag::Var f1 = sep_conv(f, param("deep.dw"), param("deep.pw"), h, w);
  ag::Var fr = ag::add(f0, f1);
  ag::Var head = sep_conv(fr, param("head.dw"), param("head.pw"), h, w);
  if (cfg_.scale == 1) return ag::add(head, img);
  return ag::pixel_shuffle(head, cfg_.scale);
}

Tensor Model::infer(const Tensor& img) const { return forward(ag::Var::leaf(img)).value(); }

ImageOp make_model_op(const Model& m, const std::string& name) {
  ImageOp op;
  op.name = name;
  op.fn = [&m](const Tensor& x) { return m.infer(x); };
  op.output_scale = m.config().scale;
  if (m.config().attn == AttnKind::Tea) {
    op.margin = m.config().margin();
  } else {
    op.global_margin = true;
  }
  return op;
}

int toy_pattern_count() { return 8; }

Tensor toy_pattern(int h, int w, int idx) {
  static const int freq[8][2] = {{1, 0}, {0, 1}, {1, 1}, {2, 1}, {1, 2}, {2, 2}, {3, 1}, {2, 3}};
  require(idx >= 0 && idx < toy_pattern_count(), "toy_pattern: index out of range");
  const double fy = freq[idx][0], fx = freq[idx][1];
  const double tau = 6.283185307179586476925286766559;
  Tensor img({h, w, 3});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double u = tau * (fy * i / h + fx * j / w);
      for (int c = 0; c < 3; ++c) {
        const double phase = tau * c / 3.0;
        img.at(i, j, c) = 0.5 + 0.35 * std::sin(u + phase) + 0.1 * std::cos(2.0 * u);
      }
    }
  return img;
}

ToySample toy_sample(int patch, ToyTask task, double noise_sigma, Rng& rng) {
  const int idx = rng.uniform_int(0, toy_pattern_count() - 1);
  const int dy = rng.uniform_int(0, patch - 1);
  const int dx = rng.uniform_int(0, patch - 1);
  ToySample s;
  s.target = shift_image(toy_pattern(patch, patch, idx), dy, dx, ShiftMode::Cyclic);
  if (task == ToyTask::Identity) {
    s.input = s.target;
  } else {
    s.input = s.target;
    for (std::int64_t i = 0; i < s.input.size(); ++i) s.input[i] += noise_sigma * rng.normal();
  }
  return s;
}

TrainResult train_toy(Model& m, const TrainConfig& tc) {
  require(tc.steps >= 1, "train: steps must be >= 1");
  require(tc.lr >= 0.0, "train: learning rate must be non-negative");
  require(m.config().scale == 1, "train: toy tasks run at scale 1");
  require(tc.patch >= m.config().min_side(), "train: patch below the model's minimum side");
  Rng rng(tc.seed);
  TrainResult r;
  r.losses.reserve(static_cast<std::size_t>(tc.steps));
  for (int step = 0; step < tc.steps; ++step) {
    const ToySample s = toy_sample(tc.patch, tc.task, tc.noise_sigma, rng);
    ag::Var out = m.forward(ag::Var::leaf(s.input));
    ag::Var loss = ag::l1_loss(out, s.target);
    const double l = loss.value()[0];
    r.losses.push_back(l);
    if (!std::isfinite(l)) {
      r.diverged = true;
      r.diverged_step = step;
      return r;
    }
    ag::backward(loss);
    for (auto& [name, p] : m.params()) {
      if (!p.node()->has_grad) continue;
      Tensor& v = p.mutable_value();
      const Tensor& g = p.node()->grad;
      for (std::int64_t i = 0; i < v.size(); ++i) v[i] -= tc.lr * g[i];
    }
  }
  return r;
}

void write_curve(std::ostream& os, const std::vector<double>& losses) {
  os << "step loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    os << i << ' ' << fmt_g17(losses[i]) << '\n';
}

double psnr(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "psnr: shape mismatch");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace teaf
