#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "teaf/attention.hpp"
#include "teaf/costmodel.hpp"
#include "teaf/equivariance.hpp"
#include "teaf/io.hpp"
#include "teaf/model.hpp"
#include "teaf/ops.hpp"
#include "teaf/reference.hpp"
#include "teaf/rng.hpp"
#include "teaf/selfcheck.hpp"

namespace {

using namespace teaf;

std::vector<int> parse_int_list(const std::string& s, char sep, const char* what) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error(std::string(what) + ": cannot parse integer '" + item + "' in '" +
                               s + "'");
    }
  }
  if (out.empty()) throw std::runtime_error(std::string(what) + ": empty list");
  return out;
}

void parse_size(const std::string& s, int& h, int& w, int& d, int default_d) {
  const std::vector<int> v = parse_int_list(s, 'x', "--size");
  if (v.size() == 2) {
    h = v[0];
    w = v[1];
    d = default_d;
  } else if (v.size() == 3) {
    h = v[0];
    w = v[1];
    d = v[2];
  } else {
    throw std::runtime_error("--size: expected HxW or HxWxD, got '" + s + "'");
  }
}

SlideSpec parse_spec(const std::string& s) {
  const std::vector<int> v = parse_int_list(s, ',', "--spec");
  if (v.size() != 4) throw std::runtime_error("--spec: expected w,s,k,n_d, got '" + s + "'");
  SlideSpec spec{v[0], v[1], v[2], v[3]};
  spec.validate();
  return spec;
}

std::vector<ShiftOp> parse_shifts(const std::string& s, ShiftMode mode) {
  std::vector<ShiftOp> out;
  std::string pair;
  std::istringstream is(s);
  while (std::getline(is, pair, ';')) {
    const std::vector<int> v = parse_int_list(pair, ',', "--shifts");
    if (v.size() != 2)
      throw std::runtime_error("--shifts: expected dy,dx pairs separated by ';', got '" + s + "'");
    out.push_back({v[0], v[1], mode});
  }
  if (out.empty()) throw std::runtime_error("--shifts: empty list");
  return out;
}

void print_header(const char* cmd, std::uint64_t seed) {
  std::cout << "tea " << cmd << "  rng=" << Rng::algorithm() << " seed=" << seed << "\n";
}

struct AuditArgs {
  std::string op = "tea";
  std::string size = "24x24x4";
  std::string shifts;
  int sweep = 0;
  double tol = 1e-10;
  std::uint64_t seed = 1;
  std::string spec = "7,1,3,16";
  std::string mode = "cyclic";
  int margin = -1;
  int dim = 16, groups = 1, blocks = 1;
  int wa_window = 8;
  std::string out;
  bool kv = false;
};

int run_audit(const AuditArgs& a) {
  print_header("audit", a.seed);
  const ShiftMode mode = a.mode == "crop" ? ShiftMode::Crop : ShiftMode::Cyclic;
  int h = 0, w = 0, d = 0;
  parse_size(a.size, h, w, d, a.op == "model" || a.op == "model-wa" ? 3 : 4);
  const SlideSpec spec = parse_spec(a.spec);
  Rng rng(a.seed);

  /* keep every parameter bundle alive for the duration of the audit */
  AttnParams p;
  Tensor kern, bias;
  std::unique_ptr<Model> model;
  ImageOp op;

  Tensor x;
  if (a.op == "model" || a.op == "model-wa") {
    if (d != 3) throw std::runtime_error("--op " + a.op + ": input depth must be 3");
    ModelConfig cfg;
    cfg.d = a.dim;
    cfg.n_groups = a.groups;
    cfg.n_blocks = a.blocks;
    cfg.spec = spec;
    cfg.attn = a.op == "model-wa" ? AttnKind::Wa : AttnKind::Tea;
    cfg.wa_window = a.wa_window;
    model = std::make_unique<Model>(cfg, a.seed);
    op = make_model_op(*model, a.op);
    x = rng.uniform_tensor({h, w, 3});
  } else {
    x = rng.normal_tensor({h, w, d}, 0.0, 1.0);
    if (a.op == "conv") {
      kern = rng.normal_tensor({3, 3, d}, 0.0, 0.5);
      op = {"conv3x3",
            [kern](const Tensor& t) { return conv2d_depthwise(t, kern, PadMode::Replicate); }, 1,
            false, 1};
    } else if (a.op == "sa" || a.op == "sa+abs-pos") {
      p = init_attn_params(d, spec, rng, 0.3, 0.0);
      const bool use_bias = a.op == "sa+abs-pos";
      if (use_bias) bias = rng.normal_tensor({h * w, d}, 0.0, 1.0);
      op = {a.op,
            [p, bias, use_bias](const Tensor& t) {
              const int n = t.dim(0) * t.dim(1);
              const Tensor flat = t.reshaped({n, t.dim(2)});
              const Tensor o =
                  use_bias ? self_attention_abs_pos(flat, p, bias) : self_attention(flat, p);
              return o.reshaped(t.shape());
            },
            0, true, 1};
    } else if (a.op == "skvsa") {
      p = init_attn_params(d, spec, rng, 0.2, 0.0);
      op = {"skvsa", [p, spec](const Tensor& t) { return skv_sa(t, p, spec); },
            skv_margin(spec.w, spec.s), false, 1};
    } else if (a.op == "askvsa") {
      p = init_attn_params(d, spec, rng, 0.2, 0.3);
      const int dm = max_sample_displacement(x, p, spec);
      op = {"askvsa", [p, spec](const Tensor& t) { return askv_sa(t, p, spec).out; },
            skv_margin(spec.w, spec.s) + std::max((spec.k - 1) / 2, dm), false, 1};
    } else if (a.op == "dsa") {
      p = init_attn_params(d, spec, rng, 0.3, 0.0);
      op = {"dsa",
            [p, spec](const Tensor& t) {
              const int n = t.dim(0) * t.dim(1);
              const Tensor kf = linear_project(t.reshaped({n, t.dim(2)}), p.w_k).reshaped(t.shape());
              const Tensor vf = linear_project(t.reshaped({n, t.dim(2)}), p.w_v).reshaped(t.shape());
              return dsa(t, kf, vf, p, spec);
            },
            0, true, 1};
    } else if (a.op == "tea") {
      p = init_attn_params(d, spec, rng, 0.2, 0.3);
      const int dm = max_sample_displacement(x, p, spec);
      op = {"tea", [p, spec](const Tensor& t) { return tea(t, p, spec); },
            skv_margin(spec.w, spec.s) + std::max((spec.k - 1) / 2, dm), false, 1};
    } else {
      throw std::runtime_error("--op: unknown operator '" + a.op + "'");
    }
  }

  std::vector<ShiftOp> shifts;
  if (a.sweep > 0)
    shifts = all_shifts_upto(a.sweep, mode);
  else if (!a.shifts.empty())
    shifts = parse_shifts(a.shifts, mode);
  else
    throw std::runtime_error("audit: provide --shifts or --sweep");

  const int margin = a.margin >= 0 ? a.margin : op.margin;
  const EquivReport r = audit(op, x, shifts, a.tol, margin);

  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw std::runtime_error("cannot open: " + a.out);
    if (a.kv)
      write_report_kv(os, r);
    else
      write_report_text(os, r);
    std::cout << "wrote report: " << a.out << "\n";
  }
  if (a.kv && a.out.empty())
    write_report_kv(std::cout, r);
  else
    write_report_text(std::cout, r);

  const bool pass = r.verdict == Verdict::Exact || r.verdict == Verdict::InteriorExact;
  std::cout << "audit: " << (pass ? "PASS" : "FAIL") << " (" << verdict_name(r.verdict) << ")\n";
  return pass ? 0 : 1;
}

struct OracleArgs {
  std::string op = "all";
  int cases = 100;
  double tol = 1e-12;
  std::uint64_t seed = 1;
};

int run_oracle(const OracleArgs& a) {
  print_header("oracle", a.seed);
  std::vector<std::string> ops;
  if (a.op == "all")
    ops = ref::oracle_ops();
  else
    ops = {a.op};
  int failures = 0;
  for (const std::string& op : ops) {
    const ref::OracleResult r = ref::run_oracle(op, a.cases, a.seed);
    const bool ok = r.max_rel_err <= a.tol;
    if (!ok) ++failures;
    std::cout << (ok ? "ok   " : "FAIL ") << op << "  cases=" << r.cases
              << " max_rel_err=" << fmt_g17(r.max_rel_err) << " tol=" << fmt_g17(a.tol) << "\n";
  }
  std::cout << "oracle: " << (failures == 0 ? "PASS" : "FAIL") << "\n";
  return failures == 0 ? 0 : 1;
}

struct FlopsArgs {
  std::string op = "tea";
  std::string sizes = "16,32,64";
  int dim = 8;
  std::string spec = "7,2,3,16";
  std::uint64_t seed = 1;
  int wa_window = 16;
  bool csv = false;
  std::string out;
};

int run_flops(const FlopsArgs& a) {
  print_header("flops", a.seed);
  const SlideSpec spec = parse_spec(a.spec);
  const std::vector<int> sides = parse_int_list(a.sizes, ',', "--sizes");
  const CostOp cop = a.op == "sa" ? CostOp::Sa : a.op == "skvsa" ? CostOp::Skv : CostOp::Tea;

  std::ostringstream body;
  int mismatches = 0;
  for (int side : sides) {
    const std::uint64_t n = static_cast<std::uint64_t>(side) * side;
    const std::string title = a.op + " " + std::to_string(side) + "x" + std::to_string(side) +
                              "x" + std::to_string(a.dim);
    if (cop == CostOp::Sa) {
      const MeasuredSa m = measured_cost_sa(static_cast<int>(n), a.dim, a.seed);
      const std::uint64_t score = analytic_sa_score(n, a.dim);
      body << title << "\n"
           << "  phase        analytic     measured\n"
           << "  qkv_proj     " << 3 * n * a.dim * a.dim << "  " << m.qkv_proj << "\n"
           << "  attn_map     " << score << "  " << m.attn_map << "\n"
           << "  reweight     " << score << "  " << m.reweight << "\n";
      if (m.attn_map != score || m.reweight != score || m.qkv_proj != 3 * n * a.dim * a.dim)
        ++mismatches;
    } else {
      const CostBreakdown an = analytic_cost(n, a.dim, spec);
      const MeasuredCost m = cop == CostOp::Tea
                                 ? measured_cost_tea(side, side, a.dim, spec, a.seed)
                                 : measured_cost_skv(side, side, a.dim, spec, a.seed);
      if (a.csv)
        write_cost_csv(body, title, an, &m);
      else
        write_cost_text(body, title, an, &m);
      if (cop == CostOp::Tea &&
          (m.macs.qkv_proj != an.qkv_proj || m.macs.offset_convs != an.offset_convs ||
           m.macs.attn_map != an.attn_map || m.macs.reweight != an.reweight ||
           m.macs.dsa != an.dsa))
        ++mismatches;
    }
  }
  const std::vector<ScalingRow> rows = scaling_report(cop, sides, a.dim, spec, a.seed);
  if (a.csv) {
    body << "scaling,n,macs,total_macs,ratio\n";
    for (const ScalingRow& r : rows)
      body << "scaling," << r.n << "," << r.macs << "," << r.total_macs << ","
           << fmt_g17(r.ratio) << "\n";
  } else {
    write_scaling_text(body, cop, rows);
  }
  if (cop == CostOp::Tea) {
    const std::uint64_t ours = per_token_nonproj_macs(a.dim, spec);
    const std::uint64_t wa = per_token_window_attention_macs(a.dim, a.wa_window);
    body << "per-token non-projection macs: ours=" << ours << " window" << a.wa_window << "="
         << wa << "\n";
  }

  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw std::runtime_error("cannot open: " + a.out);
    os << body.str();
    std::cout << "wrote: " << a.out << "\n";
  } else {
    std::cout << body.str();
  }
  std::cout << "flops: " << (mismatches == 0 ? "PASS" : "FAIL")
            << " (measured vs analytic mismatches: " << mismatches << ")\n";
  return mismatches == 0 ? 0 : 1;
}

struct TrainArgs {
  std::string variant = "tea";
  int steps = 500;
  std::uint64_t seed = 1;
  std::string out, curve;
  std::string task = "denoise";
  double lr = 1e-3;
  int patch = 24;
  int dim = 16, groups = 1, blocks = 2;
  std::string spec = "7,2,3,16";
  int wa_window = 8;
  double noise = 0.25;
};

int run_train(const TrainArgs& a) {
  print_header("train-toy", a.seed);
  ModelConfig cfg;
  cfg.d = a.dim;
  cfg.n_groups = a.groups;
  cfg.n_blocks = a.blocks;
  cfg.spec = parse_spec(a.spec);
  cfg.attn = a.variant == "wa" ? AttnKind::Wa : AttnKind::Tea;
  cfg.wa_window = a.wa_window;
  cfg.validate();

  TrainConfig tc;
  tc.steps = a.steps;
  tc.lr = a.lr;
  tc.patch = a.patch;
  tc.seed = a.seed;
  tc.task = a.task == "identity" ? ToyTask::Identity : ToyTask::DenoiseShift;
  tc.noise_sigma = a.noise;

  Model m(cfg, a.seed);
  std::cout << "variant=" << a.variant << " d=" << cfg.d << " groups=" << cfg.n_groups
            << " blocks=" << cfg.n_blocks << " spec=" << cfg.spec.w << "," << cfg.spec.s << ","
            << cfg.spec.k << "," << cfg.spec.n_d << " task=" << a.task
            << " noise=" << fmt_g17(a.noise) << " lr=" << fmt_g17(a.lr) << " patch=" << a.patch
            << " steps=" << a.steps << "\n";
  std::cout << "params=" << m.param_count() << "\n";

  const TrainResult r = train_toy(m, tc);
  const int stride = std::max(1, a.steps / 10);
  for (int i = 0; i < static_cast<int>(r.losses.size()); ++i)
    if (i % stride == 0 || i + 1 == static_cast<int>(r.losses.size()))
      std::cout << "step " << i << " loss " << fmt_g17(r.losses[i]) << "\n";
  if (r.diverged) {
    std::cout << "train-toy: FAIL (non-finite loss at step " << r.diverged_step << ")\n";
    return 1;
  }
  std::cout << "final_loss=" << fmt_g17(r.final_loss()) << "\n";

  if (!a.curve.empty()) {
    std::ofstream os(a.curve);
    if (!os) throw std::runtime_error("cannot open: " + a.curve);
    write_curve(os, r.losses);
    std::cout << "wrote curve: " << a.curve << "\n";
  }
  if (!a.out.empty()) {
    write_checkpoint(a.out, m.to_checkpoint());
    std::cout << "wrote checkpoint: " << a.out << "\n";
  }
  std::cout << "train-toy: PASS\n";
  return 0;
}

struct InferArgs {
  std::string ckpt, in, out;
  int audit_shifts = 0;
  double tol = 1e-6;
};

int run_infer(const InferArgs& a) {
  const Checkpoint ck = read_checkpoint(a.ckpt);
  const Model m(ck);
  const ModelConfig& cfg = m.config();
  std::cout << "tea infer\n";
  std::cout << "config: " << encode_kv(cfg.to_kv());

  Tensor img = read_pnm(a.in);
  const bool gray = img.dim(2) == 1;
  std::cout << "input: " << img.dim(0) << "x" << img.dim(1) << "x" << img.dim(2) << "\n";
  Tensor rgb = gray ? Tensor({img.dim(0), img.dim(1), 3}) : img;
  if (gray)
    for (int i = 0; i < img.dim(0); ++i)
      for (int j = 0; j < img.dim(1); ++j)
        for (int c = 0; c < 3; ++c) rgb.at(i, j, c) = img.at(i, j, 0);

  const Tensor out = m.infer(rgb);
  Tensor final = out;
  if (gray) {
    final = Tensor({out.dim(0), out.dim(1), 1});
    for (int i = 0; i < out.dim(0); ++i)
      for (int j = 0; j < out.dim(1); ++j)
        final.at(i, j, 0) = (out.at(i, j, 0) + out.at(i, j, 1) + out.at(i, j, 2)) / 3.0;
  }
  if (cfg.scale == 1) std::cout << "psnr_db=" << fmt_g17(psnr(final, img)) << "\n";
  write_pnm(a.out, final);
  std::cout << "wrote: " << a.out << "\n";

  if (a.audit_shifts > 0) {
    const ImageOp op = make_model_op(m, cfg.attn == AttnKind::Tea ? "model" : "model-wa");
    const EquivReport r =
        audit(op, rgb, all_shifts_upto(a.audit_shifts, ShiftMode::Cyclic), a.tol, op.margin);
    write_report_text(std::cout, r);
    const bool pass = r.verdict == Verdict::Exact || r.verdict == Verdict::InteriorExact;
    std::cout << "infer audit: " << (pass ? "PASS" : "FAIL") << " ("
              << verdict_name(r.verdict) << ")\n";
    if (!pass) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"translation-equivariant attention toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (compute is sequential)")
      ->check(CLI::PositiveNumber);

  AuditArgs aa;
  CLI::App* aud = app.add_subcommand("audit", "translation-equivariance audit of one operator");
  aud->add_option("--op", aa.op, "operator under audit")
      ->check(CLI::IsMember(
          {"conv", "sa", "sa+abs-pos", "skvsa", "askvsa", "dsa", "tea", "model", "model-wa"}));
  aud->add_option("--size", aa.size, "input size HxW or HxWxD");
  aud->add_option("--shifts", aa.shifts, "semicolon-separated dy,dx pairs");
  aud->add_option("--sweep", aa.sweep, "audit all shifts in [0,M]^2 minus the origin")
      ->check(CLI::PositiveNumber);
  aud->add_option("--tol", aa.tol,
                  "per-pixel deviation tolerance (default 1e-10; model ops default 1e-6, "
                  "covering the boundary leak through the all-token pooled branch)");
  aud->add_option("--seed", aa.seed, "rng seed");
  aud->add_option("--spec", aa.spec, "window spec w,s,k,n_d");
  aud->add_option("--mode", aa.mode, "shift mode")->check(CLI::IsMember({"cyclic", "crop"}));
  aud->add_option("--margin", aa.margin, "override audit margin (must cover the operator's)");
  aud->add_option("--dim", aa.dim, "model channel width (model ops)");
  aud->add_option("--groups", aa.groups, "model group count (model ops)");
  aud->add_option("--blocks", aa.blocks, "model blocks per group (model ops)");
  aud->add_option("--wa-window", aa.wa_window, "fixed partition side (model-wa)");
  aud->add_option("--out", aa.out, "write the report to this file");
  aud->add_flag("--kv", aa.kv, "machine-readable key=value report");

  OracleArgs oa;
  CLI::App* orc = app.add_subcommand("oracle", "brute-force reference comparison");
  orc->add_option("--op", oa.op, "operator or 'all'")
      ->check(CLI::IsMember({"sa", "skvsa", "askvsa", "dsa", "tea", "all"}));
  orc->add_option("--cases", oa.cases, "randomized cases per operator")
      ->check(CLI::PositiveNumber);
  orc->add_option("--tol", oa.tol, "max relative error accepted");
  orc->add_option("--seed", oa.seed, "rng seed");

  FlopsArgs fa;
  CLI::App* flp = app.add_subcommand("flops", "analytic vs measured cost model");
  flp->add_option("--op", fa.op, "costed operator")->check(CLI::IsMember({"sa", "skvsa", "tea"}));
  flp->add_option("--sizes", fa.sizes, "comma-separated square sides");
  flp->add_option("--dim", fa.dim, "channel width");
  flp->add_option("--spec", fa.spec, "window spec w,s,k,n_d");
  flp->add_option("--seed", fa.seed, "rng seed");
  flp->add_option("--wa-window", fa.wa_window, "window side for the per-token comparison");
  flp->add_flag("--csv", fa.csv, "csv output");
  flp->add_option("--out", fa.out, "write tables to this file");

  TrainArgs ta;
  CLI::App* trn = app.add_subcommand("train-toy", "desk-scale restoration training");
  trn->add_option("--variant", ta.variant, "attention variant")
      ->check(CLI::IsMember({"tea", "wa"}));
  trn->add_option("--steps", ta.steps, "gradient steps")->check(CLI::PositiveNumber);
  trn->add_option("--seed", ta.seed, "rng seed");
  trn->add_option("--out", ta.out, "checkpoint output path");
  trn->add_option("--curve", ta.curve, "loss curve output path");
  trn->add_option("--task", ta.task, "training task")
      ->check(CLI::IsMember({"denoise", "identity"}));
  trn->add_option("--lr", ta.lr, "learning rate");
  trn->add_option("--patch", ta.patch, "training patch side");
  trn->add_option("--dim", ta.dim, "channel width");
  trn->add_option("--groups", ta.groups, "attention group count");
  trn->add_option("--blocks", ta.blocks, "blocks per group");
  trn->add_option("--spec", ta.spec, "window spec w,s,k,n_d");
  trn->add_option("--wa-window", ta.wa_window, "fixed partition side (wa variant)");
  trn->add_option("--noise", ta.noise, "denoise task noise sigma");

  InferArgs ia;
  CLI::App* inf = app.add_subcommand("infer", "run a checkpoint on a PGM/PPM image");
  inf->add_option("--ckpt", ia.ckpt, "checkpoint path")->required();
  inf->add_option("--in", ia.in, "input image (P5 or P6)")->required();
  inf->add_option("--out", ia.out, "output image path")->required();
  inf->add_option("--audit-shifts", ia.audit_shifts,
                  "after inference, audit the model on the input over [0,M]^2 shifts");
  inf->add_option("--tol", ia.tol, "audit tolerance");

  SelfcheckOptions sa;
  CLI::App* slf = app.add_subcommand("selftest", "run the built-in check battery");
  slf->add_option("--seed", sa.seed, "rng seed");
  slf->add_flag("--inject-bug", sa.inject_bug)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (threads > 1)
    std::cerr << "note: --threads " << threads
              << " requested; this build computes sequentially for bit-stable results\n";

  if (aud->parsed() && aud->count("--tol") == 0 && (aa.op == "model" || aa.op == "model-wa"))
    aa.tol = 1e-6;

  try {
    if (aud->parsed()) return run_audit(aa);
    if (orc->parsed()) return run_oracle(oa);
    if (flp->parsed()) return run_flops(fa);
    if (trn->parsed()) return run_train(ta);
    if (inf->parsed()) return run_infer(ia);
    if (slf->parsed()) {
      print_header("selftest", sa.seed);
      return run_selfcheck(std::cout, sa) == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
