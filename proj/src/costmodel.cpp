#include "teaf/costmodel.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "teaf/rng.hpp"

namespace teaf {

namespace {

/* All budget arithmetic runs in unsigned 128-bit and is range-checked before
 * narrowing, so absurd configurations fail loudly instead of wrapping. */
std::uint64_t narrow(unsigned __int128 v, const char* what) {
  if (v > static_cast<unsigned __int128>(UINT64_MAX))
    throw std::overflow_error(std::string(what) + ": MAC count exceeds 64 bits");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

std::uint64_t CostBreakdown::total_flops() const {
  return narrow(static_cast<unsigned __int128>(total_macs()) * 2, "total_flops");
}

CostBreakdown analytic_cost(std::uint64_t n, std::uint64_t d, const SlideSpec& spec) {
  spec.validate();
  using u128 = unsigned __int128;
  CostBreakdown c;
  c.qkv_proj = narrow(u128(3) * n * d * d, "qkv_proj");
  c.offset_convs = narrow(u128(2) * n * d * spec.k * spec.k, "offset_convs");
  c.attn_map = narrow(u128(n) * spec.w * spec.w * d, "attn_map");
  c.reweight = narrow(u128(n) * spec.w * spec.w * d, "reweight");
  c.dsa = narrow(u128(2) * n * spec.n_d * d, "dsa");
  narrow(u128(c.qkv_proj) + c.offset_convs + c.attn_map + c.reweight + c.dsa, "total");
  return c;
}

std::uint64_t analytic_sa_score(std::uint64_t n, std::uint64_t d) {
  return narrow(static_cast<unsigned __int128>(n) * n * d, "sa_score");
}

namespace {

MeasuredCost from_counter(const MacCounter& c) {
  MeasuredCost m;
  m.macs.qkv_proj = c.macs(Phase::QkvProj);
  m.macs.offset_convs = c.macs(Phase::OffsetConv);
  m.macs.attn_map = c.macs(Phase::AttnMap);
  m.macs.reweight = c.macs(Phase::Reweight);
  m.macs.dsa = c.macs(Phase::Dsa);
  m.offset_reduce = c.macs(Phase::OffsetReduce);
  m.aux = c.aux();
  return m;
}

}  // namespace

MeasuredCost measured_cost_tea(int h, int w, int d, const SlideSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x = rng.normal_tensor({h, w, d});
  AttnParams p = init_attn_params(d, spec, rng, 0.2, 0.02);
  MacCounter counter;
  {
    CountingScope cs(counter);
    tea(x, p, spec);
  }
  return from_counter(counter);
}

MeasuredCost measured_cost_skv(int h, int w, int d, const SlideSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x = rng.normal_tensor({h, w, d});
  AttnParams p = init_attn_params(d, spec, rng);
  MacCounter counter;
  {
    CountingScope cs(counter);
    skv_sa(x, p, spec);
  }
  return from_counter(counter);
}

MeasuredSa measured_cost_sa(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x = rng.normal_tensor({n, d});
  SlideSpec dummy;
  AttnParams p = init_attn_params(d, dummy, rng);
  MacCounter counter;
  {
    CountingScope cs(counter);
    self_attention(x, p);
  }
  MeasuredSa m;
  m.attn_map = counter.macs(Phase::AttnMap);
  m.reweight = counter.macs(Phase::Reweight);
  m.qkv_proj = counter.macs(Phase::QkvProj);
  return m;
}

std::vector<ScalingRow> scaling_report(CostOp op, const std::vector<int>& sides, int d,
                                       const SlideSpec& spec, std::uint64_t seed) {
  std::vector<ScalingRow> rows;
  for (int side : sides) {
    ScalingRow r;
    r.n = static_cast<std::uint64_t>(side) * side;
    if (op == CostOp::Sa) {
      MeasuredSa m = measured_cost_sa(side * side, d, seed);
      r.macs = m.attn_map;
      r.total_macs = m.qkv_proj + m.attn_map + m.reweight;
    } else {
      MeasuredCost m = op == CostOp::Tea ? measured_cost_tea(side, side, d, spec, seed)
                                         : measured_cost_skv(side, side, d, spec, seed);
      r.macs = m.macs.non_projection();
      r.total_macs = m.macs.total_macs();
    }
    if (!rows.empty() && rows.back().macs > 0)
      r.ratio = static_cast<double>(r.macs) / static_cast<double>(rows.back().macs);
    rows.push_back(r);
  }
  return rows;
}

namespace {

void emit_row(std::ostream& os, const char* name, std::uint64_t analytic, const std::uint64_t* got) {
  char buf[160];
  if (got) {
    std::snprintf(buf, sizeof buf, "%-14s %16llu %16llu %s", name,
                  static_cast<unsigned long long>(analytic), static_cast<unsigned long long>(*got),
                  analytic == *got ? "exact" : "MISMATCH");
  } else {
    std::snprintf(buf, sizeof buf, "%-14s %16llu", name, static_cast<unsigned long long>(analytic));
  }
  os << buf << "\n";
}

}  // namespace

void write_cost_text(std::ostream& os, const std::string& title, const CostBreakdown& analytic,
                     const MeasuredCost* measured) {
  os << "cost model: " << title << "\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %16s %16s %s", "term", "analytic_macs",
                measured ? "measured_macs" : "", measured ? "match" : "");
  os << buf << "\n";
  emit_row(os, "qkv_proj", analytic.qkv_proj, measured ? &measured->macs.qkv_proj : nullptr);
  emit_row(os, "offset_convs", analytic.offset_convs,
           measured ? &measured->macs.offset_convs : nullptr);
  emit_row(os, "attn_map", analytic.attn_map, measured ? &measured->macs.attn_map : nullptr);
  emit_row(os, "reweight", analytic.reweight, measured ? &measured->macs.reweight : nullptr);
  emit_row(os, "dsa", analytic.dsa, measured ? &measured->macs.dsa : nullptr);
  const std::uint64_t measured_total = measured ? measured->macs.total_macs() : 0;
  emit_row(os, "total", analytic.total_macs(), measured ? &measured_total : nullptr);
  std::snprintf(buf, sizeof buf, "%-14s %16llu", "total_flops",
                static_cast<unsigned long long>(analytic.total_flops()));
  os << buf << "\n";
  if (measured) {
    os << "outside the budget (measured, excluded from the model):\n";
    std::snprintf(buf, sizeof buf, "  %-20s %16llu", "offset_reduce_macs",
                  static_cast<unsigned long long>(measured->offset_reduce));
    os << buf << "\n";
    for (const auto& [tag, n] : measured->aux) {
      std::snprintf(buf, sizeof buf, "  %-20s %16llu", tag.c_str(),
                    static_cast<unsigned long long>(n));
      os << buf << "\n";
    }
  }
}

void write_cost_csv(std::ostream& os, const std::string& title, const CostBreakdown& analytic,
                    const MeasuredCost* measured) {
  os << "title,term,analytic_macs" << (measured ? ",measured_macs,match" : "") << "\n";
  auto row = [&](const char* name, std::uint64_t a, const std::uint64_t* g) {
    os << title << "," << name << "," << a;
    if (measured && g) os << "," << *g << "," << (a == *g ? "exact" : "mismatch");
    os << "\n";
  };
  row("qkv_proj", analytic.qkv_proj, measured ? &measured->macs.qkv_proj : nullptr);
  row("offset_convs", analytic.offset_convs, measured ? &measured->macs.offset_convs : nullptr);
  row("attn_map", analytic.attn_map, measured ? &measured->macs.attn_map : nullptr);
  row("reweight", analytic.reweight, measured ? &measured->macs.reweight : nullptr);
  row("dsa", analytic.dsa, measured ? &measured->macs.dsa : nullptr);
  os << title << ",total," << analytic.total_macs();
  if (measured) {
    const std::uint64_t mt = measured->macs.total_macs();
    os << "," << mt << "," << (analytic.total_macs() == mt ? "exact" : "mismatch");
  }
  os << "\n";
}

void write_scaling_text(std::ostream& os, CostOp op, const std::vector<ScalingRow>& rows) {
  const char* name = op == CostOp::Sa ? "self-attention (score phase)"
                     : op == CostOp::Tea ? "two-branch attention (non-projection)"
                                         : "sliding attention (non-projection)";
  os << "scaling: " << name << "\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%12s %18s %18s %10s", "N", "basis_macs", "total_macs", "ratio");
  os << buf << "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%12llu %18llu %18llu %10.4f",
                  static_cast<unsigned long long>(r.n), static_cast<unsigned long long>(r.macs),
                  static_cast<unsigned long long>(r.total_macs), r.ratio);
    os << buf << "\n";
  }
}

std::uint64_t per_token_nonproj_macs(std::uint64_t d, const SlideSpec& spec) {
  using u128 = unsigned __int128;
  return narrow(u128(2) * d * (u128(spec.k) * spec.k + u128(spec.w) * spec.w + spec.n_d),
                "per_token_nonproj");
}

std::uint64_t per_token_window_attention_macs(std::uint64_t d, int win) {
  return narrow(static_cast<unsigned __int128>(2) * d * win * win, "per_token_window");
}

}  // namespace teaf
