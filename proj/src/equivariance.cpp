#include "teaf/equivariance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace teaf {

namespace {

int mod(int a, int m) {
  int r = a % m;
  return r < 0 ? r + m : r;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Tensor shift_image(const Tensor& x, int dy, int dx, ShiftMode mode) {
  require(x.rank() == 3, "shift_image: x must be rank 3");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out({h, w, c});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      int sy = i - dy, sx = j - dx;
      if (mode == ShiftMode::Cyclic) {
        sy = mod(sy, h);
        sx = mod(sx, w);
      } else {
        sy = std::clamp(sy, 0, h - 1);
        sx = std::clamp(sx, 0, w - 1);
      }
      for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = x.at(sy, sx, ch);
    }
  }
  return out;
}

MarginInfo serial_margin(const std::vector<ImageOp>& ops) {
  MarginInfo m;
  for (const auto& op : ops) {
    m.margin += op.margin;
    m.global = m.global || op.global_margin;
  }
  return m;
}

MarginInfo parallel_margin(const std::vector<ImageOp>& ops) {
  MarginInfo m;
  for (const auto& op : ops) {
    m.margin = std::max(m.margin, op.margin);
    m.global = m.global || op.global_margin;
  }
  return m;
}

int skv_margin(int w, int s) { return (w - 1) * s / 2; }
int askv_margin(int w, int s, int k) { return (w - 1) * s / 2 + (k - 1) / 2; }

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Exact: return "exact";
    case Verdict::InteriorExact: return "interior-exact";
    case Verdict::Approximate: return "approximate";
    case Verdict::Fail: return "fail";
  }
  return "?";
}

EquivReport audit(const ImageOp& op, const Tensor& x, const std::vector<ShiftOp>& shifts,
                  double tol, int margin) {
  require(x.rank() == 3, "audit: input must be rank 3");
  const int h = x.dim(0), w = x.dim(1);
  const int max_allowed = std::min(h, w) / 4;
  if (!op.global_margin && margin < op.margin)
    throw std::invalid_argument("audit: margin " + std::to_string(margin) +
                                " below operator's declared margin " + std::to_string(op.margin));
  const int r = op.output_scale;
  require(r >= 1, "audit: output_scale must be >= 1");

  EquivReport rep;
  rep.op_name = op.name;
  rep.tol = tol;
  rep.base_margin = margin;
  rep.mode = shifts.empty() ? ShiftMode::Cyclic : shifts.front().mode;

  const Tensor base = op.fn(x);
  require(base.rank() == 3, "audit: operator output must be rank 3");
  require(base.dim(0) == h * r && base.dim(1) == w * r, "audit: output size must be scale*input");

  std::int64_t total = 0, passed = 0;
  double max_dev = 0.0;
  double rms_acc = 0.0;
  std::int64_t rms_n = 0;

  for (const ShiftOp& sh : shifts) {
    if (std::abs(sh.dy) > max_allowed || std::abs(sh.dx) > max_allowed)
      throw std::invalid_argument("audit: shift (" + std::to_string(sh.dy) + "," +
                                  std::to_string(sh.dx) + ") exceeds min(H,W)/4 = " +
                                  std::to_string(max_allowed));
    rep.mode = sh.mode;
    const Tensor shifted_in = shift_image(x, sh.dy, sh.dx, sh.mode);
    const Tensor a = op.fn(shifted_in);
    const Tensor b = shift_image(base, r * sh.dy, r * sh.dx, sh.mode);

    const int my = (margin + std::abs(sh.dy)) * r;
    const int mx = (margin + std::abs(sh.dx)) * r;
    const int y0 = my, y1 = h * r - my;
    const int x0 = mx, x1 = w * r - mx;
    if (y0 >= y1 || x0 >= x1)
      throw std::invalid_argument("audit: empty comparison region for op " + op.name +
                                  " (margin " + std::to_string(margin) + ", shift " +
                                  std::to_string(sh.dy) + "," + std::to_string(sh.dx) + ")");

    ShiftRecord rec;
    rec.dy = sh.dy;
    rec.dx = sh.dx;
    rec.margin = margin + std::max(std::abs(sh.dy), std::abs(sh.dx));
    const int c = base.dim(2);
    double dev_sum = 0.0;
    for (int i = y0; i < y1; ++i) {
      for (int j = x0; j < x1; ++j) {
        for (int ch = 0; ch < c; ++ch) {
          const double dev = std::abs(a.at(i, j, ch) - b.at(i, j, ch));
          dev_sum += dev;
          rec.max_abs_dev = std::max(rec.max_abs_dev, dev);
          ++rec.compared;
          if (dev <= tol) ++rec.passed;
          rms_acc += b.at(i, j, ch) * b.at(i, j, ch);
          ++rms_n;
        }
      }
    }
    rec.mean_abs_dev = rec.compared ? dev_sum / static_cast<double>(rec.compared) : 0.0;
    total += rec.compared;
    passed += rec.passed;
    max_dev = std::max(max_dev, rec.max_abs_dev);
    rep.per_shift.push_back(rec);
  }

  require(total > 0, "audit: no shifts given");
  rep.te_score = static_cast<double>(passed) / static_cast<double>(total);
  rep.max_abs_dev = max_dev;
  rep.output_rms = rms_n ? std::sqrt(rms_acc / static_cast<double>(rms_n)) : 0.0;
  if (rep.te_score == 1.0) {
    rep.verdict = margin == 0 ? Verdict::Exact : Verdict::InteriorExact;
  } else {
    const double rel = max_dev / std::max(rep.output_rms, 1e-300);
    rep.verdict = rel <= kFailRelDev ? Verdict::Approximate : Verdict::Fail;
  }
  return rep;
}

EquivReport audit_composition(const std::vector<ImageOp>& ops, Compose how, const Tensor& x,
                              const std::vector<ShiftOp>& shifts, double tol) {
  require(!ops.empty(), "audit_composition: no operators");
  ImageOp composed;
  MarginInfo mi;
  if (how == Compose::Serial) {
    mi = serial_margin(ops);
    composed.name = ops[0].name;
    int scale = 1;
    for (std::size_t i = 1; i < ops.size(); ++i) composed.name += " . " + ops[i].name;
    for (const auto& op : ops) scale *= op.output_scale;
    composed.output_scale = scale;
    composed.fn = [&ops](const Tensor& in) {
      Tensor t = in;
      for (const auto& op : ops) t = op.fn(t);
      return t;
    };
  } else {
    mi = parallel_margin(ops);
    composed.name = ops[0].name;
    for (std::size_t i = 1; i < ops.size(); ++i) composed.name += " + " + ops[i].name;
    for (const auto& op : ops)
      require(op.output_scale == 1, "audit_composition: parallel ops must preserve size");
    composed.fn = [&ops](const Tensor& in) {
      Tensor acc = ops[0].fn(in);
      for (std::size_t i = 1; i < ops.size(); ++i) {
        const Tensor t = ops[i].fn(in);
        for (std::int64_t j = 0; j < acc.size(); ++j) acc[j] += t[j];
      }
      return acc;
    };
  }
  composed.margin = mi.margin;
  composed.global_margin = mi.global;
  return audit(composed, x, shifts, tol, mi.margin);
}

double te_score_sweep(const ImageOp& op, const Tensor& x, int max_shift, double tol) {
  require(max_shift >= 1, "te_score_sweep: max_shift must be >= 1");
  double acc = 0.0;
  int n = 0;
  for (int dy = 0; dy <= max_shift; ++dy) {
    for (int dx = 0; dx <= max_shift; ++dx) {
      if (dy == 0 && dx == 0) continue;
      EquivReport r = audit(op, x, {ShiftOp{dy, dx, ShiftMode::Cyclic}}, tol,
                            op.global_margin ? 0 : op.margin);
      acc += r.te_score;
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

void write_report_text(std::ostream& os, const EquivReport& r) {
  char buf[256];
  os << "equivariance audit: op=" << r.op_name
     << " mode=" << (r.mode == ShiftMode::Cyclic ? "cyclic" : "crop") << "\n";
  std::snprintf(buf, sizeof buf, "tol=%.17g base_margin=%d", r.tol, r.base_margin);
  os << buf << "\n";
  for (const auto& s : r.per_shift) {
    std::snprintf(buf, sizeof buf,
                  "shift (%+d,%+d)  margin %3d  compared %8lld  max_dev %.17g  mean_dev %.17g",
                  s.dy, s.dx, s.margin, static_cast<long long>(s.compared), s.max_abs_dev,
                  s.mean_abs_dev);
    os << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "te_score=%.17g max_abs_dev=%.17g verdict=%s", r.te_score,
                r.max_abs_dev, verdict_name(r.verdict));
  os << buf << "\n";
}

void write_report_kv(std::ostream& os, const EquivReport& r) {
  char buf[512];
  os << "op=" << r.op_name << "\n";
  os << "mode=" << (r.mode == ShiftMode::Cyclic ? "cyclic" : "crop") << "\n";
  std::snprintf(buf, sizeof buf, "tol=%.17g", r.tol);
  os << buf << "\n";
  os << "base_margin=" << r.base_margin << "\n";
  for (const auto& s : r.per_shift) {
    std::snprintf(buf, sizeof buf,
                  "shift dy=%d dx=%d margin=%d compared=%lld passed=%lld max_abs_dev=%.17g "
                  "mean_abs_dev=%.17g",
                  s.dy, s.dx, s.margin, static_cast<long long>(s.compared),
                  static_cast<long long>(s.passed), s.max_abs_dev, s.mean_abs_dev);
    os << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "te_score=%.17g", r.te_score);
  os << buf << "\n";
  std::snprintf(buf, sizeof buf, "max_abs_dev=%.17g", r.max_abs_dev);
  os << buf << "\n";
  os << "verdict=" << verdict_name(r.verdict) << "\n";
}

std::vector<ShiftOp> all_shifts_upto(int max_shift, ShiftMode mode) {
  std::vector<ShiftOp> out;
  for (int dy = -max_shift; dy <= max_shift; ++dy)
    for (int dx = -max_shift; dx <= max_shift; ++dx) {
      if (dy == 0 && dx == 0) continue;
      out.push_back(ShiftOp{dy, dx, mode});
    }
  return out;
}

}  // namespace teaf
