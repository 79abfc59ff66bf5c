#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "teaf/tensor.hpp"

namespace teaf {

enum class ShiftMode { Cyclic, Crop };

struct ShiftOp {
  int dy = 0;
  int dx = 0;
  ShiftMode mode = ShiftMode::Cyclic;
};

/* Cyclic: out[h,w] = x[(h-dy) mod H, (w-dx) mod W].
 * Crop: same relocation but pixels with out-of-range sources are filled by
 * edge replication; callers exclude the invalid band from comparisons. */
Tensor shift_image(const Tensor& x, int dy, int dx, ShiftMode mode);

/* An auditable image-to-image operator together with its equivariance
 * certificate. `margin` is the boundary band (in input pixels) inside which
 * the operator's edge handling may deviate from pure translation;
 * global_margin marks operators whose output everywhere depends on the whole
 * image, for which no finite margin certifies all shifts. output_scale r
 * means an input shift (dy,dx) must appear as an output shift (r dy, r dx). */
struct ImageOp {
  std::string name;
  std::function<Tensor(const Tensor&)> fn;
  int margin = 0;
  bool global_margin = false;
  int output_scale = 1;
};

/* Margin calculus: serial composition adds margins, parallel (summed-output)
 * composition takes the max; a global-margin stage makes the result global. */
struct MarginInfo {
  int margin = 0;
  bool global = false;
};
MarginInfo serial_margin(const std::vector<ImageOp>& ops);
MarginInfo parallel_margin(const std::vector<ImageOp>& ops);

/* Sliding-window family margins. The sliding branch reaches
 * (w-1)*s/2 taps from the query; the offset generator adds (k-1)/2. */
int skv_margin(int w, int s);
int askv_margin(int w, int s, int k);

struct ShiftRecord {
  int dy = 0, dx = 0;
  int margin = 0;  /* input-space margin actually applied (incl. |shift|) */
  std::int64_t compared = 0, passed = 0;
  double max_abs_dev = 0.0;
  double mean_abs_dev = 0.0;
};

enum class Verdict { Exact, InteriorExact, Approximate, Fail };

const char* verdict_name(Verdict v);

/* te_score is the fraction of compared pixels within tol across all shifts;
 * te_score == 1 exactly when the verdict is Exact or InteriorExact. When
 * some pixels deviate, the split between Approximate and Fail is by the
 * worst deviation relative to the output RMS (kFailRelDev). */
struct EquivReport {
  std::string op_name;
  ShiftMode mode = ShiftMode::Cyclic;
  double tol = 0.0;
  int base_margin = 0;
  double te_score = 0.0;
  double max_abs_dev = 0.0;
  double output_rms = 0.0;
  Verdict verdict = Verdict::Fail;
  std::vector<ShiftRecord> per_shift;
};

inline constexpr double kFailRelDev = 0.1;

/* Compares op(shift(x)) against shift(op(x)) on the interior shrunk by
 * (margin + |shift|) per axis (scaled by output_scale on the output side).
 * Preconditions: margin >= op.margin unless the op declares a global margin;
 * |dy|,|dx| <= min(H,W)/4; the comparison region must be non-empty. */
EquivReport audit(const ImageOp& op, const Tensor& x, const std::vector<ShiftOp>& shifts,
                  double tol, int margin);

enum class Compose { Serial, Parallel };

/* Audits the serial chain or the summed parallel bundle of ops, with the
 * margin derived by the margin calculus. Parallel composition requires all
 * ops to preserve shape (output_scale 1). */
EquivReport audit_composition(const std::vector<ImageOp>& ops, Compose how, const Tensor& x,
                              const std::vector<ShiftOp>& shifts, double tol);

/* Mean per-shift pass fraction over all cyclic shifts
 * (dy,dx) in [0,max_shift]^2 minus (0,0). */
double te_score_sweep(const ImageOp& op, const Tensor& x, int max_shift, double tol);

/* Line-oriented human-readable report. */
void write_report_text(std::ostream& os, const EquivReport& r);
/* One key=value record line per shift, preceded by header records. */
void write_report_kv(std::ostream& os, const EquivReport& r);

std::vector<ShiftOp> all_shifts_upto(int max_shift, ShiftMode mode);

}  // namespace teaf
