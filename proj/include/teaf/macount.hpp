#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

namespace teaf {

/* Instrumentation phases for multiply-accumulate counting. Ops add MACs to
 * whatever phase is active; callers pick the phase with a PhaseScope so the
 * same primitive can be attributed to different budget lines. */
enum class Phase : int {
  QkvProj = 0,
  OffsetConv,
  OffsetReduce,
  AttnMap,
  Reweight,
  Dsa,
  Other,
  kCount,
};

const char* phase_name(Phase p);

/* Accumulates MAC counts per phase plus auxiliary (non-MAC) operation tallies
 * such as softmax exponentials and pooling additions. Counts only grow while
 * a counter is installed. Counting runs are single-threaded by contract; the
 * active counter is thread-local so concurrent non-counting work elsewhere
 * cannot corrupt a measurement. */
class MacCounter {
 public:
  void add(Phase p, std::uint64_t macs) { macs_[static_cast<int>(p)] += macs; }
  void add_aux(const std::string& tag, std::uint64_t n) { aux_[tag] += n; }

  std::uint64_t macs(Phase p) const { return macs_[static_cast<int>(p)]; }
  std::uint64_t total_macs() const {
    std::uint64_t t = 0;
    for (auto v : macs_) t += v;
    return t;
  }
  const std::map<std::string, std::uint64_t>& aux() const { return aux_; }

  void reset() {
    macs_.fill(0);
    aux_.clear();
  }

 private:
  std::array<std::uint64_t, static_cast<int>(Phase::kCount)> macs_{};
  std::map<std::string, std::uint64_t> aux_;
};

namespace macdetail {
MacCounter*& current_counter();
Phase& current_phase();
}  // namespace macdetail

inline void count_macs(std::uint64_t n) {
  if (MacCounter* c = macdetail::current_counter()) c->add(macdetail::current_phase(), n);
}

inline void count_aux(const char* tag, std::uint64_t n) {
  if (MacCounter* c = macdetail::current_counter()) c->add_aux(tag, n);
}

/* Installs a counter for the lifetime of the scope. */
class CountingScope {
 public:
  explicit CountingScope(MacCounter& c) : prev_(macdetail::current_counter()) {
    macdetail::current_counter() = &c;
  }
  ~CountingScope() { macdetail::current_counter() = prev_; }
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  MacCounter* prev_;
};

/* Attributes MACs inside the scope to the given phase. */
class PhaseScope {
 public:
  explicit PhaseScope(Phase p) : prev_(macdetail::current_phase()) {
    macdetail::current_phase() = p;
  }
  ~PhaseScope() { macdetail::current_phase() = prev_; }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  Phase prev_;
};

}  // namespace teaf
