#include "teaf/macount.hpp"

namespace teaf {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::QkvProj: return "qkv_proj";
    case Phase::OffsetConv: return "offset_convs";
    case Phase::OffsetReduce: return "offset_reduce";
    case Phase::AttnMap: return "attn_map";
    case Phase::Reweight: return "reweight";
    case Phase::Dsa: return "dsa";
    case Phase::Other: return "other";
    default: return "?";
  }
}

namespace macdetail {

MacCounter*& current_counter() {
  thread_local MacCounter* c = nullptr;
  return c;
}

Phase& current_phase() {
  thread_local Phase p = Phase::Other;
  return p;
}

}  // namespace macdetail
}  // namespace teaf
