#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "teaf/tensor.hpp"

namespace teaf {

/* Binary tensor container:
 *   magic "TEA1" | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u32le dims |
 *   row-major little-endian payload in the stated dtype. */
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

/* Checkpoint: "TEAC" | u32le config bytes | config text (flat key=value
 * lines) | u32le param count | per param: u16le name length, name, embedded
 * tensor record. Parameter order is preserved, so files are byte-stable. */
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> params;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

/* Flat key=value config text. Encoding iterates the map in key order. */
std::map<std::string, std::string> parse_kv(const std::string& text);
std::string encode_kv(const std::map<std::string, std::string>& kv);

/* Shortest round-trip decimal rendering (%.17g), shared by every report
 * writer so repeated runs stay byte-identical. */
std::string fmt_g17(double v);

/* Binary PGM (P5) and PPM (P6), maxval 255. Pixels are scaled to [0,1];
 * images load as [H x W x 1] or [H x W x 3]. Writing rounds and clamps. */
Tensor read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Tensor& img);

}  // namespace teaf
