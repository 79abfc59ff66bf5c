#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "teaf/io.hpp"
#include "teaf/ops.hpp"
#include "teaf/rng.hpp"

using namespace teaf;

namespace {

std::string tmp_file(const char* leaf) {
  return (std::filesystem::temp_directory_path() / leaf).string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("tensor container round-trips f64 bit-exactly") {
  Rng rng(3);
  const Tensor t = rng.normal_tensor({2, 3, 5}, 0.0, 10.0);
  std::stringstream ss;
  write_tensor(ss, t);
  const Tensor u = read_tensor(ss);
  CHECK(u.same_shape(t));
  CHECK(u.dtype() == DType::F64);
  CHECK(max_abs_diff(t, u) == 0.0);
}

TEST_CASE("tensor container stores f32 payloads at f32 precision") {
  Tensor t({3}, DType::F32);
  t[0] = 0.1;  /* not representable in f32 */
  t[1] = 1.5;
  t[2] = -2.0;
  std::stringstream ss;
  write_tensor(ss, t);
  const Tensor u = read_tensor(ss);
  CHECK(u.dtype() == DType::F32);
  CHECK(u[0] == static_cast<double>(static_cast<float>(0.1)));
  CHECK(u[1] == 1.5);
  CHECK(u[2] == -2.0);
}

TEST_CASE("tensor container header layout is frozen") {
  const Tensor t = Tensor::from({2, 1}, {1.0, 2.0});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string b = ss.str();
  REQUIRE(b.size() == 4 + 1 + 1 + 2 * 4 + 2 * 8);
  CHECK(b.substr(0, 4) == "TEA1");
  CHECK(b[4] == 1);  /* f64 */
  CHECK(b[5] == 2);  /* rank */
  CHECK(static_cast<unsigned char>(b[6]) == 2);  /* dim0 little-endian */
  CHECK(static_cast<unsigned char>(b[10]) == 1); /* dim1 */
}

TEST_CASE("tensor container rejects malformed input") {
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), std::runtime_error);
  std::stringstream trunc("TEA1");
  CHECK_THROWS_AS(read_tensor(trunc), std::runtime_error);
  /* rank over the cap */
  std::string hdr = "TEA1";
  hdr.push_back(1);
  hdr.push_back(9);
  std::stringstream rank(hdr);
  CHECK_THROWS_AS(read_tensor(rank), std::runtime_error);
}

TEST_CASE("checkpoint round-trips and is byte-stable") {
  Rng rng(5);
  Checkpoint ck;
  ck.config_text = "a=1\nb=two\n";
  ck.params.emplace_back("w1", rng.normal_tensor({3, 3}, 0.0, 1.0));
  ck.params.emplace_back("w2", rng.normal_tensor({2}, 0.0, 1.0));
  const std::string p1 = tmp_file("teaf-test-a.ckpt");
  const std::string p2 = tmp_file("teaf-test-b.ckpt");
  write_checkpoint(p1, ck);
  write_checkpoint(p2, ck);
  const Checkpoint back = read_checkpoint(p1);
  CHECK(back.config_text == ck.config_text);
  REQUIRE(back.params.size() == 2);
  CHECK(back.params[0].first == "w1");
  CHECK(max_abs_diff(back.params[0].second, ck.params[0].second) == 0.0);
  CHECK(back.params[1].first == "w2");
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
  CHECK_THROWS_AS(read_checkpoint(tmp_file("teaf-test-missing.ckpt")), std::runtime_error);
}

TEST_CASE("key=value config text round-trips") {
  std::map<std::string, std::string> kv{{"alpha", "0.5"}, {"name", "x y"}, {"z", ""}};
  const std::string text = encode_kv(kv);
  CHECK(parse_kv(text) == kv);
  CHECK(parse_kv("# comment\n\na=1\n").at("a") == "1");
  CHECK_THROWS_AS(parse_kv("noequals\n"), std::runtime_error);
}

TEST_CASE("float rendering survives a parse round-trip") {
  for (double v : {1.0 / 3.0, 1e-300, 6.02e23, -0.0, 0.1, 9007199254740993.0, -1.5e-17}) {
    const std::string s = fmt_g17(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
}

TEST_CASE("ppm round-trip is exact at 8-bit resolution") {
  Tensor img({4, 5, 3});
  for (int i = 0; i < img.size(); ++i) img[i] = (i % 256) / 255.0;
  const std::string path = tmp_file("teaf-test.ppm");
  write_pnm(path, img);
  const Tensor back = read_pnm(path);
  REQUIRE(back.same_shape(img));
  CHECK(max_abs_diff(back, img) == 0.0);  /* values were exact 8-bit levels */
  std::filesystem::remove(path);
}

TEST_CASE("pgm carries one channel and clamps on write") {
  Tensor img({2, 2, 1});
  img[0] = -0.5;
  img[1] = 1.5;
  img[2] = 0.5;
  img[3] = 1.0;
  const std::string path = tmp_file("teaf-test.pgm");
  write_pnm(path, img);
  const Tensor back = read_pnm(path);
  REQUIRE(back.same_shape(img));
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 1.0);
  CHECK(back[2] == doctest::Approx(0.5).epsilon(1e-2));
  std::filesystem::remove(path);
}

TEST_CASE("pnm reader handles comments and rejects malformed headers") {
  const std::string path = tmp_file("teaf-test-hdr.pgm");
  write_bytes(path, "P5 # gray\n# full line comment\n2 1\n255\n\x10\x20");
  const Tensor ok = read_pnm(path);
  CHECK(ok.dim(0) == 1);
  CHECK(ok.dim(1) == 2);
  CHECK(ok[0] == doctest::Approx(16.0 / 255.0));

  write_bytes(path, "P7\n2 2\n255\n0000");
  CHECK_THROWS_AS(read_pnm(path), std::runtime_error);
  write_bytes(path, "P5\n2\n");
  CHECK_THROWS_AS(read_pnm(path), std::runtime_error);
  write_bytes(path, "P5\n2 2\n65535\n0000");
  CHECK_THROWS_AS(read_pnm(path), std::runtime_error);
  write_bytes(path, "P5\n2 2\n255\n\x01");  /* truncated payload */
  CHECK_THROWS_AS(read_pnm(path), std::runtime_error);
  write_bytes(path, "P5\nx 2\n255\n0000");
  CHECK_THROWS_AS(read_pnm(path), std::runtime_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_pnm(tmp_file("teaf-test-missing.pgm")), std::runtime_error);
}
