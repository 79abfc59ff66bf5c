#include "teaf/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace teaf {

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("tensor file: truncated");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("tensor file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("tensor file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t f32_bits(float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  return v;
}

float bits_f32(std::uint32_t v) {
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

std::uint64_t f64_bits(double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  return v;
}

double bits_f64(std::uint64_t v) {
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

constexpr char kMagic[4] = {'T', 'E', 'A', '1'};
constexpr char kCkptMagic[4] = {'T', 'E', 'A', 'C'};
constexpr std::int64_t kMaxElements = std::int64_t(1) << 32;

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  os.put(static_cast<char>(t.dtype()));
  os.put(static_cast<char>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  if (t.dtype() == DType::F32) {
    for (std::int64_t i = 0; i < t.size(); ++i) put_u32(os, f32_bits(static_cast<float>(t[i])));
  } else {
    for (std::int64_t i = 0; i < t.size(); ++i) put_u64(os, f64_bits(t[i]));
  }
  if (!os) throw std::runtime_error("tensor file: write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor file: bad magic");
  const int dtype_tag = is.get();
  const int rank = is.get();
  if (dtype_tag != 0 && dtype_tag != 1) throw std::runtime_error("tensor file: unknown dtype tag");
  if (rank < 0 || rank > 8) throw std::runtime_error("tensor file: unsupported rank");
  std::vector<int> shape;
  std::int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(is);
    if (d == 0) throw std::runtime_error("tensor file: zero dimension");
    shape.push_back(static_cast<int>(d));
    n *= d;
    if (n > kMaxElements) throw std::runtime_error("tensor file: implausibly large");
  }
  Tensor t(shape, dtype_tag == 0 ? DType::F32 : DType::F64);
  if (t.dtype() == DType::F32) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(bits_f32(get_u32(is)));
  } else {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = bits_f64(get_u64(is));
  }
  return t;
}

void write_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_tensor(os, t);
}

Tensor read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_tensor(is);
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kCkptMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(ck.config_text.size()));
  os.write(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
  put_u32(os, static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params) {
    if (name.size() > 0xffff) throw std::runtime_error("checkpoint: parameter name too long");
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  Checkpoint ck;
  const std::uint32_t cfg_len = get_u32(is);
  ck.config_text.resize(cfg_len);
  if (cfg_len && !is.read(ck.config_text.data(), cfg_len))
    throw std::runtime_error("checkpoint: truncated config");
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t nlen = get_u16(is);
    std::string name(nlen, '\0');
    if (nlen && !is.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated name");
    ck.params.emplace_back(std::move(name), read_tensor(is));
  }
  return ck;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config: missing '=' in line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string encode_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

/* PNM header token reader: skips whitespace and '#' comments. */
std::string pnm_token(std::istream& is) {
  std::string tok;
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = is.get();
  }
  if (tok.empty()) throw std::runtime_error("image: truncated header");
  return tok;
}

int pnm_int(std::istream& is, const char* what) {
  const std::string tok = pnm_token(is);
  for (char ch : tok)
    if (!std::isdigit(static_cast<unsigned char>(ch)))
      throw std::runtime_error(std::string("image: malformed ") + what + " field '" + tok + "'");
  return std::stoi(tok);
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string magic = pnm_token(is);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error("image: unsupported magic '" + magic + "' (want P5 or P6)");
  const int w = pnm_int(is, "width");
  const int h = pnm_int(is, "height");
  const int maxval = pnm_int(is, "maxval");
  if (w <= 0 || h <= 0) throw std::runtime_error("image: non-positive dimensions");
  if (maxval != 255) throw std::runtime_error("image: only maxval 255 is supported");
  /* single whitespace byte separates header from payload; pnm_int consumed it */
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error("image: truncated pixel data");
  Tensor img({h, w, channels});
  for (std::int64_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<double>(raw[static_cast<std::size_t>(i)]) / 255.0;
  return img;
}

void write_pnm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw std::invalid_argument("write_pnm: image must be [H x W x 1] or [H x W x 3]");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * c);
  for (std::int64_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i], 0.0, 1.0);
    raw[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw std::runtime_error("image: write failed");
}

}  // namespace teaf
