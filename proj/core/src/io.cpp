#include "stereolidar/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stereolidar::io {

namespace {

/// Whitespace/comment-aware tokenizer for PNM-style headers.
class HeaderReader {
 public:
  HeaderReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  std::string token() {
    skip();
    const std::size_t start = pos_;
    while (pos_ < buf_.size() && !std::isspace(static_cast<unsigned char>(buf_[pos_]))) ++pos_;
    if (start == pos_) fail("unexpected end of header");
    return buf_.substr(start, pos_ - start);
  }

  std::size_t number() {
    skip();
    const std::size_t at = pos_;
    const std::string t = token();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) fail("expected an unsigned integer, got '" + t + "'", at);
    return v;
  }

  double real() {
    skip();
    const std::size_t at = pos_;
    const std::string t = token();
    double v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) fail("expected a number, got '" + t + "'", at);
    return v;
  }

  /// Consumes the single whitespace byte that ends a binary-format header.
  void end_of_header() {
    if (pos_ >= buf_.size() || !std::isspace(static_cast<unsigned char>(buf_[pos_]))) fail("header not terminated");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& msg) const { fail(msg, pos_); }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError(what_ + ": " + msg + " at byte " + std::to_string(at), at);
  }

 private:
  void skip() {
    while (pos_ < buf_.size()) {
      if (buf_[pos_] == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(buf_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

void write_binary(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

std::uint32_t swap_bytes(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) { write_binary(path, text); }

void write_ppm(const std::filesystem::path& path, const scenegen::RgbImage& image) {
  const std::size_t hw = image.height * image.width;
  if (image.data.size() != 3 * hw) throw ShapeError("write_ppm: buffer does not match 3xHxW");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) out[header + 3 * p + c] = static_cast<char>(quantize(image.data[c * hw + p]));
  write_binary(path, out);
}

scenegen::RgbImage read_ppm(const std::filesystem::path& path) {
  const std::string buf = read_text(path);
  HeaderReader r(buf, path.string());
  if (r.token() != "P6") r.fail("expected magic 'P6'", 0);
  const std::size_t w = r.number(), h = r.number();
  const std::size_t maxval_at = r.pos();
  if (r.number() != 255) r.fail("only 8-bit (maxval 255) images are supported", maxval_at);
  r.end_of_header();
  const std::size_t hw = h * w;
  if (buf.size() - r.pos() != 3 * hw) {
    r.fail("expected " + std::to_string(3 * hw) + " pixel bytes, found " + std::to_string(buf.size() - r.pos()));
  }
  scenegen::RgbImage img{h, w, std::vector<double>(3 * hw)};
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      img.data[c * hw + p] = static_cast<unsigned char>(buf[r.pos() + 3 * p + c]) / 255.0;
  return img;
}

FloatMap to_float_map(std::size_t height, std::size_t width, const std::vector<double>& values) {
  if (values.size() != height * width) throw ShapeError("to_float_map: buffer does not match HxW");
  FloatMap m{height, width, std::vector<float>(values.size())};
  std::transform(values.begin(), values.end(), m.data.begin(), [](double v) { return static_cast<float>(v); });
  return m;
}

void write_pfm(const std::filesystem::path& path, const FloatMap& map) {
  if (map.data.size() != map.height * map.width) throw ShapeError("write_pfm: buffer does not match HxW");
  std::string out = "Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + 4 * map.data.size());
  char* dst = out.data() + header;
  for (std::size_t row = 0; row < map.height; ++row) {
    const std::size_t src_row = map.height - 1 - row;
    for (std::size_t j = 0; j < map.width; ++j) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(map.data[src_row * map.width + j]);
      if constexpr (std::endian::native == std::endian::big) bits = swap_bytes(bits);
      std::memcpy(dst, &bits, 4);
      dst += 4;
    }
  }
  write_binary(path, out);
}

FloatMap read_pfm(const std::filesystem::path& path) {
  const std::string buf = read_text(path);
  HeaderReader r(buf, path.string());
  const std::string magic = r.token();
  if (magic == "PF") r.fail("three-channel PFM is not supported", 0);
  if (magic != "Pf") r.fail("expected magic 'Pf'", 0);
  const std::size_t w = r.number(), h = r.number();
  const std::size_t scale_at = r.pos();
  const double scale = r.real();
  if (scale == 0.0 || !std::isfinite(scale)) r.fail("scale must be a nonzero number", scale_at);
  r.end_of_header();
  const bool little = scale < 0.0;
  if (buf.size() - r.pos() != 4 * h * w) {
    r.fail("expected " + std::to_string(4 * h * w) + " data bytes, found " + std::to_string(buf.size() - r.pos()));
  }
  FloatMap m{h, w, std::vector<float>(h * w)};
  const char* src = buf.data() + r.pos();
  for (std::size_t row = 0; row < h; ++row) {
    const std::size_t dst_row = h - 1 - row;
    for (std::size_t j = 0; j < w; ++j) {
      std::uint32_t bits;
      std::memcpy(&bits, src, 4);
      src += 4;
      if (little != (std::endian::native == std::endian::little)) bits = swap_bytes(bits);
      m.data[dst_row * w + j] = std::bit_cast<float>(bits);
    }
  }
  return m;
}

void write_sparse_csv(const std::filesystem::path& path, const SparseDisparity& sp) {
  std::string out = "i,j,disparity\n";
  char num[64];
  for (std::size_t i = 0; i < sp.height; ++i)
    for (std::size_t j = 0; j < sp.width; ++j) {
      const std::size_t p = i * sp.width + j;
      if (!sp.valid[p]) continue;
      // Shortest representation that round-trips exactly.
      auto res = std::to_chars(num, num + sizeof num, sp.values[p]);
      out += std::to_string(i) + "," + std::to_string(j) + "," + std::string(num, res.ptr) + "\n";
    }
  write_binary(path, out);
}

SparseDisparity read_sparse_csv(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  const std::string buf = read_text(path);
  SparseDisparity sp = SparseDisparity::empty(height, width);
  std::size_t pos = 0, row = 0;
  while (pos < buf.size()) {
    const std::size_t start = pos;
    std::size_t end = buf.find('\n', pos);
    if (end == std::string::npos) end = buf.size();
    std::string line = buf.substr(start, end - start);
    pos = end + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row == 1 && line == "i,j,disparity") continue;
    auto fail = [&](const std::string& msg) -> void {
      throw ParseError(path.string() + ": row " + std::to_string(row) + ": " + msg + " at byte " + std::to_string(start),
                       start);
    };
    const std::size_t c1 = line.find(','), c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) fail("expected 'i,j,disparity'");
    std::size_t i = 0, j = 0;
    double d = 0;
    auto pi = std::from_chars(line.data(), line.data() + c1, i);
    auto pj = std::from_chars(line.data() + c1 + 1, line.data() + c2, j);
    auto pd = std::from_chars(line.data() + c2 + 1, line.data() + line.size(), d);
    if (pi.ec != std::errc() || pi.ptr != line.data() + c1 || pj.ec != std::errc() || pj.ptr != line.data() + c2 ||
        pd.ec != std::errc() || pd.ptr != line.data() + line.size()) {
      fail("malformed field in '" + line + "'");
    }
    if (i >= height || j >= width) {
      fail("coordinate (" + std::to_string(i) + "," + std::to_string(j) + ") outside " + std::to_string(height) + "x" +
           std::to_string(width));
    }
    if (!(d > 0.0) || !std::isfinite(d)) fail("disparity must be positive and finite");
    if (sp.valid[i * width + j]) fail("duplicate point (" + std::to_string(i) + "," + std::to_string(j) + ")");
    sp.set(i, j, d);
  }
  return sp;
}

void write_mask_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    const std::vector<std::uint8_t>& mask) {
  if (mask.size() != height * width) throw ShapeError("write_mask_pgm: buffer does not match HxW");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (auto m : mask) out.push_back(static_cast<char>(m ? 255 : 0));
  write_binary(path, out);
}

std::vector<std::uint8_t> read_mask_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width) {
  const std::string buf = read_text(path);
  HeaderReader r(buf, path.string());
  if (r.token() != "P5") r.fail("expected magic 'P5'", 0);
  width = r.number();
  height = r.number();
  const std::size_t maxval_at = r.pos();
  if (r.number() != 255) r.fail("only 8-bit masks are supported", maxval_at);
  r.end_of_header();
  if (buf.size() - r.pos() != height * width) r.fail("pixel data size mismatch");
  std::vector<std::uint8_t> mask(height * width);
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = buf[r.pos() + k] != 0 ? 1 : 0;
  return mask;
}

}  // namespace stereolidar::io
