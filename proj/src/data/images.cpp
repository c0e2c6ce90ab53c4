#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "scn/data.hpp"

#ifdef SCN_HAVE_JPEG
#include <csetjmp>
#include <cstdio>
#include <jpeglib.h>
#endif

namespace scn {
namespace {

class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') throw ImageError(ImageErrorCode::bad_magic, "pnm: bad magic number");
    pos_ = 2;
    return {static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
  }

  // Next whitespace-delimited unsigned integer, skipping '#' comments.
  bool next_uint(unsigned long& out) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) return false;
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 0xFFFFFFFFul) throw ImageError(ImageErrorCode::bad_header, "pnm: number too large");
      ++pos_;
    }
    out = v;
    return true;
  }

  unsigned long header_uint(const char* what) {
    unsigned long v = 0;
    if (!next_uint(v)) throw ImageError(ImageErrorCode::bad_header, std::string("pnm: missing or invalid ") + what);
    return v;
  }

  // Raster begins after exactly one whitespace byte.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw ImageError(ImageErrorCode::bad_header, "pnm: header must end with whitespace");
    }
    ++pos_;
  }

  std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }
  bool at_end() {
    skip_space_and_comments();
    return pos_ >= bytes_.size();
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Tensor read_pnm(std::span<const std::uint8_t> bytes, char binary_magic, char ascii_magic, std::size_t channels) {
  PnmReader r(bytes);
  const std::string magic = r.magic();
  const bool binary = magic[1] == binary_magic;
  if (!binary && magic[1] != ascii_magic) throw ImageError(ImageErrorCode::bad_magic, "pnm: bad magic number " + magic);
  const unsigned long width = r.header_uint("width");
  const unsigned long height = r.header_uint("height");
  const unsigned long maxval = r.header_uint("maxval");
  if (width == 0 || height == 0) throw ImageError(ImageErrorCode::bad_header, "pnm: zero image dimension");
  if (maxval == 0) throw ImageError(ImageErrorCode::zero_maxval, "pnm: maxval must be positive");
  if (maxval > 65535) throw ImageError(ImageErrorCode::bad_maxval, "pnm: maxval exceeds 65535");

  const std::size_t plane = width * height;
  const std::size_t samples = plane * channels;
  std::vector<double> interleaved(samples);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (binary) {
    r.end_header();
    auto raster = r.rest();
    const std::size_t bytes_per = maxval < 256 ? 1 : 2;
    if (raster.size() < samples * bytes_per) {
      throw ImageError(ImageErrorCode::truncated, "unexpected end of pixel data");
    }
    for (std::size_t i = 0; i < samples; ++i) {
      const unsigned long raw =
          bytes_per == 1 ? raster[i] : (static_cast<unsigned long>(raster[2 * i]) << 8) | raster[2 * i + 1];
      if (raw > maxval) throw ImageError(ImageErrorCode::bad_pixel, "pnm: sample exceeds maxval");
      interleaved[i] = static_cast<double>(raw) * scale;
    }
  } else {
    for (std::size_t i = 0; i < samples; ++i) {
      unsigned long raw = 0;
      if (!r.next_uint(raw)) {
        if (r.at_end()) throw ImageError(ImageErrorCode::truncated, "unexpected end of pixel data");
        throw ImageError(ImageErrorCode::bad_pixel, "pnm: invalid pixel token");
      }
      if (raw > maxval) throw ImageError(ImageErrorCode::bad_pixel, "pnm: sample exceeds maxval");
      interleaved[i] = static_cast<double>(raw) * scale;
    }
  }
  // Interleaved RGB to planar.
  std::vector<double> planar(samples);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < channels; ++c) planar[c * plane + p] = interleaved[p * channels + c];
  return Tensor(Shape{channels, height, width}, std::move(planar));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(ImageErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

#ifdef SCN_HAVE_JPEG
struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Tensor decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  std::vector<double> planar;
  std::vector<JSAMPLE> row;
  std::size_t channels = 0, height = 0, width = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(ImageErrorCode::unsupported, "jpeg: decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  jpeg_start_decompress(&cinfo);
  channels = cinfo.output_components;
  height = cinfo.output_height;
  width = cinfo.output_width;
  planar.assign(channels * height * width, 0.0);
  row.assign(width * channels, 0);
  while (cinfo.output_scanline < cinfo.output_height) {
    const std::size_t y = cinfo.output_scanline;
    JSAMPROW rows[1] = {row.data()};
    jpeg_read_scanlines(&cinfo, rows, 1);
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        planar[(c * height + y) * width + x] = row[x * channels + c] / 255.0;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Tensor(Shape{channels, height, width}, std::move(planar));
}
#endif

}  // namespace

Tensor load_pgm(std::span<const std::uint8_t> bytes) { return read_pnm(bytes, '5', '2', 1); }

Tensor load_ppm(std::span<const std::uint8_t> bytes) { return read_pnm(bytes, '6', '3', 3); }

Tensor load_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto bytes = read_file(path);
  if (ext == ".pgm") return load_pgm(bytes);
  if (ext == ".ppm" || ext == ".pnm") {
    if (bytes.size() >= 2 && (bytes[1] == '5' || bytes[1] == '2')) return load_pgm(bytes);
    return load_ppm(bytes);
  }
  if (ext == ".jpg" || ext == ".jpeg") {
#ifdef SCN_HAVE_JPEG
    return decode_jpeg(bytes);
#else
    throw ImageError(ImageErrorCode::unsupported, "built without JPEG support: " + path.string());
#endif
  }
  throw ImageError(ImageErrorCode::unsupported, "unsupported image format: " + path.string());
}

std::vector<std::uint8_t> encode_pgm(const Tensor& image, bool binary, unsigned maxval) {
  if (image.rank() != 3 || image.dim(0) != 1) throw Error("encode_pgm: expected [1, H, W], got " + to_string(image.shape()));
  if (maxval == 0 || maxval > 65535) throw Error("encode_pgm: maxval must lie in [1, 65535]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::string header = std::string(binary ? "P5" : "P2") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
                       std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  auto quantize = [&](double v) {
    return static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
  };
  auto px = image.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const unsigned q = quantize(px[i]);
    if (binary) {
      if (maxval >= 256) out.push_back(static_cast<std::uint8_t>(q >> 8));
      out.push_back(static_cast<std::uint8_t>(q & 0xFF));
    } else {
      const std::string tok = std::to_string(q) + ((i + 1) % w == 0 ? "\n" : " ");
      out.insert(out.end(), tok.begin(), tok.end());
    }
  }
  return out;
}

Tensor to_grayscale(const Tensor& image) {
  if (image.rank() != 3) throw Error("to_grayscale: expected [C, H, W], got " + to_string(image.shape()));
  if (image.dim(0) == 1) return image;
  if (image.dim(0) != 3) throw Error("to_grayscale: expected 1 or 3 channels, got " + to_string(image.shape()));
  const std::size_t plane = image.dim(1) * image.dim(2);
  auto px = image.data();
  std::vector<double> out(plane);
  for (std::size_t i = 0; i < plane; ++i) out[i] = 0.299 * px[i] + 0.587 * px[plane + i] + 0.114 * px[2 * plane + i];
  return Tensor(Shape{1, image.dim(1), image.dim(2)}, std::move(out));
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw Error("resize: expected [C, H, W], got " + to_string(image.shape()));
  const std::size_t c = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
  if (in_h < 2 || in_w < 2) throw Error("resize: input must be at least 2x2");
  if (in_h == out_h && in_w == out_w) return image.detach();

  auto sample_coords = [](std::size_t out_n, std::size_t in_n) {
    struct Tap {
      std::size_t i0, i1;
      double frac;
    };
    std::vector<Tap> taps(out_n);
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in_n - 1);
      taps[i] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
  };
  const auto ys = sample_coords(out_h, in_h);
  const auto xs = sample_coords(out_w, in_w);
  auto px = image.data();
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = &px[ch * in_h * in_w];
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& ty = ys[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& tx = xs[x];
        const double top = src[ty.i0 * in_w + tx.i0] * (1.0 - tx.frac) + src[ty.i0 * in_w + tx.i1] * tx.frac;
        const double bottom = src[ty.i1 * in_w + tx.i0] * (1.0 - tx.frac) + src[ty.i1 * in_w + tx.i1] * tx.frac;
        out[(ch * out_h + y) * out_w + x] = top * (1.0 - ty.frac) + bottom * ty.frac;
      }
    }
  }
  return Tensor(Shape{c, out_h, out_w}, std::move(out));
}

Tensor preprocess(const Tensor& image, std::size_t target) {
  return resize_bilinear(to_grayscale(image), target, target);
}

}  // namespace scn
