#include "semflow/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "semflow/errors.hpp"
#include "semflow/grid.hpp"

namespace semflow {

namespace {

// One header integer, skipping whitespace and # comments. The first byte
// after the number is consumed as its separator.
std::size_t pnm_uint(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw FormatError(path + ": malformed header");
  std::size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    if (v > 1u << 24) throw FormatError(path + ": header value out of range");
    c = in.get();
  }
  return v;
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  std::size_t channels = 0;
  if (m0 == 'P' && m1 == '5') channels = 1;
  if (m0 == 'P' && m1 == '6') channels = 3;
  if (channels == 0) throw FormatError(path + ": not a binary PGM/PPM (want P5 or P6)");

  Image img;
  img.channels = channels;
  img.w = pnm_uint(in, path);
  img.h = pnm_uint(in, path);
  const std::size_t maxval = pnm_uint(in, path);
  if (img.w == 0 || img.h == 0) throw FormatError(path + ": zero image dimension");
  if (maxval == 0 || maxval > 255) throw FormatError(path + ": only 8-bit samples supported");

  const std::size_t n = img.h * img.w * channels;
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError(path + ": truncated pixel data");

  img.pixels.resize(n);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = bytes[i] * scale;
  return img;
}

void save_image(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw FormatError(path + ": image must have 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    double v = img.pixels[i];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

std::size_t Mask::foreground_count() const {
  std::size_t n = 0;
  for (double v : values)
    if (v > 0.5) ++n;
  return n;
}

Mask load_mask(const std::string& path) {
  Image img = load_image(path);
  if (img.channels != 1) throw FormatError(path + ": mask must be P5 grayscale");
  Mask m(img.h, img.w);
  // Byte > 127 is foreground; stored pixels are byte/255 so 0.5 splits it.
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    m.values[i] = img.pixels[i] > 0.5 ? 1.0 : 0.0;
  return m;
}

void save_mask(const std::string& path, const Mask& mask) {
  Image img;
  img.h = mask.h;
  img.w = mask.w;
  img.channels = 1;
  img.pixels.resize(mask.values.size());
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    img.pixels[i] = mask.values[i] > 0.5 ? 1.0 : 0.0;
  save_image(path, img);
}

Mask binarize(const Mask& mask) {
  Mask out(mask.h, mask.w);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    out.values[i] = mask.values[i] > 0.5 ? 1.0 : 0.0;
  return out;
}

Mask resample_mask(const Mask& mask, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("resample_mask: zero output dims");
  ScalarGrid g(mask.h, mask.w);
  g.values = mask.values;
  const double sx = static_cast<double>(mask.w) / static_cast<double>(w);
  const double sy = static_cast<double>(mask.h) / static_cast<double>(h);
  Mask out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double px = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const double py = (static_cast<double>(y) + 0.5) * sy - 0.5;
      out.at(y, x) = bilinear_sample_clamped(g, {px, py}) > 0.5 ? 1.0 : 0.0;
    }
  return out;
}

}  // namespace semflow
