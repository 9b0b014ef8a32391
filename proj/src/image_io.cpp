#include "tribench/image_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace tribench {

namespace fs = std::filesystem;

void write_image(const fs::path& path, const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError("write_image: only 1- or 3-channel images are supported");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  if (img.channels == 1) {
    os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  } else {
    std::vector<std::uint8_t> rgb(img.data.size());
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      rgb[i * 3] = img.data[i * 3 + 2];
      rgb[i * 3 + 1] = img.data[i * 3 + 1];
      rgb[i * 3 + 2] = img.data[i * 3];
    }
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

namespace {

void skip_space_and_comments(std::istream& is) {
  while (true) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

int read_header_int(std::istream& is, const fs::path& path) {
  skip_space_and_comments(is);
  int v = -1;
  if (!(is >> v) || v < 0) throw IoError("malformed image header: " + path.string());
  return v;
}

}  // namespace

ImageBuffer read_image(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path.string());
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  int channels = 0;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw IoError("not a binary PGM/PPM file: " + path.string());
  const int w = read_header_int(is, path);
  const int h = read_header_int(is, path);
  const int maxval = read_header_int(is, path);
  if (maxval != 255) throw IoError("only 8-bit images are supported: " + path.string());
  is.get();  // single whitespace before the raster
  ImageBuffer img(w, h, channels);
  is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.data.size()))
    throw IoError("truncated image data: " + path.string());
  if (channels == 3)
    for (std::size_t i = 0; i < img.pixel_count(); ++i) std::swap(img.data[i * 3], img.data[i * 3 + 2]);
  return img;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace tribench
