#pragma once

#include "tribench/raster.hpp"

#include <filesystem>
#include <vector>

namespace tribench {

// Binary PGM (P5) for 1-channel and PPM (P6, RGB sample order) for 3-channel.
void write_image(const std::filesystem::path& path, const ImageBuffer& img);
ImageBuffer read_image(const std::filesystem::path& path);

// Sorted list of *.pgm / *.ppm files in a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace tribench
