#pragma once

#include <filesystem>

#include "starsr/image.hpp"

namespace starsr {

// Reads an 8- or 16-bit PNG as RGB in [0, 1] (divide by 255 or 65535).
// Grayscale and palette images are expanded to RGB; alpha is dropped.
ImageTensor read_png(const std::filesystem::path& path);

// Clamps to [0, 1], rounds to the requested depth, writes RGB PNG.
void write_png(const std::filesystem::path& path, const ImageTensor& img,
               int bit_depth = 8);

}  // namespace starsr
