#pragma once

#include <array>
#include <string>
#include <vector>

#include "gatelab/tensor.hpp"

namespace gatelab {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::array<unsigned char, 3>> pixels;  // row-major

  std::array<unsigned char, 3>& at(int r, int c) { return pixels[r * width + c]; }
  const std::array<unsigned char, 3>& at(int r, int c) const { return pixels[r * width + c]; }
};

// round-half-up quantization of 255*(1 - z) into [0, 255]
int quantize_channel(double z);

// Three same-shape utilization grids (runs 1..3) -> one RGB image, channel
// c = 255*(1 - z_c). Fully utilized heads (z = 1 in every run) come out black.
RgbImage rgb_encode(const Tensor& run1, const Tensor& run2, const Tensor& run3);

// Per-head mean over T*R grids (canonically 5 tasks x 3 runs = 15).
Tensor gray_overlay(const std::vector<Tensor>& grids);

// Grayscale raster of an overlay: pixel = 255*(1 - H), darker = higher.
RgbImage gray_to_image(const Tensor& heat);

// OLS of run3 on [1, run1, run2]; adjusted = 1 - (1-R^2)(n-1)/(n-k-1), k = 2.
// Singular normal equations -> error.
double adjusted_r2(const std::vector<double>& run1, const std::vector<double>& run2,
                   const std::vector<double>& run3);

// Sample Pearson correlation; zero variance -> error.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Binary P6 PPM; each pixel rendered as a scale x scale block.
void write_ppm(const RgbImage& img, const std::string& path, int scale = 1);

}  // namespace gatelab
