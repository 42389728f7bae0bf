#include "gatelab/analysis.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gatelab {

int quantize_channel(double z) {
  double v = 255.0 * (1.0 - z);
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<int>(std::floor(v + 0.5));
}

RgbImage rgb_encode(const Tensor& run1, const Tensor& run2, const Tensor& run3) {
  if (!run1.same_shape(run2) || !run1.same_shape(run3))
    throw std::runtime_error("analysis: rgb_encode grid shape mismatch");
  RgbImage img;
  img.height = run1.rows();
  img.width = run1.cols();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      img.at(r, c) = {static_cast<unsigned char>(quantize_channel(run1.at(r, c))),
                      static_cast<unsigned char>(quantize_channel(run2.at(r, c))),
                      static_cast<unsigned char>(quantize_channel(run3.at(r, c)))};
  return img;
}

Tensor gray_overlay(const std::vector<Tensor>& grids) {
  if (grids.empty()) throw std::runtime_error("analysis: gray_overlay needs grids");
  for (const Tensor& g : grids)
    if (!g.same_shape(grids[0]))
      throw std::runtime_error("analysis: gray_overlay grid shape mismatch");
  Tensor out = Tensor::zeros(grids[0].shape);
  for (const Tensor& g : grids)
    for (int i = 0; i < g.size(); ++i) out.data[i] += g.data[i];
  for (double& x : out.data) x /= static_cast<double>(grids.size());
  return out;
}

RgbImage gray_to_image(const Tensor& heat) {
  RgbImage img;
  img.height = heat.rows();
  img.width = heat.cols();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      unsigned char v = static_cast<unsigned char>(quantize_channel(heat.at(r, c)));
      img.at(r, c) = {v, v, v};
    }
  return img;
}

double adjusted_r2(const std::vector<double>& run1, const std::vector<double>& run2,
                   const std::vector<double>& run3) {
  const int n = static_cast<int>(run3.size());
  const int k = 2;
  if (run1.size() != run3.size() || run2.size() != run3.size())
    throw std::runtime_error("analysis: adjusted_r2 length mismatch");
  if (n < k + 2) throw std::runtime_error("analysis: adjusted_r2 needs n >= 4");
  // normal equations X^T X b = X^T y, X = [1, run1, run2]
  double a[3][3] = {};
  double rhs[3] = {};
  for (int i = 0; i < n; ++i) {
    double x[3] = {1.0, run1[i], run2[i]};
    for (int p = 0; p < 3; ++p) {
      for (int q = 0; q < 3; ++q) a[p][q] += x[p] * x[q];
      rhs[p] += x[p] * run3[i];
    }
  }
  // Gaussian elimination with partial pivoting
  int piv[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int best = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::fabs(a[piv[r]][col]) > std::fabs(a[piv[best]][col])) best = r;
    std::swap(piv[col], piv[best]);
    double p = a[piv[col]][col];
    if (std::fabs(p) < 1e-12) throw std::runtime_error("analysis: singular design matrix");
    for (int r = col + 1; r < 3; ++r) {
      double f = a[piv[r]][col] / p;
      for (int c = col; c < 3; ++c) a[piv[r]][c] -= f * a[piv[col]][c];
      rhs[piv[r]] -= f * rhs[piv[col]];
    }
  }
  double b[3];
  for (int col = 2; col >= 0; --col) {
    double s = rhs[piv[col]];
    for (int c = col + 1; c < 3; ++c) s -= a[piv[col]][c] * b[c];
    b[col] = s / a[piv[col]][col];
  }
  double ymean = 0.0;
  for (double y : run3) ymean += y;
  ymean /= n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (int i = 0; i < n; ++i) {
    double pred = b[0] + b[1] * run1[i] + b[2] * run2[i];
    ss_res += (run3[i] - pred) * (run3[i] - pred);
    ss_tot += (run3[i] - ymean) * (run3[i] - ymean);
  }
  if (ss_tot == 0.0) throw std::runtime_error("analysis: dependent variable has zero variance");
  double r2 = 1.0 - ss_res / ss_tot;
  return 1.0 - (1.0 - r2) * (n - 1) / static_cast<double>(n - k - 1);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::runtime_error("analysis: pearson length mismatch");
  const int n = static_cast<int>(x.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::runtime_error("analysis: pearson zero variance");
  return sxy / std::sqrt(sxx * syy);
}

void write_ppm(const RgbImage& img, const std::string& path, int scale) {
  if (scale < 1) throw std::runtime_error("analysis: ppm scale must be >= 1");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("analysis: cannot write " + path);
  int w = img.width * scale, h = img.height * scale;
  f << "P6\n" << w << " " << h << "\n255\n";
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto& px = img.at(r / scale, c / scale);
      f.write(reinterpret_cast<const char*>(px.data()), 3);
    }
  if (!f) throw std::runtime_error("analysis: write failure on " + path);
}

}  // namespace gatelab
