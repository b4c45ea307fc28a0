// Region and boundary scores for a square against shifted and grown copies.

#include <cstdio>

#include "twinseg/metrics.hpp"

using namespace twinseg;

static Mask square(int w, int h, int x0, int y0, int side) {
  Bitmap b(w, h);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) b.set(x, y, true);
  return encode_mask(b);
}

int main() {
  const int w = 64, h = 48;
  const int tol = diagonal_tolerance(w, h);
  const Mask gt = square(w, h, 20, 12, 16);
  std::printf("boundary tolerance for %dx%d: %d px\n", w, h, tol);
  for (int shift : {0, 1, 2, 4, 8}) {
    const Mask pred = square(w, h, 20 + shift, 12, 16);
    std::printf("shift %d: IoU %.4f  F %.4f\n", shift, mask_iou(pred, gt), f_measure(pred, gt, tol));
  }
  const Mask grown = dilate(gt, 1);
  std::printf("dilate 1: IoU %.4f  F %.4f\n", mask_iou(grown, gt), f_measure(grown, gt, tol));
  return 0;
}
