#pragma once

#include "gsr/image.hpp"

namespace gsr {

// PSNR in dB for images in [0, 1]; capped at 100 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), standard constants
// K1 = 0.01, K2 = 0.03, dynamic range 1. Windows are evaluated where they fit
// entirely inside the image; multichannel images average per-channel scores.
double ssim(const Image& a, const Image& b);

} // namespace gsr
