#include "gsr/metrics.hpp"

#include <cmath>

namespace gsr {

namespace {

void check_compatible(const char* op, const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw ShapeError(msg(op, ": image shapes disagree: ", a.width, "x", a.height, "x",
                             a.channels, " vs ", b.width, "x", b.height, "x", b.channels));
}

} // namespace

double psnr(const Image& a, const Image& b) {
    check_compatible("psnr", a, b);
    double se = 0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        se += d * d;
    }
    double mse = se / static_cast<double>(a.pixels.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    check_compatible("ssim", a, b);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (a.width < kWin || a.height < kWin)
        throw ShapeError(msg("ssim: image ", a.width, "x", a.height,
                             " is smaller than the 11x11 window"));

    double w[kWin][kWin];
    double wsum = 0;
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) {
            double dy = i - (kWin - 1) / 2.0;
            double dx = j - (kWin - 1) / 2.0;
            w[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            wsum += w[i][j];
        }
    }
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) w[i][j] /= wsum;

    double total = 0;
    size_t count = 0;
    for (int c = 0; c < a.channels; ++c) {
        for (int y = 0; y + kWin <= a.height; ++y) {
            for (int x = 0; x + kWin <= a.width; ++x) {
                double mu_a = 0, mu_b = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        mu_a += w[i][j] * a.at(y + i, x + j, c);
                        mu_b += w[i][j] * b.at(y + i, x + j, c);
                    }
                double var_a = 0, var_b = 0, cov = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        double da = a.at(y + i, x + j, c) - mu_a;
                        double db = b.at(y + i, x + j, c) - mu_b;
                        var_a += w[i][j] * da * da;
                        var_b += w[i][j] * db * db;
                        cov += w[i][j] * da * db;
                    }
                double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
                double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

} // namespace gsr
