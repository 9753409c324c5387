#pragma once

#include <optional>

#include "nvs/core/tensor.hpp"

namespace nvs::eval {

// Maps normalized pixel coordinates about the image center: u -> A*u + b.
// Sampling is bilinear; out-of-bounds reads are white.
struct AffineWarp {
    float a[2][2] = {{1, 0}, {0, 1}};
    float b[2] = {0, 0};

    static AffineWarp identity() { return {}; }
    bool near_identity(float tol) const;
};

// Images are [H,W,C] float tensors in [0,1].
Tensor apply_warp(const Tensor& image, const AffineWarp& warp);

double psnr(const Tensor& x, const Tensor& y);  // dB, capped at 100
double ssim(const Tensor& x, const Tensor& y);

struct WarpFitConfig {
    int iters = 500;
    float step = 1e-2f;
    int starts = 5;  // identity + jittered restarts
    uint64_t seed = 0;
};

// Gradient descent on the 6 warp parameters minimizing mean L2 between the
// warped prediction and ground truth. Best-of over multi-start including
// identity, so the result never scores worse than no warp.
AffineWarp fit_affine_warp(const Tensor& pred, const Tensor& gt,
                           const WarpFitConfig& cfg = {});

struct MetricReport {
    double psnr = 0, ssim = 0;
    double psnr_a = 0, ssim_a = 0;
    std::optional<double> lpips_a;  // reserved; needs a perceptual network
    AffineWarp warp;
};

// One L2-fitted warp shared by all aligned metrics.
MetricReport aligned_metrics(const Tensor& pred, const Tensor& gt,
                             const WarpFitConfig& cfg = {});

}  // namespace nvs::eval
