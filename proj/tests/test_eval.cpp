#include <cmath>

#include <doctest.h>

#include "nvs/core/rng.hpp"
#include "nvs/eval/metrics.hpp"

using namespace nvs;
using namespace nvs::eval;

namespace {

// smooth synthetic image: sum of low-frequency sinusoids per channel
Tensor smooth_image(int h, int w, int c = 3) {
    Tensor img = Tensor::zeros({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) {
                const double fy = 2.0 * M_PI * (k + 1) / h;
                const double fx = 2.0 * M_PI * (k + 2) / w;
                img.at(y, x, k) = static_cast<float>(
                    0.5 + 0.25 * std::sin(fy * y) + 0.2 * std::cos(fx * x));
            }
    return img;
}

Tensor random_image(int h, int w, Rng& rng) {
    Tensor img = Tensor::zeros({h, w, 3});
    for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>(rng.uniform());
    return img;
}

double mse_of(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

}  // namespace

TEST_CASE("psnr basics and scalar oracle") {
    Rng rng(1);
    const Tensor x = random_image(16, 16, rng);
    CHECK(psnr(x, x) == doctest::Approx(100.0));

    // exact-MSE pair: y differs from x by +-0.1 everywhere -> MSE 0.01 -> 20 dB
    Tensor y = x;
    for (int64_t i = 0; i < y.numel(); ++i)
        y[i] = x[i] + (x[i] < 0.5f ? 0.1f : -0.1f);
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-4));

    const Tensor z = random_image(16, 16, rng);
    const double oracle = 10.0 * std::log10(1.0 / mse_of(x, z));
    CHECK(psnr(x, z) == doctest::Approx(oracle).epsilon(1e-6));

    CHECK_THROWS_AS(psnr(x, smooth_image(8, 8)), ShapeError);
}

TEST_CASE("ssim basics") {
    const Tensor x = smooth_image(32, 32);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

    // binary image vs its negation anti-correlates
    Tensor b = Tensor::zeros({32, 32, 1});
    Tensor nb = Tensor::zeros({32, 32, 1});
    Rng rng(2);
    for (int64_t i = 0; i < b.numel(); ++i) {
        b[i] = rng.uniform() < 0.5 ? 0.f : 1.f;
        nb[i] = 1.f - b[i];
    }
    CHECK(ssim(b, nb) < 0.0);

    // near-constant pair stays close to 1
    Tensor c1 = Tensor::full({32, 32, 3}, 0.5f);
    Tensor c2 = c1;
    for (int64_t i = 0; i < c2.numel(); ++i)
        c2[i] += 1e-4f * rng.normalf();
    CHECK(ssim(c1, c2) > 0.99);
}

TEST_CASE("apply_warp: identity reproduces the image") {
    const Tensor x = smooth_image(24, 24);
    const Tensor y = apply_warp(x, AffineWarp::identity());
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(std::abs(x[i] - y[i]) < 1e-6f);
}

TEST_CASE("apply_warp: out-of-bounds reads white") {
    Tensor x = Tensor::zeros({16, 16, 3});  // all black
    AffineWarp w = AffineWarp::identity();
    w.b[0] = 1.0f;  // shift half the frame out of bounds
    const Tensor y = apply_warp(x, w);
    float max_v = 0, min_v = 1;
    for (int64_t i = 0; i < y.numel(); ++i) {
        max_v = std::max(max_v, y[i]);
        min_v = std::min(min_v, y[i]);
    }
    CHECK(max_v == doctest::Approx(1.0f));  // some pixels now sample white
    CHECK(min_v == doctest::Approx(0.0f));  // some still inside the black image
}

TEST_CASE("fit_affine_warp: identical pair returns near-identity") {
    const Tensor x = smooth_image(32, 32);
    const AffineWarp w = fit_affine_warp(x, x);
    CHECK(w.near_identity(1e-2f));
    CHECK(mse_of(apply_warp(x, w), x) <= mse_of(x, x) + 1e-12);
}

TEST_CASE("fit_affine_warp: recovers a 4 px translation") {
    const int n = 48;
    const Tensor pred = smooth_image(n, n);
    AffineWarp truth = AffineWarp::identity();
    truth.b[0] = 4.0f * 2.0f / n;  // 4 px in normalized units
    const Tensor gt = apply_warp(pred, truth);

    const AffineWarp fit = fit_affine_warp(pred, gt);
    const float px = n / 2.0f;
    CHECK(std::abs(fit.b[0] - truth.b[0]) * px < 0.5f);
    CHECK(std::abs(fit.b[1] - truth.b[1]) * px < 0.5f);
    CHECK(psnr(apply_warp(pred, fit), gt) >= 35.0);
}

TEST_CASE("fit_affine_warp: recovers a 1.1x scale about center") {
    const int n = 48;
    const Tensor pred = smooth_image(n, n);
    AffineWarp truth = AffineWarp::identity();
    truth.a[0][0] = truth.a[1][1] = 1.1f;
    const Tensor gt = apply_warp(pred, truth);

    const AffineWarp fit = fit_affine_warp(pred, gt);
    CHECK(std::abs(fit.a[0][0] - 1.1f) < 0.02f);
    CHECK(std::abs(fit.a[1][1] - 1.1f) < 0.02f);
}

TEST_CASE("fit_affine_warp: >=90% L2 reduction on known smooth warps") {
    Rng rng(3);
    const int n = 48;
    const Tensor pred = smooth_image(n, n);
    for (int trial = 0; trial < 4; ++trial) {
        AffineWarp truth = AffineWarp::identity();
        truth.a[0][0] += 0.1f * rng.normalf() * 0.5f;
        truth.a[1][1] += 0.1f * rng.normalf() * 0.5f;
        truth.a[0][1] = 0.05f * rng.normalf();
        truth.b[0] = 6.0f * 2.0f / n * static_cast<float>(rng.uniform(-1, 1));
        truth.b[1] = 6.0f * 2.0f / n * static_cast<float>(rng.uniform(-1, 1));
        const Tensor gt = apply_warp(pred, truth);
        const double before = mse_of(pred, gt);
        const AffineWarp fit = fit_affine_warp(pred, gt);
        const double after = mse_of(apply_warp(pred, fit), gt);
        CHECK(after <= 0.1 * before);
    }
}

TEST_CASE("aligned_metrics: invariants") {
    const int n = 48;
    const Tensor pred = smooth_image(n, n);

    SUBCASE("identical pair hits the cap") {
        const MetricReport r = aligned_metrics(pred, pred);
        CHECK(r.psnr == doctest::Approx(100.0));
        CHECK(r.psnr_a == doctest::Approx(100.0));
        CHECK(!r.lpips_a.has_value());
    }
    SUBCASE("translated pair gains >= 10 dB from alignment") {
        AffineWarp truth = AffineWarp::identity();
        truth.b[0] = 4.0f * 2.0f / n;
        const Tensor gt = apply_warp(pred, truth);
        const MetricReport r = aligned_metrics(pred, gt);
        CHECK(r.psnr_a - r.psnr >= 10.0);
    }
    SUBCASE("psnr_a >= psnr and ssim_a >= ssim on random pairs") {
        Rng rng(4);
        for (int i = 0; i < 100; ++i) {
            const Tensor a = random_image(12, 12, rng);
            const Tensor b = random_image(12, 12, rng);
            WarpFitConfig cheap;
            cheap.iters = 30;
            cheap.starts = 2;
            const MetricReport r = aligned_metrics(a, b, cheap);
            CHECK(r.psnr_a >= r.psnr - 1e-6);
            CHECK(r.ssim_a >= r.ssim - 1e-6);
        }
    }
}
