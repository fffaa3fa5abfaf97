#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "tsdn/imgproc.hpp"

using namespace tsdn;
using Catch::Approx;

namespace {

Tensor<double> random_map(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    Tensor<double> t(1, h, w);
    for (auto& v : t.data) v = u(rng);
    return t;
}

// Windowed SSIM evaluated directly from its definition, one window at a time.
double brute_ssim(const Tensor<double>& a, const Tensor<double>& b, int win, double sigma, double c1, double c2) {
    const int r = win / 2;
    std::vector<double> w2(win * win);
    double sum = 0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - r, dj = j - r;
            w2[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            sum += w2[i * win + j];
        }
    for (auto& v : w2) v /= sum;
    double total = 0;
    int count = 0;
    for (int y = 0; y + win <= a.height; ++y)
        for (int x = 0; x + win <= a.width; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    ma += w2[i * win + j] * a.at(0, y + i, x + j);
                    mb += w2[i * win + j] * b.at(0, y + i, x + j);
                }
            double va = 0, vb = 0, cab = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double da = a.at(0, y + i, x + j) - ma, db = b.at(0, y + i, x + j) - mb;
                    va += w2[i * win + j] * da * da;
                    vb += w2[i * win + j] * db * db;
                    cab += w2[i * win + j] * da * db;
                }
            total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

}  // namespace

TEST_CASE("rgb_to_lab anchors") {
    ImageTensor img(3, 1, 3);
    // pixel 0 black, pixel 1 white, pixel 2 mid gray
    for (int c = 0; c < 3; ++c) {
        img.at(c, 0, 1) = 1.0f;
        img.at(c, 0, 2) = 0.5f;
    }
    const auto lab = rgb_to_lab(img);
    CHECK(lab.at(0, 0, 0) == Approx(0).margin(1e-6));
    CHECK(lab.at(1, 0, 0) == Approx(0).margin(1e-6));
    CHECK(lab.at(2, 0, 0) == Approx(0).margin(1e-6));
    CHECK(lab.at(0, 0, 1) == Approx(100).margin(1e-3));
    CHECK(std::abs(lab.at(1, 0, 1)) < 0.01);
    CHECK(std::abs(lab.at(2, 0, 1)) < 0.01);
    // sRGB -> CIELAB (D65) of 0.5 gray from an independent colorimetry package
    CHECK(lab.at(0, 0, 2) == Approx(53.38896).margin(1e-3));
    CHECK(std::abs(lab.at(1, 0, 2)) < 0.01);
    CHECK(std::abs(lab.at(2, 0, 2)) < 0.01);
}

TEST_CASE("rgb_to_lab rejects non-RGB input") {
    CHECK_THROWS_AS(rgb_to_lab(ImageTensor(1, 2, 2)), InvalidInput);
}

TEST_CASE("resize_bilinear") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0, 1);
    ImageTensor img(3, 7, 5);
    for (auto& v : img.data) v = u(rng);

    SECTION("identity at the same size") { CHECK(resize_bilinear(img, 7, 5) == img); }
    SECTION("constants stay constant") {
        ImageTensor c(2, 3, 4, 0.7f);
        const auto r = resize_bilinear(c, 11, 2);
        for (float v : r.data) CHECK(v == Approx(0.7f).margin(1e-6));
    }
    SECTION("hand-computed 2x2 -> 2x4") {
        // source x = (x + 0.5) / 2 - 0.5 -> -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        ImageTensor s(1, 2, 2);
        s.at(0, 0, 1) = 1;
        s.at(0, 1, 1) = 1;
        const auto r = resize_bilinear(s, 2, 4);
        const float expect[4] = {0.0f, 0.25f, 0.75f, 1.0f};
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 4; ++x) CHECK(r.at(0, y, x) == Approx(expect[x]).margin(1e-7));
    }
    SECTION("bounded by input extrema") {
        const auto r = resize_bilinear(img, 23, 3);
        const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
        for (float v : r.data) {
            CHECK(v >= *lo - 1e-6f);
            CHECK(v <= *hi + 1e-6f);
        }
    }
    SECTION("zero target size throws") {
        CHECK_THROWS_AS(resize_bilinear(img, 0, 4), InvalidInput);
        CHECK_THROWS_AS(resize_bilinear(img, 4, 0), InvalidInput);
    }
}

TEST_CASE("gaussian_blur") {
    std::mt19937_64 rng(2);
    auto m = random_map(13, 9, rng).cast<float>();

    CHECK(gaussian_blur(m, 0.0) == m);
    CHECK_THROWS_AS(gaussian_blur(m, -0.5), InvalidInput);

    MaskMap c(1, 6, 8, 0.3f);
    for (double s : {0.5, 1.0, 4.0}) {
        const auto b = gaussian_blur(c, s);
        for (float v : b.data) CHECK(v == Approx(0.3f).margin(1e-6));
    }

    const auto b = gaussian_blur(m, 1.7);
    const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
    for (float v : b.data) {
        CHECK(v >= *lo - 1e-6f);
        CHECK(v <= *hi + 1e-6f);
    }

    // impulse response peak = (normalized 1-D tap at 0)^2, radius ceil(3 sigma) = 3
    MaskMap imp(1, 9, 9);
    imp.at(0, 4, 4) = 1;
    double s1 = 0;
    for (int i = -3; i <= 3; ++i) s1 += std::exp(-i * i / 2.0);
    const double peak = (1 / s1) * (1 / s1);
    CHECK(gaussian_blur(imp, 1.0).at(0, 4, 4) == Approx(peak).epsilon(1e-6));
    CHECK(peak == Approx(0.159241).margin(1e-6));
}

TEST_CASE("ssim_mean matches a brute-force windowed oracle") {
    std::mt19937_64 rng(3);
    const SsimParams p;
    for (int t = 0; t < 8; ++t) {
        const int h = 16 + t * 2, w = 16 + (t * 3) % 17;
        const auto a = random_map(h, w, rng), b = random_map(h, w, rng);
        CHECK(ssim_mean(a, b, p) == Approx(brute_ssim(a, b, 11, 1.5, 1e-4, 9e-4)).margin(1e-6));
    }
}

TEST_CASE("ssim_mean properties") {
    std::mt19937_64 rng(4);
    const auto a = random_map(20, 18, rng), b = random_map(20, 18, rng);
    CHECK(ssim_mean(a, a) == Approx(1.0).margin(1e-9));
    CHECK(ssim_mean(a, b) == Approx(ssim_mean(b, a)).margin(1e-12));
    const double v = ssim_mean(a, b);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK_THROWS_AS(ssim_mean(a, random_map(20, 17, rng)), InvalidInput);
    CHECK_THROWS_AS(ssim_mean(random_map(10, 20, rng), random_map(10, 20, rng)), InvalidInput);
}

TEST_CASE("SsimAgainst equals ssim_mean") {
    std::mt19937_64 rng(5);
    const auto ref = random_map(24, 24, rng);
    const SsimAgainst<double> s(ref);
    for (int i = 0; i < 4; ++i) {
        const auto a = random_map(24, 24, rng);
        CHECK(s.score(a) == Approx(ssim_mean(a, ref)).margin(1e-12));
    }
}

TEST_CASE("ssim_mean_grad matches central differences") {
    std::mt19937_64 rng(6);
    const auto a = random_map(14, 15, rng);
    auto b = random_map(14, 15, rng);
    Tensor<double> g;
    const double v = ssim_mean_grad(a, b, g);
    CHECK(v == Approx(ssim_mean(a, b)).margin(1e-12));
    const double h = 1e-5;
    for (std::size_t i = 0; i < b.size(); i += 7) {
        const double keep = b.data[i];
        b.data[i] = keep + h;
        const double up = ssim_mean(a, b);
        b.data[i] = keep - h;
        const double dn = ssim_mean(a, b);
        b.data[i] = keep;
        CHECK(g.data[i] == Approx((up - dn) / (2 * h)).margin(1e-7));
    }
}

TEST_CASE("gms_mean") {
    std::mt19937_64 rng(7);
    const auto a = random_map(9, 11, rng);
    CHECK(gms_mean(a, a) == Approx(1.0).margin(1e-9));
    CHECK(gms_mean(Tensor<double>(1, 5, 5, 0.2), Tensor<double>(1, 5, 5, 0.9)) == Approx(1.0).margin(1e-12));
    CHECK_THROWS_AS(gms_mean(a, random_map(9, 10, rng)), InvalidInput);

    SECTION("vertical step edge against a flat map") {
        // interior is 6x6; columns 3 and 4 see a 1/3-scaled Prewitt response of 1, others 0.
        // similarity there is c/(1+c), elsewhere 1.
        Tensor<double> step(1, 8, 8), flat(1, 8, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 4; x < 8; ++x) step.at(0, y, x) = 1;
        const double c = kGmsConstant;
        const double expect = (24.0 + 12.0 * c / (1.0 + c)) / 36.0;
        CHECK(gms_mean(step, flat) == Approx(expect).margin(1e-12));
        CHECK(expect == Approx(0.667531).margin(1e-6));
    }
    SECTION("range") {
        const auto b = random_map(9, 11, rng);
        const double v = gms_mean(a, b);
        CHECK(v > 0);
        CHECK(v <= 1);
    }
}

TEST_CASE("gms_mean_grad matches central differences") {
    std::mt19937_64 rng(8);
    const auto a = random_map(10, 9, rng);
    auto b = random_map(10, 9, rng);
    Tensor<double> g;
    const double v = gms_mean_grad(a, b, g);
    CHECK(v == Approx(gms_mean(a, b)).margin(1e-12));
    const double h = 1e-6;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double keep = b.data[i];
        b.data[i] = keep + h;
        const double up = gms_mean(a, b);
        b.data[i] = keep - h;
        const double dn = gms_mean(a, b);
        b.data[i] = keep;
        CHECK(g.data[i] == Approx((up - dn) / (2 * h)).margin(1e-6));
    }
}

TEST_CASE("minmax_normalize") {
    CHECK(minmax_normalize(std::vector<double>{1, 2, 3}) == std::vector<double>{0, 0.5, 1});
    CHECK(minmax_normalize(std::vector<double>{4, 4, 4}) == std::vector<double>{0, 0, 0});
    MaskMap c(1, 3, 3, 0.4f);
    for (float v : minmax_normalize(c).data) CHECK(v == 0.0f);

    std::mt19937_64 rng(9);
    const auto m = random_map(6, 7, rng);
    const auto n = minmax_normalize(m);
    CHECK(minmax_normalize(n) == n);
    CHECK(*std::min_element(n.data.begin(), n.data.end()) == 0.0);
    CHECK(*std::max_element(n.data.begin(), n.data.end()) == 1.0);
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j)
            if (m.data[i] < m.data[j]) CHECK(n.data[i] <= n.data[j]);
}
