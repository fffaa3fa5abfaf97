#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "tsdn/scoring.hpp"

using namespace tsdn;
using Catch::Approx;

namespace {

// Every (positive, negative) pair: win 1, tie 1/2.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& l) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (l[i] == 1 && l[j] == 0) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return wins / pairs;
}

ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0, 1);
    ImageTensor t(3, h, w);
    for (auto& v : t.data) v = u(rng);
    return t;
}

}  // namespace

TEST_CASE("pixel_score_map") {
    std::mt19937_64 rng(1);
    const auto a = random_image(12, 10, rng);
    SECTION("exact reconstruction gives zero maps") {
        const auto s = pixel_score_map(a, a, 2.0);
        for (float v : s.s_map.data) CHECK(v == 0.0f);
        for (float v : s.s_final.data) CHECK(v == 0.0f);
    }
    SECTION("single hot pixel") {
        // far from the border, so mirrored copies cannot move the peak
        const auto big = random_image(40, 36, rng);
        auto r = big;
        r.at(1, 20, 18) += 0.5f;
        const auto s = pixel_score_map(big, r, 4.0);
        const auto it = std::max_element(s.s_final.data.begin(), s.s_final.data.end());
        CHECK(*it == 1.0f);
        CHECK(it - s.s_final.data.begin() == 20 * 36 + 18);
        for (int y = 17; y <= 23; ++y)
            for (int x = 15; x <= 21; ++x) CHECK(s.s_map.at(0, y, x) > 0.0f);
    }
    SECTION("composition of squared difference, blur, normalization") {
        const auto b = random_image(12, 10, rng);
        const auto s = pixel_score_map(a, b, 2.0);
        MaskMap d(1, 12, 10);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 10; ++x) {
                double acc = 0;
                for (int c = 0; c < 3; ++c) acc += std::pow(double(a.at(c, y, x)) - b.at(c, y, x), 2);
                d.at(0, y, x) = static_cast<float>(acc / 3);
            }
        const auto blurred = gaussian_blur(d, 2.0);
        for (std::size_t i = 0; i < d.size(); ++i) CHECK(s.s_map.data[i] == Approx(blurred.data[i]).margin(1e-6));
        const auto n = minmax_normalize(blurred);
        for (std::size_t i = 0; i < d.size(); ++i) CHECK(s.s_final.data[i] == Approx(n.data[i]).margin(1e-5));
    }
    SECTION("errors") {
        CHECK_THROWS_AS(pixel_score_map(a, random_image(12, 9, rng), 1.0), InvalidInput);
        CHECK_THROWS_AS(pixel_score_map(a, a, -1.0), InvalidInput);
    }
}

TEST_CASE("default sigma") {
    CHECK(default_score_sigma(352) == 4.0);
    CHECK(default_score_sigma(704) == 8.0);
    CHECK(default_score_sigma(64) == 1.0);
}

TEST_CASE("image_score and normalize_scores") {
    CHECK(image_score(MaskMap(1, 3, 3)) == 0.0);
    MaskMap m(1, 2, 3);
    m.data = {0.1f, 0.73f, 0.2f, 0.0f, 0.5f, 0.7f};
    CHECK(image_score(m) == Approx(0.73).margin(1e-7));
    CHECK_THROWS_AS(image_score(MaskMap{}), InvalidInput);

    CHECK(normalize_scores({2, 4, 6}) == std::vector<double>{0, 0.5, 1});
    CHECK(normalize_scores({3, 3}) == std::vector<double>{0, 0});
    std::vector<double> s = {0.3, 2.0, -1.0, 0.9};
    std::vector<int> l = {0, 1, 0, 1};
    CHECK(roc_auc(s, l) == roc_auc(normalize_scores(s), l));
}

TEST_CASE("roc_auc anchors") {
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    // pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss, (0.8 vs both) wins -> 3 / 4
    CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, {1, 1}), UndefinedMetric);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, {1}), InvalidInput);
}

TEST_CASE("roc_auc equals exhaustive pairwise comparison") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> len(2, 200), lab(0, 1), lvl(0, 9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        const int n = len(rng);
        std::vector<double> s(n);
        std::vector<int> l(n);
        const bool ties = t % 2 == 0;
        for (int i = 0; i < n; ++i) {
            s[i] = ties ? lvl(rng) / 10.0 : u(rng);
            l[i] = lab(rng);
        }
        l[0] = 0;
        l[1] = 1;
        CHECK(roc_auc(s, l) == pairwise_auc(s, l));
    }
}

TEST_CASE("roc_auc invariances") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<double> s(60);
    std::vector<int> l(60);
    for (int i = 0; i < 60; ++i) {
        s[i] = u(rng);
        l[i] = i % 3 == 0;
    }
    const double a = roc_auc(s, l);
    std::vector<double> e(s), f(s);
    for (auto& v : e) v = std::exp(v);
    for (auto& v : f) v = 3 * v - 7;
    CHECK(roc_auc(e, l) == a);
    CHECK(roc_auc(f, l) == a);
    std::vector<int> flipped(l);
    for (auto& v : flipped) v = 1 - v;
    CHECK(a + roc_auc(s, flipped) == Approx(1.0).margin(1e-12));
    std::vector<double> tied(60, 1.0);
    CHECK(roc_auc(tied, l) == 0.5);
    CHECK(roc_auc(tied, flipped) == 0.5);
}

namespace {

ScoredImage scored(const std::string& name, const std::string& cat, const MaskMap& s, std::optional<MaskMap> gt,
                   int label) {
    ScoredImage it;
    it.name = name;
    it.category = cat;
    it.s_map = s;
    it.image_score = image_score(s);
    it.gt_mask = std::move(gt);
    it.gt_label = label;
    return it;
}

}  // namespace

TEST_CASE("evaluate") {
    MaskMap zero(1, 4, 4), mask(1, 4, 4);
    for (int y = 1; y < 3; ++y)
        for (int x = 1; x < 3; ++x) mask.at(0, y, x) = 1;

    SECTION("ideal detector") {
        std::vector<ScoredImage> items = {scored("n0", "good", zero, zero, 0), scored("n1", "good", zero, zero, 0),
                                          scored("a0", "cut", mask, mask, 1)};
        const auto r = evaluate(items);
        CHECK(*r.pixel_auc.value == 1.0);
        CHECK(*r.image_auc.value == 1.0);
        CHECK(*r.category_pixel_auc.at("cut").value == 1.0);
        CHECK(r.n_images == 3);
    }
    SECTION("uninformative detector") {
        MaskMap c(1, 4, 4, 0.3f);
        std::vector<ScoredImage> items = {scored("n0", "good", c, zero, 0), scored("a0", "cut", c, mask, 1)};
        const auto r = evaluate(items);
        CHECK(*r.pixel_auc.value == 0.5);
        CHECK(*r.image_auc.value == 0.5);
    }
    SECTION("pooled pixel AUC equals the oracle over concatenated pixels") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<float> u(0, 1);
        std::vector<ScoredImage> items;
        std::vector<double> all_s;
        std::vector<int> all_l;
        for (int i = 0; i < 3; ++i) {
            MaskMap s(1, 5, 5);
            for (auto& v : s.data) v = u(rng);
            MaskMap g(1, 5, 5);
            if (i > 0)
                for (int k = 0; k < 5 + i; ++k) g.data[k * 2] = 1;
            items.push_back(scored("x" + std::to_string(i), i ? "cut" : "good", s, g, i ? 1 : 0));
            for (std::size_t k = 0; k < s.size(); ++k) {
                all_s.push_back(s.data[k]);
                all_l.push_back(g.data[k] > 0.5f);
            }
        }
        const auto r = evaluate(items);
        CHECK(*r.pixel_auc.value == pairwise_auc(all_s, all_l));
        // per-image mode averages the images that have both classes
        const auto p = evaluate(items, PixelAucMode::per_image_mean);
        std::vector<double> s1(items[1].s_map.data.begin(), items[1].s_map.data.end());
        std::vector<double> s2(items[2].s_map.data.begin(), items[2].s_map.data.end());
        std::vector<int> l1, l2;
        for (float v : items[1].gt_mask->data) l1.push_back(v > 0.5f);
        for (float v : items[2].gt_mask->data) l2.push_back(v > 0.5f);
        CHECK(*p.pixel_auc.value == Approx((pairwise_auc(s1, l1) + pairwise_auc(s2, l2)) / 2).margin(1e-12));
    }
    SECTION("missing ground truth leaves the metric unavailable") {
        std::vector<ScoredImage> items = {scored("n0", "good", zero, zero, 0),
                                          scored("a0", "cut", mask, std::nullopt, 1)};
        const auto r = evaluate(items);
        CHECK(!r.pixel_auc.value);
        CHECK(!r.pixel_auc.note.empty());
        CHECK(*r.image_auc.value == 1.0);
    }
    SECTION("normals only: image AUC unavailable") {
        std::vector<ScoredImage> items = {scored("n0", "good", zero, zero, 0), scored("n1", "good", mask, zero, 0)};
        const auto r = evaluate(items);
        CHECK(!r.image_auc.value);
        CHECK(!r.pixel_auc.value);
    }
}

TEST_CASE("score map container") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0, 1);
    MaskMap m(1, 7, 9);
    for (auto& v : m.data) v = u(rng);
    m.data[3] = -0.0f;
    m.data[4] = 1e-40f;  // subnormal survives
    const auto bytes = encode_score_map(m);
    CHECK(bytes.size() == 12 + 4 * 63);
    const auto back = decode_score_map(bytes);
    CHECK(std::memcmp(back.data.data(), m.data.data(), 4 * 63) == 0);
    CHECK(back.height == 7);
    CHECK(back.width == 9);

    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(decode_score_map(bad), CodecError);
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(decode_score_map(cut), CodecError);

    const auto path = std::filesystem::temp_directory_path() / "tsdn_unit_map.tsmp";
    save_score_map(m, path);
    CHECK(load_score_map(path) == m);
    CHECK_THROWS_AS(load_score_map(path.string() + ".missing"), IoError);
}
