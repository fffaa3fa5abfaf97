#include <catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <map>
#include <queue>
#include <random>
#include <set>

#include "tsdn/slic.hpp"

using namespace tsdn;

namespace {

// Flood fill from the first pixel of every label must reach all of that label's pixels.
bool all_labels_connected(const SuperpixelSegmentation& s) {
    const int h = s.height, w = s.width;
    std::vector<int> first(s.num_segments, -1), count(s.num_segments, 0);
    for (int i = 0; i < h * w; ++i) {
        if (first[s.labels[i]] < 0) first[s.labels[i]] = i;
        ++count[s.labels[i]];
    }
    std::vector<char> seen(h * w, 0);
    for (int k = 0; k < s.num_segments; ++k) {
        if (first[k] < 0) return false;
        int reached = 0;
        std::queue<int> q;
        q.push(first[k]);
        seen[first[k]] = 1;
        while (!q.empty()) {
            const int p = q.front();
            q.pop();
            ++reached;
            const int y = p / w, x = p % w;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& [ny, nx] : nb) {
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const int np = ny * w + nx;
                if (!seen[np] && s.labels[np] == k) {
                    seen[np] = 1;
                    q.push(np);
                }
            }
        }
        if (reached != count[k]) return false;
    }
    return true;
}

bool total_partition(const SuperpixelSegmentation& s) {
    if (s.labels.size() != static_cast<std::size_t>(s.height) * s.width) return false;
    std::set<int> used(s.labels.begin(), s.labels.end());
    return static_cast<int>(used.size()) == s.num_segments && *used.begin() == 0 &&
           *used.rbegin() == s.num_segments - 1;
}

ImageTensor noise_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0, 1);
    ImageTensor img(3, h, w);
    for (auto& v : img.data) v = u(rng);
    return img;
}

// keys a partition by the set of pixel groups, independent of label numbering
std::set<std::vector<int>> groups(const SuperpixelSegmentation& s) {
    std::map<int, std::vector<int>> g;
    for (int i = 0; i < static_cast<int>(s.labels.size()); ++i) g[s.labels[i]].push_back(i);
    std::set<std::vector<int>> out;
    for (auto& [k, v] : g) out.insert(v);
    return out;
}

}  // namespace

TEST_CASE("constant image, 4 segments -> quadrants") {
    ImageTensor img(3, 64, 64, 0.4f);
    SlicParams p;
    p.n_segments = 4;
    const auto s = slic_segment(img, p);
    REQUIRE(s.num_segments == 4);
    REQUIRE(total_partition(s));
    for (auto c : s.histogram()) {
        CHECK(c >= 1024 * 0.85);
        CHECK(c <= 1024 * 1.15);
    }
    // spatial Voronoi of the 2x2 grid is the four quadrants
    int agree = 0;
    std::map<std::pair<int, int>, std::map<int, int>> votes;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) ++votes[{y / 32, x / 32}][s.label(y, x)];
    for (auto& [q, v] : votes) {
        int best = 0;
        for (auto& [l, n] : v) best = std::max(best, n);
        agree += best;
    }
    CHECK(agree >= static_cast<int>(0.95 * 4096));
}

TEST_CASE("slic partition, connectivity and determinism") {
    const auto img = noise_image(48, 40, 3);
    SlicParams p;
    p.n_segments = 30;
    const auto a = slic_segment(img, p);
    const auto b = slic_segment(img, p);
    CHECK(a.labels == b.labels);
    CHECK(total_partition(a));
    CHECK(all_labels_connected(a));
    CHECK(a.num_segments >= 10);
}

TEST_CASE("slic on a structured image") {
    ImageTensor img(3, 64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const bool on = ((x / 8) + (y / 8)) % 2 == 0;
            img.at(0, y, x) = on ? 0.9f : 0.1f;
            img.at(1, y, x) = 0.5f;
            img.at(2, y, x) = on ? 0.2f : 0.7f;
        }
    SlicParams p;
    p.n_segments = 64;
    const auto s = slic_segment(img, p);
    CHECK(total_partition(s));
    CHECK(all_labels_connected(s));
}

TEST_CASE("grayscale input is accepted") {
    ImageTensor g(1, 32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) g.at(0, y, x) = x < 16 ? 0.2f : 0.8f;
    SlicParams p;
    p.n_segments = 8;
    const auto s = slic_segment(g, p);
    CHECK(total_partition(s));
    CHECK(all_labels_connected(s));
}

TEST_CASE("compactness trades colour fit for spatial regularity") {
    // smooth images; pure noise collapses into a handful of segments and says nothing here
    auto smooth = [](int kind) {
        ImageTensor img(3, 64, 64);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (kind == 0) {
                    img.at(0, y, x) = static_cast<float>(0.5 + 0.4 * std::sin(x / 7.0 + y / 11.0));
                    img.at(1, y, x) = static_cast<float>(0.5 + 0.4 * std::cos(y / 6.0));
                    img.at(2, y, x) = static_cast<float>(0.5 + 0.3 * std::sin((x - y) / 9.0));
                } else {
                    const double r = std::hypot(x - 30.0, y - 34.0);
                    img.at(0, y, x) = static_cast<float>(0.5 + 0.45 * std::sin(r / 4.0));
                    img.at(1, y, x) = 0.4f;
                    img.at(2, y, x) = static_cast<float>(0.5 - 0.4 * std::sin(r / 4.0));
                }
            }
        return img;
    };
    // per-pixel averages of within-segment spatial variance and rgb variance
    auto spreads = [](const ImageTensor& img, double m) {
        SlicParams p;
        p.n_segments = 16;
        p.compactness = m;
        const auto s = slic_segment(img, p);
        std::map<int, std::array<double, 11>> acc;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                auto& a = acc[s.label(y, x)];
                a[0] += 1, a[1] += x, a[2] += y, a[3] += x * x, a[4] += y * y;
                for (int c = 0; c < 3; ++c) {
                    const double v = img.at(c, y, x);
                    a[5 + c] += v, a[8 + c] += v * v;
                }
            }
        double sp = 0, col = 0;
        for (auto& [l, a] : acc) {
            sp += a[3] - a[1] * a[1] / a[0] + a[4] - a[2] * a[2] / a[0];
            for (int c = 0; c < 3; ++c) col += a[8 + c] - a[5 + c] * a[5 + c] / a[0];
        }
        return std::pair{sp / 4096, col / 4096};
    };
    // a 16x16 square has spatial variance 2 * (256 - 1) / 12
    const double square = 2 * 255.0 / 12;
    for (int kind = 0; kind < 2; ++kind) {
        const auto img = smooth(kind);
        const auto [sp_tight, col_tight] = spreads(img, 200);
        const auto [sp_loose, col_loose] = spreads(img, 0.5);
        CHECK(sp_tight < sp_loose);
        CHECK(col_tight > col_loose);
        CHECK(sp_tight <= 1.1 * square);
    }
}

TEST_CASE("slic rejects bad parameters") {
    ImageTensor img(3, 4, 4);
    SlicParams p;
    p.n_segments = 17;
    CHECK_THROWS_AS(slic_segment(img, p), InvalidInput);
    p.n_segments = 4;
    p.compactness = 0;
    CHECK_THROWS_AS(slic_segment(img, p), InvalidInput);
}

TEST_CASE("enforce_connectivity") {
    SECTION("already connected: same partition") {
        SuperpixelSegmentation s{6, 6, std::vector<int>(36), 3, {}};
        for (int i = 0; i < 36; ++i) s.labels[i] = (i % 6) < 2 ? 2 : ((i % 6) < 4 ? 0 : 1);
        const auto out = enforce_connectivity(s, 2);
        CHECK(out.num_segments == 3);
        CHECK(groups(out) == groups(s));
    }
    SECTION("one-pixel island is absorbed") {
        SuperpixelSegmentation s{5, 5, std::vector<int>(25, 1), 2, {}};
        s.labels[12] = 0;
        const auto out = enforce_connectivity(s, 2);
        CHECK(out.num_segments == 1);
        for (int l : out.labels) CHECK(l == 0);
    }
    SECTION("disconnected label is split when pieces are large") {
        SuperpixelSegmentation s{4, 9, std::vector<int>(36, 0), 2, {}};
        for (int y = 0; y < 4; ++y)
            for (int x = 3; x < 6; ++x) s.labels[y * 9 + x] = 1;
        const auto out = enforce_connectivity(s, 2);
        CHECK(out.num_segments == 3);
        CHECK(all_labels_connected(out));
    }
    SECTION("random labels pass the flood-fill audit") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> lab(0, 4);
        SuperpixelSegmentation s{32, 32, std::vector<int>(1024), 5, {}};
        for (auto& l : s.labels) l = lab(rng);
        const auto out = enforce_connectivity(s, 8);
        CHECK(total_partition(out));
        CHECK(all_labels_connected(out));
        for (auto c : out.histogram()) CHECK(c >= 8);
    }
}
