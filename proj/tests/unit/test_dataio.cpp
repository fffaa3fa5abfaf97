#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "tsdn/dataio.hpp"

using namespace tsdn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("tsdn_unit_dataio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void touch_png(const fs::path& p) {
    fs::create_directories(p.parent_path());
    save_image(ImageTensor(3, 4, 4, 0.5f), p);
}

}  // namespace

TEST_CASE("png round trip within one quantization step") {
    const auto dir = scratch("rt");
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0, 1);
    ImageTensor img(3, 13, 17);
    for (auto& v : img.data) v = u(rng);
    save_image(img, dir / "a.png");
    const auto back = load_image(dir / "a.png");
    REQUIRE(back.channels == 3);
    REQUIRE(back.height == 13);
    REQUIRE(back.width == 17);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255 + 1e-6f);
    // a second save of the decoded image is lossless
    save_image(back, dir / "b.png");
    CHECK(load_image(dir / "b.png") == back);
}

TEST_CASE("known 8-bit samples decode to k/255") {
    const auto dir = scratch("known");
    detail::PngPixels px{2, 2, 1, 8, {0, 85, 170, 255}};
    detail::write_png(dir / "g.png", px);
    const auto img = load_image(dir / "g.png");
    REQUIRE(img.channels == 3);
    const float expect[4] = {0.0f, 1.0f / 3, 2.0f / 3, 1.0f};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) CHECK(img.data[c * 4 + i] == Catch::Approx(expect[i]).margin(1e-6));
}

TEST_CASE("mask threshold and 16-bit maps") {
    const auto dir = scratch("mask");
    detail::PngPixels px{4, 1, 1, 8, {0, 127, 128, 255}};
    detail::write_png(dir / "m.png", px);
    const auto m = load_mask(dir / "m.png");
    CHECK(m.data == std::vector<float>{0, 0, 1, 1});

    MaskMap s(1, 3, 3);
    for (int i = 0; i < 9; ++i) s.data[i] = i / 8.0f;
    save_png16(s, dir / "s.png");
    const auto back = load_image(dir / "s.png");
    for (int i = 0; i < 9; ++i) CHECK(std::abs(back.data[i] - s.data[i]) <= 0.5f / 65535 + 1e-7f);

    std::vector<int> labels = {0, 5, 400, 65535, 7, 1};
    save_labels_png16(labels, 2, 3, dir / "l.png");
    int h = 0, w = 0;
    CHECK(load_labels_png16(dir / "l.png", &h, &w) == labels);
    CHECK(h == 2);
    CHECK(w == 3);
}

TEST_CASE("codec errors") {
    const auto dir = scratch("err");
    std::ofstream(dir / "bad.png") << "definitely not a png";
    CHECK_THROWS_AS(load_image(dir / "bad.png"), CodecError);
    CHECK_THROWS_AS(load_image(dir / "absent.png"), CodecError);
    // truncated stream
    save_image(ImageTensor(3, 32, 32, 0.2f), dir / "ok.png");
    const auto full = slurp(dir / "ok.png");
    std::ofstream(dir / "cut.png", std::ios::binary) << full.substr(0, full.size() / 2);
    CHECK_THROWS_AS(load_image(dir / "cut.png"), CodecError);
    CHECK_THROWS_AS(save_image(ImageTensor(2, 4, 4), dir / "two.png"), InvalidInput);
}

TEST_CASE("scan_dataset layout") {
    const auto root = scratch("scan");
    const auto base = root / "cat";
    touch_png(base / "train" / "good" / "b.png");
    touch_png(base / "train" / "good" / "a.png");
    touch_png(base / "test" / "good" / "000.png");
    touch_png(base / "test" / "scratch" / "000.png");
    touch_png(base / "test" / "scratch" / "001.png");
    touch_png(base / "test" / "hole" / "000.png");
    touch_png(base / "ground_truth" / "scratch" / "000_mask.png");
    touch_png(base / "ground_truth" / "scratch" / "001_mask.png");
    touch_png(base / "ground_truth" / "hole" / "000_mask.png");

    std::vector<std::string> warnings;
    const auto items = scan_dataset(root, "cat", [&](const std::string& w) { warnings.push_back(w); });
    REQUIRE(items.size() == 6);
    CHECK(warnings.empty());
    CHECK(items[0].image.filename() == "a.png");
    CHECK(items[0].split == Split::train);
    CHECK(items[1].image.filename() == "b.png");
    int normals = 0, hole = 0, scratch_n = 0;
    for (const auto& it : items) {
        if (it.split != Split::test) continue;
        if (it.is_normal()) {
            ++normals;
            CHECK(!it.gt_mask);
        } else {
            CHECK(it.gt_mask);
            hole += it.defect_type == "hole";
            scratch_n += it.defect_type == "scratch";
        }
    }
    CHECK(normals == 1);
    CHECK(hole == 1);
    CHECK(scratch_n == 2);

    SECTION("missing mask warns and flags the item") {
        fs::remove(base / "ground_truth" / "hole" / "000_mask.png");
        warnings.clear();
        const auto again = scan_dataset(root, "cat", [&](const std::string& w) { warnings.push_back(w); });
        CHECK(warnings.size() == 1);
        int flagged = 0;
        for (const auto& it : again) flagged += it.missing_mask;
        CHECK(flagged == 1);
    }
    SECTION("no test directory: train items only") {
        fs::remove_all(base / "test");
        CHECK(scan_dataset(root, "cat").size() == 2);
    }
    SECTION("empty test directory") {
        fs::remove_all(base / "test");
        fs::create_directories(base / "test");
        CHECK(scan_dataset(root, "cat").size() == 2);
    }
    SECTION("missing train directory is an error") {
        fs::remove_all(base / "train");
        CHECK_THROWS_AS(scan_dataset(root, "cat"), IoError);
    }
}

TEST_CASE("synthetic generator") {
    SynthConfig cfg;
    cfg.image_size = 32;
    cfg.n_train = 3;
    cfg.n_test_normal = 2;
    cfg.n_test_abnormal = 4;
    cfg.defect_min = 4;
    cfg.defect_max = 8;
    cfg.seed = 11;
    const auto a = scratch("synA"), b = scratch("synB");
    generate_synthetic(cfg, a);
    generate_synthetic(cfg, b);
    const auto items = scan_dataset(a, "synthetic");
    REQUIRE(items.size() == 9);
    for (const auto& it : items) {
        const auto rel = fs::relative(it.image, a);
        CHECK(slurp(it.image) == slurp(b / rel));
    }

    for (const auto& it : items) {
        if (it.is_normal()) continue;
        REQUIRE(it.gt_mask);
        const auto m = load_mask(*it.gt_mask);
        int y0 = 99, y1 = -1, x0 = 99, x1 = -1, area = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                if (m.at(0, y, x) > 0) {
                    ++area;
                    y0 = std::min(y0, y), y1 = std::max(y1, y);
                    x0 = std::min(x0, x), x1 = std::max(x1, x);
                }
        const int h = y1 - y0 + 1, w = x1 - x0 + 1;
        CHECK(area == h * w);  // solid rectangle
        CHECK(h >= 4);
        CHECK(h <= 8);
        CHECK(w >= 4);
        CHECK(w <= 8);
    }

    cfg.seed = 12;
    const auto c = scratch("synC");
    generate_synthetic(cfg, c);
    CHECK(slurp(a / "synthetic/train/good/000.png") != slurp(c / "synthetic/train/good/000.png"));

    cfg.n_test_abnormal = 0;
    const auto d = scratch("synD");
    generate_synthetic(cfg, d);
    CHECK(!fs::exists(d / "synthetic" / "ground_truth"));
    CHECK(scan_dataset(d, "synthetic").size() == 5);

    cfg.defect_max = 40;
    CHECK_THROWS_AS(generate_synthetic(cfg, d), InvalidInput);
}

TEST_CASE("defect colors keep their contrast from both tones") {
    SynthConfig cfg;
    cfg.image_size = 32;
    cfg.defect_min = cfg.defect_max = 6;
    for (int s = 0; s < 50; ++s) {
        std::mt19937_64 rng(s);
        auto si = detail::synth_texture(cfg, rng);
        const auto m = detail::synth_defect(si, cfg, rng);
        std::size_t p = 0;
        while (m.data[p] == 0) ++p;
        const std::size_t hw = si.img.plane_size();
        for (int t = 0; t < 2; ++t) {
            float d = 0;
            for (int ch = 0; ch < 3; ++ch) d = std::max(d, std::abs(si.img.data[ch * hw + p] - si.tones[t][ch]));
            CHECK(d >= detail::kMinDefectContrast);
        }
    }
}
