// tsdn: superpixel preview, synthetic data, training, inference, evaluation, overlays.
//
// Exit status: 0 success, 1 usage or input error, 2 training diverged.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsdn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tsdn;

namespace {

struct TrainFlags {
    std::string config;
    std::string data;
    std::string category;
    std::string out = "run";
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<int> ns, ss;
    std::optional<double> sigma;
    bool no_skips = false, no_skips_dcda = false, no_skips_dcdn = false;
    bool no_fne = false, no_dcda = false, no_surf = false;
    std::vector<std::string> sets;
};

// "a.b.c=value"; the value is parsed as JSON when possible, otherwise taken as a string.
json apply_set(json j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidInput("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw InvalidInput("--set: malformed key '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
    return j;
}

PipelineConfig resolve_config(const TrainFlags& f) {
    json overrides = json::object();
    if (!f.config.empty()) overrides = read_json_file(f.config);
    for (const auto& s : f.sets) overrides = apply_set(overrides, s);
    PipelineConfig cfg = config_from_json(overrides);
    if (!f.data.empty()) cfg.data_root = f.data;
    if (!f.category.empty()) cfg.category = f.category;
    if (f.seed) cfg.train.seed = *f.seed;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.batch_size) cfg.train.batch_size = *f.batch_size;
    if (f.lr) cfg.train.learning_rate = *f.lr;
    if (f.ns) cfg.train.surf.n_segments = *f.ns;
    if (f.ss) cfg.train.surf.fill_count = *f.ss;
    if (f.sigma) cfg.sigma = *f.sigma;
    if (f.no_skips || f.no_skips_dcda) cfg.network.use_skips_dcd_a = false;
    if (f.no_skips || f.no_skips_dcdn) cfg.network.use_skips_dcd_n = false;
    if (f.no_fne) cfg.network.enable_fne = false;
    if (f.no_dcda) {
        cfg.network.enable_dcd_a = false;
        cfg.network.enable_fne = false;  // the estimator's target needs the predicted mask
    }
    if (f.no_surf) cfg.train.use_surf = false;
    cfg.validate();
    return cfg;
}

void print_breakdown(const LossBreakdown& b) {
    std::fprintf(stderr, "last loss: l_r=%.6g l_s=%.6g l_g=%.6g l_m=%.6g l_fne=%.6g total=%.6g\n", b.l_r, b.l_s, b.l_g,
                 b.l_m, b.l_fne, b.total);
}

void ensure_dir(const fs::path& d) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
}

MaskMap load_any_map(const fs::path& p) {
    if (p.extension() == ".tsmp") return minmax_normalize(load_score_map(p));
    const auto img = detail::read_png(p);
    detail::require(img.channels == 1, p.string() + ": score map PNG must be grayscale");
    const float scale = 1.0f / static_cast<float>(img.bit_depth == 16 ? 65535 : 255);
    MaskMap m(1, img.height, img.width);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = static_cast<float>(img.samples[i]) * scale;
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TSDN anomaly detection: SURF augmentation, two-stream decoder training and scoring"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    // slic
    std::string image, out_dir = "out";
    int ns = 400, ss = 50;
    std::uint64_t seed = 0;
    auto* slic = app.add_subcommand("slic", "Segment an image into superpixels (writes labels.png, 16-bit)");
    slic->add_option("image", image, "Input PNG")->required()->check(CLI::ExistingFile);
    slic->add_option("--ns", ns, "Target superpixel count")->capture_default_str();
    slic->add_option("--out", out_dir, "Output directory")->capture_default_str();
    slic->add_option("--seed", seed, "Seed")->capture_default_str();

    // surf
    auto* surf = app.add_subcommand("surf", "Preview SURF on one image (i_surf.png, m_surf.png, labels.png)");
    surf->add_option("image", image, "Input PNG")->required()->check(CLI::ExistingFile);
    surf->add_option("--ns", ns, "Superpixel count N_s")->capture_default_str();
    surf->add_option("--ss", ss, "Filled superpixels S_s")->capture_default_str();
    surf->add_option("--seed", seed, "Seed")->capture_default_str();
    surf->add_option("--out", out_dir, "Output directory")->capture_default_str();

    // synth
    struct {
        std::string config;
        std::optional<std::uint64_t> seed;
        std::optional<int> size, n_train, n_test_normal, n_test_abnormal, defect_min, defect_max, period;
        std::optional<std::string> texture, defect, defect_color, category;
    } sf;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic texture dataset");
    synth->add_option("--config", sf.config, "Synthetic config JSON (SynthConfig field names)");
    synth->add_option("--out", out_dir, "Dataset root")->capture_default_str();
    synth->add_option("--seed", sf.seed, "Seed (default 0)");
    synth->add_option("--size", sf.size, "Image size (default 64)");
    synth->add_option("--n-train", sf.n_train, "Training images (default 100)");
    synth->add_option("--n-test-normal", sf.n_test_normal, "Normal test images (default 20)");
    synth->add_option("--n-test-abnormal", sf.n_test_abnormal, "Abnormal test images (default 20)");
    synth->add_option("--texture", sf.texture, "stripes | checker | blobs (default stripes)");
    synth->add_option("--defect", sf.defect, "square | ellipse (default square)");
    synth->add_option("--defect-color", sf.defect_color, "random | palette | tone (default random)");
    synth->add_option("--defect-min", sf.defect_min, "Smallest defect side (default 8)");
    synth->add_option("--defect-max", sf.defect_max, "Largest defect side (default 16)");
    synth->add_option("--period", sf.period, "Texture period (default 8)");
    synth->add_option("--category", sf.category, "Category directory name (default synthetic)");

    // train
    TrainFlags tf;
    auto* train = app.add_subcommand("train", "Train a model; writes config.lock.json, checkpoint.tsdn, loss.csv");
    train->add_option("--config", tf.config, "Config JSON (a config.lock.json reproduces a run)");
    train->add_option("--data", tf.data, "Dataset root");
    train->add_option("--category", tf.category, "Category under the dataset root");
    train->add_option("--out", tf.out, "Output directory")->capture_default_str();
    train->add_option("--seed", tf.seed, "Master seed");
    train->add_option("--epochs", tf.epochs, "Epochs");
    train->add_option("--batch-size", tf.batch_size, "Batch size");
    train->add_option("--lr", tf.lr, "Adam learning rate");
    train->add_option("--ns", tf.ns, "SURF superpixel count N_s");
    train->add_option("--ss", tf.ss, "SURF filled superpixels S_s");
    train->add_option("--sigma", tf.sigma, "Score blur sigma recorded in the lock");
    train->add_flag("--no-skips", tf.no_skips, "Disable skips into both decoders");
    train->add_flag("--no-skips-dcda", tf.no_skips_dcda, "Disable skips into the abnormality decoder");
    train->add_flag("--no-skips-dcdn", tf.no_skips_dcdn, "Disable skips into the normality decoder");
    train->add_flag("--no-fne", tf.no_fne, "Disable the feature normality estimator");
    train->add_flag("--no-dcda", tf.no_dcda, "Disable the abnormality decoder (implies --no-fne)");
    train->add_flag("--no-surf", tf.no_surf, "Train on clean images");
    train->add_option("--set", tf.sets, "Config override key=value, e.g. network.base_channels=16");

    // infer
    std::string checkpoint, input, config;
    std::optional<double> sigma;
    auto* infer = app.add_subcommand("infer", "Score every PNG under a directory; writes scores.csv and maps/");
    infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    infer->add_option("--input", input, "Input directory (searched recursively)")->required();
    infer->add_option("--out", out_dir, "Output directory")->capture_default_str();
    infer->add_option("--sigma", sigma, "Score blur sigma (default: scaled from the input size)");
    infer->add_option("--config", config, "Config JSON providing scoring.sigma");

    // eval
    std::string scores, data, category = "synthetic";
    bool per_image = false;
    auto* eval = app.add_subcommand("eval", "Evaluate inferred maps against ground truth; writes report.json");
    eval->add_option("--scores", scores, "Output directory of infer")->required();
    eval->add_option("--data", data, "Dataset root")->required();
    eval->add_option("--category", category, "Category")->capture_default_str();
    eval->add_option("--out", out_dir, "Output directory")->capture_default_str();
    eval->add_flag("--per-image", per_image, "Average per-image pixel AUCs instead of pooling pixels");

    // viz
    std::string map_path, viz_out = "overlay.png";
    auto* viz = app.add_subcommand("viz", "Overlay a score map on an image in red");
    viz->add_option("image", image, "Input PNG")->required()->check(CLI::ExistingFile);
    viz->add_option("map", map_path, "Score map (.png in [0,1] or raw .tsmp, min-max normalized)")
        ->required()
        ->check(CLI::ExistingFile);
    viz->add_option("--out", viz_out, "Output PNG")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*slic) {
            const auto img = load_image(image);
            SlicParams p;
            p.n_segments = ns;
            p.seed = seed;
            const auto seg = slic_segment(img, p);
            ensure_dir(out_dir);
            save_labels_png16(seg.labels, seg.height, seg.width, fs::path(out_dir) / "labels.png");
            std::printf("%d superpixels\n", seg.num_segments);
        } else if (*surf) {
            const auto img = load_image(image);
            SurfConfig cfg{ns, ss, seed};
            cfg.validate();
            const auto seg = slic_segment(img, surf_slic_params(cfg));
            const auto s = surf_transform(img, seg, cfg);
            ensure_dir(out_dir);
            save_image(s.distorted, fs::path(out_dir) / "i_surf.png");
            save_image(s.mask, fs::path(out_dir) / "m_surf.png");
            save_labels_png16(seg.labels, seg.height, seg.width, fs::path(out_dir) / "labels.png");
            double area = 0;
            for (float v : s.mask.data) area += v;
            std::printf("%d superpixels, %zu filled, mask fraction %.4f\n", seg.num_segments, s.filled_labels.size(),
                        area / static_cast<double>(s.mask.size()));
        } else if (*synth) {
            SynthConfig sc;
            std::string texture = texture_name(sc.texture), defect = defect_name(sc.defect),
                        defect_color = defect_color_name(sc.defect_color);
            if (!sf.config.empty()) {
                const json j = read_json_file(sf.config);
                try {
                    detail::reject_unknown(j,
                                           {"image_size", "n_train", "n_test_normal", "n_test_abnormal", "texture",
                                            "defect", "defect_color", "defect_min", "defect_max", "period", "seed",
                                            "category"},
                                           "");
                    detail::take(j, "image_size", sc.image_size);
                    detail::take(j, "n_train", sc.n_train);
                    detail::take(j, "n_test_normal", sc.n_test_normal);
                    detail::take(j, "n_test_abnormal", sc.n_test_abnormal);
                    detail::take(j, "texture", texture);
                    detail::take(j, "defect", defect);
                    detail::take(j, "defect_color", defect_color);
                    detail::take(j, "defect_min", sc.defect_min);
                    detail::take(j, "defect_max", sc.defect_max);
                    detail::take(j, "period", sc.period);
                    detail::take(j, "seed", sc.seed);
                    detail::take(j, "category", sc.category);
                } catch (const json::exception& e) {
                    throw InvalidInput(sf.config + ": " + e.what());
                }
            }
            if (sf.seed) sc.seed = *sf.seed;
            if (sf.size) sc.image_size = *sf.size;
            if (sf.n_train) sc.n_train = *sf.n_train;
            if (sf.n_test_normal) sc.n_test_normal = *sf.n_test_normal;
            if (sf.n_test_abnormal) sc.n_test_abnormal = *sf.n_test_abnormal;
            if (sf.defect_min) sc.defect_min = *sf.defect_min;
            if (sf.defect_max) sc.defect_max = *sf.defect_max;
            if (sf.period) sc.period = *sf.period;
            if (sf.category) sc.category = *sf.category;
            if (sf.texture) texture = *sf.texture;
            if (sf.defect) defect = *sf.defect;
            if (sf.defect_color) defect_color = *sf.defect_color;
            sc.texture = parse_texture(texture);
            sc.defect = parse_defect(defect);
            sc.defect_color = parse_defect_color(defect_color);
            const auto base = generate_synthetic(sc, out_dir);
            std::printf("wrote %s\n", base.string().c_str());
        } else if (*train) {
            const PipelineConfig cfg = resolve_config(tf);
            std::printf("learning_rate %g, epochs %d, seed %llu\n", cfg.train.learning_rate, cfg.train.epochs,
                        static_cast<unsigned long long>(cfg.train.seed));
            LossBreakdown last;
            int last_epoch = -1;
            try {
                const auto run = run_train(cfg, tf.out, [&](const LossRecord& r) {
                    last = r.loss;
                    if (r.epoch != last_epoch) {
                        last_epoch = r.epoch;
                        std::printf("epoch %d step 0 total %.6g\n", r.epoch, r.loss.total);
                        std::fflush(stdout);
                    }
                });
                std::printf("checkpoint %s\nloss log %s\nconfig lock %s\n", run.result.checkpoint.string().c_str(),
                            run.result.loss_log.string().c_str(), run.config_lock.string().c_str());
            } catch (const TrainingDiverged& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                print_breakdown(last);
                return 2;
            }
        } else if (*infer) {
            const auto model = load_checkpoint(checkpoint);
            double s = default_score_sigma(std::max(model.config().input_h, model.config().input_w));
            if (!config.empty()) {
                const auto cfg = config_from_json(read_json_file(config));
                if (cfg.network.input_h != model.config().input_h || cfg.network.input_w != model.config().input_w ||
                    cfg.network.base_channels != model.config().base_channels ||
                    cfg.network.latent_channels != model.config().latent_channels)
                    throw InvalidInput("config " + config + " does not match checkpoint " + checkpoint);
                s = cfg.score_sigma();
            }
            if (sigma) s = *sigma;
            detail::require(s >= 0, "--sigma must be >= 0");
            const auto entries = run_infer(model, input, out_dir, s);
            std::printf("scored %zu images (sigma %g) -> %s\n", entries.size(), s,
                        (fs::path(out_dir) / "scores.csv").string().c_str());
        } else if (*eval) {
            const auto mode = per_image ? PixelAucMode::per_image_mean : PixelAucMode::pooled;
            const auto run = run_eval(scores, data, category, out_dir, mode);
            std::printf("%s", report_table(run.report).c_str());
            if (!run.report.pixel_auc.value)
                std::fprintf(stderr, "pixel AUC unavailable: %s\n", run.report.pixel_auc.note.c_str());
            if (!run.report.image_auc.value)
                std::fprintf(stderr, "image AUC unavailable: %s\n", run.report.image_auc.note.c_str());
        } else if (*viz) {
            const auto img = load_image(image);
            const auto map = load_any_map(map_path);
            const fs::path out(viz_out);
            if (out.has_parent_path()) ensure_dir(out.parent_path());
            save_image(overlay_heatmap(img, map), out);
        }
    } catch (const TrainingDiverged& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
