#pragma once

// End-to-end orchestration: JSON configuration, training on a dataset directory,
// inference to score maps, evaluation against ground truth, heatmap overlays.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsdn/checkpoint.hpp"
#include "tsdn/dataio.hpp"
#include "tsdn/error.hpp"
#include "tsdn/imgproc.hpp"
#include "tsdn/network.hpp"
#include "tsdn/scoring.hpp"
#include "tsdn/training.hpp"

namespace tsdn {

using json = nlohmann::ordered_json;

struct PipelineConfig {
    NetworkConfig network;
    TrainConfig train;
    std::string data_root;
    std::string category = "synthetic";
    std::optional<double> sigma;  // score blur; unset = default_score_sigma(input size)
    PixelAucMode pixel_auc_mode = PixelAucMode::pooled;

    double score_sigma() const {
        return sigma ? *sigma : default_score_sigma(std::max(network.input_h, network.input_w));
    }

    void validate() const {
        network.validate();
        train.validate();
        detail::require(!sigma || (*sigma >= 0 && std::isfinite(*sigma)), "config: sigma must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <typename V>
void take(const json& j, const char* key, V& dst) {
    if (j.contains(key)) dst = j.at(key).get<V>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw InvalidInput("config: '" + where + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* allowed : keys) ok = ok || k == allowed;
        if (!ok) throw InvalidInput("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
    }
}

}  // namespace detail

inline json to_json(const PipelineConfig& c) {
    const auto& n = c.network;
    const auto& t = c.train;
    json j;
    j["network"] = {{"input_h", n.input_h},
                    {"input_w", n.input_w},
                    {"base_channels", n.base_channels},
                    {"latent_channels", n.latent_channels},
                    {"use_skips_dcd_a", n.use_skips_dcd_a},
                    {"use_skips_dcd_n", n.use_skips_dcd_n},
                    {"enable_dcd_a", n.enable_dcd_a},
                    {"enable_fne", n.enable_fne}};
    j["train"] = {{"learning_rate", t.learning_rate},
                  {"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"seed", t.seed},
                  {"surf", {{"n_segments", t.surf.n_segments}, {"fill_count", t.surf.fill_count}}},
                  {"weights",
                   {{"lambda_r", t.weights.lambda_r},
                    {"lambda_s", t.weights.lambda_s},
                    {"lambda_g", t.weights.lambda_g},
                    {"lambda_m", t.weights.lambda_m},
                    {"lambda_f", t.weights.lambda_f}}},
                  {"detach_fne_target", t.detach_fne_target},
                  {"use_surf", t.use_surf}};
    j["data"] = {{"root", c.data_root}, {"category", c.category}};
    j["scoring"] = {{"sigma", c.score_sigma()},
                    {"pixel_auc", c.pixel_auc_mode == PixelAucMode::pooled ? "pooled" : "per_image"}};
    return j;
}

/// Starts from `base` and overrides every key present in `j`. Unknown keys are errors.
inline PipelineConfig config_from_json(const json& j, PipelineConfig base = {}) {
    try {
        detail::reject_unknown(j, {"network", "train", "data", "scoring"}, "");
        if (j.contains("network")) {
            const auto& n = j["network"];
            detail::reject_unknown(n,
                                   {"input_h", "input_w", "base_channels", "latent_channels", "use_skips_dcd_a",
                                    "use_skips_dcd_n", "enable_dcd_a", "enable_fne"},
                                   "network");
            auto& o = base.network;
            detail::take(n, "input_h", o.input_h);
            detail::take(n, "input_w", o.input_w);
            detail::take(n, "base_channels", o.base_channels);
            detail::take(n, "latent_channels", o.latent_channels);
            detail::take(n, "use_skips_dcd_a", o.use_skips_dcd_a);
            detail::take(n, "use_skips_dcd_n", o.use_skips_dcd_n);
            detail::take(n, "enable_dcd_a", o.enable_dcd_a);
            detail::take(n, "enable_fne", o.enable_fne);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            detail::reject_unknown(t,
                                   {"learning_rate", "epochs", "batch_size", "seed", "surf", "weights",
                                    "detach_fne_target", "use_surf"},
                                   "train");
            auto& o = base.train;
            detail::take(t, "learning_rate", o.learning_rate);
            detail::take(t, "epochs", o.epochs);
            detail::take(t, "batch_size", o.batch_size);
            detail::take(t, "seed", o.seed);
            detail::take(t, "detach_fne_target", o.detach_fne_target);
            detail::take(t, "use_surf", o.use_surf);
            if (t.contains("surf")) {
                detail::reject_unknown(t["surf"], {"n_segments", "fill_count"}, "train.surf");
                detail::take(t["surf"], "n_segments", o.surf.n_segments);
                detail::take(t["surf"], "fill_count", o.surf.fill_count);
            }
            if (t.contains("weights")) {
                const auto& w = t["weights"];
                detail::reject_unknown(w, {"lambda_r", "lambda_s", "lambda_g", "lambda_m", "lambda_f"},
                                       "train.weights");
                detail::take(w, "lambda_r", o.weights.lambda_r);
                detail::take(w, "lambda_s", o.weights.lambda_s);
                detail::take(w, "lambda_g", o.weights.lambda_g);
                detail::take(w, "lambda_m", o.weights.lambda_m);
                detail::take(w, "lambda_f", o.weights.lambda_f);
            }
        }
        if (j.contains("data")) {
            detail::reject_unknown(j["data"], {"root", "category"}, "data");
            detail::take(j["data"], "root", base.data_root);
            detail::take(j["data"], "category", base.category);
        }
        if (j.contains("scoring")) {
            const auto& s = j["scoring"];
            detail::reject_unknown(s, {"sigma", "pixel_auc"}, "scoring");
            if (s.contains("sigma") && !s["sigma"].is_null()) base.sigma = s["sigma"].get<double>();
            if (s.contains("pixel_auc")) {
                const auto mode = s["pixel_auc"].get<std::string>();
                if (mode == "pooled")
                    base.pixel_auc_mode = PixelAucMode::pooled;
                else if (mode == "per_image")
                    base.pixel_auc_mode = PixelAucMode::per_image_mean;
                else
                    throw InvalidInput("config: scoring.pixel_auc must be 'pooled' or 'per_image'");
            }
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("config: ") + e.what());
    }
    return base;
}

inline json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Training

/// Loads an image and bilinearly resizes it to the network input when needed.
inline ImageTensor load_network_input(const fs::path& path, const NetworkConfig& net) {
    ImageTensor img = load_image(path);
    if (img.height != net.input_h || img.width != net.input_w) img = resize_bilinear(img, net.input_h, net.input_w);
    return img;
}

struct TrainRun {
    TrainResult result;
    fs::path config_lock;
};

/// Trains on <data_root>/<category>/train/good and writes config.lock.json, the
/// checkpoint and loss.csv into out_dir.
inline TrainRun run_train(const PipelineConfig& cfg, const fs::path& out_dir,
                          const std::function<void(const LossRecord&)>& on_step = {},
                          TsdnModel<float>* model_out = nullptr) {
    cfg.validate();
    detail::require(!cfg.data_root.empty(), "train: no dataset root configured");
    const auto items = scan_dataset(cfg.data_root, cfg.category);
    std::vector<ImageTensor> images;
    for (const auto& it : items)
        if (it.split == Split::train) images.push_back(load_network_input(it.image, cfg.network));
    detail::require(!images.empty(), "train: no training images under " + cfg.data_root);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    TrainRun run;
    run.config_lock = out_dir / "config.lock.json";
    write_json_file(run.config_lock, to_json(cfg));
    run.result = train_loop(images, cfg.network, cfg.train, out_dir, on_step, model_out);
    return run;
}

// ---------------------------------------------------------------------------
// Inference

/// Scores one image with the normality decoder only. Maps come back at the
/// resolution of `img`.
inline ScoreMaps score_image(const TsdnModel<float>& model, const ImageTensor& img, double sigma) {
    const auto& net = model.config();
    detail::require(img.channels == 3, "score_image: RGB input required");
    const bool resized = img.height != net.input_h || img.width != net.input_w;
    const ImageTensor x = resized ? resize_bilinear(img, net.input_h, net.input_w) : img;
    const ImageTensor r = model.reconstruct(x);
    ScoreMaps maps = pixel_score_map(x, r, sigma);
    if (resized) {
        maps.s_map = resize_bilinear(maps.s_map, img.height, img.width);
        maps.s_final = minmax_normalize(maps.s_map);
    }
    return maps;
}

struct InferEntry {
    std::string rel;  // path relative to the input directory, '/'-separated
    double image_score = 0;
};

inline std::vector<fs::path> list_pngs_recursive(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("input directory does not exist: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Scores every PNG below input_dir. Writes out_dir/scores.csv (filename,image_score)
/// and, per image, maps/<rel>.png (16-bit S_final) and maps/<rel>.tsmp (raw S_map).
inline std::vector<InferEntry> run_infer(const TsdnModel<float>& model, const fs::path& input_dir,
                                         const fs::path& out_dir, double sigma) {
    const auto files = list_pngs_recursive(input_dir);
    const fs::path maps_dir = out_dir / "maps";
    std::error_code ec;
    fs::create_directories(maps_dir, ec);
    if (ec) throw IoError("cannot create " + maps_dir.string() + ": " + ec.message());
    std::vector<InferEntry> entries;
    std::ostringstream csv;
    csv << "filename,image_score\n";
    for (const auto& f : files) {
        const fs::path rel = fs::relative(f, input_dir);
        const ImageTensor img = load_image(f);
        const ScoreMaps maps = score_image(model, img, sigma);
        const fs::path stem = maps_dir / rel;
        fs::create_directories(stem.parent_path(), ec);
        if (ec) throw IoError("cannot create " + stem.parent_path().string() + ": " + ec.message());
        save_png16(maps.s_final, fs::path(stem).replace_extension(".png"));
        save_score_map(maps.s_map, fs::path(stem).replace_extension(".tsmp"));
        InferEntry e{rel.generic_string(), image_score(maps.s_map)};
        csv << e.rel << ',' << format_score(e.image_score) << '\n';
        entries.push_back(std::move(e));
    }
    write_text_file(out_dir / "scores.csv", csv.str());
    return entries;
}

// ---------------------------------------------------------------------------
// Evaluation

inline json metric_json(const MetricResult& m) { return m.value ? json(*m.value) : json(nullptr); }

inline json report_json(const EvalReport& r, PixelAucMode mode) {
    json j;
    j["pixel_auc"] = metric_json(r.pixel_auc);
    j["image_auc"] = metric_json(r.image_auc);
    json cats = json::object();
    for (const auto& [type, m] : r.category_pixel_auc)
        cats[type] = {{"pixel_auc", metric_json(m)}, {"image_auc", metric_json(r.category_image_auc.at(type))}};
    j["categories"] = cats;
    j["n_images"] = r.n_images;
    j["pixel_auc_mode"] = mode == PixelAucMode::pooled ? "pooled" : "per_image";
    json notes = json::object();
    if (!r.pixel_auc.value) notes["pixel_auc"] = r.pixel_auc.note;
    if (!r.image_auc.value) notes["image_auc"] = r.image_auc.note;
    if (!notes.empty()) j["unavailable"] = notes;
    return j;
}

inline std::string format_metric(const MetricResult& m) {
    if (!m.value) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *m.value);
    return buf;
}

/// Plain-text table, one row per defect type plus the overall row (AUC in percent).
inline std::string report_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(20) << "category" << std::right << std::setw(12) << "pixel AUC" << std::setw(12)
       << "image AUC" << '\n';
    for (const auto& [type, m] : r.category_pixel_auc)
        os << std::left << std::setw(20) << type << std::right << std::setw(12) << format_metric(m) << std::setw(12)
           << format_metric(r.category_image_auc.at(type)) << '\n';
    os << std::left << std::setw(20) << "all" << std::right << std::setw(12) << format_metric(r.pixel_auc)
       << std::setw(12) << format_metric(r.image_auc) << '\n';
    return os.str();
}

/// Pairs the raw maps written by run_infer on <root>/<category>/test with the
/// dataset's labels and masks. Items whose map is missing abort with an error.
inline std::vector<ScoredImage> collect_scored(const fs::path& scores_dir, const fs::path& data_root,
                                               const std::string& category) {
    const auto items = scan_dataset(data_root, category);
    const fs::path test_dir = data_root / category / "test";
    std::vector<ScoredImage> out;
    for (const auto& it : items) {
        if (it.split != Split::test) continue;
        const fs::path rel = fs::relative(it.image, test_dir);
        const fs::path map_path = (scores_dir / "maps" / rel).replace_extension(".tsmp");
        if (!fs::is_regular_file(map_path)) throw IoError("missing score map " + map_path.string());
        ScoredImage s;
        s.name = rel.generic_string();
        s.category = it.defect_type;
        s.s_map = load_score_map(map_path);
        s.image_score = image_score(s.s_map);
        s.gt_label = it.is_normal() ? 0 : 1;
        if (it.is_normal())
            s.gt_mask = MaskMap(1, s.s_map.height, s.s_map.width);
        else if (it.gt_mask)
            s.gt_mask = load_mask(*it.gt_mask);
        out.push_back(std::move(s));
    }
    return out;
}

struct EvalRun {
    EvalReport report;
    json report_json;
};

inline EvalRun run_eval(const fs::path& scores_dir, const fs::path& data_root, const std::string& category,
                        const fs::path& out_dir, PixelAucMode mode = PixelAucMode::pooled) {
    const auto scored = collect_scored(scores_dir, data_root, category);
    EvalRun run;
    run.report = evaluate(scored, mode);
    run.report_json = report_json(run.report, mode);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    write_json_file(out_dir / "report.json", run.report_json);
    return run;
}

// ---------------------------------------------------------------------------
// Visualization

inline constexpr float kOverlayAlpha = 0.5f;

/// Blends toward pure red with per-pixel weight kOverlayAlpha * score.
inline ImageTensor overlay_heatmap(const ImageTensor& img, const MaskMap& score) {
    detail::require(img.channels == 3, "overlay: RGB image required");
    detail::require(score.channels == 1 && score.height == img.height && score.width == img.width,
                    "overlay: score map " + shape_str(score) + " does not match image " + shape_str(img));
    ImageTensor out = img;
    const std::size_t n = img.plane_size();
    for (std::size_t p = 0; p < n; ++p) {
        const float a = kOverlayAlpha * std::clamp(score.data[p], 0.0f, 1.0f);
        for (int c = 0; c < 3; ++c) {
            const float target = c == 0 ? 1.0f : 0.0f;
            out.data[c * n + p] = (1 - a) * img.data[c * n + p] + a * target;
        }
    }
    return out;
}

}  // namespace tsdn
