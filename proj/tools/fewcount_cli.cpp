// fewcount: few-shot colony counting CLI.
// Subcommands: validate, split, crossval, train, eval, predict.
// Exit codes: 0 success, 1 validation/data error, 2 config error,
// 3 runtime/numerical error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "fewcount/density_grid.hpp"
#include "fewcount/image_io.hpp"
#include "fewcount/manifest.hpp"
#include "fewcount/model.hpp"
#include "fewcount/render.hpp"
#include "fewcount/train.hpp"

namespace fs = std::filesystem;
using namespace fewcount;
using nlohmann::json;

namespace {

using real_t = float;

struct CliConfig {
    ModelConfig model;
    TrainConfig train;
    int exemplars = 3;
};

CliConfig load_cli_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config file: ") + e.what());
    }
    std::string bad;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "model" && it.key() != "train" && it.key() != "exemplars")
            bad += (bad.empty() ? "" : ", ") + it.key();
    if (!bad.empty()) throw ConfigError("unknown config keys: " + bad);
    CliConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    else c.model.validate();
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    c.exemplars = j.value("exemplars", 3);
    if (c.exemplars < 1) throw ConfigError("config: exemplars must be >= 1");
    return c;
}

json config_snapshot(const CliConfig& c) {
    json j;
    j["model"] = model_config_to_json(c.model);
    j["train"] = train_config_to_json(c.train);
    j["exemplars"] = c.exemplars;
    return j;
}

std::vector<std::string> dataset_files(const std::string& root) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

json metrics_to_json(const MetricsReport& m, bool with_rows = true) {
    json j;
    j["mae"] = m.mae;
    j["rmse"] = m.rmse;
    j["mnae"] = m.mnae;
    if (with_rows) {
        json rows = json::array();
        for (const auto& r : m.per_sample)
            rows.push_back({{"id", r.id},
                            {"predicted", r.predicted},
                            {"truth", r.truth},
                            {"rel_err", r.rel_err}});
        j["per_sample"] = rows;
    }
    return j;
}

void print_metrics_table(const MetricsReport& m, std::ostream& os) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-10s %10.2f\n", "MAE", m.mae);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-10s %10.2f\n", "RMSE", m.rmse);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-10s %10.2f\n", "MNAE (%)", m.mnae * 100.0);
    os << buf;
}

// Applies the split file; entries absent from the file are an error.
void apply_split(const SplitFile& split, std::vector<ImageSample> all,
                 std::vector<ImageSample>* train, std::vector<ImageSample>* test) {
    for (ImageSample& s : all) {
        auto it = split.entries.find(s.id);
        if (it == split.entries.end())
            throw ValidationError("split file has no entry for sample " + s.id);
        (it->second.is_train ? train : test)->push_back(std::move(s));
    }
}

struct ManifestScope {
    RunManifest m;
    std::string out_path;
    explicit ManifestScope(const std::string& command, const fs::path& out_dir) {
        m.command = command;
        m.started_at = iso8601_now();
        fs::create_directories(out_dir);
        out_path = (out_dir / "manifest.json").string();
    }
    void finish() {
        m.finished_at = iso8601_now();
        write_manifest(out_path, m);
    }
};

int cmd_validate(const std::string& data_dir) {
    DatasetReport report = load_dataset_report(data_dir);
    for (const ImageSample& s : report.samples)
        std::cout << "OK    " << s.id << " (" << s.width() << "x" << s.height() << ", dots="
                  << s.dots.size() << ", boxes=" << s.boxes.size() << ")\n";
    for (const SampleIssue& i : report.issues) std::cout << "FAIL  " << i.id << ": " << i.message
                                                         << "\n";
    if (report.empty_root) std::cerr << "warning: no images found under " << data_dir << "\n";
    std::cout << report.samples.size() << " valid, " << report.issues.size() << " invalid\n";
    return report.issues.empty() ? 0 : 1;
}

int cmd_split(const std::string& data_dir, double ratio, int k, uint64_t seed,
              const std::string& out_file) {
    std::vector<ImageSample> samples = load_dataset(data_dir);
    SplitResult split = split_train_test(std::move(samples), ratio, seed);
    FoldSplit folds = make_folds(split.train, k, seed);
    SplitFile file;
    file.ratio = ratio;
    file.seed = seed;
    file.k = k;
    for (const ImageSample& s : split.train)
        file.entries[s.id] = SplitEntry{true, folds.fold_assignments.at(s.id)};
    for (const ImageSample& s : split.test) file.entries[s.id] = SplitEntry{false, -1};
    write_split_file(out_file, file);
    std::cout << "train=" << split.train.size() << " test=" << split.test.size() << " k=" << k
              << " -> " << out_file << "\n";
    return 0;
}

// Loads the dataset and returns (train, test) according to the split file or,
// when none is given, a deterministic 8:2 split from the seed.
void load_and_split(const std::string& data_dir, const std::string& split_file, uint64_t seed,
                    std::vector<ImageSample>* train, std::vector<ImageSample>* test) {
    std::vector<ImageSample> samples = load_dataset(data_dir);
    if (!split_file.empty()) {
        apply_split(read_split_file(split_file), std::move(samples), train, test);
    } else {
        SplitResult r = split_train_test(std::move(samples), 0.8, seed);
        *train = std::move(r.train);
        *test = std::move(r.test);
    }
}

int cmd_crossval(const std::string& config_path, const std::string& data_dir,
                 const std::string& split_file, const std::string& out_dir, int jobs,
                 std::optional<uint64_t> seed_override) {
    CliConfig cfg = load_cli_config(config_path);
    if (seed_override) {
        cfg.model.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    ManifestScope manifest("crossval", out_dir);
    manifest.m.seed = cfg.train.seed;
    manifest.m.config_snapshot = config_snapshot(cfg);
    manifest.m.inputs = dataset_files(data_dir);
    manifest.m.inputs.push_back(config_path);
    if (!split_file.empty()) manifest.m.inputs.push_back(split_file);
    manifest.m.input_hash = hash_inputs(manifest.m.inputs);

    std::vector<ImageSample> train, test;
    load_and_split(data_dir, split_file, cfg.train.seed, &train, &test);
    std::cout << "cross-validating on " << train.size() << " training samples, k="
              << cfg.train.k_folds << ", jobs=" << jobs << "\n";

    CrossvalReport report = crossval<real_t>(
        train, cfg.train.k_folds, cfg.model, cfg.train, jobs, cfg.exemplars,
        [&](int fold, Model<real_t>& model, const CheckpointMeta& meta) {
            std::string ckpt = (fs::path(out_dir) / ("fold" + std::to_string(fold) + ".fckpt"))
                                   .string();
            save_checkpoint(ckpt, model, meta);
            manifest.m.outputs.push_back(ckpt);
        });

    json folds = json::array();
    for (const FoldReport& f : report.folds) {
        json jf;
        jf["fold"] = f.fold;
        jf["train"] = metrics_to_json(f.train_metrics);
        jf["validation"] = metrics_to_json(f.val_metrics);
        jf["best_epoch"] = f.best_epoch;
        jf["epochs_run"] = f.epochs_run;
        jf["norm_mean"] = {f.stats.mean[0], f.stats.mean[1], f.stats.mean[2]};
        jf["norm_std"] = {f.stats.std[0], f.stats.std[1], f.stats.std[2]};
        std::string fold_path =
            (fs::path(out_dir) / ("fold" + std::to_string(f.fold) + ".json")).string();
        std::ofstream out(fold_path);
        out << jf.dump(2) << "\n";
        manifest.m.outputs.push_back(fold_path);
        folds.push_back(std::move(jf));
        std::cout << "fold " << f.fold << ": val MNAE " << f.val_metrics.mnae * 100.0
                  << "% (best epoch " << f.best_epoch << "/" << f.epochs_run << ")\n";
    }
    json summary;
    summary["config"] = config_snapshot(cfg);
    summary["folds"] = folds;
    summary["mean_val_mnae"] = report.mean_val_mnae;
    summary["std_val_mnae"] = report.std_val_mnae;
    summary["mean_val_mae"] = report.mean_val_mae;
    summary["mean_val_rmse"] = report.mean_val_rmse;
    std::string summary_path = (fs::path(out_dir) / "summary.json").string();
    {
        std::ofstream out(summary_path);
        out << summary.dump(2) << "\n";
    }
    manifest.m.outputs.push_back(summary_path);
    manifest.finish();
    std::cout << "mean val MNAE " << report.mean_val_mnae * 100.0 << "% +/- "
              << report.std_val_mnae * 100.0 << "%\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& split_file, const std::string& out_dir,
              std::optional<uint64_t> seed_override) {
    CliConfig cfg = load_cli_config(config_path);
    if (seed_override) {
        cfg.model.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    ManifestScope manifest("train", out_dir);
    manifest.m.seed = cfg.train.seed;
    manifest.m.config_snapshot = config_snapshot(cfg);
    manifest.m.inputs = dataset_files(data_dir);
    manifest.m.inputs.push_back(config_path);
    if (!split_file.empty()) manifest.m.inputs.push_back(split_file);
    manifest.m.input_hash = hash_inputs(manifest.m.inputs);

    std::vector<ImageSample> train, test;
    load_and_split(data_dir, split_file, cfg.train.seed, &train, &test);
    if (train.empty()) throw ValidationError("training split is empty");
    NormStats stats = compute_norm_stats(train);
    std::vector<TrainItem<real_t>> items =
        prepare_items<real_t>(train, stats, cfg.exemplars, mix_seed(cfg.train.seed, 0xEE));
    Model<real_t> model = Model<real_t>::build(cfg.model);
    std::cout << "hold-out training on " << items.size() << " samples ("
              << variant_name(cfg.model.variant) << ")\n";
    // without a validation fold the early-stopping monitor is the training MNAE
    TrainResult<real_t> result =
        train_one(model, items, {}, cfg.train, [](const EpochStats& s) {
            std::cerr << "epoch " << s.epoch << " loss " << s.mean_loss << " train-mnae "
                      << s.train_mnae * 100.0 << "% (" << s.seconds << "s)\n";
            return true;
        });
    CheckpointMeta meta;
    meta.epoch = result.best_epoch;
    meta.best_val_mnae = result.best_monitor;
    meta.has_norm_stats = true;
    meta.norm = stats;
    std::string ckpt_path = (fs::path(out_dir) / "model.fckpt").string();
    save_checkpoint(ckpt_path, model, meta);
    manifest.m.outputs.push_back(ckpt_path);
    json report;
    report["config"] = config_snapshot(cfg);
    report["train"] = metrics_to_json(result.train_metrics);
    report["best_epoch"] = result.best_epoch;
    report["epochs_run"] = result.epochs_run;
    std::string report_path = (fs::path(out_dir) / "train_report.json").string();
    {
        std::ofstream out(report_path);
        out << report.dump(2) << "\n";
    }
    manifest.m.outputs.push_back(report_path);
    manifest.finish();
    std::cout << "best epoch " << result.best_epoch << " of " << result.epochs_run
              << ", train metrics:\n";
    print_metrics_table(result.train_metrics, std::cout);
    std::cout << "checkpoint: " << ckpt_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split_file, const std::string& subset, int exemplars,
             uint64_t seed, const std::string& out_dir) {
    LoadedCheckpoint<real_t> loaded = load_checkpoint<real_t>(ckpt_path);
    if (!loaded.meta.has_norm_stats)
        throw ValidationError("checkpoint lacks normalization statistics; cannot evaluate");
    ManifestScope manifest("eval", out_dir);
    manifest.m.seed = seed;
    manifest.m.config_snapshot = model_config_to_json(loaded.model.config());
    manifest.m.inputs = dataset_files(data_dir);
    manifest.m.inputs.push_back(ckpt_path);
    if (!split_file.empty()) manifest.m.inputs.push_back(split_file);
    manifest.m.input_hash = hash_inputs(manifest.m.inputs);

    std::vector<ImageSample> train, test, chosen;
    if (!split_file.empty()) {
        load_and_split(data_dir, split_file, seed, &train, &test);
        if (subset == "train") chosen = std::move(train);
        else if (subset == "test") chosen = std::move(test);
        else {
            chosen = std::move(train);
            for (ImageSample& s : test) chosen.push_back(std::move(s));
        }
    } else {
        chosen = load_dataset(data_dir);
    }
    if (chosen.empty()) throw ValidationError("no samples selected for evaluation");
    std::vector<TrainItem<real_t>> items =
        prepare_items<real_t>(chosen, loaded.meta.norm, exemplars, mix_seed(seed, 0xE7A1));
    std::vector<SamplePrediction> preds;
    for (const TrainItem<real_t>& item : items) {
        Tensor<real_t> d = loaded.model.predict(item.image, item.exemplars);
        preds.push_back(SamplePrediction{item.id, count(d), item.gt_count});
    }
    MetricsReport m = metrics(preds);
    print_metrics_table(m, std::cout);
    json jm = metrics_to_json(m);
    jm["subset"] = subset;
    jm["checkpoint"] = ckpt_path;
    std::string metrics_path = (fs::path(out_dir) / "metrics.json").string();
    {
        std::ofstream out(metrics_path);
        out << jm.dump(2) << "\n";
    }
    manifest.m.outputs.push_back(metrics_path);
    manifest.finish();
    return 0;
}

std::vector<BoundingBox> parse_inline_boxes(const std::string& spec) {
    std::vector<BoundingBox> boxes;
    std::istringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.empty()) continue;
        BoundingBox b;
        if (std::sscanf(part.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.h, &b.w) != 4)
            throw ConfigError("bad box spec '" + part + "', expected x,y,h,w");
        boxes.push_back(b);
    }
    if (boxes.empty()) throw ConfigError("no boxes given");
    return boxes;
}

std::vector<BoundingBox> read_boxes_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open boxes file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad boxes file: ") + e.what());
    }
    const json& arr = j.is_object() ? j.at("boxes") : j;
    std::vector<BoundingBox> boxes;
    for (const auto& b : arr)
        boxes.push_back(BoundingBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                    b[3].get<double>()});
    if (boxes.empty()) throw ValidationError("boxes file holds no boxes");
    return boxes;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& boxes_inline, const std::string& boxes_file,
                const std::string& out_dir) {
    LoadedCheckpoint<real_t> loaded = load_checkpoint<real_t>(ckpt_path);
    ManifestScope manifest("predict", out_dir);
    manifest.m.config_snapshot = model_config_to_json(loaded.model.config());
    manifest.m.inputs = {ckpt_path, image_path};
    if (!boxes_file.empty()) manifest.m.inputs.push_back(boxes_file);
    manifest.m.input_hash = hash_inputs(manifest.m.inputs);

    Tensor<uint8_t> pixels = read_image(image_path);
    std::vector<BoundingBox> boxes;
    if (!boxes_inline.empty()) boxes = parse_inline_boxes(boxes_inline);
    else if (!boxes_file.empty()) boxes = read_boxes_file(boxes_file);
    else throw ConfigError("predict needs --boxes or --boxes-file");
    for (const BoundingBox& b : boxes)
        if (!box_in_bounds(b, pixels.dim(2), pixels.dim(1)))
            throw ValidationError("exemplar box outside the image: " + box_str(b));

    NormStats stats;
    if (loaded.meta.has_norm_stats) {
        stats = loaded.meta.norm;
    } else {
        std::cerr << "warning: checkpoint lacks normalization statistics; using identity\n";
        for (int c = 0; c < 3; ++c) {
            stats.mean[c] = 0.0;
            stats.std[c] = 1.0;
        }
    }
    ImageSample sample;
    sample.id = fs::path(image_path).stem().string();
    sample.pixels = pixels;
    Tensor<real_t> input = normalize<real_t>(sample, stats);
    Tensor<real_t> density = loaded.model.predict(input, boxes);

    double predicted = count(density);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", predicted);
    std::cout << "count: " << buf << "\n";
    std::string count_path = (fs::path(out_dir) / "count.txt").string();
    {
        // full precision in the file: it must match the raw grid's sum
        char full[64];
        std::snprintf(full, sizeof(full), "%.6f", predicted);
        std::ofstream out(count_path);
        out << full << "\n";
    }
    std::string grid_path = (fs::path(out_dir) / "density.fcd").string();
    write_density_grid(grid_path, density);
    std::string gray_path = (fs::path(out_dir) / "density.png").string();
    write_png(gray_path, density_to_gray(density));
    std::string overlay_path = (fs::path(out_dir) / "overlay.png").string();
    write_png(overlay_path, render_overlay(pixels, boxes, density));
    manifest.m.outputs = {count_path, grid_path, gray_path, overlay_path};
    manifest.finish();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fewcount: few-shot counting of small clustered objects"};
    app.require_subcommand(1);

    std::string data_dir, config_path, split_file, out_dir = "out", ckpt_path, image_path;
    std::string boxes_inline, boxes_file, subset = "test";
    double ratio = 0.8;
    int k = 5, jobs = 1, exemplars = 3;
    uint64_t seed = 0;
    bool seed_given = false;

    auto add_data = [&](CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("--data", data_dir, "dataset directory")
                        ->envname("FEWCOUNT_DATA");
        if (required) opt->required();
    };

    CLI::App* validate = app.add_subcommand("validate", "validate a dataset directory");
    add_data(validate);

    CLI::App* split = app.add_subcommand("split", "write a train/test + fold split file");
    add_data(split);
    split->add_option("--ratio", ratio, "train fraction (default 0.8)");
    split->add_option("--k", k, "fold count (default 5)");
    split->add_option("--seed", seed, "split seed");
    std::string split_out = "split.json";
    split->add_option("--out", split_out, "output split file");

    CLI::App* crossval_cmd = app.add_subcommand("crossval", "k-fold cross-validation");
    add_data(crossval_cmd);
    crossval_cmd->add_option("--config", config_path, "config file")->required();
    crossval_cmd->add_option("--split", split_file, "split file (limits to its train side)");
    crossval_cmd->add_option("--out", out_dir, "output directory");
    crossval_cmd->add_option("--jobs", jobs, "parallel folds");
    auto* cv_seed = crossval_cmd->add_option("--seed", seed, "override config seeds");
    cv_seed->each([&](const std::string&) { seed_given = true; });

    CLI::App* train_cmd = app.add_subcommand("train", "hold-out training on the train split");
    add_data(train_cmd);
    train_cmd->add_option("--config", config_path, "config file")->required();
    train_cmd->add_option("--split", split_file, "split file");
    train_cmd->add_option("--out", out_dir, "output directory");
    auto* tr_seed = train_cmd->add_option("--seed", seed, "override config seeds");
    tr_seed->each([&](const std::string&) { seed_given = true; });

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_data(eval_cmd);
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--split", split_file, "split file");
    eval_cmd->add_option("--subset", subset, "train|test|all (default test)");
    eval_cmd->add_option("--exemplars", exemplars, "exemplar boxes per image (default 3)");
    eval_cmd->add_option("--seed", seed, "exemplar selection seed");
    eval_cmd->add_option("--out", out_dir, "output directory");

    CLI::App* predict_cmd = app.add_subcommand("predict", "predict a count for one image");
    predict_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    predict_cmd->add_option("--image", image_path, "query image")->required();
    predict_cmd->add_option("--boxes", boxes_inline, "inline boxes 'x,y,h,w;x,y,h,w;...'");
    predict_cmd->add_option("--boxes-file", boxes_file, "JSON with a 'boxes' array");
    predict_cmd->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        std::optional<uint64_t> seed_override =
            seed_given ? std::optional<uint64_t>(seed) : std::nullopt;
        if (app.got_subcommand(validate)) return cmd_validate(data_dir);
        if (app.got_subcommand(split)) return cmd_split(data_dir, ratio, k, seed, split_out);
        if (app.got_subcommand(crossval_cmd))
            return cmd_crossval(config_path, data_dir, split_file, out_dir, jobs, seed_override);
        if (app.got_subcommand(train_cmd))
            return cmd_train(config_path, data_dir, split_file, out_dir, seed_override);
        if (app.got_subcommand(eval_cmd))
            return cmd_eval(ckpt_path, data_dir, split_file, subset, exemplars, seed, out_dir);
        if (app.got_subcommand(predict_cmd))
            return cmd_predict(ckpt_path, image_path, boxes_inline, boxes_file, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 1;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
