#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fewcount/density_grid.hpp"
#include "fewcount/image_io.hpp"
#include "fewcount/model.hpp"

#include "synthetic.hpp"

using namespace fewcount;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Cli {
    fs::path root;

    Cli() {
        root = fs::temp_directory_path() / "fewcount_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Cli() { fs::remove_all(root); }

    int run(const std::string& args, std::string* output = nullptr) const {
        fs::path out_file = root / "cmd_output.txt";
        std::string cmd = std::string(FEWCOUNT_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2>&1";
        int status = std::system(cmd.c_str());
        if (output) {
            std::ifstream in(out_file);
            std::stringstream ss;
            ss << in.rdbuf();
            *output = ss.str();
        }
        return WEXITSTATUS(status);
    }

    fs::path make_dataset(const std::string& name, int n, uint64_t seed) const {
        fs::path dir = root / name;
        fs::create_directories(dir);
        auto samples = testutil::make_dot_dataset(n, 32, 32, 4, 8, seed);
        for (const ImageSample& s : samples) {
            write_png((dir / (s.id + ".png")).string(), s.pixels);
            json j;
            j["dots"] = json::array();
            for (const Point& p : s.dots) j["dots"].push_back({p.x, p.y});
            j["boxes"] = json::array();
            for (const BoundingBox& b : s.boxes) j["boxes"].push_back({b.x, b.y, b.h, b.w});
            std::ofstream out(dir / (s.id + ".json"));
            out << j.dump();
        }
        return dir;
    }

    fs::path write_config(const std::string& name, int max_epochs = 1) const {
        json j;
        j["model"] = {{"variant", "pro"},   {"k", 2},          {"C", 8},
                      {"N", 1},             {"k_embed", 8},    {"roi_out", {3, 3}},
                      {"roi_mode", "align"}, {"scales", {1.0}}, {"dropout_p", 0.0},
                      {"seed", 3}};
        j["train"] = {{"lr", 1e-4}, {"max_epochs", max_epochs}, {"k_folds", 2}, {"seed", 3}};
        j["exemplars"] = 2;
        fs::path p = root / name;
        std::ofstream out(p);
        out << j.dump(2);
        return p;
    }
};

} // namespace

TEST_CASE("cli end to end") {
    Cli cli;
    fs::path data = cli.make_dataset("data", 6, 900);

    SUBCASE("validate accepts a good dataset") {
        std::string out;
        CHECK(cli.run("validate --data " + data.string(), &out) == 0);
        CHECK(out.find("6 valid, 0 invalid") != std::string::npos);
    }

    SUBCASE("validate flags a bad box and exits 1, naming the sample") {
        fs::path bad = cli.make_dataset("bad_data", 2, 901);
        {
            std::ofstream out(bad / "synth_001.json");
            out << R"({"dots": [[4,4]], "boxes": [[28.0, 4.0, 4.0, 10.0]]})";
        }
        std::string out;
        CHECK(cli.run("validate --data " + bad.string(), &out) == 1);
        CHECK(out.find("synth_001") != std::string::npos);
    }

    SUBCASE("validate warns on an empty directory and exits 0") {
        fs::path empty = cli.root / "empty";
        fs::create_directories(empty);
        std::string out;
        CHECK(cli.run("validate --data " + empty.string(), &out) == 0);
        CHECK(out.find("warning") != std::string::npos);
    }

    SUBCASE("train, eval, predict round trip") {
        fs::path cfg = cli.write_config("cfg.json");
        fs::path split = cli.root / "split.json";
        std::string out;
        REQUIRE(cli.run("split --data " + data.string() + " --ratio 0.8 --k 2 --seed 5 --out " +
                            split.string(),
                        &out) == 0);
        SplitFile sf = read_split_file(split.string());
        CHECK(sf.entries.size() == 6);

        fs::path train_out = cli.root / "run_train";
        REQUIRE(cli.run("train --config " + cfg.string() + " --data " + data.string() +
                            " --split " + split.string() + " --out " + train_out.string(),
                        &out) == 0);
        fs::path ckpt = train_out / "model.fckpt";
        CHECK(fs::exists(ckpt));
        CHECK(fs::exists(train_out / "train_report.json"));
        CHECK(fs::exists(train_out / "manifest.json"));

        fs::path eval_out = cli.root / "run_eval";
        REQUIRE(cli.run("eval --checkpoint " + ckpt.string() + " --data " + data.string() +
                            " --split " + split.string() + " --subset test --out " +
                            eval_out.string(),
                        &out) == 0);
        CHECK(out.find("MNAE") != std::string::npos);
        std::ifstream min(eval_out / "metrics.json");
        json metrics_doc;
        min >> metrics_doc;
        CHECK(metrics_doc.contains("mae"));
        CHECK(metrics_doc.contains("rmse"));
        CHECK(metrics_doc.contains("mnae"));
        CHECK(metrics_doc["per_sample"].size() == 1); // 6 samples, 0.8 split -> 1 test image

        fs::path pred_out = cli.root / "run_predict";
        fs::path query = data / "synth_000.png";
        REQUIRE(cli.run("predict --checkpoint " + ckpt.string() + " --image " + query.string() +
                            " --boxes \"4,4,8,8;16,12,8,8\" --out " + pred_out.string(),
                        &out) == 0);
        CHECK(out.find("count:") != std::string::npos);
        Tensor<float> grid = read_density_grid((pred_out / "density.fcd").string());
        CHECK(grid.shape() == Shape{32, 32});
        std::ifstream cin_(pred_out / "count.txt");
        double printed = 0.0;
        cin_ >> printed;
        CHECK(std::abs(printed - grid.dsum()) < 1e-4);
        CHECK(fs::exists(pred_out / "density.png"));
        CHECK(fs::exists(pred_out / "overlay.png"));
        CHECK(fs::exists(pred_out / "manifest.json"));

        // manifest reproducibility fields
        std::ifstream mf(pred_out / "manifest.json");
        json manifest;
        mf >> manifest;
        CHECK(manifest["command"] == "predict");
        CHECK(manifest["input_hash"].get<std::string>().size() == 40);

        // predict rejects out-of-image boxes
        CHECK(cli.run("predict --checkpoint " + ckpt.string() + " --image " + query.string() +
                      " --boxes \"28,28,10,10\" --out " + pred_out.string()) == 1);
    }

    SUBCASE("crossval writes fold reports, checkpoints and a summary") {
        fs::path cfg = cli.write_config("cfg_cv.json");
        fs::path cv_out = cli.root / "run_cv";
        std::string out;
        REQUIRE(cli.run("crossval --config " + cfg.string() + " --data " + data.string() +
                            " --out " + cv_out.string() + " --jobs 2",
                        &out) == 0);
        CHECK(fs::exists(cv_out / "fold0.json"));
        CHECK(fs::exists(cv_out / "fold1.json"));
        CHECK(fs::exists(cv_out / "fold0.fckpt"));
        CHECK(fs::exists(cv_out / "summary.json"));
        std::ifstream sin(cv_out / "summary.json");
        json summary;
        sin >> summary;
        CHECK(summary.contains("mean_val_mnae"));
        CHECK(summary.contains("std_val_mnae"));
        CHECK(summary["folds"].size() == 2);
        CHECK(summary["folds"][0].contains("train"));
        CHECK(summary["folds"][0].contains("validation"));
    }

    SUBCASE("unknown config keys exit 2, naming the keys") {
        fs::path cfg = cli.root / "bad_cfg.json";
        {
            std::ofstream out(cfg);
            out << R"({"model": {"variant": "pro", "kernel_count": 4}})";
        }
        std::string out;
        CHECK(cli.run("crossval --config " + cfg.string() + " --data " + data.string(), &out) ==
              2);
        CHECK(out.find("kernel_count") != std::string::npos);
    }

    SUBCASE("missing checkpoint exits 1") {
        CHECK(cli.run("eval --checkpoint /nonexistent.fckpt --data " + data.string()) == 1);
    }

    SUBCASE("runtime errors exit 3") {
        // odd image dimensions violate the backbone contract at forward time
        fs::path odd = cli.root / "odd_data";
        fs::create_directories(odd);
        write_png((odd / "odd.png").string(), Tensor<uint8_t>::full(Shape{3, 31, 31}, 90));
        {
            std::ofstream out(odd / "odd.json");
            out << R"({"dots": [[5,5],[10,10]], "boxes": [[4,4,6,6]]})";
        }
        ModelConfig mc;
        mc.variant = Variant::pro;
        mc.k = 2;
        mc.C = 8;
        mc.N = 1;
        mc.k_embed = 8;
        mc.seed = 1;
        Model<float> m = Model<float>::build(mc);
        CheckpointMeta meta;
        meta.has_norm_stats = true;
        for (int c = 0; c < 3; ++c) {
            meta.norm.mean[c] = 54.0;
            meta.norm.std[c] = 30.0;
        }
        fs::path ckpt = cli.root / "odd.fckpt";
        save_checkpoint(ckpt.string(), m, meta);
        CHECK(cli.run("eval --checkpoint " + ckpt.string() + " --data " + odd.string()) == 3);
    }

    SUBCASE("identical config, seed and data give identical metric documents") {
        fs::path cfg = cli.write_config("cfg_repro.json");
        fs::path train_out = cli.root / "repro_train";
        REQUIRE(cli.run("train --config " + cfg.string() + " --data " + data.string() +
                        " --out " + train_out.string()) == 0);
        fs::path ckpt = train_out / "model.fckpt";
        auto run_eval = [&](const std::string& dir) {
            REQUIRE(cli.run("eval --checkpoint " + ckpt.string() + " --data " + data.string() +
                            " --seed 5 --out " + dir) == 0);
            std::ifstream in(fs::path(dir) / "metrics.json");
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        std::string a = run_eval((cli.root / "repro_a").string());
        std::string b = run_eval((cli.root / "repro_b").string());
        CHECK(a == b);
        CHECK(!a.empty());
    }

    SUBCASE("zero-parameter checkpoint predicts zero everywhere: MNAE is 1") {
        ModelConfig mc;
        mc.variant = Variant::acfamnet;
        mc.k = 2;
        mc.seed = 1;
        Model<float> m = Model<float>::build(mc);
        for (auto& e : m.params().entries()) e.value.fill(0.0f);
        CheckpointMeta meta;
        meta.has_norm_stats = true;
        for (int c = 0; c < 3; ++c) {
            meta.norm.mean[c] = 54.0;
            meta.norm.std[c] = 30.0;
        }
        fs::path ckpt = cli.root / "zero.fckpt";
        save_checkpoint(ckpt.string(), m, meta);
        fs::path eval_out = cli.root / "run_eval_zero";
        std::string out;
        REQUIRE(cli.run("eval --checkpoint " + ckpt.string() + " --data " + data.string() +
                            " --out " + eval_out.string(),
                        &out) == 0);
        std::ifstream min(eval_out / "metrics.json");
        json metrics_doc;
        min >> metrics_doc;
        CHECK(metrics_doc["mnae"].get<double>() == doctest::Approx(1.0));
    }
}
