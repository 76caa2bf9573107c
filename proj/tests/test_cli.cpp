#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hairseg/model.hpp"
#include "hairseg/png_io.hpp"
#include "hairseg/report.hpp"

namespace fs = std::filesystem;
using namespace hairseg;

namespace {

#ifndef HAIRSEG_CLI_PATH
#error "HAIRSEG_CLI_PATH must point at the hairseg binary"
#endif

struct RunOutput {
    int exit_code = -1;
    std::string output; // stdout + stderr
};

RunOutput run_cli(const std::string& args) {
    const std::string cmd = std::string(HAIRSEG_CLI_PATH) + " " + args + " 2>&1";
    std::FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunOutput out;
    std::array<char, 4096> buf;
    while (std::fgets(buf.data(), buf.size(), pipe)) out.output += buf.data();
    const int status = pclose(pipe);
    out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("hs_cli_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("cli usage errors exit with code 1") {
    CHECK(run_cli("").exit_code == 1);
    CHECK(run_cli("frobnicate").exit_code == 1);
    CHECK(run_cli("train").exit_code == 1); // missing required options
    CHECK(run_cli("gradcheck --preset b2").exit_code == 1);
    const RunOutput b2 = run_cli("gradcheck --preset b2");
    CHECK(b2.output.find("tiny") != std::string::npos); // guidance
}

TEST_CASE("cli synth then full train-report-eval loop") {
    TempDir dir("loop");
    const std::string data_root = (dir.path / "data").string();
    const std::string out_dir = (dir.path / "run").string();

    // synth
    RunOutput synth = run_cli("synth --out " + data_root + " --count 8 --extent 32 --seed 3");
    REQUIRE(synth.exit_code == 0);
    CHECK(fs::exists(fs::path(data_root) / "images" / "synth0007.png"));

    // synth rejects a bad extent with a data-ish error (exit 2)
    CHECK(run_cli("synth --out " + (dir.path / "bad").string() + " --count 1 --extent 30")
              .exit_code == 2);

    // train
    const std::string cfg_path = (dir.path / "train.cfg").string();
    {
        std::ofstream cfg(cfg_path);
        cfg << "k=2\nmax_epochs=2\nbatch_size=4\npreset=tiny\nseed=42\n";
    }
    RunOutput train = run_cli("train --config " + cfg_path + " --data " + data_root + " --out " +
                              out_dir);
    REQUIRE(train.exit_code == 0);
    // one section per fold plus the aggregate footer
    CHECK(train.output.find("fold 1/2 done") != std::string::npos);
    CHECK(train.output.find("fold 2/2 done") != std::string::npos);
    CHECK(train.output.find("Average Metrics Across Folds") != std::string::npos);
    CHECK(fs::exists(fs::path(out_dir) / "metrics.csv"));
    CHECK(fs::exists(fs::path(out_dir) / "checkpoint.bin"));
    CHECK(fs::exists(fs::path(out_dir) / "report.md"));
    CHECK(fs::exists(fs::path(out_dir) / "curves.csv"));
    CHECK(fs::exists(fs::path(out_dir) / "fold_plan.tsv"));
    CHECK(fs::exists(fs::path(out_dir) / "weights" / "fold1_best.bin"));
    CHECK(fs::exists(fs::path(out_dir) / "weights" / "fold2_best.bin"));

    // report from the training csv
    RunOutput report = run_cli("report --csv " + (fs::path(out_dir) / "metrics.csv").string());
    CHECK(report.exit_code == 0);
    CHECK(report.output.find("Per-Fold Performance Metrics") != std::string::npos);

    // eval with trained weights
    const std::string eval_csv = (dir.path / "eval.csv").string();
    RunOutput eval = run_cli("eval --weights " +
                             (fs::path(out_dir) / "weights" / "fold1_best.bin").string() +
                             " --data " + data_root + " --csv " + eval_csv);
    REQUIRE(eval.exit_code == 0);
    CHECK(eval.output.find("dice") != std::string::npos);
    CHECK(eval.output.find("lpips n/a") != std::string::npos); // no perceptual weights

    // the CSV round-trips to the printed 3-decimal values
    MetricRows rows = load_metrics_csv(eval_csv);
    REQUIRE(rows.size() == 1);
    const std::string dice_printed = "dice " + format_metric(rows[0].second.dice, false);
    CHECK(eval.output.find(dice_printed) != std::string::npos);
}

TEST_CASE("cli eval prints dice 1.000 for weights that reproduce targets") {
    TempDir dir("perfect");
    const std::string data_root = (dir.path / "data").string();

    // dataset whose masks are all zero: a constant class-0 predictor is exact
    fs::create_directories(fs::path(data_root) / "images");
    fs::create_directories(fs::path(data_root) / "masks");
    RunOutput synth = run_cli("synth --out " + (dir.path / "seed").string() +
                              " --count 3 --extent 32 --seed 9");
    REQUIRE(synth.exit_code == 0);
    for (int i = 0; i < 3; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "synth%04d.png", i);
        fs::copy(fs::path(dir.path / "seed") / "images" / name,
                 fs::path(data_root) / "images" / name);
    }
    // all-zero masks via the library
    {
        std::vector<std::uint8_t> zeros(32 * 32, 0);
        for (int i = 0; i < 3; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "synth%04d.png", i);
            std::string cmd_path = (fs::path(data_root) / "masks" / name).string();
            // write via the tool-facing container: a gray PNG
            PngImage msk;
            msk.height = msk.width = 32;
            msk.color = PngColor::Gray;
            msk.pixels = zeros;
            write_png(cmd_path, msk);
        }
    }

    // build weights biased hard toward class 0
    ModelConfig cfg = tiny_preset();
    ParamStore params = init_params<float>(cfg, RngState(4));
    {
        auto& bias = params.at("dec.head.bias").leaf_value();
        bias[0] = 25.0f;
        bias[1] = -25.0f;
    }
    const std::string weights = (dir.path / "zero.bin").string();
    save_weights(params, cfg, weights);

    RunOutput eval = run_cli("eval --weights " + weights + " --data " + data_root + " --csv ''");
    REQUIRE(eval.exit_code == 0);
    CHECK(eval.output.find("dice 1.000") != std::string::npos);
    CHECK(eval.output.find("iou 1.000") != std::string::npos);
}

TEST_CASE("cli error paths carry the documented exit codes") {
    TempDir dir("errors");
    // missing config file names the path, nonzero exit
    RunOutput missing = run_cli("train --config " + (dir.path / "nope.cfg").string() +
                                " --data " + dir.path.string());
    CHECK(missing.exit_code == 2);
    CHECK(missing.output.find("nope.cfg") != std::string::npos);

    // bad config key lists the valid ones, usage exit
    const std::string cfg_path = (dir.path / "bad.cfg").string();
    {
        std::ofstream cfg(cfg_path);
        cfg << "learning_rate=0.1\n";
    }
    RunOutput bad_key = run_cli("train --config " + cfg_path + " --data " + dir.path.string());
    CHECK(bad_key.exit_code == 1);
    CHECK(bad_key.output.find("valid keys") != std::string::npos);

    // report on a malformed csv names the line
    const std::string csv_path = (dir.path / "bad.csv").string();
    {
        std::ofstream csv(csv_path);
        csv << "variant,fold,epoch,train_loss,val_loss,iou,dice,psnr_db,ssim,lpips\n";
        csv << "full,1,1,oops,0.1,0.9,0.9,30,0.9,\n";
    }
    RunOutput bad_csv = run_cli("report --csv " + csv_path);
    CHECK(bad_csv.exit_code == 2);
    CHECK(bad_csv.output.find(":2") != std::string::npos);

    // eval with a weights/config mismatch
    RunOutput bad_eval = run_cli("eval --weights " + csv_path + " --data " + dir.path.string());
    CHECK(bad_eval.exit_code == 2);
}

TEST_CASE("cli gradcheck runs the verification suite") {
    RunOutput ok = run_cli("gradcheck --preset tiny");
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("model.tiny.eval") != std::string::npos);
    CHECK(ok.output.find("gradcheck passed") != std::string::npos);

    // the hidden corruption hook must trip the checker (exit 3)
    RunOutput bad = run_cli("gradcheck --preset tiny --corrupt-backward");
    CHECK(bad.exit_code == 3);
    CHECK(bad.output.find("FAIL") != std::string::npos);
}

TEST_CASE("cli ablation emits the three-variant comparison") {
    TempDir dir("ablation");
    const std::string data_root = (dir.path / "data").string();
    REQUIRE(run_cli("synth --out " + data_root + " --count 6 --extent 32 --seed 5").exit_code ==
            0);
    const std::string cfg_path = (dir.path / "train.cfg").string();
    {
        std::ofstream cfg(cfg_path);
        cfg << "k=2\nmax_epochs=1\nbatch_size=4\npreset=tiny\nseed=42\n";
    }
    const std::string out_dir = (dir.path / "run").string();
    RunOutput ab = run_cli("train --config " + cfg_path + " --data " + data_root + " --out " +
                           out_dir + " --ablation");
    REQUIRE(ab.exit_code == 0);
    CHECK(ab.output.find("Ablation Results (Average Across Folds)") != std::string::npos);
    CHECK(ab.output.find("Full (Dropout + Pretrain)") != std::string::npos);
    CHECK(ab.output.find("No Dropout") != std::string::npos);
    CHECK(ab.output.find("No Pretraining") != std::string::npos);
    CHECK(fs::exists(fs::path(out_dir) / "metrics_ablation.csv"));
    CHECK(fs::exists(fs::path(out_dir) / "metrics_full.csv"));
    CHECK(fs::exists(fs::path(out_dir) / "metrics_no_dropout.csv"));
    CHECK(fs::exists(fs::path(out_dir) / "metrics_no_pretrain.csv"));
}

TEST_CASE("cli train resumes from an interrupted run") {
    TempDir dir("resume");
    const std::string data_root = (dir.path / "data").string();
    REQUIRE(run_cli("synth --out " + data_root + " --count 6 --extent 32 --seed 4").exit_code ==
            0);
    const std::string cfg_path = (dir.path / "train.cfg").string();
    {
        std::ofstream cfg(cfg_path);
        cfg << "k=2\nmax_epochs=2\nbatch_size=4\npreset=tiny\nseed=42\n";
    }
    const std::string out_a = (dir.path / "run_a").string();
    const std::string out_b = (dir.path / "run_b").string();

    // reference uninterrupted run
    REQUIRE(run_cli("train --config " + cfg_path + " --data " + data_root + " --out " + out_a)
                .exit_code == 0);

    // fresh run, then re-run with --resume: the checkpoint says everything
    // is done, so the resumed run must reproduce the same csv
    REQUIRE(run_cli("train --config " + cfg_path + " --data " + data_root + " --out " + out_b)
                .exit_code == 0);
    RunOutput resumed = run_cli("train --config " + cfg_path + " --data " + data_root +
                                " --out " + out_b + " --resume");
    REQUIRE(resumed.exit_code == 0);
    CHECK(resumed.output.find("resuming from") != std::string::npos);

    std::ifstream a((fs::path(out_a) / "metrics.csv"));
    std::ifstream b((fs::path(out_b) / "metrics.csv"));
    std::string ta((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string tb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ta == tb);
}
