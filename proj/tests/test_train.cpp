#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hairseg/serialize.hpp"
#include "hairseg/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace hairseg;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("hs_train_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Dataset small_synth(const TempDir& dir, std::size_t count, std::uint64_t seed) {
    SynthSpec spec;
    spec.count = count;
    spec.extent = 32;
    spec.seed = seed;
    synth_generate(spec, dir.path.string());
    return load_dataset(dir.path.string());
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.preset = "tiny";
    cfg.k = 2;
    cfg.batch_size = 4;
    cfg.max_epochs = 3;
    cfg.patience = 2;
    cfg.seed = 42;
    return cfg;
}

bool records_equal(const MetricRecord& a, const MetricRecord& b) {
    return a.fold == b.fold && a.epoch == b.epoch && a.train_loss == b.train_loss &&
           a.val_loss == b.val_loss && a.iou == b.iou && a.dice == b.dice &&
           a.psnr_db == b.psnr_db && a.ssim == b.ssim && a.lpips == b.lpips;
}

} // namespace

TEST_CASE("early stopping fixture") {
    // losses [1.0, 0.9, 0.95, 0.96, 0.97] with patience 3: stop after epoch
    // 5, best epoch 2
    EarlyStopState s;
    const double losses[] = {1.0, 0.9, 0.95, 0.96, 0.97};
    std::size_t epoch = 0;
    for (double l : losses) {
        early_stop_update(s, l, ++epoch, 3);
        CHECK(s.epochs_since_improvement <= 3);
    }
    CHECK(s.stopped);
    CHECK(s.best_epoch == 2);
    CHECK(s.epochs_since_improvement == 3);
    CHECK(epoch == 5);

    // updating a stopped state is a contract error
    CHECK_THROWS_AS(early_stop_update(s, 0.1, 6, 3), Error);

    // strictly decreasing losses never stop
    EarlyStopState d;
    for (std::size_t e = 1; e <= 20; ++e) {
        early_stop_update(d, 1.0 / e, e, 3);
        CHECK_FALSE(d.stopped);
    }
    CHECK(d.best_epoch == 20);

    // ties count as non-improvement
    EarlyStopState t;
    early_stop_update(t, 0.5, 1, 2);
    early_stop_update(t, 0.5, 2, 2);
    early_stop_update(t, 0.5, 3, 2);
    CHECK(t.stopped);
    CHECK(t.best_epoch == 1);

    EarlyStopState nf;
    CHECK_THROWS_AS(early_stop_update(nf, std::nan(""), 1, 3), Error);
}

TEST_CASE("early stopping matches the definitional oracle on random sequences") {
    RngState rng(99);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t len = 1 + rng.next_range(0, 24);
        const std::size_t patience = 1 + rng.next_range(0, 4);
        std::vector<double> losses(len);
        for (auto& l : losses) l = rng.next_uniform();
        // duplicated values exercise the tie rule
        if (len > 2 && rng.next_range(0, 1)) losses[len / 2] = losses[len / 2 - 1];

        const auto [stop_epoch, best_epoch] = oracle::early_stop_sim(losses, patience);
        EarlyStopState s;
        std::size_t executed = 0;
        for (std::size_t e = 1; e <= len; ++e) {
            early_stop_update(s, losses[e - 1], e, patience);
            executed = e;
            if (s.stopped) break;
        }
        REQUIRE(executed == stop_epoch);
        REQUIRE(s.best_epoch == best_epoch);
        REQUIRE(s.stopped == (stop_epoch < len ||
                              (stop_epoch == len && s.epochs_since_improvement >= patience)));
    }
}

TEST_CASE("evaluate_epoch on perfect and trivial predictors") {
    TempDir dir("eval");
    Dataset data = small_synth(dir, 6, 11);

    // a head that always predicts class 0: perfect wherever masks are empty
    ModelConfig cfg = tiny_preset();
    ParamStore params = init_params<float>(cfg, RngState(1));
    {
        auto& bias = params.at("dec.head.bias").leaf_value();
        bias[0] = 25.0f;
        bias[1] = -25.0f;
    }
    std::vector<std::size_t> empties, all;
    for (std::size_t i = 0; i < data.size(); ++i) {
        all.push_back(i);
        std::size_t hair = 0;
        for (auto v : data.samples[i].mask.vec()) hair += v;
        if (hair == 0) empties.push_back(i);
    }
    REQUIRE(!empties.empty()); // seed chosen to include a zero-stroke sample

    MetricRecord rec = evaluate_epoch(params, cfg, data, empties, 4, 2, nullptr, 2);
    CHECK(rec.iou == 1.0);
    CHECK(rec.dice == 1.0);
    CHECK(rec.psnr_db == doctest::Approx(100.0)); // capped
    CHECK(rec.ssim == doctest::Approx(1.0));
    CHECK_FALSE(rec.lpips.has_value()); // no perceptual net loaded

    // empty validation set is a data error
    CHECK_THROWS_AS(evaluate_epoch(params, cfg, data, {}, 4, 1, nullptr, 2), Error);

    // batch-size weighting equals a single-batch recomputation
    MetricRecord split_rec = evaluate_epoch(params, cfg, data, all, 4, 1, nullptr, 2);
    MetricRecord joint_rec = evaluate_epoch(params, cfg, data, all,
                                            data.size(), 1, nullptr, 2);
    CHECK(split_rec.iou == doctest::Approx(joint_rec.iou).epsilon(1e-6));
    CHECK(split_rec.dice == doctest::Approx(joint_rec.dice).epsilon(1e-6));
    CHECK(split_rec.psnr_db == doctest::Approx(joint_rec.psnr_db).epsilon(1e-6));
    CHECK(split_rec.ssim == doctest::Approx(joint_rec.ssim).epsilon(1e-6));
    CHECK(split_rec.val_loss == doctest::Approx(joint_rec.val_loss).epsilon(1e-6));
}

TEST_CASE("lpips is evaluated only on matching epochs") {
    TempDir dir("lpips_epochs");
    Dataset data = small_synth(dir, 4, 3);

    // minimal perceptual net on disk
    LpipsNet net;
    LpipsLayer layer;
    layer.conv_w = Tensor({2, 3, 3, 3});
    RngState rng(5);
    for (auto& v : layer.conv_w.vec()) v = static_cast<float>(rng.next_uniform() - 0.5);
    layer.conv_b = Tensor({2});
    layer.stride = 2;
    layer.padding = 1;
    layer.lin_w = Tensor({2}, {1.0f, 1.0f});
    net.layers.push_back(layer);
    const std::string lpips_path = (dir.path / "lpips.bin").string();
    net.save(lpips_path);
    LpipsNet loaded = LpipsNet::load(lpips_path);

    ModelConfig cfg = tiny_preset();
    ParamStore params = init_params<float>(cfg, RngState(2));
    std::vector<std::size_t> idx{0, 1, 2, 3};

    MetricRecord even = evaluate_epoch(params, cfg, data, idx, 4, 2, &loaded, 2);
    MetricRecord odd = evaluate_epoch(params, cfg, data, idx, 4, 3, &loaded, 2);
    CHECK(even.lpips.has_value());
    CHECK_FALSE(odd.lpips.has_value());
    CHECK(*even.lpips >= 0.0);
}

TEST_CASE("train_fold bookkeeping") {
    TempDir dir("fold");
    Dataset data = small_synth(dir, 8, 21);
    TrainConfig cfg = small_config();
    FoldPlan plan = kfold_split(data.size(), cfg.k, cfg.seed);

    FoldResult fr = train_fold(0, plan, cfg, data);
    CHECK(fr.fold == 1);
    CHECK(fr.records.size() >= 1);
    CHECK(fr.records.size() <= cfg.max_epochs);
    // best epoch's loss is the minimum over recorded epochs
    double min_loss = std::numeric_limits<double>::infinity();
    for (const auto& r : fr.records) min_loss = std::min(min_loss, r.val_loss);
    CHECK(fr.best_val_loss == min_loss);
    bool found = false;
    for (const auto& r : fr.records)
        if (static_cast<std::size_t>(r.epoch) == fr.best_epoch)
            found = (r.val_loss == min_loss);
    CHECK(found);
    for (const auto& r : fr.records) CHECK(r.fold == 1);
}

TEST_CASE("cross validation structure on a small dataset") {
    TempDir dir("cv");
    Dataset data = small_synth(dir, 8, 33);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 2;

    RunPaths paths; // no persistence
    RunResult res = run_cross_validation(cfg, data, paths, false);
    REQUIRE(res.folds.size() == 2);
    CHECK(res.folds[0].fold == 1);
    CHECK(res.folds[1].fold == 2);
    CHECK(res.aggregate.has_value());
    CHECK(res.total_seconds > 0.0);

    // disjoint validation ids across folds come from the fold plan itself
    FoldPlan plan = kfold_split(data.size(), cfg.k, cfg.seed);
    std::set<std::size_t> v0(plan.folds[0].val.begin(), plan.folds[0].val.end());
    for (std::size_t i : plan.folds[1].val) CHECK_FALSE(v0.contains(i));

    // all metrics finite
    for (const auto& fr : res.folds)
        for (const auto& r : fr.records) {
            CHECK(std::isfinite(r.train_loss));
            CHECK(std::isfinite(r.val_loss));
            CHECK(std::isfinite(r.iou));
            CHECK(std::isfinite(r.dice));
            CHECK(std::isfinite(r.psnr_db));
            CHECK(std::isfinite(r.ssim));
        }

    // two runs with the same config and seed produce identical records
    RunResult res2 = run_cross_validation(cfg, data, paths, false);
    REQUIRE(res2.history.size() == res.history.size());
    for (std::size_t i = 0; i < res.history.size(); ++i)
        CHECK(records_equal(res.history[i], res2.history[i]));
}

TEST_CASE("checkpoint round trip and failure modes") {
    TempDir dir("ckpt");
    Dataset data = small_synth(dir, 6, 5);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 2;

    RunPaths paths;
    paths.checkpoint = (dir.path / "cp.bin").string();
    paths.metrics_csv = (dir.path / "m.csv").string();
    RunResult res = run_cross_validation(cfg, data, paths, false);
    REQUIRE(fs::exists(paths.checkpoint));

    Checkpoint cp = checkpoint_load(paths.checkpoint);
    CHECK(cp.train_hash == cfg.hash());
    CHECK(cp.n_samples == 6);
    CHECK(cp.history.size() == res.history.size());
    for (std::size_t i = 0; i < cp.history.size(); ++i)
        CHECK(records_equal(cp.history[i], res.history[i]));

    // round trip: save the loaded checkpoint and compare bytes
    const std::string copy = (dir.path / "cp2.bin").string();
    checkpoint_save(copy, cp);
    CHECK(read_file_bytes(copy) == read_file_bytes(paths.checkpoint));

    // resume under a changed lr is a config mismatch
    TrainConfig changed = cfg;
    changed.lr = 0.01;
    CHECK_THROWS_AS(run_cross_validation(changed, data, paths, true), Error);
    try {
        (void)run_cross_validation(changed, data, paths, true);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConfigMismatch);
    }

    // corruption is detected by the checksum
    auto bytes = read_file_bytes(paths.checkpoint);
    bytes[bytes.size() / 2] ^= 0xFF;
    const std::string bad = (dir.path / "bad.bin").string();
    write_file_atomic(bad, bytes);
    try {
        (void)checkpoint_load(bad);
        FAIL("corrupted checkpoint must not load");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Corrupt);
    }

    // truncation too
    auto short_bytes = read_file_bytes(paths.checkpoint);
    short_bytes.resize(short_bytes.size() - 100);
    write_file_atomic(bad, short_bytes);
    CHECK_THROWS_AS(checkpoint_load(bad), Error);
}

TEST_CASE("interrupt and resume reproduces the uninterrupted run bitwise") {
    TempDir dir_a("resume_a");
    Dataset data = small_synth(dir_a, 8, 13);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 3;

    // uninterrupted reference
    TempDir out_ref("resume_ref");
    RunPaths ref_paths;
    ref_paths.checkpoint = (out_ref.path / "cp.bin").string();
    ref_paths.metrics_csv = (out_ref.path / "m.csv").string();
    RunResult ref = run_cross_validation(cfg, data, ref_paths, false);
    REQUIRE_FALSE(ref.interrupted);

    // interrupt after every possible epoch boundary, resume, compare
    const std::size_t total_epochs = ref.history.size();
    for (std::size_t stop_after = 1; stop_after + 1 <= total_epochs; ++stop_after) {
        TempDir out("resume_v");
        RunPaths paths;
        paths.checkpoint = (out.path / "cp.bin").string();
        paths.metrics_csv = (out.path / "m.csv").string();

        std::size_t seen = 0;
        RunHooks hooks;
        hooks.after_epoch = [&](int, std::size_t) { return ++seen < stop_after; };
        RunResult first = run_cross_validation(cfg, data, paths, false, hooks);
        REQUIRE(first.interrupted);

        RunResult resumed = run_cross_validation(cfg, data, paths, true);
        REQUIRE_FALSE(resumed.interrupted);
        REQUIRE(resumed.history.size() == total_epochs);
        for (std::size_t i = 0; i < total_epochs; ++i)
            REQUIRE(records_equal(resumed.history[i], ref.history[i]));

        // the regenerated CSV matches the uninterrupted one byte for byte
        CHECK(read_file_bytes(paths.metrics_csv) == read_file_bytes(ref_paths.metrics_csv));
    }
}

TEST_CASE("ablation variants differ only in the stated fields") {
    TrainConfig cfg = small_config();
    cfg.dropout_p = 0.3;
    cfg.init = "random";

    TrainConfig no_drop = cfg;
    no_drop.dropout_p = 0.0;
    CHECK(no_drop.hash() != cfg.hash());

    // the emitted variants are exactly {dropout_p} and {init} edits; verify
    // via the canonical text diff
    const std::string base = train_config_text(cfg);
    const std::string nd = train_config_text(no_drop);
    int diff_lines = 0;
    std::istringstream a(base), b(nd);
    std::string la, lb;
    while (std::getline(a, la) && std::getline(b, lb))
        if (la != lb) ++diff_lines;
    CHECK(diff_lines == 1);
}

TEST_CASE("config file parsing") {
    TempDir dir("cfg");
    const std::string path = (dir.path / "train.cfg").string();
    {
        std::ofstream out(path);
        out << "# comment line\n";
        out << "max_epochs = 5\n";
        out << "patience=2\n";
        out << "lr=0.0005\n";
        out << "preset=tiny\n";
        out << "\n";
    }
    TrainConfig cfg = parse_train_config(path);
    CHECK(cfg.max_epochs == 5);
    CHECK(cfg.patience == 2);
    CHECK(cfg.lr == doctest::Approx(0.0005));
    CHECK(cfg.k == 10);       // untouched defaults
    CHECK(cfg.seed == 42);
    CHECK(cfg.dropout_p == doctest::Approx(0.3));

    {
        std::ofstream out(path);
        out << "learning_rate=0.1\n"; // not a key
    }
    CHECK_THROWS_WITH_AS(parse_train_config(path), doctest::Contains("valid keys"), Error);
    try {
        (void)parse_train_config(path);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Usage);
    }

    CHECK_THROWS_AS(parse_train_config((dir.path / "missing.cfg").string()), Error);

    // canonical text round-trips through the parser with an equal hash
    TrainConfig rt = parse_train_config_text(train_config_text(cfg), "inline");
    CHECK(rt.hash() == cfg.hash());
}
