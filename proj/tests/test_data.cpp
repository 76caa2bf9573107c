#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "hairseg/data.hpp"
#include "hairseg/png_io.hpp"

namespace fs = std::filesystem;
using namespace hairseg;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("hs_test_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // cheap rolling digest, only used to compare regenerated files
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return std::to_string(h) + ":" + std::to_string(bytes.size());
}

} // namespace

TEST_CASE("kfold split properties") {
    // the headline setting: 500 samples, 10 folds, seed 42
    FoldPlan plan = kfold_split(500, 10, 42);
    REQUIRE(plan.folds.size() == 10);
    std::set<std::size_t> seen;
    for (const auto& fold : plan.folds) {
        CHECK(fold.val.size() == 50);
        CHECK(fold.train.size() == 450);
        for (std::size_t i : fold.val) {
            CHECK_FALSE(seen.contains(i)); // pairwise disjoint validation sets
            seen.insert(i);
        }
        // train and val partition the index set within the fold
        std::set<std::size_t> all(fold.train.begin(), fold.train.end());
        for (std::size_t i : fold.val) all.insert(i);
        CHECK(all.size() == 500);
    }
    CHECK(seen.size() == 500); // coverage

    // determinism: same seed, same plan; different seed, different shuffle
    FoldPlan again = kfold_split(500, 10, 42);
    for (std::size_t f = 0; f < 10; ++f) {
        CHECK(plan.folds[f].val == again.folds[f].val);
        CHECK(plan.folds[f].train == again.folds[f].train);
    }
    FoldPlan other = kfold_split(500, 10, 43);
    CHECK(other.folds[0].val != plan.folds[0].val);
    CHECK(other.folds[0].val.size() == 50);

    // n = k: singleton validation sets partitioning the index set
    FoldPlan singles = kfold_split(5, 5, 1);
    std::set<std::size_t> units;
    for (const auto& fold : singles.folds) {
        REQUIRE(fold.val.size() == 1);
        units.insert(fold.val[0]);
    }
    CHECK(units == std::set<std::size_t>{0, 1, 2, 3, 4});

    // uneven split: first n mod k chunks are one larger
    FoldPlan uneven = kfold_split(7, 3, 9);
    CHECK(uneven.folds[0].val.size() == 3);
    CHECK(uneven.folds[1].val.size() == 2);
    CHECK(uneven.folds[2].val.size() == 2);

    CHECK_THROWS_AS(kfold_split(3, 5, 1), Error);
    CHECK_THROWS_AS(kfold_split(10, 1, 1), Error);
}

TEST_CASE("kfold randomized partition property") {
    RngState rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + rng.next_range(0, 8);
        const std::size_t n = k + rng.next_range(0, 200);
        FoldPlan plan = kfold_split(n, k, rng.next_u64());
        std::set<std::size_t> seen;
        std::size_t total = 0;
        for (const auto& fold : plan.folds) {
            total += fold.val.size();
            for (std::size_t i : fold.val) {
                REQUIRE(i < n);
                REQUIRE_FALSE(seen.contains(i));
                seen.insert(i);
            }
            REQUIRE(fold.train.size() + fold.val.size() == n);
        }
        REQUIRE(total == n);
    }
}

TEST_CASE("make_batches") {
    std::vector<std::size_t> indices(450);
    for (std::size_t i = 0; i < 450; ++i) indices[i] = i;

    // 450 at batch 16: 29 batches, final of size 2
    RngState rng(42);
    auto batches = make_batches(indices, 16, true, rng);
    REQUIRE(batches.size() == 29);
    CHECK(batches.back().size() == 2);

    // reshuffles preserve the index multiset
    std::multiset<std::size_t> flat;
    for (const auto& b : batches)
        for (std::size_t i : b) flat.insert(i);
    CHECK(flat == std::multiset<std::size_t>(indices.begin(), indices.end()));

    // shuffle disabled: identity order every time
    RngState r2(1);
    auto fixed = make_batches(indices, 100, false, r2);
    REQUIRE(fixed.size() == 5);
    CHECK(fixed[0][0] == 0);
    CHECK(fixed[4][49] == 449);

    // two epochs draw different permutations from the same stream
    auto epoch2 = make_batches(indices, 16, true, rng);
    CHECK(batches[0] != epoch2[0]);
}

TEST_CASE("normalization") {
    Tensor img({3, 1, 2});
    img[0] = 0.485f; // red channel, mean cancels
    img[1] = 1.0f;
    img[2] = 0.0f;
    img[3] = 0.0f;
    img[4] = 0.5f;
    img[5] = 0.5f;
    NormalizationSpec spec;
    Tensor norm = normalize_image(img, spec);
    CHECK(norm[0] == doctest::Approx(0.0f));
    CHECK(norm[1] == doctest::Approx((1.0f - 0.485f) / 0.229f).epsilon(1e-6));
    CHECK(norm[1] == doctest::Approx(2.2489f).epsilon(1e-4));

    // round trip within 1e-6
    Tensor back = denormalize_image(norm, spec);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-6));

    NormalizationSpec bad;
    bad.stddev[1] = 0.0f;
    CHECK_THROWS_AS(normalize_image(img, bad), Error);
}

TEST_CASE("synthetic dataset round trip") {
    TempDir dir("synth_rt");
    SynthSpec spec;
    spec.count = 12;
    spec.extent = 64;
    spec.seed = 42;
    synth_generate(spec, dir.path.string());

    Dataset data = load_dataset(dir.path.string());
    REQUIRE(data.size() == 12);
    CHECK(data.warnings.empty()); // synthetic masks are strictly {0,255}
    CHECK(std::is_sorted(data.samples.begin(), data.samples.end(),
                         [](const Sample& a, const Sample& b) { return a.id < b.id; }));

    bool any_hair = false, any_empty = false;
    for (const auto& s : data.samples) {
        CHECK(s.image.shape() == Shape{3, 64, 64});
        CHECK(s.mask.shape() == Shape{64, 64});
        std::size_t hair = 0;
        for (auto v : s.mask.vec()) {
            CHECK(v <= 1);
            hair += v;
        }
        if (hair > 0) any_hair = true;
        if (hair == 0) any_empty = true; // exercises the zero-union metric path
    }
    CHECK(any_hair);
    CHECK(any_empty);

    // masks survive the PNG round trip exactly: rewrite one and compare
    const Sample& s0 = data.samples[0];
    PngImage msk;
    msk.height = msk.width = 64;
    msk.color = PngColor::Gray;
    msk.pixels.resize(64 * 64);
    for (std::size_t i = 0; i < msk.pixels.size(); ++i) msk.pixels[i] = s0.mask[i] ? 255 : 0;
    write_png((dir.path / "rewritten.png").string(), msk);
    PngImage reread = read_png((dir.path / "rewritten.png").string(), PngColor::Gray);
    CHECK(reread.pixels == msk.pixels);

    // regeneration is byte-identical
    TempDir dir2("synth_rt2");
    synth_generate(spec, dir2.path.string());
    for (const auto& s : data.samples) {
        CHECK(file_digest(dir.path / "images" / (s.id + ".png")) ==
              file_digest(dir2.path / "images" / (s.id + ".png")));
        CHECK(file_digest(dir.path / "masks" / (s.id + ".png")) ==
              file_digest(dir2.path / "masks" / (s.id + ".png")));
    }

    // a different seed changes the files
    TempDir dir3("synth_rt3");
    SynthSpec spec2 = spec;
    spec2.seed = 43;
    synth_generate(spec2, dir3.path.string());
    CHECK(file_digest(dir.path / "images" / "synth0000.png") !=
          file_digest(dir3.path / "images" / "synth0000.png"));

    CHECK_THROWS_AS(synth_generate(SynthSpec{1, 50, 1}, dir.path.string()), Error);
}

TEST_CASE("load_dataset error collection") {
    TempDir dir("load_err");
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");

    auto write_rgb = [&](const std::string& id, std::size_t h, std::size_t w) {
        PngImage img;
        img.height = h;
        img.width = w;
        img.color = PngColor::Rgb;
        img.pixels.assign(h * w * 3, 128);
        write_png((dir.path / "images" / (id + ".png")).string(), img);
    };
    auto write_gray = [&](const std::string& id, std::size_t h, std::size_t w,
                          std::uint8_t value) {
        PngImage img;
        img.height = h;
        img.width = w;
        img.color = PngColor::Gray;
        img.pixels.assign(h * w, value);
        write_png((dir.path / "masks" / (id + ".png")).string(), img);
    };

    write_rgb("a", 8, 8);
    write_gray("a", 8, 8, 0);
    write_rgb("orphan", 8, 8); // image without mask
    write_gray("widow", 8, 8, 0); // mask without image
    write_rgb("mismatch", 8, 8);
    write_gray("mismatch", 4, 4, 0); // extent mismatch
    {
        std::ofstream bad(dir.path / "images" / "broken.png", std::ios::binary);
        bad << "not a png";
    }
    write_gray("broken", 8, 8, 0);

    try {
        (void)load_dataset(dir.path.string());
        FAIL("expected a collected data error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Data);
        const std::string what = e.what();
        CHECK(what.find("orphan") != std::string::npos);
        CHECK(what.find("widow") != std::string::npos);
        CHECK(what.find("mismatch") != std::string::npos);
        CHECK(what.find("broken") != std::string::npos);
    }
}

TEST_CASE("mask binarization warning") {
    TempDir dir("binarize");
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");
    PngImage img;
    img.height = img.width = 8;
    img.color = PngColor::Rgb;
    img.pixels.assign(8 * 8 * 3, 100);
    write_png((dir.path / "images" / "x.png").string(), img);
    PngImage msk;
    msk.height = msk.width = 8;
    msk.color = PngColor::Gray;
    msk.pixels.assign(64, 0);
    msk.pixels[5] = 127; // anti-aliased gray
    msk.pixels[6] = 255;
    write_png((dir.path / "masks" / "x.png").string(), msk);

    Dataset data = load_dataset(dir.path.string());
    REQUIRE(data.size() == 1);
    CHECK(data.samples[0].mask[5] == 1); // nonzero -> 1
    CHECK(data.samples[0].mask[6] == 1);
    CHECK(data.samples[0].mask[0] == 0);
    REQUIRE(data.warnings.size() == 1);
    CHECK(data.warnings[0].find("x.png") != std::string::npos);
}

TEST_CASE("fold plan export") {
    TempDir dir("plan_export");
    FoldPlan plan = kfold_split(6, 3, 7);
    std::vector<std::string> ids{"a", "b", "c", "d", "e", "f"};
    const std::string path = (dir.path / "plan.tsv").string();
    export_fold_plan(plan, ids, path);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "fold\trole\tid");
    std::map<std::string, int> val_rows, train_rows;
    while (std::getline(in, line)) {
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        const std::string role = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string id = line.substr(t2 + 1);
        (role == "val" ? val_rows : train_rows)[id] += 1;
    }
    for (const auto& id : ids) {
        CHECK(val_rows[id] == 1);   // each id validates exactly once
        CHECK(train_rows[id] == 2); // and trains in the other k-1 folds
    }
}

TEST_CASE("batch assembly and prefetching loader") {
    TempDir dir("loader");
    SynthSpec spec;
    spec.count = 10;
    spec.extent = 32;
    spec.seed = 5;
    synth_generate(spec, dir.path.string());
    Dataset data = load_dataset(dir.path.string());

    std::vector<std::size_t> indices{3, 1, 4, 1, 5, 9, 2, 6};
    RngState rng(0);
    auto batches = make_batches(indices, 3, false, rng);
    REQUIRE(batches.size() == 3);

    // the prefetching loader yields exactly assemble_batch results, in order
    NormalizationSpec norm;
    BatchLoader loader(data, batches, norm, 4);
    std::size_t seen = 0;
    while (auto b = loader.next()) {
        Batch want = assemble_batch(data, batches[seen], norm);
        CHECK(b->images.vec() == want.images.vec());
        CHECK(b->targets.vec() == want.targets.vec());
        ++seen;
    }
    CHECK(seen == 3);

    // normalization applied against the raw sample, masks passed through
    Batch b0 = assemble_batch(data, {0}, norm);
    Tensor direct = normalize_image(data.samples[0].image, norm);
    CHECK(b0.images.vec() == direct.vec());
    CHECK(std::equal(b0.targets.vec().begin(), b0.targets.vec().end(),
                     data.samples[0].mask.vec().begin()));
}
