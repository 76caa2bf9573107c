#pragma once

#include <array>
#include <deque>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "hairseg/rng.hpp"
#include "hairseg/tensor.hpp"

namespace hairseg {

struct Sample {
    std::string id;
    Tensor image;    // [3,H,W] reals in [0,1], pre-normalization
    MaskTensor mask; // [H,W] class ids {0,1}
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> warnings; // e.g. masks with non-binary gray values

    std::size_t size() const noexcept { return samples.size(); }
};

struct NormalizationSpec {
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

// Expects <root>/images/<id>.png and <root>/masks/<id>.png pairs. Masks are
// binarized nonzero -> 1 (non {0,255} values are logged as warnings).
// Per-file problems are collected and reported together; samples come back
// sorted by identifier so downstream seeding is filesystem-order free.
Dataset load_dataset(const std::string& root);

// (pixel - mean_c) / std_c per channel; masks pass through untouched.
Tensor normalize_image(const Tensor& image, const NormalizationSpec& spec = {});
Tensor denormalize_image(const Tensor& image, const NormalizationSpec& spec = {});

struct FoldPlan {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    struct Fold {
        std::vector<std::size_t> train;
        std::vector<std::size_t> val;
    };
    std::vector<Fold> folds;
};

// Indices shuffled once by the seeded generator, then cut into k contiguous
// chunks (the first n mod k chunks one element larger); fold i validates on
// chunk i and trains on the remainder.
FoldPlan kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

// Plain-text audit table: one "fold <TAB> role <TAB> id" row per assignment.
void export_fold_plan(const FoldPlan& plan, const std::vector<std::string>& ids,
                      const std::string& path);

// Training batches are reshuffled from `rng` on every call; validation uses
// shuffle = false for a fixed order. The final partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& indices,
                                                   std::size_t batch_size, bool shuffle,
                                                   RngState& rng);

struct Batch {
    Tensor images;      // [B,3,H,W], normalized
    MaskTensor targets; // [B,H,W]
};

Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                     const NormalizationSpec& spec);

// Assembles up to `lookahead` batches ahead on background threads; next()
// always returns batches in their given order regardless of worker timing.
class BatchLoader {
public:
    BatchLoader(const Dataset& data, std::vector<std::vector<std::size_t>> batches,
                NormalizationSpec spec, std::size_t lookahead = 4);
    ~BatchLoader();

    std::optional<Batch> next();
    std::size_t batch_count() const noexcept { return batches_.size(); }

private:
    void fill();
    const Dataset& data_;
    std::vector<std::vector<std::size_t>> batches_;
    NormalizationSpec spec_;
    std::size_t lookahead_;
    std::size_t next_submit_ = 0;
    std::deque<std::future<Batch>> inflight_;
};

// ---- synthetic dataset ----

struct SynthSpec {
    std::size_t count = 50;
    std::size_t extent = 64; // square, must be divisible by 32
    std::uint64_t seed = 42;
};

// Skin-toned noise background, an elliptical lesion blob, and dark
// anti-aliased Bezier strokes as hair; the exact stroke coverage is the
// binary mask. Deterministic: the same spec yields byte-identical files.
void synth_generate(const SynthSpec& spec, const std::string& root);

} // namespace hairseg
