#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>

#include "hairseg/data.hpp"
#include "hairseg/lpips.hpp"
#include "hairseg/metrics.hpp"
#include "hairseg/model.hpp"
#include "hairseg/optim.hpp"

namespace hairseg {

struct TrainConfig {
    std::size_t max_epochs = 20;
    std::size_t patience = 3;
    std::size_t batch_size = 16;
    double lr = 0.001;
    std::size_t k = 10;
    std::uint64_t seed = 42;
    double dropout_p = 0.3;
    std::string init = "random"; // "random" or a weights-file path
    std::size_t lpips_every = 2; // perceptual distance every other epoch
    std::string preset = "tiny";
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool decay_exempt_norm_bias = true;
    std::string lpips_weights; // optional perceptual-net weight file

    void validate() const;
    std::uint64_t hash() const; // over the canonical key=value text
    ModelConfig model_config() const;
    AdamWConfig adamw() const;
};

// Plain key=value text, one key per line, keys mirror TrainConfig fields.
TrainConfig parse_train_config(const std::string& path);
TrainConfig parse_train_config_text(const std::string& text, const std::string& origin);
std::string train_config_text(const TrainConfig& cfg); // canonical form

struct EarlyStopState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t epochs_since_improvement = 0;
    bool stopped = false;
};

// Strict improvement (<) resets the counter and records the best epoch; a
// tie counts as non-improvement. Reaching `patience` sets `stopped`;
// updating a stopped state is a contract error.
void early_stop_update(EarlyStopState& state, double val_loss, std::size_t epoch,
                       std::size_t patience);

struct FoldResult {
    int fold = 0; // 1-based
    std::vector<MetricRecord> records;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    double best_val_dice = 0.0;
    double seconds = 0.0;
};

// Resumable training state; continuing from a checkpoint reproduces the
// uninterrupted run bit for bit in deterministic mode.
struct Checkpoint {
    std::uint64_t train_hash = 0;
    std::uint64_t n_samples = 0;
    ModelConfig model_config;
    std::uint32_t fold = 0;  // 0-based fold in progress
    std::uint32_t epoch = 0; // last completed epoch within that fold
    RngState rng;            // fold stream after `epoch` epochs
    EarlyStopState early_stop;
    double best_val_dice = 0.0;
    std::uint64_t adam_step = 0;
    ParamStore params;
    std::vector<Tensor> moments_m, moments_v;       // parameter order
    std::optional<std::vector<Tensor>> best_params; // values at best val loss
    std::vector<MetricRecord> history;              // all folds so far
    struct FoldSummary {
        std::uint32_t fold = 0; // 1-based
        std::uint64_t best_epoch = 0;
        double best_val_loss = 0.0;
        double best_val_dice = 0.0;
        double seconds = 0.0;
        std::uint64_t epochs = 0;
    };
    std::vector<FoldSummary> completed;
};

void checkpoint_save(const std::string& path, const Checkpoint& cp);
Checkpoint checkpoint_load(const std::string& path);

struct RunHooks {
    // Called after each completed epoch; returning false abandons the run
    // (the checkpoint on disk is the surviving state).
    std::function<bool(int fold, std::size_t epoch)> after_epoch;
    std::ostream* log = nullptr;
};

struct RunPaths {
    std::string checkpoint;       // empty disables checkpointing
    std::string metrics_csv;      // empty disables the CSV log
    std::string best_weights_dir; // per-fold best-val-loss weights, empty disables
    std::string variant = "full";
};

struct RunResult {
    std::vector<FoldResult> folds;
    std::optional<Aggregate> aggregate; // over per-fold best-epoch records
    std::vector<MetricRecord> history;
    double total_seconds = 0.0;
    bool interrupted = false;
};

// One evaluation pass: per-sample IoU/Dice (argmax over logits), PSNR, SSIM
// and the validation loss; LPIPS only on epochs where epoch % lpips_every
// == 0 and a net is loaded. Aggregation is weighted by batch size.
MetricRecord evaluate_epoch(ParamStore& params, const ModelConfig& cfg, const Dataset& data,
                            const std::vector<std::size_t>& val_indices,
                            std::size_t batch_size, std::size_t epoch,
                            const LpipsNet* perceptual, std::size_t lpips_every,
                            const NormalizationSpec& norm = {},
                            ExclusionStats* exclusions = nullptr);

// Standalone single-fold training (no checkpointing).
FoldResult train_fold(int fold_index, const FoldPlan& plan, const TrainConfig& cfg,
                      const Dataset& data, const RunHooks& hooks = {});

RunResult run_cross_validation(const TrainConfig& cfg, const Dataset& data,
                               const RunPaths& paths, bool resume,
                               const RunHooks& hooks = {});

struct AblationResult {
    struct Row {
        std::string variant; // "full", "no_dropout", "no_pretrain"
        Aggregate aggregate;
    };
    std::vector<Row> rows;
    std::string combined_csv; // path of the merged variant-tagged CSV
};

// Full model vs. dropout_p = 0 vs. random init, same seed and fold plan.
AblationResult run_ablation(const TrainConfig& cfg, const Dataset& data,
                            const std::string& out_dir, bool resume,
                            const RunHooks& hooks = {});

} // namespace hairseg
