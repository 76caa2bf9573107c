#pragma once

#include <optional>
#include <vector>

#include "hairseg/tensor.hpp"

namespace hairseg {

// Predicted and target binary masks. Class 1 is hair, class 0 background.
struct MaskPair {
    MaskTensor pred;
    MaskTensor target;
};

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double data_range = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;

    double c1() const { return (k1 * data_range) * (k1 * data_range); }
    double c2() const { return (k2 * data_range) * (k2 * data_range); }
};

struct MetricRecord {
    int fold = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double iou = 0.0;
    double dice = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::optional<double> lpips; // absent when no perceptual net is loaded
};

// Classes whose union (IoU) or size sum (Dice) is zero are excluded from the
// class mean; callers can count those events for logging.
struct ExclusionStats {
    std::size_t excluded_classes = 0;
};

double iou(const MaskPair& pair, ExclusionStats* stats = nullptr);
double dice(const MaskPair& pair, ExclusionStats* stats = nullptr);

// 20*log10(data_range/sqrt(MSE)); the MSE floor of 1e-10 caps the value at
// 100 dB so perfect predictions stay finite.
double psnr(const MaskPair& pair);

// Gaussian-windowed SSIM over the valid (unpadded) region, masks treated as
// real-valued maps in {0,1}.
double ssim(const MaskPair& pair, const SsimParams& params = {});

struct Stat {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation, 0 when n < 2
    std::size_t n = 0;
};

struct Aggregate {
    Stat train_loss, val_loss, iou, dice, psnr_db, ssim;
    std::optional<Stat> lpips; // absent entries are excluded pairwise
};

// Mean and sample standard deviation per metric across fold records.
Aggregate aggregate(const std::vector<MetricRecord>& records);

} // namespace hairseg
