#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hairseg/metrics.hpp"

namespace hairseg {

// One CSV row per (variant, fold, epoch). The CSV is the interchange format
// between training runs and report generation.
using MetricRows = std::vector<std::pair<std::string, MetricRecord>>;

std::string metrics_csv_text(const MetricRows& rows);
// Parse errors carry the 1-based line number.
MetricRows parse_metrics_csv_text(const std::string& text, const std::string& origin);
MetricRows load_metrics_csv(const std::string& path);

struct ReportTable {
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> footer; // empty when no footer row
    std::string note;                // free-text line under the table
};

std::string render_markdown(const ReportTable& table);

struct ReportBundle {
    std::vector<ReportTable> tables;
    std::string curves_csv; // per-epoch loss/Dice series per fold
};

// Builds per-fold tables (row = the best-val-loss epoch of each fold), an
// aggregate table per variant when >= 2 folds exist, and a variant
// comparison table when more than one variant is present.
ReportBundle build_report(const MetricRows& rows);

// 3 decimals for losses and overlap/similarity metrics, 1 for PSNR.
std::string format_metric(double v, bool is_psnr);

} // namespace hairseg
