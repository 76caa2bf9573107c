#include "hairseg/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "hairseg/error.hpp"
#include "hairseg/serialize.hpp"

namespace hairseg {

namespace {

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, std::size_t line, const std::string& origin) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        HS_CHECK_DATA(used == s.size(), origin << ":" << line << ": bad numeric field '" << s << "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        raise(ErrorKind::Data,
              origin + ":" + std::to_string(line) + ": bad numeric field '" + s + "'");
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

constexpr const char* kCsvHeader =
    "variant,fold,epoch,train_loss,val_loss,iou,dice,psnr_db,ssim,lpips";

std::string display_variant(const std::string& v) {
    if (v == "full") return "Full (Dropout + Pretrain)";
    if (v == "no_dropout") return "No Dropout";
    if (v == "no_pretrain") return "No Pretraining";
    return v;
}

} // namespace

std::string format_metric(double v, bool is_psnr) {
    char buf[40];
    std::snprintf(buf, sizeof buf, is_psnr ? "%.1f" : "%.3f", v);
    return buf;
}

std::string metrics_csv_text(const MetricRows& rows) {
    std::ostringstream os;
    os << kCsvHeader << "\n";
    for (const auto& [variant, r] : rows) {
        os << variant << ',' << r.fold << ',' << r.epoch << ',' << fmt_full(r.train_loss) << ','
           << fmt_full(r.val_loss) << ',' << fmt_full(r.iou) << ',' << fmt_full(r.dice) << ','
           << fmt_full(r.psnr_db) << ',' << fmt_full(r.ssim) << ','
           << (r.lpips ? fmt_full(*r.lpips) : std::string()) << "\n";
    }
    return os.str();
}

MetricRows parse_metrics_csv_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    MetricRows rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            HS_CHECK_DATA(line == kCsvHeader,
                          origin << ":1: unexpected header '" << line << "'");
            continue;
        }
        const auto fields = split_csv_line(line);
        HS_CHECK_DATA(fields.size() == 10, origin << ":" << line_no << ": expected 10 fields, got "
                                                  << fields.size());
        MetricRecord r;
        r.fold = static_cast<int>(parse_double(fields[1], line_no, origin));
        r.epoch = static_cast<int>(parse_double(fields[2], line_no, origin));
        r.train_loss = parse_double(fields[3], line_no, origin);
        r.val_loss = parse_double(fields[4], line_no, origin);
        r.iou = parse_double(fields[5], line_no, origin);
        r.dice = parse_double(fields[6], line_no, origin);
        r.psnr_db = parse_double(fields[7], line_no, origin);
        r.ssim = parse_double(fields[8], line_no, origin);
        if (!fields[9].empty()) r.lpips = parse_double(fields[9], line_no, origin);
        rows.emplace_back(fields[0], r);
    }
    return rows;
}

MetricRows load_metrics_csv(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_metrics_csv_text(std::string(bytes.begin(), bytes.end()), path);
}

std::string render_markdown(const ReportTable& t) {
    std::ostringstream os;
    os << "### " << t.title << "\n\n";
    os << "|";
    for (const auto& c : t.columns) os << ' ' << c << " |";
    os << "\n|";
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& row : t.rows) {
        os << "|";
        for (const auto& cell : row) os << ' ' << cell << " |";
        os << "\n";
    }
    if (!t.footer.empty()) {
        os << "|";
        for (const auto& cell : t.footer) os << ' ' << cell << " |";
        os << "\n";
    }
    if (!t.note.empty()) os << "\n" << t.note << "\n";
    os << "\n";
    return os.str();
}

ReportBundle build_report(const MetricRows& rows) {
    HS_CHECK_DATA(!rows.empty(), "report: no metric rows");

    // group rows by variant, preserving first-appearance order
    std::vector<std::string> variant_order;
    std::map<std::string, std::vector<MetricRecord>> by_variant;
    for (const auto& [variant, r] : rows) {
        if (!by_variant.contains(variant)) variant_order.push_back(variant);
        by_variant[variant].push_back(r);
    }

    const std::string agg_note =
        "Aggregates are the arithmetic mean +/- sample standard deviation of the per-fold rows.";

    ReportBundle bundle;
    std::map<std::string, Aggregate> variant_aggregates;
    for (const auto& variant : variant_order) {
        const auto& records = by_variant[variant];

        // best-val-loss epoch per fold (earliest epoch wins ties)
        std::map<int, MetricRecord> best_per_fold;
        for (const auto& r : records) {
            auto it = best_per_fold.find(r.fold);
            if (it == best_per_fold.end() || r.val_loss < it->second.val_loss)
                best_per_fold[r.fold] = r;
        }

        ReportTable per_fold;
        per_fold.title = "Per-Fold Performance Metrics";
        if (variant_order.size() > 1) per_fold.title += " - " + display_variant(variant);
        per_fold.columns = {"Fold", "Train Loss", "Val Loss", "IoU",
                            "Dice", "PSNR (dB)",  "SSIM",     "LPIPS"};
        std::vector<MetricRecord> fold_records;
        for (const auto& [fold, r] : best_per_fold) {
            fold_records.push_back(r);
            per_fold.rows.push_back({std::to_string(fold), format_metric(r.train_loss, false),
                                     format_metric(r.val_loss, false), format_metric(r.iou, false),
                                     format_metric(r.dice, false), format_metric(r.psnr_db, true),
                                     format_metric(r.ssim, false),
                                     r.lpips ? format_metric(*r.lpips, false) : "n/a"});
        }

        if (fold_records.size() >= 2) {
            const Aggregate agg = aggregate(fold_records);
            variant_aggregates.emplace(variant, agg);
            auto cell = [](const Stat& s, bool psnr) {
                return format_metric(s.mean, psnr) + " \xc2\xb1 " + format_metric(s.stddev, psnr);
            };
            per_fold.footer = {"mean \xc2\xb1 std",
                               cell(agg.train_loss, false),
                               cell(agg.val_loss, false),
                               cell(agg.iou, false),
                               cell(agg.dice, false),
                               cell(agg.psnr_db, true),
                               cell(agg.ssim, false),
                               agg.lpips ? cell(*agg.lpips, false) : "n/a"};
            bundle.tables.push_back(per_fold);

            ReportTable avg;
            avg.title = "Average Metrics Across Folds (\xc2\xb1 Std Dev)";
            if (variant_order.size() > 1) avg.title += " - " + display_variant(variant);
            avg.columns = {"Metric", "Average Value"};
            avg.rows = {{"IoU", cell(agg.iou, false)},
                        {"Dice", cell(agg.dice, false)},
                        {"PSNR (dB)", cell(agg.psnr_db, true)},
                        {"SSIM", cell(agg.ssim, false)},
                        {"LPIPS", agg.lpips ? cell(*agg.lpips, false) : "n/a"}};
            avg.note = agg_note;
            bundle.tables.push_back(avg);
        } else {
            per_fold.note = "Aggregate omitted: needs at least 2 folds.";
            bundle.tables.push_back(per_fold);
        }
    }

    if (variant_order.size() > 1) {
        ReportTable ab;
        ab.title = "Ablation Results (Average Across Folds)";
        ab.columns = {"Variant", "IoU", "Dice", "PSNR (dB)", "SSIM", "LPIPS"};
        for (const auto& variant : variant_order) {
            auto it = variant_aggregates.find(variant);
            if (it == variant_aggregates.end()) continue;
            const Aggregate& agg = it->second;
            ab.rows.push_back({display_variant(variant), format_metric(agg.iou.mean, false),
                               format_metric(agg.dice.mean, false),
                               format_metric(agg.psnr_db.mean, true),
                               format_metric(agg.ssim.mean, false),
                               agg.lpips ? format_metric(agg.lpips->mean, false) : "n/a"});
        }
        bundle.tables.push_back(ab);
    }

    // learning-curve series, the data behind per-fold convergence plots
    std::ostringstream curves;
    curves << "variant,fold,epoch,train_loss,val_loss,dice\n";
    for (const auto& variant : variant_order)
        for (const auto& r : by_variant[variant])
            curves << variant << ',' << r.fold << ',' << r.epoch << ',' << fmt_full(r.train_loss)
                   << ',' << fmt_full(r.val_loss) << ',' << fmt_full(r.dice) << "\n";
    bundle.curves_csv = curves.str();
    return bundle;
}

} // namespace hairseg
