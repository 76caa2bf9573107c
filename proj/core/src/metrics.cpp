#include "hairseg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "hairseg/error.hpp"

namespace hairseg {

namespace {

void validate_pair(const MaskPair& pair) {
    HS_CHECK_DATA(!pair.pred.empty(), "metric on an empty mask");
    HS_CHECK_SHAPE(pair.pred.shape() == pair.target.shape(),
                   "mask shapes differ: " << shape_str(pair.pred.shape()) << " vs "
                                          << shape_str(pair.target.shape()));
    for (std::size_t i = 0; i < pair.pred.size(); ++i) {
        HS_CHECK_DATA(pair.pred[i] <= 1 && pair.target[i] <= 1,
                      "mask values must be class ids in {0,1}");
    }
}

struct ClassCounts {
    std::size_t inter[2] = {0, 0};
    std::size_t pred[2] = {0, 0};
    std::size_t target[2] = {0, 0};
};

ClassCounts count_classes(const MaskPair& pair) {
    ClassCounts c;
    for (std::size_t i = 0; i < pair.pred.size(); ++i) {
        const std::uint8_t p = pair.pred[i];
        const std::uint8_t t = pair.target[i];
        ++c.pred[p];
        ++c.target[t];
        if (p == t) ++c.inter[p];
    }
    return c;
}

} // namespace

double iou(const MaskPair& pair, ExclusionStats* stats) {
    validate_pair(pair);
    const ClassCounts c = count_classes(pair);
    double sum = 0.0;
    std::size_t defined = 0;
    for (int cls = 0; cls < 2; ++cls) {
        const std::size_t uni = c.pred[cls] + c.target[cls] - c.inter[cls];
        if (uni == 0) {
            if (stats) ++stats->excluded_classes;
            continue;
        }
        sum += static_cast<double>(c.inter[cls]) / static_cast<double>(uni);
        ++defined;
    }
    // a nonempty mask always leaves at least one class with nonzero union
    return sum / static_cast<double>(defined);
}

double dice(const MaskPair& pair, ExclusionStats* stats) {
    validate_pair(pair);
    const ClassCounts c = count_classes(pair);
    double sum = 0.0;
    std::size_t defined = 0;
    for (int cls = 0; cls < 2; ++cls) {
        const std::size_t denom = c.pred[cls] + c.target[cls];
        if (denom == 0) {
            if (stats) ++stats->excluded_classes;
            continue;
        }
        sum += 2.0 * static_cast<double>(c.inter[cls]) / static_cast<double>(denom);
        ++defined;
    }
    return sum / static_cast<double>(defined);
}

double psnr(const MaskPair& pair) {
    validate_pair(pair);
    double se = 0.0;
    for (std::size_t i = 0; i < pair.pred.size(); ++i) {
        const double d = static_cast<double>(pair.pred[i]) - static_cast<double>(pair.target[i]);
        se += d * d;
    }
    const double mse = std::max(se / static_cast<double>(pair.pred.size()), 1e-10);
    return 20.0 * std::log10(1.0 / std::sqrt(mse));
}

double ssim(const MaskPair& pair, const SsimParams& params) {
    validate_pair(pair);
    HS_CHECK_PARAM(params.window % 2 == 1 && params.window >= 1, "ssim: window must be odd");
    HS_CHECK_PARAM(params.sigma > 0.0, "ssim: sigma must be positive");
    HS_CHECK_SHAPE(pair.pred.rank() == 2, "ssim: masks must be H x W");
    const std::size_t h = pair.pred.extent(0);
    const std::size_t w = pair.pred.extent(1);
    const std::size_t win = params.window;
    HS_CHECK_DATA(h >= win && w >= win, "ssim: image " << h << "x" << w
                                                       << " smaller than window " << win);

    // normalized 1-D Gaussian taps; the window is separable
    std::vector<double> kernel(win);
    const double half = (static_cast<double>(win) - 1.0) / 2.0;
    double ksum = 0.0;
    for (std::size_t i = 0; i < win; ++i) {
        const double d = static_cast<double>(i) - half;
        kernel[i] = std::exp(-(d * d) / (2.0 * params.sigma * params.sigma));
        ksum += kernel[i];
    }
    for (auto& k : kernel) k /= ksum;

    const std::size_t vw = w - win + 1;
    const std::size_t vh = h - win + 1;

    // five filtered moment maps: P, T, P^2, T^2, PT
    std::vector<double> planes[5];
    for (auto& p : planes) p.assign(h * w, 0.0);
    for (std::size_t i = 0; i < h * w; ++i) {
        const double p = pair.pred[i];
        const double t = pair.target[i];
        planes[0][i] = p;
        planes[1][i] = t;
        planes[2][i] = p * p;
        planes[3][i] = t * t;
        planes[4][i] = p * t;
    }

    auto filter_valid = [&](const std::vector<double>& src) {
        std::vector<double> tmp(h * vw);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < vw; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < win; ++k) acc += kernel[k] * src[y * w + x + k];
                tmp[y * vw + x] = acc;
            }
        std::vector<double> out(vh * vw);
        for (std::size_t y = 0; y < vh; ++y)
            for (std::size_t x = 0; x < vw; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < win; ++k) acc += kernel[k] * tmp[(y + k) * vw + x];
                out[y * vw + x] = acc;
            }
        return out;
    };

    const auto mu_p = filter_valid(planes[0]);
    const auto mu_t = filter_valid(planes[1]);
    const auto m_pp = filter_valid(planes[2]);
    const auto m_tt = filter_valid(planes[3]);
    const auto m_pt = filter_valid(planes[4]);

    const double c1 = params.c1();
    const double c2 = params.c2();
    double acc = 0.0;
    for (std::size_t i = 0; i < vh * vw; ++i) {
        const double mp = mu_p[i];
        const double mt = mu_t[i];
        const double var_p = m_pp[i] - mp * mp;
        const double var_t = m_tt[i] - mt * mt;
        const double cov = m_pt[i] - mp * mt;
        acc += ((2.0 * mp * mt + c1) * (2.0 * cov + c2)) /
               ((mp * mp + mt * mt + c1) * (var_p + var_t + c2));
    }
    return acc / static_cast<double>(vh * vw);
}

Aggregate aggregate(const std::vector<MetricRecord>& records) {
    HS_CHECK_DATA(records.size() >= 2,
                  "aggregate needs at least 2 records, got " << records.size());
    auto stat_of = [](std::vector<double> xs) {
        // summing in sorted order makes the result independent of record
        // order, so permutation invariance holds exactly
        std::sort(xs.begin(), xs.end());
        Stat s;
        s.n = xs.size();
        for (double x : xs) s.mean += x;
        s.mean /= static_cast<double>(xs.size());
        if (xs.size() >= 2) {
            double ss = 0.0;
            for (double x : xs) ss += (x - s.mean) * (x - s.mean);
            s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        }
        return s;
    };

    auto column = [&](auto getter) {
        std::vector<double> xs;
        xs.reserve(records.size());
        for (const auto& r : records) xs.push_back(getter(r));
        return stat_of(xs);
    };

    Aggregate a;
    a.train_loss = column([](const MetricRecord& r) { return r.train_loss; });
    a.val_loss = column([](const MetricRecord& r) { return r.val_loss; });
    a.iou = column([](const MetricRecord& r) { return r.iou; });
    a.dice = column([](const MetricRecord& r) { return r.dice; });
    a.psnr_db = column([](const MetricRecord& r) { return r.psnr_db; });
    a.ssim = column([](const MetricRecord& r) { return r.ssim; });

    std::vector<double> lp;
    for (const auto& r : records)
        if (r.lpips) lp.push_back(*r.lpips);
    if (!lp.empty()) a.lpips = stat_of(lp);
    return a;
}

} // namespace hairseg
