#include "hairseg/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "hairseg/error.hpp"
#include "hairseg/png_io.hpp"

namespace fs = std::filesystem;

namespace hairseg {

Dataset load_dataset(const std::string& root) {
    const fs::path images_dir = fs::path(root) / "images";
    const fs::path masks_dir = fs::path(root) / "masks";
    HS_CHECK(fs::is_directory(images_dir), ErrorKind::Io,
             "dataset root " << root << " has no images/ directory");
    HS_CHECK(fs::is_directory(masks_dir), ErrorKind::Io,
             "dataset root " << root << " has no masks/ directory");

    std::set<std::string> image_ids, mask_ids;
    for (const auto& entry : fs::directory_iterator(images_dir))
        if (entry.path().extension() == ".png") image_ids.insert(entry.path().stem().string());
    for (const auto& entry : fs::directory_iterator(masks_dir))
        if (entry.path().extension() == ".png") mask_ids.insert(entry.path().stem().string());
    HS_CHECK_DATA(!image_ids.empty(), "no PNG images found under " << images_dir.string());

    std::vector<std::string> errors;
    for (const auto& id : image_ids)
        if (!mask_ids.contains(id))
            errors.push_back("missing mask for image " + id + ".png");
    for (const auto& id : mask_ids)
        if (!image_ids.contains(id))
            errors.push_back("missing image for mask " + id + ".png");

    Dataset out;
    std::optional<std::pair<std::size_t, std::size_t>> common_extent;
    for (const auto& id : image_ids) {
        if (!mask_ids.contains(id)) continue;
        try {
            const PngImage img = read_png((images_dir / (id + ".png")).string(), PngColor::Rgb);
            const PngImage msk = read_png((masks_dir / (id + ".png")).string(), PngColor::Gray);
            if (img.height != msk.height || img.width != msk.width) {
                std::ostringstream os;
                os << id << ".png: image " << img.height << "x" << img.width << " vs mask "
                   << msk.height << "x" << msk.width;
                errors.push_back(os.str());
                continue;
            }
            if (common_extent && *common_extent != std::pair{img.height, img.width}) {
                std::ostringstream os;
                os << id << ".png: extent " << img.height << "x" << img.width
                   << " differs from the rest of the dataset (" << common_extent->first << "x"
                   << common_extent->second << ")";
                errors.push_back(os.str());
                continue;
            }
            common_extent = {img.height, img.width};

            Sample s;
            s.id = id;
            const std::size_t plane = img.height * img.width;
            s.image = Tensor({3, img.height, img.width});
            for (std::size_t p = 0; p < plane; ++p)
                for (std::size_t c = 0; c < 3; ++c)
                    s.image[c * plane + p] = static_cast<float>(img.pixels[p * 3 + c]) / 255.0f;

            s.mask = MaskTensor({msk.height, msk.width});
            bool nonbinary = false;
            for (std::size_t p = 0; p < plane; ++p) {
                const std::uint8_t v = msk.pixels[p];
                if (v != 0 && v != 255) nonbinary = true;
                s.mask[p] = v != 0 ? 1 : 0;
            }
            if (nonbinary)
                out.warnings.push_back("mask " + id + ".png has non-binary gray values, "
                                       "binarized nonzero -> 1");
            out.samples.push_back(std::move(s));
        } catch (const Error& e) {
            errors.push_back(e.what());
        }
    }

    if (!errors.empty()) {
        std::ostringstream os;
        os << errors.size() << " dataset problem(s) under " << root << ":";
        for (const auto& e : errors) os << "\n  - " << e;
        raise(ErrorKind::Data, os.str());
    }

    std::sort(out.samples.begin(), out.samples.end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
    return out;
}

Tensor normalize_image(const Tensor& image, const NormalizationSpec& spec) {
    HS_CHECK_SHAPE(image.rank() == 3 && image.extent(0) == 3,
                   "normalize: expected [3,H,W], got " << shape_str(image.shape()));
    Tensor out(image.shape());
    const std::size_t plane = image.extent(1) * image.extent(2);
    for (std::size_t c = 0; c < 3; ++c) {
        HS_CHECK_PARAM(spec.stddev[c] > 0.0f, "normalize: std must be strictly positive");
        const float m = spec.mean[c];
        const float inv = 1.0f / spec.stddev[c];
        for (std::size_t p = 0; p < plane; ++p)
            out[c * plane + p] = (image[c * plane + p] - m) * inv;
    }
    return out;
}

Tensor denormalize_image(const Tensor& image, const NormalizationSpec& spec) {
    HS_CHECK_SHAPE(image.rank() == 3 && image.extent(0) == 3,
                   "denormalize: expected [3,H,W], got " << shape_str(image.shape()));
    Tensor out(image.shape());
    const std::size_t plane = image.extent(1) * image.extent(2);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p)
            out[c * plane + p] = image[c * plane + p] * spec.stddev[c] + spec.mean[c];
    return out;
}

FoldPlan kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
    HS_CHECK_PARAM(k >= 2, "kfold_split: k must be >= 2, got " << k);
    HS_CHECK_PARAM(n >= k, "kfold_split: n=" << n << " smaller than k=" << k);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngState rng(seed);
    // Fisher-Yates
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = rng.next_range(0, i);
        std::swap(order[i], order[j]);
    }

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.folds.resize(k);
    const std::size_t base = n / k;
    const std::size_t larger = n % k;
    std::size_t pos = 0;
    std::vector<std::pair<std::size_t, std::size_t>> chunks(k); // [begin, end)
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = base + (f < larger ? 1 : 0);
        chunks[f] = {pos, pos + len};
        pos += len;
    }
    for (std::size_t f = 0; f < k; ++f) {
        auto& fold = plan.folds[f];
        fold.val.assign(order.begin() + chunks[f].first, order.begin() + chunks[f].second);
        fold.train.reserve(n - fold.val.size());
        for (std::size_t g = 0; g < k; ++g) {
            if (g == f) continue;
            fold.train.insert(fold.train.end(), order.begin() + chunks[g].first,
                              order.begin() + chunks[g].second);
        }
    }
    return plan;
}

void export_fold_plan(const FoldPlan& plan, const std::vector<std::string>& ids,
                      const std::string& path) {
    std::ofstream out(path);
    HS_CHECK(out.good(), ErrorKind::Io, "cannot write fold plan to " << path);
    out << "fold\trole\tid\n";
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        for (std::size_t i : plan.folds[f].train) out << f + 1 << "\ttrain\t" << ids.at(i) << "\n";
        for (std::size_t i : plan.folds[f].val) out << f + 1 << "\tval\t" << ids.at(i) << "\n";
    }
    HS_CHECK(out.good(), ErrorKind::Io, "write failed for " << path);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& indices,
                                                   std::size_t batch_size, bool shuffle,
                                                   RngState& rng) {
    HS_CHECK_PARAM(batch_size >= 1, "make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order = indices;
    if (shuffle) {
        for (std::size_t i = order.size(); i-- > 1;) {
            const std::size_t j = rng.next_range(0, i);
            std::swap(order[i], order[j]);
        }
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                     const NormalizationSpec& spec) {
    HS_CHECK_DATA(!indices.empty(), "assemble_batch: empty index list");
    const Sample& first = data.samples.at(indices[0]);
    const std::size_t h = first.image.extent(1);
    const std::size_t w = first.image.extent(2);
    Batch b;
    b.images = Tensor({indices.size(), 3, h, w});
    b.targets = MaskTensor({indices.size(), h, w});
    const std::size_t img_stride = 3 * h * w;
    const std::size_t msk_stride = h * w;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = data.samples.at(indices[i]);
        HS_CHECK_SHAPE(s.image.extent(1) == h && s.image.extent(2) == w,
                       "assemble_batch: sample " << s.id << " extent differs");
        const Tensor norm = normalize_image(s.image, spec);
        std::copy(norm.vec().begin(), norm.vec().end(), b.images.data() + i * img_stride);
        std::copy(s.mask.vec().begin(), s.mask.vec().end(), b.targets.data() + i * msk_stride);
    }
    return b;
}

BatchLoader::BatchLoader(const Dataset& data, std::vector<std::vector<std::size_t>> batches,
                         NormalizationSpec spec, std::size_t lookahead)
    : data_(data), batches_(std::move(batches)), spec_(spec),
      lookahead_(std::max<std::size_t>(1, lookahead)) {
    fill();
}

BatchLoader::~BatchLoader() {
    for (auto& f : inflight_)
        if (f.valid()) f.wait();
}

void BatchLoader::fill() {
    while (next_submit_ < batches_.size() && inflight_.size() < lookahead_) {
        const auto& idx = batches_[next_submit_++];
        inflight_.push_back(std::async(std::launch::async, [this, &idx] {
            return assemble_batch(data_, idx, spec_);
        }));
    }
}

std::optional<Batch> BatchLoader::next() {
    if (inflight_.empty()) return std::nullopt;
    Batch b = inflight_.front().get();
    inflight_.pop_front();
    fill();
    return b;
}

} // namespace hairseg
