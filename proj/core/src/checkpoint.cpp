#include <unordered_map>

#include "hairseg/serialize.hpp"
#include "hairseg/train.hpp"

namespace hairseg {

namespace {

constexpr std::string_view kCheckpointMagic = "HSCHKPNT";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_record(BinWriter& w, const MetricRecord& r) {
    w.u32(static_cast<std::uint32_t>(r.fold));
    w.u32(static_cast<std::uint32_t>(r.epoch));
    w.f64(r.train_loss);
    w.f64(r.val_loss);
    w.f64(r.iou);
    w.f64(r.dice);
    w.f64(r.psnr_db);
    w.f64(r.ssim);
    w.u8(r.lpips.has_value() ? 1 : 0);
    w.f64(r.lpips.value_or(0.0));
}

MetricRecord read_record(BinReader& r) {
    MetricRecord rec;
    rec.fold = static_cast<int>(r.u32());
    rec.epoch = static_cast<int>(r.u32());
    rec.train_loss = r.f64();
    rec.val_loss = r.f64();
    rec.iou = r.f64();
    rec.dice = r.f64();
    rec.psnr_db = r.f64();
    rec.ssim = r.f64();
    const bool has_lpips = r.u8() != 0;
    const double lp = r.f64();
    if (has_lpips) rec.lpips = lp;
    return rec;
}

} // namespace

void checkpoint_save(const std::string& path, const Checkpoint& cp) {
    BinWriter w;
    w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(kCheckpointVersion);
    w.u64(cp.train_hash);
    w.u64(cp.model_config.structure_hash());
    w.u64(cp.n_samples);
    w.u32(cp.fold);
    w.u32(cp.epoch);
    w.u32(RngState::kAlgorithmId);
    w.u64(cp.rng.seed());
    w.u64(cp.rng.counter());
    w.f64(cp.early_stop.best_val_loss);
    w.u64(cp.early_stop.best_epoch);
    w.u64(cp.early_stop.epochs_since_improvement);
    w.u8(cp.early_stop.stopped ? 1 : 0);
    w.f64(cp.best_val_dice);
    w.u64(cp.adam_step);

    w.u32(static_cast<std::uint32_t>(cp.completed.size()));
    for (const auto& s : cp.completed) {
        w.u32(s.fold);
        w.u64(s.best_epoch);
        w.f64(s.best_val_loss);
        w.f64(s.best_val_dice);
        w.f64(s.seconds);
        w.u64(s.epochs);
    }

    w.u32(static_cast<std::uint32_t>(cp.history.size()));
    for (const auto& r : cp.history) write_record(w, r);

    std::vector<NamedBlob> blobs;
    blobs.push_back(NamedBlob::meta("meta.structure", encode_structure(cp.model_config)));
    for (const auto& e : cp.params)
        blobs.push_back(NamedBlob::tensor("p/" + e.name, e.var.value()));
    HS_CHECK_CONTRACT(cp.moments_m.size() == cp.params.count() &&
                          cp.moments_v.size() == cp.params.count(),
                      "checkpoint moments do not match the parameter count");
    for (std::size_t i = 0; i < cp.params.count(); ++i) {
        blobs.push_back(NamedBlob::tensor("m/" + cp.params[i].name, cp.moments_m[i]));
        blobs.push_back(NamedBlob::tensor("v/" + cp.params[i].name, cp.moments_v[i]));
    }
    w.u8(cp.best_params.has_value() ? 1 : 0);
    if (cp.best_params) {
        HS_CHECK_CONTRACT(cp.best_params->size() == cp.params.count(),
                          "best-params snapshot does not match the parameter count");
        for (std::size_t i = 0; i < cp.params.count(); ++i)
            blobs.push_back(NamedBlob::tensor("best/" + cp.params[i].name, (*cp.best_params)[i]));
    }
    write_tensor_section(w, blobs);

    BinWriter out = std::move(w);
    const std::uint32_t crc = crc32(out.buffer().data(), out.buffer().size());
    out.u32(crc);
    write_file_atomic(path, out.buffer());
}

Checkpoint checkpoint_load(const std::string& path) {
    const auto data = read_file_bytes(path);
    HS_CHECK(data.size() >= 16, ErrorKind::Corrupt, path << " is too small to be a checkpoint");
    const std::uint32_t stored_crc = std::uint32_t(data[data.size() - 4]) |
                                     std::uint32_t(data[data.size() - 3]) << 8 |
                                     std::uint32_t(data[data.size() - 2]) << 16 |
                                     std::uint32_t(data[data.size() - 1]) << 24;
    HS_CHECK(crc32(data.data(), data.size() - 4) == stored_crc, ErrorKind::Corrupt,
             path << " failed its checksum");

    BinReader r(data);
    char magic[8];
    r.bytes(magic, 8);
    HS_CHECK(std::string_view(magic, 8) == kCheckpointMagic, ErrorKind::Corrupt,
             path << " is not a checkpoint file (bad magic)");
    const std::uint32_t version = r.u32();
    HS_CHECK(version == kCheckpointVersion, ErrorKind::VersionMismatch,
             path << " has checkpoint version " << version << ", expected "
                  << kCheckpointVersion);

    Checkpoint cp;
    cp.train_hash = r.u64();
    const std::uint64_t model_hash = r.u64();
    cp.n_samples = r.u64();
    cp.fold = r.u32();
    cp.epoch = r.u32();
    const std::uint32_t rng_algo = r.u32();
    HS_CHECK(rng_algo == RngState::kAlgorithmId, ErrorKind::VersionMismatch,
             path << " uses RNG algorithm id " << rng_algo << ", expected "
                  << RngState::kAlgorithmId);
    const std::uint64_t rng_seed = r.u64();
    const std::uint64_t rng_counter = r.u64();
    cp.rng = RngState(rng_seed, rng_counter);
    cp.early_stop.best_val_loss = r.f64();
    cp.early_stop.best_epoch = r.u64();
    cp.early_stop.epochs_since_improvement = r.u64();
    cp.early_stop.stopped = r.u8() != 0;
    cp.best_val_dice = r.f64();
    cp.adam_step = r.u64();

    const std::uint32_t n_completed = r.u32();
    cp.completed.resize(n_completed);
    for (auto& s : cp.completed) {
        s.fold = r.u32();
        s.best_epoch = r.u64();
        s.best_val_loss = r.f64();
        s.best_val_dice = r.f64();
        s.seconds = r.f64();
        s.epochs = r.u64();
    }

    const std::uint32_t n_records = r.u32();
    cp.history.reserve(n_records);
    for (std::uint32_t i = 0; i < n_records; ++i) cp.history.push_back(read_record(r));

    const bool has_best = r.u8() != 0;
    auto blobs = read_tensor_section(r);
    std::unordered_map<std::string, const NamedBlob*> by_name;
    for (const auto& b : blobs) by_name[b.name] = &b;

    auto meta_it = by_name.find("meta.structure");
    HS_CHECK(meta_it != by_name.end() && meta_it->second->dtype == Dtype::U64,
             ErrorKind::Corrupt, path << ": missing structure metadata");
    cp.model_config = decode_structure(meta_it->second->u64);
    HS_CHECK(cp.model_config.structure_hash() == model_hash, ErrorKind::Corrupt,
             path << ": structure metadata does not match the header hash");

    auto fetch = [&](const std::string& name, const Shape& shape) {
        auto it = by_name.find(name);
        HS_CHECK(it != by_name.end(), ErrorKind::Corrupt, path << ": missing tensor " << name);
        HS_CHECK(it->second->shape == shape, ErrorKind::Corrupt,
                 path << ": tensor " << name << " has shape " << shape_str(it->second->shape)
                      << ", expected " << shape_str(shape));
        return it->second->to_tensor();
    };

    if (has_best) cp.best_params.emplace();
    for_each_param_shape(cp.model_config, [&](const std::string& name, const Shape& shape) {
        cp.params.add(name, fetch("p/" + name, shape));
        cp.moments_m.push_back(fetch("m/" + name, shape));
        cp.moments_v.push_back(fetch("v/" + name, shape));
        if (has_best) cp.best_params->push_back(fetch("best/" + name, shape));
    });
    return cp;
}

} // namespace hairseg
