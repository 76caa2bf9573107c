#include "hairseg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hairseg/report.hpp"
#include "hairseg/serialize.hpp"

namespace fs = std::filesystem;

namespace hairseg {

// ---- TrainConfig ----

void TrainConfig::validate() const {
    HS_CHECK_PARAM(max_epochs >= 1, "config: max_epochs must be >= 1");
    HS_CHECK_PARAM(patience >= 1, "config: patience must be >= 1");
    HS_CHECK_PARAM(batch_size >= 1, "config: batch_size must be >= 1");
    HS_CHECK_PARAM(k >= 2, "config: k must be >= 2");
    HS_CHECK_PARAM(lr > 0.0, "config: lr must be positive");
    HS_CHECK_PARAM(dropout_p >= 0.0 && dropout_p < 1.0,
                   "config: dropout_p " << dropout_p << " outside [0, 1)");
    HS_CHECK_PARAM(lpips_every >= 1, "config: lpips_every must be >= 1");
    HS_CHECK_PARAM(!init.empty(), "config: init must be 'random' or a weights file path");
    HS_CHECK_PARAM(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                   "config: betas must lie in [0, 1)");
    HS_CHECK_PARAM(eps > 0.0, "config: eps must be positive");
    HS_CHECK_PARAM(weight_decay >= 0.0, "config: weight_decay must be non-negative");
    preset_by_name(preset); // throws on unknown preset
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc = preset_by_name(preset);
    mc.dropout_p = dropout_p;
    return mc;
}

AdamWConfig TrainConfig::adamw() const {
    return AdamWConfig{lr, beta1, beta2, eps, weight_decay, decay_exempt_norm_bias};
}

namespace {

std::string fmt_double_key(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string train_config_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "max_epochs=" << c.max_epochs << "\n";
    os << "patience=" << c.patience << "\n";
    os << "batch_size=" << c.batch_size << "\n";
    os << "lr=" << fmt_double_key(c.lr) << "\n";
    os << "k=" << c.k << "\n";
    os << "seed=" << c.seed << "\n";
    os << "dropout_p=" << fmt_double_key(c.dropout_p) << "\n";
    os << "init=" << c.init << "\n";
    os << "lpips_every=" << c.lpips_every << "\n";
    os << "preset=" << c.preset << "\n";
    os << "weight_decay=" << fmt_double_key(c.weight_decay) << "\n";
    os << "beta1=" << fmt_double_key(c.beta1) << "\n";
    os << "beta2=" << fmt_double_key(c.beta2) << "\n";
    os << "eps=" << fmt_double_key(c.eps) << "\n";
    os << "decay_exempt_norm_bias=" << (c.decay_exempt_norm_bias ? "true" : "false") << "\n";
    os << "lpips_weights=" << c.lpips_weights << "\n";
    return os.str();
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(train_config_text(*this)); }

namespace {

const char* const kConfigKeys[] = {
    "max_epochs", "patience", "batch_size", "lr", "k", "seed", "dropout_p", "init",
    "lpips_every", "preset", "weight_decay", "beta1", "beta2", "eps",
    "decay_exempt_norm_bias", "lpips_weights",
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::string valid_keys_list() {
    std::string out;
    for (const char* k : kConfigKeys) {
        if (!out.empty()) out += ", ";
        out += k;
    }
    return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        HS_CHECK(used == v.size(), ErrorKind::Usage, "bad value for " << key << ": '" << v << "'");
        return x;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        raise(ErrorKind::Usage, "bad value for " + key + ": '" + v + "'");
    }
}

double parse_f64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        HS_CHECK(used == v.size(), ErrorKind::Usage, "bad value for " << key << ": '" << v << "'");
        return x;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        raise(ErrorKind::Usage, "bad value for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    raise(ErrorKind::Usage, "bad value for " + key + ": '" + v + "' (expected true/false)");
}

} // namespace

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        HS_CHECK(eq != std::string::npos, ErrorKind::Usage,
                 origin << ":" << line_no << ": expected key=value, got '" << stripped << "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key == "max_epochs") cfg.max_epochs = parse_u64(value, key);
        else if (key == "patience") cfg.patience = parse_u64(value, key);
        else if (key == "batch_size") cfg.batch_size = parse_u64(value, key);
        else if (key == "lr") cfg.lr = parse_f64(value, key);
        else if (key == "k") cfg.k = parse_u64(value, key);
        else if (key == "seed") cfg.seed = parse_u64(value, key);
        else if (key == "dropout_p") cfg.dropout_p = parse_f64(value, key);
        else if (key == "init") cfg.init = value;
        else if (key == "lpips_every") cfg.lpips_every = parse_u64(value, key);
        else if (key == "preset") cfg.preset = value;
        else if (key == "weight_decay") cfg.weight_decay = parse_f64(value, key);
        else if (key == "beta1") cfg.beta1 = parse_f64(value, key);
        else if (key == "beta2") cfg.beta2 = parse_f64(value, key);
        else if (key == "eps") cfg.eps = parse_f64(value, key);
        else if (key == "decay_exempt_norm_bias") cfg.decay_exempt_norm_bias = parse_bool(value, key);
        else if (key == "lpips_weights") cfg.lpips_weights = value;
        else
            raise(ErrorKind::Usage, origin + ":" + std::to_string(line_no) + ": unknown key '" +
                                        key + "'; valid keys: " + valid_keys_list());
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_train_config_text(std::string(bytes.begin(), bytes.end()), path);
}

// ---- early stopping ----

void early_stop_update(EarlyStopState& s, double val_loss, std::size_t epoch,
                       std::size_t patience) {
    HS_CHECK_CONTRACT(!s.stopped, "early_stop_update on an already-stopped state");
    HS_CHECK_PARAM(patience >= 1, "early stopping patience must be >= 1");
    HS_CHECK_DATA(std::isfinite(val_loss), "early stopping requires a finite validation loss");
    if (val_loss < s.best_val_loss) {
        s.best_val_loss = val_loss;
        s.best_epoch = epoch;
        s.epochs_since_improvement = 0;
    } else if (++s.epochs_since_improvement >= patience) {
        s.stopped = true;
    }
}

// ---- evaluation ----

namespace {

Tensor mask_as_rgb(const MaskTensor& mask) {
    const std::size_t plane = mask.size();
    Tensor out({3, mask.extent(0), mask.extent(1)});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p)
            out[c * plane + p] = static_cast<float>(mask[p]);
    return out;
}

} // namespace

MetricRecord evaluate_epoch(ParamStore& params, const ModelConfig& cfg, const Dataset& data,
                            const std::vector<std::size_t>& val_indices,
                            std::size_t batch_size, std::size_t epoch,
                            const LpipsNet* perceptual, std::size_t lpips_every,
                            const NormalizationSpec& norm, ExclusionStats* exclusions) {
    HS_CHECK_DATA(!val_indices.empty(), "evaluate_epoch: empty validation set");
    RngState scratch(0);
    auto batches = make_batches(val_indices, batch_size, /*shuffle=*/false, scratch);
    BatchLoader loader(data, std::move(batches), norm);

    NoGradGuard ng;
    const bool with_lpips = perceptual != nullptr && lpips_every >= 1 && epoch % lpips_every == 0;
    double loss_sum = 0.0, iou_sum = 0.0, dice_sum = 0.0, psnr_sum = 0.0, ssim_sum = 0.0;
    double lpips_sum = 0.0;
    std::size_t samples = 0;
    while (auto batch = loader.next()) {
        const std::size_t bs = batch->targets.extent(0);
        const std::size_t h = batch->targets.extent(1);
        const std::size_t w = batch->targets.extent(2);
        Var x(std::move(batch->images));
        Var logits = forward<float>(x, params, cfg, Mode::Eval, scratch);
        Var loss = cross_entropy_loss(logits, batch->targets);
        loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(bs);

        const Tensor& lv = logits.value();
        const std::size_t classes = lv.extent(1);
        const std::size_t plane = h * w;
        for (std::size_t i = 0; i < bs; ++i) {
            MaskPair pair;
            pair.pred = MaskTensor({h, w});
            pair.target = MaskTensor({h, w});
            for (std::size_t p = 0; p < plane; ++p) {
                std::size_t best = 0;
                float best_v = lv[(i * classes) * plane + p];
                for (std::size_t c = 1; c < classes; ++c) {
                    const float v = lv[(i * classes + c) * plane + p];
                    if (v > best_v) {
                        best_v = v;
                        best = c;
                    }
                }
                pair.pred[p] = static_cast<std::uint8_t>(best);
                pair.target[p] = batch->targets[i * plane + p];
            }
            iou_sum += iou(pair, exclusions);
            dice_sum += dice(pair, exclusions);
            psnr_sum += psnr(pair);
            ssim_sum += ssim(pair);
            if (with_lpips)
                lpips_sum += perceptual->distance(mask_as_rgb(pair.pred), mask_as_rgb(pair.target));
        }
        samples += bs;
    }

    MetricRecord rec;
    rec.epoch = static_cast<int>(epoch);
    const double inv = 1.0 / static_cast<double>(samples);
    rec.val_loss = loss_sum * inv;
    rec.iou = iou_sum * inv;
    rec.dice = dice_sum * inv;
    rec.psnr_db = psnr_sum * inv;
    rec.ssim = ssim_sum * inv;
    if (with_lpips) rec.lpips = lpips_sum * inv;
    return rec;
}

// ---- fold training ----

namespace {

RngState fold_stream(std::uint64_t seed, std::size_t fold) {
    return RngState(seed).derive(0xF01D0000ull + fold);
}

RngState init_stream(std::uint64_t seed, std::size_t fold) {
    return RngState(seed).derive(0x1A170000ull + fold);
}

ParamStore make_initial_params(const TrainConfig& cfg, const ModelConfig& mc, std::size_t fold) {
    if (cfg.init == "random") return init_params<float>(mc, init_stream(cfg.seed, fold));
    return load_weights_for(mc, cfg.init);
}

std::vector<Tensor> snapshot_values(const ParamStore& params) {
    std::vector<Tensor> out;
    out.reserve(params.count());
    for (const auto& e : params) out.push_back(e.var.value());
    return out;
}

struct FoldRuntime {
    ParamStore params;
    AdamWState opt;
    RngState rng;
    EarlyStopState stop;
    std::optional<std::vector<Tensor>> best_values;
    double best_val_dice = 0.0;
    std::size_t epochs_done = 0;
    double seconds = 0.0;
};

struct RunState {
    std::size_t fold = 0; // 0-based fold in progress
    FoldRuntime rt;
    std::vector<MetricRecord> history;
    std::vector<Checkpoint::FoldSummary> completed;
};

Checkpoint make_checkpoint(const TrainConfig& cfg, const ModelConfig& mc, std::size_t n,
                           const RunState& st) {
    Checkpoint cp;
    cp.train_hash = cfg.hash();
    cp.n_samples = n;
    cp.model_config = mc;
    cp.fold = static_cast<std::uint32_t>(st.fold);
    cp.epoch = static_cast<std::uint32_t>(st.rt.epochs_done);
    cp.rng = st.rt.rng;
    cp.early_stop = st.rt.stop;
    cp.best_val_dice = st.rt.best_val_dice;
    cp.adam_step = st.rt.opt.step;
    for (const auto& e : st.rt.params) cp.params.add(e.name, e.var.value());
    if (st.rt.opt.initialized()) {
        cp.moments_m = st.rt.opt.m;
        cp.moments_v = st.rt.opt.v;
    } else {
        for (const auto& e : st.rt.params) {
            cp.moments_m.emplace_back(e.var.shape());
            cp.moments_v.emplace_back(e.var.shape());
        }
    }
    cp.best_params = st.rt.best_values;
    cp.history = st.history;
    cp.completed = st.completed;
    return cp;
}

void write_metrics_csv(const std::string& path, const std::string& variant,
                       const std::vector<MetricRecord>& history) {
    if (path.empty()) return;
    MetricRows rows;
    rows.reserve(history.size());
    for (const auto& r : history) rows.emplace_back(variant, r);
    const std::string text = metrics_csv_text(rows);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    HS_CHECK(out.good(), ErrorKind::Io, "cannot write metrics CSV to " << path);
    out << text;
}

// Runs one training epoch; returns the batch-size-weighted mean loss or
// nothing if a non-finite loss appeared (the caller snapshots diagnostics).
std::optional<double> train_one_epoch(FoldRuntime& rt, const std::vector<std::size_t>& train_idx,
                                      const Dataset& data, const TrainConfig& cfg,
                                      const ModelConfig& mc, const AdamWConfig& adamw_cfg,
                                      const NormalizationSpec& norm) {
    auto batches = make_batches(train_idx, cfg.batch_size, /*shuffle=*/true, rt.rng);
    BatchLoader loader(data, std::move(batches), norm);
    double loss_sum = 0.0;
    std::size_t count = 0;
    while (auto batch = loader.next()) {
        const std::size_t bs = batch->targets.extent(0);
        Var x(std::move(batch->images));
        Var logits = forward<float>(x, rt.params, mc, Mode::Train, rt.rng);
        Var loss = cross_entropy_loss(logits, batch->targets);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) return std::nullopt;
        backward(loss);
        adamw_step(rt.params, rt.opt, adamw_cfg);
        rt.params.zero_grads();
        loss_sum += lv * static_cast<double>(bs);
        count += bs;
    }
    return loss_sum / static_cast<double>(count);
}

void log_epoch(std::ostream* log, const std::string& variant, std::size_t fold, std::size_t k,
               std::size_t epoch, std::size_t max_epochs, const MetricRecord& r,
               std::size_t excluded_classes, double secs) {
    if (!log) return;
    std::ostream& os = *log;
    os << "[" << variant << " fold " << fold << "/" << k << "] epoch " << epoch << "/"
       << max_epochs << "  train_loss " << std::fixed << std::setprecision(4) << r.train_loss
       << "  val_loss " << r.val_loss << "  iou " << std::setprecision(3) << r.iou << "  dice "
       << r.dice << "  psnr " << std::setprecision(1) << r.psnr_db << "  ssim "
       << std::setprecision(3) << r.ssim;
    if (r.lpips) os << "  lpips " << std::setprecision(3) << *r.lpips;
    if (excluded_classes > 0) os << "  (zero-union classes excluded: " << excluded_classes << ")";
    os << "  [" << std::setprecision(1) << secs << "s]" << std::defaultfloat << "\n";
    os.flush();
}

enum class FoldOutcome { Completed, Interrupted };

// Shared fold loop for standalone and cross-validation training.
FoldOutcome run_fold_epochs(const TrainConfig& cfg, const ModelConfig& mc,
                            const AdamWConfig& adamw_cfg, const Dataset& data,
                            const FoldPlan& plan, std::size_t n, RunState& st,
                            const RunPaths& paths, const RunHooks& hooks,
                            const LpipsNet* perceptual) {
    const NormalizationSpec norm;
    const std::size_t f = st.fold;
    const auto fold_start = std::chrono::steady_clock::now();
    // a restored state may already be early-stopped at the interrupt point
    if (st.rt.stop.stopped) return FoldOutcome::Completed;
    for (std::size_t e = st.rt.epochs_done + 1; e <= cfg.max_epochs; ++e) {
        const auto epoch_start = std::chrono::steady_clock::now();
        auto train_loss = train_one_epoch(st.rt, plan.folds[f].train, data, cfg, mc, adamw_cfg,
                                          norm);
        if (!train_loss) {
            if (!paths.checkpoint.empty()) {
                checkpoint_save(paths.checkpoint + ".aborted", make_checkpoint(cfg, mc, n, st));
            }
            raise(ErrorKind::Data,
                  "non-finite training loss in fold " + std::to_string(f + 1) + ", epoch " +
                      std::to_string(e) +
                      (paths.checkpoint.empty()
                           ? std::string()
                           : "; diagnostic checkpoint at " + paths.checkpoint + ".aborted"));
        }
        ExclusionStats excl;
        MetricRecord rec = evaluate_epoch(st.rt.params, mc, data, plan.folds[f].val,
                                          cfg.batch_size, e, perceptual, cfg.lpips_every, norm,
                                          &excl);
        rec.fold = static_cast<int>(f) + 1;
        rec.train_loss = *train_loss;
        st.history.push_back(rec);

        early_stop_update(st.rt.stop, rec.val_loss, e, cfg.patience);
        if (st.rt.stop.best_epoch == e) st.rt.best_values = snapshot_values(st.rt.params);
        st.rt.best_val_dice = std::max(st.rt.best_val_dice, rec.dice);
        st.rt.epochs_done = e;
        st.rt.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - fold_start).count();

        if (!paths.checkpoint.empty())
            checkpoint_save(paths.checkpoint, make_checkpoint(cfg, mc, n, st));
        write_metrics_csv(paths.metrics_csv, paths.variant, st.history);
        log_epoch(hooks.log, paths.variant, f + 1, cfg.k, e, cfg.max_epochs, rec,
                  excl.excluded_classes,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                      .count());

        if (hooks.after_epoch && !hooks.after_epoch(static_cast<int>(f) + 1, e))
            return FoldOutcome::Interrupted;
        if (st.rt.stop.stopped) break;
    }
    return FoldOutcome::Completed;
}

FoldResult fold_result_from_state(const RunState& st) {
    FoldResult fr;
    fr.fold = static_cast<int>(st.fold) + 1;
    for (const auto& r : st.history)
        if (r.fold == fr.fold) fr.records.push_back(r);
    fr.best_epoch = st.rt.stop.best_epoch;
    fr.best_val_loss = st.rt.stop.best_val_loss;
    fr.best_val_dice = st.rt.best_val_dice;
    fr.seconds = st.rt.seconds;
    return fr;
}

void validate_dataset_extents(const Dataset& data) {
    if (data.samples.empty()) return;
    const auto& img = data.samples[0].image;
    HS_CHECK_SHAPE(img.extent(1) % 32 == 0,
                   "image height " << img.extent(1) << " not divisible by 32");
    HS_CHECK_SHAPE(img.extent(2) % 32 == 0,
                   "image width " << img.extent(2) << " not divisible by 32");
}

} // namespace

FoldResult train_fold(int fold_index, const FoldPlan& plan, const TrainConfig& cfg,
                      const Dataset& data, const RunHooks& hooks) {
    cfg.validate();
    validate_dataset_extents(data);
    HS_CHECK_PARAM(fold_index >= 0 && static_cast<std::size_t>(fold_index) < plan.folds.size(),
                   "train_fold: fold index " << fold_index << " out of range");
    const ModelConfig mc = cfg.model_config();
    std::optional<LpipsNet> perceptual;
    if (!cfg.lpips_weights.empty()) perceptual = LpipsNet::load(cfg.lpips_weights);

    RunState st;
    st.fold = static_cast<std::size_t>(fold_index);
    st.rt.params = make_initial_params(cfg, mc, st.fold);
    st.rt.rng = fold_stream(cfg.seed, st.fold);
    run_fold_epochs(cfg, mc, cfg.adamw(), data, plan, data.size(), st, RunPaths{}, hooks,
                    perceptual ? &*perceptual : nullptr);
    return fold_result_from_state(st);
}

RunResult run_cross_validation(const TrainConfig& cfg, const Dataset& data,
                               const RunPaths& paths, bool resume, const RunHooks& hooks) {
    cfg.validate();
    const std::size_t n = data.size();
    HS_CHECK_DATA(n >= cfg.k, "dataset has " << n << " samples, fewer than k=" << cfg.k);
    validate_dataset_extents(data);
    const ModelConfig mc = cfg.model_config();
    std::optional<LpipsNet> perceptual;
    if (!cfg.lpips_weights.empty()) perceptual = LpipsNet::load(cfg.lpips_weights);
    const FoldPlan plan = kfold_split(n, cfg.k, cfg.seed);
    const AdamWConfig adamw_cfg = cfg.adamw();

    RunState st;
    bool restored_mid_fold = false;
    if (resume && !paths.checkpoint.empty() && fs::exists(paths.checkpoint)) {
        Checkpoint cp = checkpoint_load(paths.checkpoint);
        HS_CHECK(cp.train_hash == cfg.hash(), ErrorKind::ConfigMismatch,
                 paths.checkpoint << " was written under a different training config");
        HS_CHECK(cp.n_samples == n, ErrorKind::ConfigMismatch,
                 paths.checkpoint << " was written for " << cp.n_samples
                                  << " samples, dataset has " << n);
        st.history = std::move(cp.history);
        st.completed = std::move(cp.completed);
        if (cp.completed.size() > cp.fold) {
            // the checkpointed fold already finished; start the next one fresh
            st.fold = cp.fold + 1;
        } else {
            st.fold = cp.fold;
            st.rt.params = std::move(cp.params);
            st.rt.opt.step = cp.adam_step;
            st.rt.opt.m = std::move(cp.moments_m);
            st.rt.opt.v = std::move(cp.moments_v);
            st.rt.rng = cp.rng;
            st.rt.stop = cp.early_stop;
            st.rt.best_values = std::move(cp.best_params);
            st.rt.best_val_dice = cp.best_val_dice;
            st.rt.epochs_done = cp.epoch;
            restored_mid_fold = true;
        }
        if (hooks.log)
            *hooks.log << "resuming from " << paths.checkpoint << " at fold " << st.fold + 1
                       << ", epoch " << st.rt.epochs_done + 1 << "\n";
    }

    RunResult result;
    const auto run_start = std::chrono::steady_clock::now();
    for (std::size_t f = st.fold; f < cfg.k; ++f) {
        if (!restored_mid_fold) {
            st.rt = FoldRuntime{};
            st.rt.params = make_initial_params(cfg, mc, f);
            st.rt.rng = fold_stream(cfg.seed, f);
            st.fold = f;
        }
        restored_mid_fold = false;

        const FoldOutcome outcome = run_fold_epochs(cfg, mc, adamw_cfg, data, plan, n, st, paths,
                                                    hooks, perceptual ? &*perceptual : nullptr);
        if (outcome == FoldOutcome::Interrupted) {
            result.interrupted = true;
            break;
        }

        FoldResult fr = fold_result_from_state(st);
        result.folds.push_back(fr);
        st.completed.push_back({static_cast<std::uint32_t>(f + 1), fr.best_epoch,
                                fr.best_val_loss, fr.best_val_dice, fr.seconds,
                                static_cast<std::uint64_t>(fr.records.size())});
        if (!paths.checkpoint.empty())
            checkpoint_save(paths.checkpoint, make_checkpoint(cfg, mc, n, st));
        if (!paths.best_weights_dir.empty() && st.rt.best_values) {
            ParamStore best;
            std::size_t i = 0;
            for (const auto& e : st.rt.params) best.add(e.name, (*st.rt.best_values)[i++]);
            fs::create_directories(paths.best_weights_dir);
            save_weights(best, mc,
                         (fs::path(paths.best_weights_dir) /
                          ("fold" + std::to_string(f + 1) + "_best.bin"))
                             .string());
        }
    }

    if (!result.interrupted && result.folds.size() >= 2) {
        std::vector<MetricRecord> best_records;
        for (const auto& fr : result.folds)
            for (const auto& r : fr.records)
                if (static_cast<std::size_t>(r.epoch) == fr.best_epoch) {
                    best_records.push_back(r);
                    break;
                }
        result.aggregate = aggregate(best_records);
    }
    result.history = st.history;
    result.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    if (hooks.log && !result.interrupted)
        *hooks.log << "total training time: " << std::fixed << std::setprecision(1)
                   << result.total_seconds << "s" << std::defaultfloat << "\n";
    return result;
}

AblationResult run_ablation(const TrainConfig& cfg, const Dataset& data,
                            const std::string& out_dir, bool resume, const RunHooks& hooks) {
    cfg.validate();
    fs::create_directories(out_dir);

    struct Variant {
        std::string name;
        TrainConfig config;
    };
    std::vector<Variant> variants;
    variants.push_back({"full", cfg});
    {
        TrainConfig c = cfg;
        c.dropout_p = 0.0;
        variants.push_back({"no_dropout", std::move(c)});
    }
    {
        TrainConfig c = cfg;
        c.init = "random";
        variants.push_back({"no_pretrain", std::move(c)});
    }

    AblationResult res;
    MetricRows combined;
    for (const auto& v : variants) {
        RunPaths p;
        p.checkpoint = (fs::path(out_dir) / ("checkpoint_" + v.name + ".bin")).string();
        p.metrics_csv = (fs::path(out_dir) / ("metrics_" + v.name + ".csv")).string();
        p.variant = v.name;
        const RunResult r = run_cross_validation(v.config, data, p, resume, hooks);
        HS_CHECK_DATA(!r.interrupted, "ablation run interrupted during variant " << v.name);
        HS_CHECK_DATA(r.aggregate.has_value(), "ablation variant " << v.name
                                                                   << " produced no aggregate");
        res.rows.push_back({v.name, *r.aggregate});
        // per-fold best-epoch rows feed the comparison table
        for (const auto& fr : r.folds)
            for (const auto& rec : fr.records)
                combined.emplace_back(v.name, rec);
    }

    res.combined_csv = (fs::path(out_dir) / "metrics_ablation.csv").string();
    std::ofstream out(res.combined_csv, std::ios::binary | std::ios::trunc);
    HS_CHECK(out.good(), ErrorKind::Io, "cannot write " << res.combined_csv);
    out << metrics_csv_text(combined);
    return res;
}

} // namespace hairseg
