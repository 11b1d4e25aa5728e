#include "hetreg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hetreg/array_io.hpp"
#include "hetreg/errors.hpp"
#include "hetreg/warp.hpp"
#include "hetreg/zip_archive.hpp"

namespace hetreg::train {

namespace fs = std::filesystem;
using nlohmann::json;
using losses::LossBreakdown;

std::string to_string(Objective o) {
    switch (o) {
        case Objective::proposed: return "proposed";
        case Objective::mse: return "mse";
        case Objective::nll: return "nll";
        case Objective::beta_nll: return "beta-nll";
        case Objective::adareg: return "adareg";
        case Objective::adaframe: return "adaframe";
        case Objective::proposed_z: return "proposed+z";
    }
    return "?";
}

std::string to_string(NoiseModel m) {
    return m == NoiseModel::gaussian ? "gaussian" : "laplacian";
}

Objective objective_from_string(const std::string& s) {
    for (Objective o : {Objective::proposed, Objective::mse, Objective::nll,
                        Objective::beta_nll, Objective::adareg, Objective::adaframe,
                        Objective::proposed_z})
        if (to_string(o) == s) return o;
    throw ConfigError("unknown objective: " + s);
}

NoiseModel noise_model_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseModel::gaussian;
    if (s == "laplacian") return NoiseModel::laplacian;
    throw ConfigError("unknown noise model: " + s);
}

void TrainConfig::validate() const {
    if (gamma < 0.0) throw ConfigError("TrainConfig: gamma must be >= 0");
    if (beta < 0.0 || beta > 1.0) throw ConfigError("TrainConfig: beta must lie in [0,1]");
    if (lambda <= 0.0) throw ConfigError("TrainConfig: lambda must be > 0");
    if (alpha <= 0.0) throw ConfigError("TrainConfig: alpha must be > 0");
    if (eta <= 0.0) throw ConfigError("TrainConfig: eta must be > 0");
    if (warmup_epochs < 0) throw ConfigError("TrainConfig: warmup_epochs must be >= 0");
    if (main_epochs < 1) throw ConfigError("TrainConfig: main_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    backbone.validate();
}

std::vector<EpochFlags> epoch_schedule(const TrainConfig& config) {
    config.validate();
    const int nw = config.warmup_epochs;
    const int n = config.main_epochs;
    std::vector<EpochFlags> out;
    out.reserve(static_cast<size_t>(n + 2 * nw));
    for (int i = 1; i <= n + 2 * nw; ++i) {
        EpochFlags f;
        f.epoch_index = i;
        if (i <= nw) {
            f.flag_disp = true;
            f.flag_variance = false;
        } else if (i <= 2 * nw) {
            f.flag_disp = false;
            f.flag_variance = true;
        } else {
            f.flag_disp = true;
            f.flag_variance = true;
        }
        out.push_back(f);
    }
    return out;
}

Batch make_batch(const std::vector<synth::ImagePair>& pairs,
                 const std::vector<size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    const synth::ImagePair& first = pairs[indices[0]];
    std::vector<int64_t> shape{static_cast<int64_t>(indices.size()), 1};
    shape.insert(shape.end(), first.moving.shape().begin(), first.moving.shape().end());
    const int64_t sp = first.moving.size();

    Tensor moving(shape), fixed(shape);
    Batch b;
    for (size_t k = 0; k < indices.size(); ++k) {
        const synth::ImagePair& p = pairs[indices[k]];
        if (!p.moving.same_shape(first.moving))
            throw std::invalid_argument("make_batch: pairs of mixed shapes");
        std::copy(p.moving.data(), p.moving.data() + sp,
                  moving.data() + static_cast<int64_t>(k) * sp);
        std::copy(p.fixed.data(), p.fixed.data() + sp,
                  fixed.data() + static_cast<int64_t>(k) * sp);
        b.pair_ids.push_back(p.id);
    }
    b.moving = Var::leaf(std::move(moving));
    b.fixed = Var::leaf(std::move(fixed));
    return b;
}

Trainer::Trainer(TrainConfig config)
    : cfg_(std::move(config)),
      disp_opt_(cfg_.eta),
      var_opt_(cfg_.eta),
      sample_rng_(RandomStream(cfg_.seed).fork(0x5a11)) {
    cfg_.validate();
    RandomStream seeds(cfg_.seed);
    disp_ = std::make_unique<models::DisplacementEstimator>(
        cfg_.backbone, cfg_.objective == Objective::proposed_z, seeds.fork(1).next_u64());
    if (uses_variance_estimator(cfg_.objective))
        var_ = std::make_unique<models::VarianceEstimator>(cfg_.backbone,
                                                           seeds.fork(2).next_u64());
}

void Trainer::ensure_finite(double total, const Batch& batch) const {
    if (std::isfinite(total)) return;
    std::string ids;
    for (const auto& id : batch.pair_ids) ids += id + " ";
    double norm = 0.0;
    for (const auto& p : disp_->params().all())
        for (float v : p.value) norm += static_cast<double>(v) * static_cast<double>(v);
    throw std::runtime_error("non-finite loss; batch [" + ids + "], |theta|^2 = " +
                             std::to_string(norm));
}

namespace {

void fill_weight_stats(const Tensor& w, StepReport& rep) {
    double mn = w[0], mx = w[0], mean = 0.0;
    for (int64_t i = 0; i < w.size(); ++i) {
        mn = std::min(mn, w[i]);
        mx = std::max(mx, w[i]);
        mean += w[i];
    }
    rep.weight_min = mn;
    rep.weight_max = mx;
    rep.weight_mean = mean / static_cast<double>(w.size());
}

void fill_losses(const LossBreakdown& lb, StepReport& rep) {
    rep.total = lb.total.item();
    rep.data = lb.data_term;
    rep.smooth = lb.smoothness_term;
    rep.varpen = lb.variance_penalty_term;
}

}  // namespace

losses::LossBreakdown Trainer::displacement_branch_loss(const Batch& batch, const Var& rec,
                                                        const Var& log_variance, const Var& z,
                                                        const Var& log_variance_z,
                                                        StepReport& rep) {
    const bool laplace = cfg_.noise_model == NoiseModel::laplacian;
    if (cfg_.objective == Objective::proposed_z) {
        if (!laplace) {
            LossBreakdown lb = losses::displacement_loss_with_z_uncertainty(
                batch.fixed, rec, log_variance, z, log_variance_z, cfg_.gamma, cfg_.alpha,
                cfg_.lambda);
            fill_weight_stats(
                losses::snr_weight_map(batch.fixed, log_variance, cfg_.gamma).value(), rep);
            return lb;
        }
        // Laplacian analogue of the extended loss, composed from the same parts
        LossBreakdown base = losses::laplace_adaptive_displacement_loss(
            batch.fixed, rec, log_variance, z, cfg_.gamma, cfg_.lambda);
        Var var_z = clamp_min(exp_v(log_variance_z), losses::kVarianceFloor);
        Var pen = mul_scalar(mean(sub(var_z, log_v(var_z))), cfg_.alpha);
        LossBreakdown lb;
        lb.total = add(base.total, pen);
        lb.data_term = base.data_term;
        lb.smoothness_term = base.smoothness_term;
        lb.variance_penalty_term = pen.item();
        return lb;
    }
    if (laplace) {
        LossBreakdown lb = losses::laplace_adaptive_displacement_loss(
            batch.fixed, rec, log_variance, z, cfg_.gamma, cfg_.lambda);
        return lb;
    }
    LossBreakdown lb = losses::adaptive_displacement_loss(batch.fixed, rec, log_variance, z,
                                                          cfg_.gamma, cfg_.lambda);
    fill_weight_stats(losses::snr_weight_map(batch.fixed, log_variance, cfg_.gamma).value(),
                      rep);
    return lb;
}

std::vector<StepReport> Trainer::step_collaborative(const Batch& batch,
                                                    const EpochFlags& flags) {
    if (!is_collaborative(cfg_.objective))
        throw std::logic_error("step_collaborative: objective " + to_string(cfg_.objective));
    std::vector<StepReport> reports;
    ++global_step_;

    if (flags.flag_disp) {
        StepReport rep;
        rep.step = global_step_;
        rep.epoch = flags.epoch_index;
        rep.branch = "disp";

        auto bound_d = disp_->bind();
        auto post = disp_->forward(batch.moving, batch.fixed, bound_d);
        Var z = post.mean;
        Var log_variance_z = post.log_variance_z;
        if (cfg_.objective == Objective::proposed_z)
            z = models::sample_displacement(post, sample_rng_);
        Var rec = warp::warp_image_batched(batch.moving, z);

        Var log_variance;
        if (flags.flag_variance) {
            auto bound_v = var_->bind();
            log_variance = detach(var_->forward(batch.fixed, rec, bound_v));
            rep.used_unit_variance = false;
        } else {
            log_variance = Var::leaf(Tensor::zeros(batch.fixed.value().shape()));
            rep.used_unit_variance = true;
        }

        LossBreakdown lb = displacement_branch_loss(batch, rec, log_variance, z,
                                                    log_variance_z, rep);
        ensure_finite(lb.total.item(), batch);
        lb.total.backward();
        disp_opt_.step(disp_->params(), bound_d);
        fill_losses(lb, rep);
        reports.push_back(rep);
    }

    if (flags.flag_variance) {
        StepReport rep;
        rep.step = global_step_;
        rep.epoch = flags.epoch_index;
        rep.branch = "variance";

        // fresh forward: the displacement is re-predicted with updated theta
        auto bound_d = disp_->bind();
        auto post = disp_->forward(batch.moving, batch.fixed, bound_d);
        Var rec = warp::warp_image_batched(batch.moving, post.mean);
        auto bound_v = var_->bind();
        Var log_variance = var_->forward(batch.fixed, rec, bound_v);
        Var loss = (cfg_.noise_model == NoiseModel::laplacian)
                       ? losses::laplace_scale_loss(batch.fixed, rec, log_variance, cfg_.beta)
                       : losses::variance_loss(batch.fixed, rec, log_variance, cfg_.beta);
        ensure_finite(loss.item(), batch);
        loss.backward();
        var_opt_.step(var_->params(), bound_v);
        rep.total = loss.item();
        rep.data = rep.total;
        reports.push_back(rep);
    }
    return reports;
}

StepReport Trainer::step_baseline(const Batch& batch) {
    if (is_collaborative(cfg_.objective))
        throw std::logic_error("step_baseline: objective " + to_string(cfg_.objective));
    ++global_step_;
    StepReport rep;
    rep.step = global_step_;
    rep.branch = "joint";

    auto bound_d = disp_->bind();
    auto post = disp_->forward(batch.moving, batch.fixed, bound_d);
    Var z = post.mean;
    Var rec = warp::warp_image_batched(batch.moving, z);
    const bool laplace = cfg_.noise_model == NoiseModel::laplacian;

    LossBreakdown lb;
    std::vector<Var> bound_v;
    switch (cfg_.objective) {
        case Objective::mse: {
            Var data = losses::mse_data_loss(batch.fixed, rec);
            Var smooth = mul_scalar(losses::smoothness_penalty(z), cfg_.lambda);
            lb.total = add(data, smooth);
            lb.data_term = data.item();
            lb.smoothness_term = smooth.item();
            break;
        }
        case Objective::nll: {
            bound_v = var_->bind();
            Var log_variance = var_->forward(batch.fixed, rec, bound_v);
            lb = laplace ? losses::laplace_joint_nll_loss(batch.fixed, rec, log_variance, z,
                                                          cfg_.lambda)
                         : losses::joint_nll_loss(batch.fixed, rec, log_variance, z,
                                                  cfg_.lambda);
            break;
        }
        case Objective::beta_nll: {
            bound_v = var_->bind();
            Var log_variance = var_->forward(batch.fixed, rec, bound_v);
            lb = laplace
                     ? losses::laplace_joint_beta_nll_loss(batch.fixed, rec, log_variance, z,
                                                           cfg_.lambda, cfg_.beta)
                     : losses::joint_beta_nll_loss(batch.fixed, rec, log_variance, z,
                                                   cfg_.lambda, cfg_.beta);
            break;
        }
        case Objective::adareg:
            lb = losses::adareg_loss(batch.fixed, rec, z, cfg_.lambda);
            break;
        case Objective::adaframe:
            lb = losses::adaframe_loss(batch.fixed, rec, z, cfg_.lambda);
            break;
        default:
            throw std::logic_error("step_baseline: unreachable");
    }

    ensure_finite(lb.total.item(), batch);
    lb.total.backward();
    disp_opt_.step(disp_->params(), bound_d);
    if (!bound_v.empty()) var_opt_.step(var_->params(), bound_v);
    fill_losses(lb, rep);
    return rep;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void append_csv(std::ofstream& out, const StepReport& r) {
    out << r.step << "," << r.epoch << "," << r.branch << "," << fmt_double(r.total) << ","
        << fmt_double(r.data) << "," << fmt_double(r.smooth) << "," << fmt_double(r.varpen)
        << "\n";
}

json backbone_to_json(const models::BackboneSpec& b) {
    json j;
    j["ndim"] = b.ndim;
    j["enc_widths"] = b.enc_widths;
    j["dec_widths"] = b.dec_widths;
    j["kernel"] = b.kernel;
    j["skip_connections"] = b.skip_connections;
    j["head_gain"] = b.head_gain;
    return j;
}

models::BackboneSpec backbone_from_json(const json& j) {
    models::BackboneSpec b;
    b.ndim = j.at("ndim").get<int>();
    b.enc_widths = j.at("enc_widths").get<std::vector<int>>();
    b.dec_widths = j.at("dec_widths").get<std::vector<int>>();
    b.kernel = j.at("kernel").get<int>();
    b.skip_connections = j.at("skip_connections").get<bool>();
    b.head_gain = j.value("head_gain", 1.0);
    return b;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["gamma"] = c.gamma;
    j["beta"] = c.beta;
    j["lambda"] = c.lambda;
    j["alpha"] = c.alpha;
    j["eta"] = c.eta;
    j["warmup_epochs"] = c.warmup_epochs;
    j["main_epochs"] = c.main_epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["objective"] = to_string(c.objective);
    j["noise_model"] = to_string(c.noise_model);
    j["backbone"] = backbone_to_json(c.backbone);
    j["deterministic"] = c.deterministic;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.gamma = j.at("gamma").get<double>();
    c.beta = j.at("beta").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.eta = j.at("eta").get<double>();
    c.warmup_epochs = j.at("warmup_epochs").get<int>();
    c.main_epochs = j.at("main_epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.objective = objective_from_string(j.at("objective").get<std::string>());
    c.noise_model = noise_model_from_string(j.at("noise_model").get<std::string>());
    c.backbone = backbone_from_json(j.at("backbone"));
    c.deterministic = j.at("deterministic").get<bool>();
    return c;
}

void add_store(ZipWriter& zip, const models::ParamStore& store) {
    for (const auto& p : store.all()) {
        zip.add("params/" + p.name + ".f32", p.value.data(), p.value.size() * sizeof(float));
        zip.add_text("params/" + p.name + ".json", array_sidecar_json(p.shape));
        if (!p.adam_m.empty()) {
            zip.add("optim/" + p.name + ".m.f32", p.adam_m.data(),
                    p.adam_m.size() * sizeof(float));
            zip.add("optim/" + p.name + ".v.f32", p.adam_v.data(),
                    p.adam_v.size() * sizeof(float));
        }
    }
}

std::vector<float> read_f32(const ZipReader& zip, const std::string& name, size_t expect) {
    const auto bytes = zip.read(name);
    if (bytes.size() != expect * sizeof(float))
        throw FormatError("checkpoint entry " + name + " has wrong size");
    std::vector<float> out(expect);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

void load_store(const ZipReader& zip, models::ParamStore& store) {
    for (auto& p : store.all()) {
        const auto shape =
            parse_array_sidecar(zip.read_text("params/" + p.name + ".json"), p.name);
        if (shape != p.shape)
            throw ConfigError("checkpoint parameter " + p.name +
                              " has mismatched shape (backbone differs?)");
        p.value = read_f32(zip, "params/" + p.name + ".f32", p.value.size());
        if (zip.has("optim/" + p.name + ".m.f32")) {
            p.adam_m = read_f32(zip, "optim/" + p.name + ".m.f32", p.value.size());
            p.adam_v = read_f32(zip, "optim/" + p.name + ".v.f32", p.value.size());
        } else {
            p.adam_m.clear();
            p.adam_v.clear();
        }
    }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    ZipWriter zip(path);
    json meta;
    meta["format_version"] = 1;
    meta["config"] = config_to_json(cfg_);
    meta["epoch"] = completed_epochs_;
    meta["global_step"] = global_step_;
    meta["disp_opt_steps"] = disp_opt_.steps();
    meta["var_opt_steps"] = var_opt_.steps();
    meta["has_variance_estimator"] = (var_ != nullptr);
    zip.add_text("meta.json", meta.dump(2));
    add_store(zip, disp_->params());
    if (var_) add_store(zip, var_->params());
    zip.finish();
}

void Trainer::load_checkpoint(const std::string& path) {
    ZipReader zip(path);
    json meta;
    try {
        meta = json::parse(zip.read_text("meta.json"));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint " + path + ": bad meta.json: " + e.what());
    }
    const TrainConfig ck_cfg = config_from_json(meta.at("config"));
    if (!(ck_cfg.backbone == cfg_.backbone))
        throw ConfigError("checkpoint " + path + ": BackboneSpec differs from this trainer");
    if (ck_cfg.objective != cfg_.objective)
        throw ConfigError("checkpoint " + path + ": objective differs from this trainer");

    // stage into a scratch trainer so a failure leaves this one untouched
    Trainer staged(ck_cfg);
    load_store(zip, staged.disp_->params());
    if (staged.var_) load_store(zip, staged.var_->params());

    disp_->params() = staged.disp_->params();
    if (var_) var_->params() = staged.var_->params();
    completed_epochs_ = meta.at("epoch").get<int>();
    global_step_ = meta.at("global_step").get<int64_t>();
    disp_opt_.set_steps(meta.at("disp_opt_steps").get<int64_t>());
    var_opt_.set_steps(meta.at("var_opt_steps").get<int64_t>());
}

Trainer Trainer::from_checkpoint(const std::string& path) {
    ZipReader zip(path);
    json meta;
    try {
        meta = json::parse(zip.read_text("meta.json"));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint " + path + ": bad meta.json: " + e.what());
    }
    Trainer t(config_from_json(meta.at("config")));
    t.load_checkpoint(path);
    return t;
}

Tensor Trainer::predict_displacement(const synth::ImagePair& pair) const {
    std::vector<int64_t> shape{1, 1};
    shape.insert(shape.end(), pair.moving.shape().begin(), pair.moving.shape().end());
    Var moving = Var::leaf(pair.moving.reshaped(shape));
    Var fixed = Var::leaf(pair.fixed.reshaped(shape));
    auto post = disp_->forward(moving, fixed, disp_->bind());
    std::vector<int64_t> dshape{static_cast<int64_t>(pair.ndim)};
    dshape.insert(dshape.end(), pair.moving.shape().begin(), pair.moving.shape().end());
    return post.mean.value().reshaped(dshape);
}

Tensor Trainer::predict_log_variance(const synth::ImagePair& pair,
                                     const Tensor& reconstructed) const {
    if (!var_) throw std::logic_error("predict_log_variance: no variance estimator");
    std::vector<int64_t> shape{1, 1};
    shape.insert(shape.end(), pair.fixed.shape().begin(), pair.fixed.shape().end());
    Var fixed = Var::leaf(pair.fixed.reshaped(shape));
    Var rec = Var::leaf(reconstructed.reshaped(shape));
    Var lv = var_->forward(fixed, rec, var_->bind());
    return lv.value().reshaped(pair.fixed.shape());
}

TrainResult Trainer::run(const std::vector<synth::ImagePair>& pairs,
                         const std::string& out_dir) {
    if (pairs.empty()) throw std::invalid_argument("Trainer::run: empty dataset");
    fs::create_directories(out_dir);
    const std::string log_path = (fs::path(out_dir) / "loss.csv").string();
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.zip").string();

    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("Trainer::run: cannot write " + log_path);
    log << "step,epoch,branch,total,data,smooth,varpen\n";

    const bool collaborative = is_collaborative(cfg_.objective);
    std::vector<EpochFlags> schedule;
    if (collaborative) {
        schedule = epoch_schedule(cfg_);
    } else {
        // baselines train single-loop for N + N_w epochs, matching the number
        // of displacement-estimator epochs in the collaborative schedule
        const int total = cfg_.main_epochs + cfg_.warmup_epochs;
        for (int i = 1; i <= total; ++i) schedule.push_back({true, false, i});
    }

    const RandomStream base_rng(cfg_.seed);
    std::vector<size_t> order(pairs.size());

    for (const EpochFlags& flags : schedule) {
        if (flags.epoch_index <= completed_epochs_) continue;  // resumed run
        // epoch-keyed streams: batch order and sampling draws are pure
        // functions of (seed, epoch), so a resumed run matches an unbroken one
        RandomStream epoch_rng =
            base_rng.fork(0xda7a0000ull + static_cast<uint64_t>(flags.epoch_index));
        sample_rng_ =
            base_rng.fork(0x5a110000ull + static_cast<uint64_t>(flags.epoch_index));
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        epoch_rng.shuffle(order);
        for (size_t begin = 0; begin < order.size();
             begin += static_cast<size_t>(cfg_.batch_size)) {
            const size_t end =
                std::min(order.size(), begin + static_cast<size_t>(cfg_.batch_size));
            std::vector<size_t> idx(order.begin() + static_cast<long>(begin),
                                    order.begin() + static_cast<long>(end));
            Batch batch = make_batch(pairs, idx);
            if (collaborative) {
                for (const StepReport& r : step_collaborative(batch, flags))
                    append_csv(log, r);
            } else {
                StepReport r = step_baseline(batch);
                r.epoch = flags.epoch_index;
                append_csv(log, r);
            }
        }
        completed_epochs_ = flags.epoch_index;
        save_checkpoint(ckpt_path);
        log.flush();
    }

    TrainResult res;
    res.checkpoint_path = ckpt_path;
    res.loss_log_path = log_path;
    res.epochs_run = completed_epochs_;
    return res;
}

TrainResult train(const TrainConfig& config, const std::vector<synth::ImagePair>& pairs,
                  const std::string& out_dir) {
    if (!is_collaborative(config.objective))
        throw ConfigError("train: objective " + to_string(config.objective) +
                          " is a baseline; use train_baseline");
    Trainer t(config);
    return t.run(pairs, out_dir);
}

TrainResult train_baseline(const TrainConfig& config,
                           const std::vector<synth::ImagePair>& pairs,
                           const std::string& out_dir) {
    if (is_collaborative(config.objective))
        throw ConfigError("train_baseline: objective " + to_string(config.objective) +
                          " is collaborative; use train");
    Trainer t(config);
    return t.run(pairs, out_dir);
}

}  // namespace hetreg::train
