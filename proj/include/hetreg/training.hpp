#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hetreg/losses.hpp"
#include "hetreg/models.hpp"
#include "hetreg/optimizer.hpp"
#include "hetreg/synthdata.hpp"

namespace hetreg::train {

enum class Objective { proposed, mse, nll, beta_nll, adareg, adaframe, proposed_z };
enum class NoiseModel { gaussian, laplacian };

std::string to_string(Objective o);
std::string to_string(NoiseModel m);
Objective objective_from_string(const std::string& s);
NoiseModel noise_model_from_string(const std::string& s);

inline bool is_collaborative(Objective o) {
    return o == Objective::proposed || o == Objective::proposed_z;
}
inline bool uses_variance_estimator(Objective o) {
    return o == Objective::proposed || o == Objective::proposed_z || o == Objective::nll ||
           o == Objective::beta_nll;
}

struct TrainConfig {
    double gamma = 0.5;
    double beta = 0.5;
    double lambda = 0.01;
    double alpha = 1e-5;   // sigma_z penalty weight (proposed_z)
    double eta = 1e-4;     // learning rate
    int warmup_epochs = 10;  // N_w
    int main_epochs = 1;     // N
    int batch_size = 8;
    uint64_t seed = 0;
    Objective objective = Objective::proposed;
    NoiseModel noise_model = NoiseModel::gaussian;
    models::BackboneSpec backbone;
    bool deterministic = true;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct EpochFlags {
    bool flag_disp = false;
    bool flag_variance = false;
    int epoch_index = 0;  // 1-based
};

// Three-phase schedule: epochs 1..N_w train the displacement estimator alone,
// N_w+1..2N_w the variance estimator alone, then both for N epochs.
std::vector<EpochFlags> epoch_schedule(const TrainConfig& config);

struct StepReport {
    int64_t step = 0;
    int epoch = 0;
    std::string branch;  // disp | variance | joint
    double total = 0.0, data = 0.0, smooth = 0.0, varpen = 0.0;
    bool used_unit_variance = false;
    double weight_mean = 0.0, weight_min = 0.0, weight_max = 0.0;
};

// Image pairs stacked to [N,1,S...] leaves.
struct Batch {
    Var moving, fixed;
    std::vector<std::string> pair_ids;
};
Batch make_batch(const std::vector<synth::ImagePair>& pairs,
                 const std::vector<size_t>& indices);

struct TrainResult {
    std::string checkpoint_path;
    std::string loss_log_path;
    int epochs_run = 0;
};

// Owns the estimators, optimizers, and step/epoch counters for one run.
class Trainer {
public:
    explicit Trainer(TrainConfig config);

    // One collaborative step per Alg. 1: the displacement branch updates theta
    // only (variance prediction stop-gradiented, or unit variance during
    // warm-up); the variance branch re-predicts the displacement and updates
    // phi only. Reports carry one entry per executed branch.
    std::vector<StepReport> step_collaborative(const Batch& batch, const EpochFlags& flags);

    // One baseline step: a single loss, no alternation. NLL-family objectives
    // update both estimators jointly; AdaReg/AdaFrame/MSE have no variance
    // estimator at all.
    StepReport step_baseline(const Batch& batch);

    // Full run: shuffled batches over the schedule, CSV loss log with header
    // step,epoch,branch,total,data,smooth,varpen and a checkpoint per epoch.
    TrainResult run(const std::vector<synth::ImagePair>& pairs, const std::string& out_dir);

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);  // all-or-nothing
    static Trainer from_checkpoint(const std::string& path);

    const TrainConfig& config() const { return cfg_; }
    models::DisplacementEstimator& displacement() { return *disp_; }
    models::VarianceEstimator* variance() { return var_.get(); }
    const models::VarianceEstimator* variance() const { return var_.get(); }
    int completed_epochs() const { return completed_epochs_; }
    int64_t global_step() const { return global_step_; }

    // Evaluation-time forwards (no gradients kept by the caller).
    Tensor predict_displacement(const synth::ImagePair& pair) const;
    Tensor predict_log_variance(const synth::ImagePair& pair, const Tensor& reconstructed) const;

private:
    TrainConfig cfg_;
    std::unique_ptr<models::DisplacementEstimator> disp_;
    std::unique_ptr<models::VarianceEstimator> var_;
    AdamOptimizer disp_opt_;
    AdamOptimizer var_opt_;
    RandomStream sample_rng_;
    int completed_epochs_ = 0;
    int64_t global_step_ = 0;

    losses::LossBreakdown displacement_branch_loss(const Batch& batch, const Var& rec,
                                                   const Var& log_variance, const Var& z,
                                                   const Var& log_variance_z,
                                                   StepReport& rep);
    void ensure_finite(double total, const Batch& batch) const;
};

// Collaborative training (objective proposed / proposed_z).
TrainResult train(const TrainConfig& config, const std::vector<synth::ImagePair>& pairs,
                  const std::string& out_dir);

// Single-loop baseline training; runs N + N_w epochs, matching the number of
// displacement-estimator epochs in the collaborative schedule.
TrainResult train_baseline(const TrainConfig& config,
                           const std::vector<synth::ImagePair>& pairs,
                           const std::string& out_dir);

}  // namespace hetreg::train
