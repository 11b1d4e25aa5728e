#pragma once

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hetreg/synthdata.hpp"
#include "hetreg/training.hpp"

namespace hetreg::cli {

// Flat JSON config with dotted keys ("train.gamma": 0.5). Unknown keys are
// rejected, and every default that fires is folded back into the config so the
// effective config written next to the outputs reproduces the run verbatim.
class ExperimentConfig {
public:
    ExperimentConfig() : flat_(nlohmann::json::object()) {}
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text,
                                           const std::string& context);

    bool has(const std::string& key) const { return flat_.contains(key); }
    void set(const std::string& key, nlohmann::json value);

    double get_double(const std::string& key, double def);
    int64_t get_int(const std::string& key, int64_t def);
    bool get_bool(const std::string& key, bool def);
    std::string get_string(const std::string& key, const std::string& def);
    std::string require_string(const std::string& key);
    std::vector<int64_t> get_int_list(const std::string& key,
                                      const std::vector<int64_t>& def);
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& def);

    // Throws ConfigError naming the first key never read by the command.
    void require_all_consumed() const;

    // Effective flat config (defaults folded in), stable key order.
    std::string dump() const { return flat_.dump(2); }
    void write(const std::string& path) const;

private:
    nlohmann::json flat_;
    std::set<std::string> consumed_;

    const nlohmann::json& fetch(const std::string& key);
};

// Shared run context assembled from the config plus CLI overrides.
struct RunContext {
    std::string out_dir;
    uint64_t seed = 0;
    bool deterministic = false;
};
RunContext make_context(ExperimentConfig& cfg);

// Subcommands. Each reads its keys, validates, executes, and writes the
// effective config into <out>/config.json. Returns the primary output path.
std::string cmd_synth(ExperimentConfig& cfg);
std::string cmd_train(ExperimentConfig& cfg);
std::string cmd_eval(ExperimentConfig& cfg);
std::string cmd_sweep_gamma(ExperimentConfig& cfg);

// Exit codes: 0 ok, 2 config error, 1 runtime error.
int run_command(const std::string& command, ExperimentConfig& cfg);

// Helpers shared with the test suites.
train::TrainConfig train_config_from(ExperimentConfig& cfg, uint64_t seed,
                                     bool deterministic);
synth::SynthParams synth_params_from(ExperimentConfig& cfg, uint64_t seed);

struct EvalSummary {
    double mean_dice = std::numeric_limits<double>::quiet_NaN();
    double mean_hd = std::numeric_limits<double>::quiet_NaN();
    double mean_asd = std::numeric_limits<double>::quiet_NaN();
    double mean_epe = std::numeric_limits<double>::quiet_NaN();
    double ause = std::numeric_limits<double>::quiet_NaN();
    double ause_shuffled = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> pair_ids;
    std::vector<double> dice_per_pair, hd_per_pair, asd_per_pair, epe_per_pair;
};

// Core of cmd_eval, reusable without files beyond the checkpoint/dataset.
EvalSummary evaluate_checkpoint(const std::string& checkpoint_path,
                                const std::string& dataset_dir, const std::string& split,
                                const std::string& out_dir, bool oracle_uncertainty,
                                bool export_images, uint64_t seed);

}  // namespace hetreg::cli
