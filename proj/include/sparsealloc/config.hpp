#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsealloc/losses.hpp"
#include "sparsealloc/optimizer.hpp"
#include "sparsealloc/sparsifiers.hpp"

namespace sparsealloc {

enum class PolicyKind { TokenChoice, FeatureChoice, MutualChoice, Relu };

std::string policy_kind_name(PolicyKind k);  // "tc" | "fc" | "mc" | "relu"
PolicyKind parse_policy_kind(const std::string& name);

struct ZipfConfig {
    double alpha = 1.0;
    double beta = 6.8;
    std::size_t m_max = std::numeric_limits<std::size_t>::max();  // "null" in JSON: unbounded
    bool fix_alpha = true;       // refits keep alpha at `alpha` and fit (C, beta)
    std::size_t refit_interval = 500;
};

struct TrackingConfig {
    std::uint64_t density_window_tokens = 100000;
    std::uint64_t dead_threshold_tokens = 100000;
};

struct Phase2Config {
    bool enabled = false;
    std::size_t steps = 0;
};

struct EarlyStopConfig {
    bool enabled = false;
    double min_rel_improvement = 1e-4;
    std::size_t window = 500;
};

struct RunConfig {
    std::string preset = "desk";
    std::string data_path;
    double eval_fraction = 0.1;

    PolicyKind policy = PolicyKind::MutualChoice;
    Criterion criterion = Criterion::ByValue;
    bool rectify = true;
    std::size_t width_multiple = 8;  // F = width_multiple * d_model
    double expected_k = 20.0;
    double feature_sparsity = 0.0;  // > 0: expected_k = round(feature_sparsity * F)

    std::size_t steps = 2000;  // phase-1 steps; phase 2 adds phase2.steps
    std::size_t batch_size = 1536;
    std::size_t accumulation_steps = 1;
    std::size_t shuffle_buffer = 65536;

    double lr_base = 3e-4;
    double n_ref = 6144.0;  // lr = lr_base * sqrt(F / n_ref)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-5;
    double clip_norm = 1.0;

    LossWeights weights;
    ZipfConfig zipf;
    TrackingConfig tracking;
    Phase2Config phase2;
    EarlyStopConfig early_stop;

    std::vector<std::size_t> progressive_k;  // empty: 0, 1, 2, 4, ... up to the largest code
    std::uint64_t seed = 0;

    // Where artifacts go. Not serialised: config.json lives inside it.
    std::filesystem::path out_dir;

    void validate() const;
    std::size_t total_steps() const { return steps + (phase2.enabled ? phase2.steps : 0); }
    double resolved_expected_k(std::size_t features) const;
};

// "desk" (N=64-scale defaults), "smoke" (200 steps), "paper-ratio" (E[k] = round(0.008 F)),
// "paper" (batch 1536, 10000 steps, 32x width, for real exported activations).
RunConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep the defaults of `base`; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = RunConfig{});

RunConfig load_config(const std::filesystem::path& path);

}  // namespace sparsealloc
