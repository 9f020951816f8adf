#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparsealloc/checkpoint.hpp"
#include "sparsealloc/config.hpp"
#include "sparsealloc/evalmetrics.hpp"
#include "sparsealloc/optimizer.hpp"
#include "sparsealloc/tracking.hpp"
#include "sparsealloc/zipf.hpp"

namespace sparsealloc {

// Preprocessed rows split into a training head and an evaluation tail.
struct Dataset {
    Matrix train;
    Matrix eval;
    std::optional<Matrix> truth_dictionary;
    std::vector<std::uint8_t> eval_easy;  // per eval row; empty when unknown

    std::size_t d_model() const { return static_cast<std::size_t>(train.cols()); }
};

// Sidecar paths written next to a synthetic activation file.
std::filesystem::path dictionary_sidecar(const std::filesystem::path& data_path);
std::filesystem::path truth_sidecar(const std::filesystem::path& data_path);

// `raw` rows are preprocessed; `easy` (optional, one flag per raw row) is carried to the eval tail.
Dataset make_dataset(const Matrix& raw, double eval_fraction, std::optional<Matrix> truth_dictionary = std::nullopt,
                     const std::vector<std::uint8_t>& easy = {});

// Reads an SAEACT01 file and, when present, its dictionary and truth sidecars.
Dataset load_dataset(const std::filesystem::path& path, double eval_fraction);

struct EvalOptions {
    std::size_t batch = 1536;
    std::vector<std::size_t> progressive_k;  // empty: 0, 1, 2, 4, ... and the largest code
    const Matrix* truth_dictionary = nullptr;
    const std::vector<std::uint8_t>* easy = nullptr;
};

// Reconstruction, sparsity, recovery and progressive-code metrics. Dead and dying counts are
// training-time quantities and are left at zero.
EvalReport evaluate(const SaeParams& params, const AllocationPolicy& policy, const Matrix& x, const EvalOptions& opt);
EvalReport evaluate(const SaeParams& params, const PolicySpec& spec, const Matrix& x, const EvalOptions& opt);

struct DensitySnapshot {
    std::size_t step = 0;
    std::vector<double> densities;
};

struct TrainResult {
    SaeParams params;
    AdamWState optim;
    FeatureDensityStats stats;
    PolicySpec final_policy;
    std::size_t budgets_clamped_to_one = 0;
    std::vector<nlohmann::json> log;
    std::vector<DensitySnapshot> density_history;
    std::optional<ZipfFit> last_fit;
    std::vector<std::size_t> dying;
    EvalReport report;
    std::size_t steps_run = 0;
    bool early_stopped = false;
};

using StepCallback = std::function<void(const nlohmann::json& record)>;

TrainResult train(const RunConfig& config, const Dataset& data, const StepCallback& on_step = {});

// Writes config.json, meta.json, tensors.bin, optim.bin, log.jsonl, report.json, density.csv and
// density_history.csv into config.out_dir.
void write_run(const RunConfig& config, const TrainResult& result);

// load_dataset + train + write_run.
TrainResult run_train(const RunConfig& config, const StepCallback& on_step = {});

}  // namespace sparsealloc
