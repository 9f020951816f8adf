#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sparsealloc/config.hpp"
#include "sparsealloc/optimizer.hpp"
#include "sparsealloc/sae_model.hpp"
#include "sparsealloc/zipf.hpp"

namespace sparsealloc {

inline constexpr int kCheckpointFormatVersion = 1;

// A batch-size independent description of an allocation policy. Concrete budgets are derived
// for whatever batch the policy is applied to.
struct PolicySpec {
    PolicyKind kind = PolicyKind::MutualChoice;
    double expected_k = 20.0;
    Criterion criterion = Criterion::ByValue;
    bool rectify = true;
    // Feature choice only: 1-based density rank of each feature, plus the budget curve.
    std::vector<std::size_t> ranks;
    double zipf_alpha = 1.0;
    double zipf_beta = 6.8;
    std::size_t m_max = std::numeric_limits<std::size_t>::max();

    // Throws BudgetError(Infeasible) when a feature-choice budget exceeds the batch.
    AllocationPolicy instantiate(std::size_t batch, FeatureBudgets* budgets_out = nullptr) const;
};

nlohmann::json to_json(const PolicySpec& spec);
PolicySpec policy_spec_from_json(const nlohmann::json& j);

struct Checkpoint {
    SaeParams params;
    PolicySpec policy;
    nlohmann::json config = nlohmann::json::object();
    std::optional<AdamWState> optim;
    std::size_t budgets_clamped_to_one = 0;
};

// Writes meta.json, tensors.bin and (when optimiser state is present) optim.bin.
// `created_at` is the only wall-clock value stored.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt, const std::string& created_at);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Write to a sibling temporary file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string utc_timestamp();

}  // namespace sparsealloc
