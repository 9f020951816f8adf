#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsealloc/config.hpp"
#include "sparsealloc/trainer.hpp"

namespace sparsealloc {

struct CompareEntry {
    std::string label;
    RunConfig config;
};

struct CompareRow {
    std::string label;
    std::string policy;
    std::uint64_t seed = 0;
    double expected_k = 0.0;
    double fvu = 0.0;
    double mse = 0.0;
    double mean_l0 = 0.0;
    std::size_t dead_count = 0;
    std::size_t dying_count = 0;
};

inline constexpr const char* kCompareHeader = "label,policy,seed,expected_k,fvu,mse,mean_l0,dead_count,dying_count";

// Trains every (entry, seed) pair on `data` and returns rows sorted by label, then seed.
// Up to `threads` runs execute at once; each owns its state, so results do not depend on it.
std::vector<CompareRow> compare_runs(const std::vector<CompareEntry>& entries, const std::vector<std::uint64_t>& seeds,
                                     const Dataset& data, std::size_t threads);

std::string to_csv(const std::vector<CompareRow>& rows);

// SPARSEALLOC_THREADS if set to a positive integer, else the hardware concurrency (at least 1).
std::size_t thread_budget();

}  // namespace sparsealloc
