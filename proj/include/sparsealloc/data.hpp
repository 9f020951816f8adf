#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "sparsealloc/types.hpp"

namespace sparsealloc {

struct SyntheticSpec {
    std::size_t d_model = 64;
    std::size_t n_true_features = 512;
    double alpha = 1.0;  // feature frequency ~ 1 / (rank + beta)^alpha
    double beta = 6.8;
    double actives_mean = 8.0;  // Poisson, clipped to [actives_min, actives_max]
    std::size_t actives_min = 1;
    std::size_t actives_max = 32;
    double coeff_lo = 0.5;
    double coeff_hi = 2.0;
    double noise_sigma = 0.01;
    std::size_t n_rows = 1 << 16;
    // Fraction of rows replaced by one fixed "easy" vector (a BOS-token stand-in).
    double easy_row_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GroundTruth {
    Matrix dictionary;  // n_true_features x d_model, unit rows; feature i has frequency rank i+1
    std::vector<std::vector<std::pair<std::uint32_t, double>>> codes;  // per row: (feature, coefficient)
    std::vector<std::uint8_t> is_easy;  // per row
    Vector easy_row;
};

enum class DType : std::uint8_t { F32 = 0 };

struct ActivationStore {
    std::uint32_t d_model = 0;
    std::uint64_t n_rows = 0;
    DType dtype = DType::F32;
    std::vector<float> payload;  // row-major, n_rows x d_model

    std::span<const float> row(std::size_t i) const {
        return {payload.data() + i * d_model, d_model};
    }
    // Rows [begin, end) widened to double.
    Matrix to_matrix(std::size_t begin, std::size_t end) const;
    Matrix to_matrix() const { return to_matrix(0, n_rows); }
    static ActivationStore from_matrix(const Matrix& rows);
};

GroundTruth sample_ground_truth(const SyntheticSpec& spec);
// Double-precision rows sum(coeff * dictionary row) + N(0, sigma^2) noise; easy rows are exact copies.
Matrix render_rows(const GroundTruth& truth, const SyntheticSpec& spec);

struct SyntheticData {
    ActivationStore store;
    GroundTruth truth;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// SAEACT01: 8-byte magic, u32 version (1), u32 d_model, u64 n_rows, u8 dtype (0 = f32),
// 7 zero bytes, then the row-major little-endian payload.
inline constexpr std::size_t kActivationHeaderBytes = 32;
inline constexpr std::uint32_t kActivationVersion = 1;

void write_activations(const ActivationStore& store, const std::filesystem::path& path);
ActivationStore read_activations(const std::filesystem::path& path);

// Buffered uniform shuffle over row indices. Each epoch emits every row exactly once.
class ShuffleStream {
public:
    ShuffleStream(std::size_t n_rows, std::size_t buffer_rows, std::uint64_t seed);

    // Next row of the current epoch, or nullopt once the epoch is exhausted (the next call starts a new one).
    std::optional<std::size_t> next();
    // Batch of rows; wraps into the next epoch when needed. Requires batch <= buffer size.
    std::vector<std::size_t> next_batch(std::size_t batch);

    std::size_t epoch() const { return epoch_; }

private:
    void refill_start();

    std::size_t n_rows_;
    std::size_t buffer_rows_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> buffer_;
    std::size_t next_incoming_ = 0;
    std::size_t epoch_ = 0;
    bool epoch_open_ = false;
};

}  // namespace sparsealloc
