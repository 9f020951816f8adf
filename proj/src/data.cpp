#include "sparsealloc/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

namespace {

constexpr std::array<char, 8> kMagic{'S', 'A', 'E', 'A', 'C', 'T', '0', '1'};

// Independent stream for additive noise so the code draws do not depend on sigma.
constexpr std::uint64_t kNoiseStreamSalt = 0x9e3779b97f4a7c15ULL;

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (d_model < 2) throw InvalidArgument("synthetic d_model must be >= 2");
    if (n_true_features < 1) throw InvalidArgument("synthetic feature count must be >= 1");
    if (n_rows < 1) throw InvalidArgument("synthetic row count must be >= 1");
    if (!(alpha > 0.0)) throw InvalidArgument("synthetic alpha must be > 0");
    if (!(beta > -1.0)) throw InvalidArgument("synthetic beta must be > -1");
    if (actives_min < 1 || actives_min > actives_max) throw InvalidArgument("need 1 <= actives_min <= actives_max");
    if (actives_max > n_true_features) throw InvalidArgument("actives_max exceeds the number of true features");
    if (!(actives_mean > 0.0)) throw InvalidArgument("actives_mean must be positive");
    if (!(coeff_lo > 0.0) || coeff_hi < coeff_lo) throw InvalidArgument("need 0 < coeff_lo <= coeff_hi");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
    if (!(easy_row_rate >= 0.0 && easy_row_rate < 1.0)) throw InvalidArgument("easy_row_rate must be in [0, 1)");
}

Matrix ActivationStore::to_matrix(std::size_t begin, std::size_t end) const {
    if (begin > end || end > n_rows) throw InvalidArgument("row range out of bounds");
    Matrix out(static_cast<Eigen::Index>(end - begin), static_cast<Eigen::Index>(d_model));
    for (std::size_t r = begin; r < end; ++r) {
        const float* src = payload.data() + r * d_model;
        for (std::size_t j = 0; j < d_model; ++j) out(static_cast<Eigen::Index>(r - begin), static_cast<Eigen::Index>(j)) = src[j];
    }
    return out;
}

ActivationStore ActivationStore::from_matrix(const Matrix& rows) {
    ActivationStore s;
    s.d_model = static_cast<std::uint32_t>(rows.cols());
    s.n_rows = static_cast<std::uint64_t>(rows.rows());
    s.payload.resize(static_cast<std::size_t>(rows.size()));
    for (Eigen::Index i = 0; i < rows.size(); ++i) s.payload[static_cast<std::size_t>(i)] = static_cast<float>(rows.data()[i]);
    return s;
}

GroundTruth sample_ground_truth(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto N = static_cast<Eigen::Index>(spec.d_model);
    const auto F = static_cast<Eigen::Index>(spec.n_true_features);

    GroundTruth truth;
    truth.dictionary.resize(F, N);
    for (Eigen::Index f = 0; f < F; ++f) {
        double norm = 0.0;
        while (norm == 0.0) {
            for (Eigen::Index j = 0; j < N; ++j) truth.dictionary(f, j) = normal(rng);
            norm = truth.dictionary.row(f).norm();
        }
        truth.dictionary.row(f) /= norm;
    }
    truth.easy_row.resize(N);
    for (Eigen::Index j = 0; j < N; ++j) truth.easy_row(j) = 3.0 * normal(rng);

    std::vector<double> weights(spec.n_true_features);
    for (std::size_t r = 0; r < weights.size(); ++r) {
        weights[r] = 1.0 / std::pow(static_cast<double>(r + 1) + spec.beta, spec.alpha);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::poisson_distribution<long> count(spec.actives_mean);
    std::uniform_real_distribution<double> coeff(spec.coeff_lo, spec.coeff_hi);
    std::bernoulli_distribution easy(spec.easy_row_rate);

    truth.codes.resize(spec.n_rows);
    truth.is_easy.assign(spec.n_rows, 0);
    std::vector<std::uint8_t> used(spec.n_true_features, 0);
    for (std::size_t r = 0; r < spec.n_rows; ++r) {
        if (spec.easy_row_rate > 0.0 && easy(rng)) {
            truth.is_easy[r] = 1;
            continue;
        }
        const auto n = static_cast<std::size_t>(std::clamp<long>(count(rng), static_cast<long>(spec.actives_min),
                                                                 static_cast<long>(spec.actives_max)));
        auto& code = truth.codes[r];
        code.reserve(n);
        while (code.size() < n) {
            const std::size_t f = pick(rng);
            if (used[f]) continue;
            used[f] = 1;
            code.emplace_back(static_cast<std::uint32_t>(f), coeff(rng));
        }
        for (const auto& c : code) used[c.first] = 0;
    }
    return truth;
}

Matrix render_rows(const GroundTruth& truth, const SyntheticSpec& spec) {
    const auto N = truth.dictionary.cols();
    Matrix rows = Matrix::Zero(static_cast<Eigen::Index>(truth.codes.size()), N);
    std::mt19937_64 noise_rng(spec.seed ^ kNoiseStreamSalt);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
    for (std::size_t r = 0; r < truth.codes.size(); ++r) {
        auto row = rows.row(static_cast<Eigen::Index>(r));
        if (truth.is_easy[r]) {
            row = truth.easy_row.transpose();
            continue;
        }
        for (const auto& [f, c] : truth.codes[r]) row.noalias() += c * truth.dictionary.row(f);
        if (spec.noise_sigma > 0.0) {
            for (Eigen::Index j = 0; j < N; ++j) row(j) += noise(noise_rng);
        }
    }
    return rows;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    SyntheticData out;
    out.truth = sample_ground_truth(spec);
    out.store = ActivationStore::from_matrix(render_rows(out.truth, spec));
    return out;
}

void write_activations(const ActivationStore& store, const std::filesystem::path& path) {
    if (store.payload.size() != store.n_rows * store.d_model) {
        throw ShapeError("activation payload length does not equal n_rows * d_model");
    }
    std::vector<unsigned char> bytes;
    bytes.reserve(kActivationHeaderBytes + store.payload.size() * 4);
    bytes.insert(bytes.end(), kMagic.begin(), kMagic.end());
    put_le<std::uint32_t>(bytes, kActivationVersion);
    put_le<std::uint32_t>(bytes, store.d_model);
    put_le<std::uint64_t>(bytes, store.n_rows);
    bytes.push_back(static_cast<unsigned char>(store.dtype));
    bytes.insert(bytes.end(), 7, 0);
    for (float v : store.payload) put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(v));

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

ActivationStore read_activations(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open activation file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    const std::string where = path.string() + ": ";
    const std::size_t magic_bytes = std::min(bytes.size(), kMagic.size());
    if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(magic_bytes), kMagic.begin())) {
        throw FormatError(FormatFault::BadMagic, where + "not an SAEACT01 file (bad magic)");
    }
    if (bytes.size() < kActivationHeaderBytes) throw FormatError(FormatFault::Truncated, where + "truncated header");

    const unsigned char* p = bytes.data();
    const auto version = get_le<std::uint32_t>(p + 8);
    if (version != kActivationVersion) {
        throw FormatError(FormatFault::VersionMismatch,
                          where + "unsupported version " + std::to_string(version) + " (expected 1)");
    }
    ActivationStore store;
    store.d_model = get_le<std::uint32_t>(p + 12);
    store.n_rows = get_le<std::uint64_t>(p + 16);
    const unsigned char dtype = p[24];
    if (dtype != static_cast<unsigned char>(DType::F32)) {
        throw FormatError(FormatFault::BadHeader, where + "unknown dtype tag " + std::to_string(dtype));
    }
    for (std::size_t i = 25; i < kActivationHeaderBytes; ++i) {
        if (p[i] != 0) throw FormatError(FormatFault::BadHeader, where + "reserved header bytes are not zero");
    }
    if (store.d_model == 0) throw FormatError(FormatFault::BadHeader, where + "d_model is zero");

    const std::size_t available = bytes.size() - kActivationHeaderBytes;
    const std::uint64_t values = store.n_rows * store.d_model;
    if (available / 4 < values) {
        throw FormatError(FormatFault::Truncated, where + "header declares " + std::to_string(store.n_rows) +
                                                      " rows but payload holds " +
                                                      std::to_string(available / 4 / store.d_model));
    }
    if (available != values * 4) throw FormatError(FormatFault::BadHeader, where + "trailing bytes after payload");

    store.payload.resize(values);
    const unsigned char* src = p + kActivationHeaderBytes;
    for (std::uint64_t i = 0; i < values; ++i) {
        const float v = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
        if (!std::isfinite(v)) {
            throw FormatError(FormatFault::NonFinite,
                              where + "non-finite value in row " + std::to_string(i / store.d_model));
        }
        store.payload[i] = v;
    }
    return store;
}

ShuffleStream::ShuffleStream(std::size_t n_rows, std::size_t buffer_rows, std::uint64_t seed)
    : n_rows_(n_rows), buffer_rows_(buffer_rows), rng_(seed) {
    if (n_rows == 0) throw InvalidArgument("cannot shuffle an empty store");
    if (buffer_rows == 0) throw InvalidArgument("shuffle buffer must hold at least one row");
}

void ShuffleStream::refill_start() {
    buffer_.clear();
    next_incoming_ = 0;
    const std::size_t fill = std::min(buffer_rows_, n_rows_);
    for (; next_incoming_ < fill; ++next_incoming_) buffer_.push_back(next_incoming_);
    epoch_open_ = true;
}

std::optional<std::size_t> ShuffleStream::next() {
    if (!epoch_open_) refill_start();
    if (buffer_.empty()) {
        epoch_open_ = false;
        ++epoch_;
        return std::nullopt;
    }
    std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
    const std::size_t j = pick(rng_);
    const std::size_t row = buffer_[j];
    if (next_incoming_ < n_rows_) {
        buffer_[j] = next_incoming_++;
    } else {
        buffer_[j] = buffer_.back();
        buffer_.pop_back();
    }
    return row;
}

std::vector<std::size_t> ShuffleStream::next_batch(std::size_t batch) {
    if (batch > buffer_rows_) {
        throw InvalidArgument("shuffle buffer (" + std::to_string(buffer_rows_) + " rows) is smaller than the batch (" +
                              std::to_string(batch) + ")");
    }
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
        if (auto r = next()) out.push_back(*r);
    }
    return out;
}

}  // namespace sparsealloc
