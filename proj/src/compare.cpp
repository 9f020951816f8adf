#include "sparsealloc/compare.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

std::size_t thread_budget() {
    if (const char* env = std::getenv("SPARSEALLOC_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<CompareRow> compare_runs(const std::vector<CompareEntry>& entries, const std::vector<std::uint64_t>& seeds,
                                     const Dataset& data, std::size_t threads) {
    if (entries.empty() || seeds.empty()) throw InvalidArgument("compare needs at least one config and one seed");
    struct Job {
        const CompareEntry* entry;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& e : entries) {
        for (std::uint64_t s : seeds) jobs.push_back({&e, s});
    }
    std::vector<CompareRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                RunConfig cfg = jobs[i].entry->config;
                cfg.seed = jobs[i].seed;
                const TrainResult r = train(cfg, data);
                CompareRow& row = rows[i];
                row.label = jobs[i].entry->label;
                row.policy = policy_kind_name(r.final_policy.kind);
                if (cfg.phase2.enabled) row.policy = policy_kind_name(cfg.policy) + "->" + row.policy;
                row.seed = cfg.seed;
                row.expected_k = r.final_policy.expected_k;
                row.fvu = r.report.fvu;
                row.mse = r.report.mse;
                row.mean_l0 = r.report.mean_l0;
                row.dead_count = r.report.dead_count;
                row.dying_count = r.report.dying_count;
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);

    std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
        return a.label != b.label ? a.label < b.label : a.seed < b.seed;
    });
    return rows;
}

std::string to_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << kCompareHeader << '\n';
    for (const auto& r : rows) {
        os << r.label << ',' << r.policy << ',' << r.seed << ',' << r.expected_k << ',' << r.fvu << ',' << r.mse << ','
           << r.mean_l0 << ',' << r.dead_count << ',' << r.dying_count << '\n';
    }
    return os.str();
}

}  // namespace sparsealloc
