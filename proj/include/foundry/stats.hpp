#pragma once

// Per-field, per-dimension (optionally per-timestep) dataset statistics and
// their stats.json form. Accumulation is single-writer; combine workers with
// merge().

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "foundry/error.hpp"
#include "foundry/tdigest.hpp"
#include "foundry/tensor.hpp"

namespace foundry::stats {

// One-pass mean / variance / extrema. Variance is the population variance.
struct MomentAccumulator {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;  // sum of squared deviations from the mean
    double min = 0.0;
    double max = 0.0;

    // Throws DataError on NaN/Inf.
    void add(double x);
    void merge(const MomentAccumulator& other);

    double variance() const;  // throws on count == 0
    double stddev() const;
};

enum class Scope { global, per_timestep };
enum class VarianceMerge { full, within_only };

std::string_view to_string(Scope s);
Scope parse_scope(std::string_view s);
VarianceMerge parse_variance_merge(std::string_view s);

struct Percentiles {
    RowMatrix p1, p5, p95, p99;
    friend bool operator==(const Percentiles&, const Percentiles&);
};

// Finalized statistics of one field. Every matrix is rows x dims where rows is
// 1 for global scope and the window length for per-timestep scope.
struct FieldStats {
    bool per_timestep = false;
    std::uint64_t count = 0;  // observations behind each cell
    RowMatrix mean, std, min, max;
    std::optional<Percentiles> percentiles;
    // rows * dims digests, row-major. Empty when the source carried none.
    std::vector<TDigest> digests;

    Eigen::Index rows() const { return mean.rows(); }
    Eigen::Index dims() const { return mean.cols(); }

    friend bool operator==(const FieldStats&, const FieldStats&);
};

struct WindowShape {
    std::size_t n_past = 0;
    std::size_t n_future = 0;
    friend bool operator==(const WindowShape&, const WindowShape&) = default;
};

struct DatasetStats {
    std::uint64_t sample_count = 0;
    Scope scope = Scope::global;
    std::optional<WindowShape> window;  // set for per-timestep scope
    std::map<std::string, FieldStats> fields;

    friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

// Streaming builder for one field. `rows` is 1 for global accumulation or the
// window length for per-timestep accumulation.
class FieldAccumulator {
public:
    FieldAccumulator(std::string field, Eigen::Index rows, Eigen::Index dims, bool per_timestep,
                     double compression = 100.0);

    // per_timestep: `window` must be rows x dims and row j feeds timestep j.
    // global: every row of `window` feeds the single row of cells.
    void add(const RowMatrix& window);
    void merge(const FieldAccumulator& other);
    FieldStats finalize() const;

    const std::string& field() const { return field_; }
    std::uint64_t count() const { return moments_.empty() ? 0 : moments_.front().count; }

private:
    std::string field_;
    Eigen::Index rows_;
    Eigen::Index dims_;
    bool per_timestep_;
    std::vector<MomentAccumulator> moments_;
    std::vector<TDigest> digests_;
};

// Percentiles recomputed from digests.
Percentiles percentiles_from(const std::vector<TDigest>& digests, Eigen::Index rows, Eigen::Index dims);

// Pools a per-timestep field over its timesteps into a single row.
FieldStats collapse_to_global(const FieldStats& f, VarianceMerge mode = VarianceMerge::full);
DatasetStats collapse_to_global(const DatasetStats& s, VarianceMerge mode = VarianceMerge::full);

// Count-weighted means, pooled variance, element-wise extrema, merged digests.
// `full` pools with the between-group term; `within_only` averages the
// per-group variances only.
FieldStats merge_field(const FieldStats& a, const FieldStats& b, VarianceMerge mode = VarianceMerge::full);
DatasetStats merge_stats(const DatasetStats& a, const DatasetStats& b, VarianceMerge mode = VarianceMerge::full);

class StatsFormatError : public FormatError {
public:
    StatsFormatError(const std::string& pointer, const std::string& message)
        : FormatError(pointer + ": " + message), pointer_(pointer) {}
    const std::string& pointer() const { return pointer_; }

private:
    std::string pointer_;
};

std::string serialize_stats(const DatasetStats& s);
// Throws StatsFormatError carrying the JSON pointer of the offending value.
DatasetStats parse_stats(std::string_view json_text);

}  // namespace foundry::stats
