#pragma once

// RoboticsNormalizer: y = (x - offset) / scale with parameters derived from
// dataset statistics.
//
//   stddev            offset = mean,             scale = std
//   minmax            offset = (min + max) / 2,  scale = (max - min) / 2
//   percentile_1_99   offset = (p1 + p99) / 2,   scale = (p99 - p1) / 2
//   percentile_5_95   offset = (p5 + p95) / 2,   scale = (p95 - p5) / 2
//
// The interval methods map their interval onto [-1, 1]. Values outside the
// interval are not clipped, so denormalize() is an exact inverse.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "foundry/stats.hpp"
#include "foundry/tensor.hpp"

namespace foundry::normalizer {

enum class Method { stddev, minmax, percentile_1_99, percentile_5_95 };

Method parse_method(std::string_view name);
std::string_view to_string(Method m);

struct NormSpec {
    Method method = Method::stddev;
    stats::Scope scope = stats::Scope::global;
    double epsilon = 1e-8;
};

// A dimension whose scale fell below epsilon and was reset to 1.
struct ClampWarning {
    Eigen::Index timestep;
    Eigen::Index dim;
    double original_scale;
};

struct NormParams {
    stats::Scope scope = stats::Scope::global;
    RowMatrix offset;  // 1 x D (global) or W x D (per timestep)
    RowMatrix scale;
    std::vector<ClampWarning> warnings;

    Eigen::Index dims() const { return offset.cols(); }
    Eigen::Index timesteps() const { return offset.rows(); }
};

// Global scope over per-timestep statistics pools the timesteps first.
// Per-timestep scope requires per-timestep statistics.
NormParams build(const stats::FieldStats& field, const NormSpec& spec);

// x is T x D. Global params apply to every row; per-timestep params require
// T == timesteps().
RowMatrix normalize(const RowMatrix& x, const NormParams& p);
RowMatrix denormalize(const RowMatrix& y, const NormParams& p);

// Selects the parameter rows covering [anchor - n_past, anchor + n_future] of
// the statistics window. Global params are returned unchanged.
NormParams align_per_timestep(const NormParams& p, std::size_t anchor_relative_idx, std::size_t n_past,
                              std::size_t n_future);

}  // namespace foundry::normalizer
