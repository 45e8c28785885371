#include "foundry/normalizer.hpp"

namespace foundry::normalizer {

Method parse_method(std::string_view name) {
    if (name == "stddev" || name == "std") return Method::stddev;
    if (name == "minmax" || name == "min_max") return Method::minmax;
    if (name == "percentile_1_99") return Method::percentile_1_99;
    if (name == "percentile_5_95") return Method::percentile_5_95;
    throw Error("unknown normalization method '" + std::string(name) +
                "' (expected stddev, minmax, percentile_1_99 or percentile_5_95)");
}

std::string_view to_string(Method m) {
    switch (m) {
        case Method::stddev: return "stddev";
        case Method::minmax: return "minmax";
        case Method::percentile_1_99: return "percentile_1_99";
        case Method::percentile_5_95: return "percentile_5_95";
    }
    return "?";
}

NormParams build(const stats::FieldStats& input, const NormSpec& spec) {
    if (!(spec.epsilon > 0.0)) throw Error("normalization epsilon must be positive");
    if (spec.scope == stats::Scope::per_timestep && !input.per_timestep)
        throw Error("per_timestep normalization requires per-timestep statistics");
    const stats::FieldStats field =
        spec.scope == stats::Scope::global ? stats::collapse_to_global(input) : input;

    NormParams p;
    p.scope = spec.scope;
    auto interval = [&](const RowMatrix& lo, const RowMatrix& hi) {
        p.offset = (lo + hi) / 2.0;
        p.scale = (hi - lo) / 2.0;
    };
    switch (spec.method) {
        case Method::stddev:
            p.offset = field.mean;
            p.scale = field.std;
            break;
        case Method::minmax: interval(field.min, field.max); break;
        case Method::percentile_1_99:
        case Method::percentile_5_95:
            if (!field.percentiles)
                throw Error(std::string(to_string(spec.method)) + " normalization needs percentile statistics");
            if (spec.method == Method::percentile_1_99) {
                interval(field.percentiles->p1, field.percentiles->p99);
            } else {
                interval(field.percentiles->p5, field.percentiles->p95);
            }
            break;
    }
    for (Eigen::Index r = 0; r < p.scale.rows(); ++r) {
        for (Eigen::Index d = 0; d < p.scale.cols(); ++d) {
            if (p.scale(r, d) < spec.epsilon) {
                p.warnings.push_back({r, d, p.scale(r, d)});
                p.scale(r, d) = 1.0;
            }
        }
    }
    return p;
}

namespace {

void check_shape(const RowMatrix& x, const NormParams& p) {
    if (x.cols() != p.dims())
        throw ShapeError("input has " + std::to_string(x.cols()) + " features, parameters have " +
                         std::to_string(p.dims()));
    if (p.scope == stats::Scope::per_timestep && x.rows() != p.timesteps())
        throw ShapeError("input has " + std::to_string(x.rows()) + " timesteps, per-timestep parameters have " +
                         std::to_string(p.timesteps()));
}

}  // namespace

RowMatrix normalize(const RowMatrix& x, const NormParams& p) {
    check_shape(x, p);
    if (p.scope == stats::Scope::per_timestep) return (x - p.offset).cwiseQuotient(p.scale);
    RowMatrix out = x;
    out.rowwise() -= p.offset.row(0);
    return out.array().rowwise() / p.scale.row(0).array();
}

RowMatrix denormalize(const RowMatrix& y, const NormParams& p) {
    check_shape(y, p);
    if (p.scope == stats::Scope::per_timestep) return y.cwiseProduct(p.scale) + p.offset;
    RowMatrix out = y.array().rowwise() * p.scale.row(0).array();
    out.rowwise() += p.offset.row(0);
    return out;
}

NormParams align_per_timestep(const NormParams& p, std::size_t anchor_relative_idx, std::size_t n_past,
                              std::size_t n_future) {
    if (p.scope == stats::Scope::global) return p;
    if (n_past > anchor_relative_idx || anchor_relative_idx + n_future >= static_cast<std::size_t>(p.timesteps()))
        throw Error("sub-window (" + std::to_string(n_past) + ", " + std::to_string(n_future) +
                    ") does not fit the statistics window of " + std::to_string(p.timesteps()) +
                    " timesteps anchored at " + std::to_string(anchor_relative_idx));
    auto first = static_cast<Eigen::Index>(anchor_relative_idx - n_past);
    auto count = static_cast<Eigen::Index>(n_past + 1 + n_future);
    NormParams out;
    out.scope = p.scope;
    out.offset = p.offset.middleRows(first, count);
    out.scale = p.scale.middleRows(first, count);
    for (const auto& w : p.warnings) {
        if (w.timestep >= first && w.timestep < first + count) out.warnings.push_back({w.timestep - first, w.dim, w.original_scale});
    }
    return out;
}

}  // namespace foundry::normalizer
