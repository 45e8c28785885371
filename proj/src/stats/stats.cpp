#include "foundry/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "foundry/base64.hpp"

namespace foundry::stats {

using nlohmann::json;

// ---------------------------------------------------------------------------
// MomentAccumulator

void MomentAccumulator::add(double x) {
    if (!std::isfinite(x)) throw DataError("non-finite value");
    ++count;
    if (count == 1) {
        mean = x;
        m2 = 0.0;
        min = x;
        max = x;
        return;
    }
    double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
    min = std::min(min, x);
    max = std::max(max, x);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
    if (other.count == 0) return;
    if (count == 0) {
        *this = other;
        return;
    }
    double na = static_cast<double>(count);
    double nb = static_cast<double>(other.count);
    double n = na + nb;
    double delta = other.mean - mean;
    mean += delta * nb / n;
    m2 += other.m2 + delta * delta * na * nb / n;
    count += other.count;
    min = std::min(min, other.min);
    max = std::max(max, other.max);
}

double MomentAccumulator::variance() const {
    if (count == 0) throw Error("cannot finalize statistics with no observations");
    return std::max(0.0, m2 / static_cast<double>(count));
}

double MomentAccumulator::stddev() const { return std::sqrt(variance()); }

std::string_view to_string(Scope s) { return s == Scope::global ? "global" : "per_timestep"; }

Scope parse_scope(std::string_view s) {
    if (s == "global") return Scope::global;
    if (s == "per_timestep") return Scope::per_timestep;
    throw Error("unknown statistics scope '" + std::string(s) + "' (expected global or per_timestep)");
}

VarianceMerge parse_variance_merge(std::string_view s) {
    if (s == "full") return VarianceMerge::full;
    if (s == "within_only") return VarianceMerge::within_only;
    throw Error("unknown variance merge mode '" + std::string(s) + "' (expected full or within_only)");
}

bool operator==(const Percentiles& a, const Percentiles& b) {
    return same_matrix(a.p1, b.p1) && same_matrix(a.p5, b.p5) && same_matrix(a.p95, b.p95) &&
           same_matrix(a.p99, b.p99);
}

bool operator==(const FieldStats& a, const FieldStats& b) {
    return a.per_timestep == b.per_timestep && a.count == b.count && same_matrix(a.mean, b.mean) &&
           same_matrix(a.std, b.std) && same_matrix(a.min, b.min) && same_matrix(a.max, b.max) &&
           a.percentiles == b.percentiles && a.digests == b.digests;
}

// ---------------------------------------------------------------------------
// FieldAccumulator

FieldAccumulator::FieldAccumulator(std::string field, Eigen::Index rows, Eigen::Index dims, bool per_timestep,
                                   double compression)
    : field_(std::move(field)),
      rows_(per_timestep ? rows : 1),
      dims_(dims),
      per_timestep_(per_timestep),
      moments_(static_cast<std::size_t>(rows_ * dims_)),
      digests_(static_cast<std::size_t>(rows_ * dims_), TDigest(compression)) {}

void FieldAccumulator::add(const RowMatrix& window) {
    if (window.cols() != dims_ || (per_timestep_ && window.rows() != rows_))
        throw ShapeError("field '" + field_ + "': window is " + std::to_string(window.rows()) + "x" +
                         std::to_string(window.cols()) + ", accumulator expects " +
                         (per_timestep_ ? std::to_string(rows_) : std::string("*")) + "x" + std::to_string(dims_));
    if (!window.allFinite()) throw DataError("field '" + field_ + "' contains NaN or Inf");
    for (Eigen::Index r = 0; r < window.rows(); ++r) {
        Eigen::Index cell_row = per_timestep_ ? r : 0;
        for (Eigen::Index d = 0; d < dims_; ++d) {
            auto idx = static_cast<std::size_t>(cell_row * dims_ + d);
            double x = window(r, d);
            moments_[idx].add(x);
            digests_[idx].insert(x);
        }
    }
}

void FieldAccumulator::merge(const FieldAccumulator& other) {
    if (other.rows_ != rows_ || other.dims_ != dims_ || other.per_timestep_ != per_timestep_)
        throw ShapeError("field '" + field_ + "': cannot merge accumulators of different shape");
    for (std::size_t i = 0; i < moments_.size(); ++i) {
        moments_[i].merge(other.moments_[i]);
        digests_[i].merge_in(other.digests_[i]);
    }
}

Percentiles percentiles_from(const std::vector<TDigest>& digests, Eigen::Index rows, Eigen::Index dims) {
    Percentiles p{RowMatrix(rows, dims), RowMatrix(rows, dims), RowMatrix(rows, dims), RowMatrix(rows, dims)};
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index d = 0; d < dims; ++d) {
            const auto& dg = digests[static_cast<std::size_t>(r * dims + d)];
            p.p1(r, d) = dg.quantile(0.01);
            p.p5(r, d) = dg.quantile(0.05);
            p.p95(r, d) = dg.quantile(0.95);
            p.p99(r, d) = dg.quantile(0.99);
        }
    }
    return p;
}

FieldStats FieldAccumulator::finalize() const {
    if (count() == 0) throw Error("field '" + field_ + "': cannot finalize statistics with no observations");
    FieldStats f;
    f.per_timestep = per_timestep_;
    f.count = count();
    f.mean.resize(rows_, dims_);
    f.std.resize(rows_, dims_);
    f.min.resize(rows_, dims_);
    f.max.resize(rows_, dims_);
    for (Eigen::Index r = 0; r < rows_; ++r) {
        for (Eigen::Index d = 0; d < dims_; ++d) {
            const auto& m = moments_[static_cast<std::size_t>(r * dims_ + d)];
            f.mean(r, d) = m.mean;
            f.std(r, d) = m.stddev();
            f.min(r, d) = m.min;
            f.max(r, d) = m.max;
        }
    }
    f.digests = digests_;
    for (auto& d : f.digests) d.compress();
    f.percentiles = percentiles_from(f.digests, rows_, dims_);
    return f;
}

// ---------------------------------------------------------------------------
// Merging

namespace {

struct CellMoments {
    double n, mean, var, min, max;
};

CellMoments pool(const CellMoments& a, const CellMoments& b, VarianceMerge mode) {
    double n = a.n + b.n;
    double wa = a.n / n, wb = b.n / n;
    double mean = wa * a.mean + wb * b.mean;
    double var = wa * a.var + wb * b.var;
    if (mode == VarianceMerge::full) {
        double da = a.mean - mean, db = b.mean - mean;
        var += wa * da * da + wb * db * db;
    }
    return {n, mean, var, std::min(a.min, b.min), std::max(a.max, b.max)};
}

}  // namespace

FieldStats merge_field(const FieldStats& a, const FieldStats& b, VarianceMerge mode) {
    if (a.count == 0) return b;
    if (b.count == 0) return a;
    if (a.per_timestep != b.per_timestep || a.rows() != b.rows() || a.dims() != b.dims())
        throw ShapeError("cannot merge field statistics of different shape or scope");
    FieldStats out;
    out.per_timestep = a.per_timestep;
    out.count = a.count + b.count;
    out.mean.resize(a.rows(), a.dims());
    out.std.resize(a.rows(), a.dims());
    out.min.resize(a.rows(), a.dims());
    out.max.resize(a.rows(), a.dims());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        for (Eigen::Index d = 0; d < a.dims(); ++d) {
            CellMoments ca{static_cast<double>(a.count), a.mean(r, d), a.std(r, d) * a.std(r, d), a.min(r, d),
                           a.max(r, d)};
            CellMoments cb{static_cast<double>(b.count), b.mean(r, d), b.std(r, d) * b.std(r, d), b.min(r, d),
                           b.max(r, d)};
            auto m = pool(ca, cb, mode);
            out.mean(r, d) = m.mean;
            out.std(r, d) = std::sqrt(std::max(0.0, m.var));
            out.min(r, d) = m.min;
            out.max(r, d) = m.max;
        }
    }
    if (!a.digests.empty() && !b.digests.empty()) {
        out.digests.reserve(a.digests.size());
        for (std::size_t i = 0; i < a.digests.size(); ++i) out.digests.push_back(TDigest::merge(a.digests[i], b.digests[i]));
        out.percentiles = percentiles_from(out.digests, out.rows(), out.dims());
    }
    return out;
}

FieldStats collapse_to_global(const FieldStats& f, VarianceMerge mode) {
    if (!f.per_timestep) return f;
    FieldStats out;
    out.per_timestep = false;
    out.count = f.count * static_cast<std::uint64_t>(f.rows());
    out.mean.resize(1, f.dims());
    out.std.resize(1, f.dims());
    out.min.resize(1, f.dims());
    out.max.resize(1, f.dims());
    for (Eigen::Index d = 0; d < f.dims(); ++d) {
        CellMoments acc{static_cast<double>(f.count), f.mean(0, d), f.std(0, d) * f.std(0, d), f.min(0, d),
                        f.max(0, d)};
        for (Eigen::Index r = 1; r < f.rows(); ++r) {
            acc = pool(acc,
                       {static_cast<double>(f.count), f.mean(r, d), f.std(r, d) * f.std(r, d), f.min(r, d), f.max(r, d)},
                       mode);
        }
        out.mean(0, d) = acc.mean;
        out.std(0, d) = std::sqrt(std::max(0.0, acc.var));
        out.min(0, d) = acc.min;
        out.max(0, d) = acc.max;
    }
    if (!f.digests.empty()) {
        for (Eigen::Index d = 0; d < f.dims(); ++d) {
            TDigest pooled = f.digests[static_cast<std::size_t>(d)];
            for (Eigen::Index r = 1; r < f.rows(); ++r) pooled.merge_in(f.digests[static_cast<std::size_t>(r * f.dims() + d)]);
            out.digests.push_back(std::move(pooled));
        }
        out.percentiles = percentiles_from(out.digests, 1, f.dims());
    }
    return out;
}

DatasetStats collapse_to_global(const DatasetStats& s, VarianceMerge mode) {
    DatasetStats out;
    out.sample_count = s.sample_count;
    out.scope = Scope::global;
    for (const auto& [name, f] : s.fields) out.fields.emplace(name, collapse_to_global(f, mode));
    return out;
}

DatasetStats merge_stats(const DatasetStats& a, const DatasetStats& b, VarianceMerge mode) {
    if (a.sample_count == 0 && a.fields.empty()) return b;
    if (b.sample_count == 0 && b.fields.empty()) return a;
    if (a.scope != b.scope) throw ShapeError("cannot merge statistics with different scopes");
    if (a.window != b.window) throw ShapeError("cannot merge statistics with different window shapes");
    if (a.fields.size() != b.fields.size()) throw ShapeError("cannot merge statistics with different field sets");
    DatasetStats out;
    out.sample_count = a.sample_count + b.sample_count;
    out.scope = a.scope;
    out.window = a.window;
    for (const auto& [name, fa] : a.fields) {
        auto it = b.fields.find(name);
        if (it == b.fields.end()) throw ShapeError("field '" + name + "' is missing from one operand");
        try {
            out.fields.emplace(name, merge_field(fa, it->second, mode));
        } catch (const ShapeError& e) {
            throw ShapeError("field '" + name + "': " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// stats.json

namespace {

json matrix_to_json(const RowMatrix& m, bool per_timestep) {
    if (!per_timestep) return json(std::vector<double>(m.data(), m.data() + m.cols()));
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double* p = m.data() + r * m.cols();
        rows.push_back(std::vector<double>(p, p + m.cols()));
    }
    return rows;
}

json digests_to_json(const std::vector<TDigest>& ds, Eigen::Index rows, Eigen::Index dims, bool per_timestep) {
    auto enc = [&](Eigen::Index r, Eigen::Index d) {
        return base64_encode(ds[static_cast<std::size_t>(r * dims + d)].to_bytes());
    };
    if (!per_timestep) {
        json arr = json::array();
        for (Eigen::Index d = 0; d < dims; ++d) arr.push_back(enc(0, d));
        return arr;
    }
    json out = json::array();
    for (Eigen::Index r = 0; r < rows; ++r) {
        json arr = json::array();
        for (Eigen::Index d = 0; d < dims; ++d) arr.push_back(enc(r, d));
        out.push_back(std::move(arr));
    }
    return out;
}

std::string escape_pointer_token(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '~') {
            out += "~0";
        } else if (c == '/') {
            out += "~1";
        } else {
            out += c;
        }
    }
    return out;
}

// Walks a parsed document while tracking its JSON pointer for error messages.
class Cursor {
public:
    Cursor(const json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {}

    [[noreturn]] void fail(const std::string& msg) const { throw StatsFormatError(ptr_.empty() ? "/" : ptr_, msg); }

    const json& value() const { return j_; }
    const std::string& pointer() const { return ptr_; }

    Cursor at(const std::string& key) const {
        if (!j_.is_object()) fail("expected an object");
        auto it = j_.find(key);
        if (it == j_.end()) Cursor(j_, ptr_ + "/" + escape_pointer_token(key)).fail("missing required key");
        return Cursor(*it, ptr_ + "/" + escape_pointer_token(key));
    }
    bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
    Cursor at(std::size_t i) const {
        if (!j_.is_array() || i >= j_.size()) fail("expected an array with at least " + std::to_string(i + 1) + " items");
        return Cursor(j_[i], ptr_ + "/" + std::to_string(i));
    }

    std::uint64_t as_count() const {
        if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0))
            fail("expected a non-negative integer");
        return j_.get<std::uint64_t>();
    }
    double as_number() const {
        if (!j_.is_number()) fail("expected a number");
        double v = j_.get<double>();
        if (!std::isfinite(v)) fail("expected a finite number");
        return v;
    }
    std::string as_string() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }
    bool as_bool() const {
        if (!j_.is_boolean()) fail("expected a boolean");
        return j_.get<bool>();
    }
    std::size_t array_size(std::size_t expected) const {
        if (!j_.is_array()) fail("expected an array");
        if (j_.size() != expected)
            fail("expected " + std::to_string(expected) + " items, found " + std::to_string(j_.size()));
        return expected;
    }

private:
    const json& j_;
    std::string ptr_;
};

RowMatrix read_matrix(const Cursor& c, Eigen::Index rows, Eigen::Index dims, bool per_timestep) {
    RowMatrix m(rows, dims);
    if (!per_timestep) {
        c.array_size(static_cast<std::size_t>(dims));
        for (Eigen::Index d = 0; d < dims; ++d) m(0, d) = c.at(static_cast<std::size_t>(d)).as_number();
        return m;
    }
    c.array_size(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
        Cursor row = c.at(static_cast<std::size_t>(r));
        row.array_size(static_cast<std::size_t>(dims));
        for (Eigen::Index d = 0; d < dims; ++d) m(r, d) = row.at(static_cast<std::size_t>(d)).as_number();
    }
    return m;
}

TDigest read_digest(const Cursor& c) {
    auto raw = base64_decode(c.as_string());
    if (!raw) c.fail("corrupted t-digest payload (invalid base64)");
    try {
        return TDigest::from_bytes(*raw);
    } catch (const FormatError& e) {
        c.fail(std::string("corrupted t-digest payload (") + e.what() + ")");
    }
}

FieldStats read_field(const Cursor& c, std::size_t window_rows) {
    FieldStats f;
    auto dims = static_cast<Eigen::Index>(c.at("dims").as_count());
    f.per_timestep = c.has("per_timestep") && c.at("per_timestep").as_bool();
    Eigen::Index rows = f.per_timestep ? static_cast<Eigen::Index>(window_rows) : 1;
    if (f.per_timestep && window_rows == 0) c.at("per_timestep").fail("per-timestep field without a window");
    f.count = c.at("count").as_count();
    f.mean = read_matrix(c.at("mean"), rows, dims, f.per_timestep);
    f.std = read_matrix(c.at("std"), rows, dims, f.per_timestep);
    f.min = read_matrix(c.at("min"), rows, dims, f.per_timestep);
    f.max = read_matrix(c.at("max"), rows, dims, f.per_timestep);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index d = 0; d < dims; ++d) {
            if (f.std(r, d) < 0.0) c.at("std").fail("standard deviation must be non-negative");
            if (f.min(r, d) > f.max(r, d)) c.at("min").fail("min exceeds max");
        }
    }
    bool has_p = c.has("p1") || c.has("p5") || c.has("p95") || c.has("p99");
    if (has_p) {
        f.percentiles = Percentiles{read_matrix(c.at("p1"), rows, dims, f.per_timestep),
                                    read_matrix(c.at("p5"), rows, dims, f.per_timestep),
                                    read_matrix(c.at("p95"), rows, dims, f.per_timestep),
                                    read_matrix(c.at("p99"), rows, dims, f.per_timestep)};
    }
    if (c.has("tdigest")) {
        Cursor td = c.at("tdigest");
        if (!f.per_timestep) {
            td.array_size(static_cast<std::size_t>(dims));
            for (Eigen::Index d = 0; d < dims; ++d) f.digests.push_back(read_digest(td.at(static_cast<std::size_t>(d))));
        } else {
            td.array_size(static_cast<std::size_t>(rows));
            for (Eigen::Index r = 0; r < rows; ++r) {
                Cursor row = td.at(static_cast<std::size_t>(r));
                row.array_size(static_cast<std::size_t>(dims));
                for (Eigen::Index d = 0; d < dims; ++d)
                    f.digests.push_back(read_digest(row.at(static_cast<std::size_t>(d))));
            }
        }
    }
    return f;
}

}  // namespace

std::string serialize_stats(const DatasetStats& s) {
    json doc;
    doc["version"] = 1;
    doc["sample_count"] = s.sample_count;
    doc["scope"] = std::string(to_string(s.scope));
    if (s.window) doc["window"] = {{"n_past", s.window->n_past}, {"n_future", s.window->n_future}};
    json fields = json::object();
    for (const auto& [name, f] : s.fields) {
        json jf;
        jf["dims"] = f.dims();
        jf["per_timestep"] = f.per_timestep;
        jf["count"] = f.count;
        jf["mean"] = matrix_to_json(f.mean, f.per_timestep);
        jf["std"] = matrix_to_json(f.std, f.per_timestep);
        jf["min"] = matrix_to_json(f.min, f.per_timestep);
        jf["max"] = matrix_to_json(f.max, f.per_timestep);
        if (f.percentiles) {
            jf["p1"] = matrix_to_json(f.percentiles->p1, f.per_timestep);
            jf["p5"] = matrix_to_json(f.percentiles->p5, f.per_timestep);
            jf["p95"] = matrix_to_json(f.percentiles->p95, f.per_timestep);
            jf["p99"] = matrix_to_json(f.percentiles->p99, f.per_timestep);
        }
        if (!f.digests.empty()) jf["tdigest"] = digests_to_json(f.digests, f.rows(), f.dims(), f.per_timestep);
        fields[name] = std::move(jf);
    }
    doc["fields"] = std::move(fields);
    return doc.dump(2) + "\n";
}

DatasetStats parse_stats(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw StatsFormatError("/", std::string("invalid JSON: ") + e.what());
    }
    Cursor root(doc, "");
    if (!doc.is_object()) root.fail("expected an object");
    if (auto v = root.at("version").as_count(); v != 1) root.at("version").fail("unsupported version " + std::to_string(v));
    DatasetStats s;
    s.sample_count = root.at("sample_count").as_count();
    Cursor scope = root.at("scope");
    try {
        s.scope = parse_scope(scope.as_string());
    } catch (const StatsFormatError&) {
        throw;
    } catch (const Error& e) {
        scope.fail(e.what());
    }
    std::size_t window_rows = 0;
    if (root.has("window")) {
        Cursor w = root.at("window");
        s.window = WindowShape{w.at("n_past").as_count(), w.at("n_future").as_count()};
        window_rows = s.window->n_past + 1 + s.window->n_future;
    }
    if (s.scope == Scope::per_timestep && !s.window) root.at("window").fail("per_timestep scope requires a window");
    Cursor fields = root.at("fields");
    if (!fields.value().is_object()) fields.fail("expected an object");
    for (const auto& [name, _] : fields.value().items()) {
        FieldStats f = read_field(fields.at(name), window_rows);
        if (s.scope == Scope::per_timestep && !f.per_timestep)
            fields.at(name).fail("global field inside per_timestep statistics");
        s.fields.emplace(name, std::move(f));
    }
    return s;
}

}  // namespace foundry::stats
