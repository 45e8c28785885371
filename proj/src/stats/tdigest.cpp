#include "foundry/tdigest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace foundry::stats {

TDigest::TDigest(double compression) : compression_(compression) {
    if (!(compression > 0.0) || !std::isfinite(compression)) throw Error("t-digest compression must be positive");
}

double TDigest::scale_k(double q) const {
    return compression_ * (std::asin(2.0 * q - 1.0) / std::numbers::pi + 0.5) / 2.0;
}

double TDigest::scale_q(double k) const {
    double kmax = compression_ / 2.0;
    if (k >= kmax) return 1.0;
    return (std::sin((2.0 * k / compression_ - 0.5) * std::numbers::pi) + 1.0) / 2.0;
}

void TDigest::insert(double x, double w) {
    if (!std::isfinite(x)) throw DataError("t-digest input must be finite");
    if (!(w > 0.0) || !std::isfinite(w)) throw DataError("t-digest weight must be positive");
    if (total_weight_ == 0.0) {
        min_ = x;
        max_ = x;
    } else {
        min_ = std::min(min_, x);
        max_ = std::max(max_, x);
    }
    total_weight_ += w;
    buffer_.push_back({x, w});
    if (buffer_.size() >= static_cast<std::size_t>(5.0 * compression_)) compress();
}

void TDigest::fold(std::vector<Centroid>& points) {
    std::stable_sort(points.begin(), points.end(),
                     [](const Centroid& a, const Centroid& b) { return a.mean < b.mean; });
    double total = 0.0;
    for (const auto& p : points) total += p.weight;

    std::vector<Centroid> out;
    out.reserve(static_cast<std::size_t>(std::ceil(compression_)) + 1);
    Centroid cur = points.front();
    double so_far = 0.0;
    double q_limit = scale_q(scale_k(0.0) + 1.0) * total;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const auto& p = points[i];
        if (so_far + cur.weight + p.weight <= q_limit) {
            cur.weight += p.weight;
            cur.mean += (p.mean - cur.mean) * p.weight / cur.weight;
        } else {
            so_far += cur.weight;
            out.push_back(cur);
            q_limit = scale_q(scale_k(so_far / total) + 1.0) * total;
            cur = p;
        }
    }
    out.push_back(cur);
    // Re-sum so a parsed digest (which sums centroid weights) compares equal.
    total_weight_ = 0.0;
    for (const auto& c : out) total_weight_ += c.weight;
    centroids_ = std::move(out);
}

void TDigest::compress() {
    if (buffer_.empty()) return;
    std::vector<Centroid> all;
    all.reserve(centroids_.size() + buffer_.size());
    all.insert(all.end(), centroids_.begin(), centroids_.end());
    all.insert(all.end(), buffer_.begin(), buffer_.end());
    buffer_.clear();
    fold(all);
}

double TDigest::quantile(double q) const {
    if (total_weight_ == 0.0) throw Error("quantile of an empty t-digest");
    if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile fraction must lie in [0, 1]");
    if (!buffer_.empty()) {
        TDigest copy = *this;
        copy.compress();
        return copy.quantile(q);
    }
    const double index = q * total_weight_;
    // Knots: (0, min), (centre of each centroid, its mean), (total, max).
    double prev_pos = 0.0;
    double prev_val = min_;
    double cum = 0.0;
    for (const auto& c : centroids_) {
        double pos = cum + c.weight / 2.0;
        if (index <= pos) {
            if (pos == prev_pos) return c.mean;
            double t = (index - prev_pos) / (pos - prev_pos);
            return prev_val + t * (c.mean - prev_val);
        }
        prev_pos = pos;
        prev_val = c.mean;
        cum += c.weight;
    }
    if (total_weight_ == prev_pos) return max_;
    double t = (index - prev_pos) / (total_weight_ - prev_pos);
    return prev_val + t * (max_ - prev_val);
}

void TDigest::merge_in(const TDigest& other) {
    if (other.compression_ != compression_)
        throw Error("cannot merge t-digests with different compression");
    if (other.total_weight_ == 0.0) return;
    std::vector<Centroid> all;
    all.reserve(centroids_.size() + buffer_.size() + other.centroids_.size() + other.buffer_.size());
    all.insert(all.end(), centroids_.begin(), centroids_.end());
    all.insert(all.end(), buffer_.begin(), buffer_.end());
    all.insert(all.end(), other.centroids_.begin(), other.centroids_.end());
    all.insert(all.end(), other.buffer_.begin(), other.buffer_.end());
    if (total_weight_ == 0.0) {
        min_ = other.min_;
        max_ = other.max_;
    } else {
        min_ = std::min(min_, other.min_);
        max_ = std::max(max_, other.max_);
    }
    total_weight_ += other.total_weight_;
    buffer_.clear();
    fold(all);
}

TDigest TDigest::merge(const TDigest& a, const TDigest& b) {
    TDigest out = a;
    out.merge_in(b);
    return out;
}

namespace {

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos) {
    if (bytes.size() - pos < sizeof(T)) throw FormatError("t-digest payload truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string TDigest::to_bytes() const {
    TDigest c = *this;
    c.compress();
    std::string out;
    out.reserve(28 + 16 * c.centroids_.size());
    put<double>(out, c.compression_);
    put<double>(out, c.min_);
    put<double>(out, c.max_);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.centroids_.size()));
    for (const auto& ct : c.centroids_) {
        put<double>(out, ct.mean);
        put<double>(out, ct.weight);
    }
    return out;
}

TDigest TDigest::from_bytes(std::string_view bytes) {
    std::size_t pos = 0;
    double compression = take<double>(bytes, pos);
    if (!(compression > 0.0) || !std::isfinite(compression)) throw FormatError("t-digest compression is invalid");
    TDigest d(compression);
    d.min_ = take<double>(bytes, pos);
    d.max_ = take<double>(bytes, pos);
    auto n = take<std::uint32_t>(bytes, pos);
    if (bytes.size() - pos != static_cast<std::size_t>(n) * 16) throw FormatError("t-digest payload size mismatch");
    d.centroids_.reserve(n);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::uint32_t i = 0; i < n; ++i) {
        Centroid c{take<double>(bytes, pos), take<double>(bytes, pos)};
        if (!std::isfinite(c.mean) || !(c.weight > 0.0) || !std::isfinite(c.weight) || c.mean < prev)
            throw FormatError("t-digest centroids are invalid");
        prev = c.mean;
        d.total_weight_ += c.weight;
        d.centroids_.push_back(c);
    }
    if (n > 0 && !(d.min_ <= d.centroids_.front().mean && d.centroids_.back().mean <= d.max_))
        throw FormatError("t-digest extrema are inconsistent with its centroids");
    return d;
}

bool operator==(const TDigest& a, const TDigest& b) {
    if (!a.buffer_.empty() || !b.buffer_.empty()) {
        TDigest ca = a, cb = b;
        ca.compress();
        cb.compress();
        return ca == cb;
    }
    return a.compression_ == b.compression_ && a.centroids_ == b.centroids_ &&
           a.total_weight_ == b.total_weight_ && a.min_ == b.min_ && a.max_ == b.max_;
}

}  // namespace foundry::stats
