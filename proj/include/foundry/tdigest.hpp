#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "foundry/error.hpp"

namespace foundry::stats {

// Merging t-digest with the arcsine scale function
//   k(q) = delta * (asin(2q - 1) / pi + 1/2) / 2
// Points are buffered (capacity 5 * delta) and folded into centroids in one
// sorted pass, so no centroid spans more than one unit of k.
class TDigest {
public:
    struct Centroid {
        double mean;
        double weight;
        friend bool operator==(const Centroid&, const Centroid&) = default;
    };

    explicit TDigest(double compression = 100.0);

    void insert(double x, double w = 1.0);
    // Folds the buffer into the centroid list.
    void compress();
    // Requires total_weight() > 0. Linear interpolation through the centroid
    // midpoints with min and max as the endpoints.
    double quantile(double q) const;
    // Same compression on both sides; throws otherwise.
    static TDigest merge(const TDigest& a, const TDigest& b);
    void merge_in(const TDigest& other);

    double compression() const { return compression_; }
    double total_weight() const { return total_weight_; }
    double min() const { return min_; }
    double max() const { return max_; }
    bool empty() const { return total_weight_ == 0.0; }
    // Centroids of the compressed state; call compress() first to include
    // buffered points.
    const std::vector<Centroid>& centroids() const { return centroids_; }
    std::size_t buffered() const { return buffer_.size(); }

    // Binary form: f64 compression, f64 min, f64 max, u32 n, n x (f64 mean,
    // f64 weight), little-endian. The digest is compressed first.
    std::string to_bytes() const;
    static TDigest from_bytes(std::string_view bytes);

    // Compares compressed state.
    friend bool operator==(const TDigest& a, const TDigest& b);

private:
    double scale_k(double q) const;
    double scale_q(double k) const;
    void fold(std::vector<Centroid>& points);

    double compression_;
    std::vector<Centroid> centroids_;
    std::vector<Centroid> buffer_;
    double total_weight_ = 0.0;
    double min_ = 0.0;
    double max_ = 0.0;
};

}  // namespace foundry::stats
