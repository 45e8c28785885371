#pragma once

// Row-major 2-D arrays (timesteps x features) and the `.bin` tensor payload.
//
// `.bin` layout, all integers little-endian:
//   bytes 0..3   magic "FTNS"
//   byte  4      dtype: 1 = float32, 2 = float64
//   byte  5      rank (0..8)
//   bytes 6..7   zero
//   rank x u64   shape
//   data         row-major, little-endian IEEE-754

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace foundry {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DType : std::uint8_t { float32 = 1, float64 = 2 };

struct Tensor {
    DType dtype = DType::float64;
    std::vector<std::uint64_t> shape;
    std::vector<double> data;  // widened to double for float32 payloads

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes);

// 2-D helpers. A rank-1 tensor decodes as a single row.
std::string encode_matrix(const RowMatrix& m, DType dtype = DType::float64);
RowMatrix decode_matrix(std::string_view bytes);

// Exact element-wise equality; matrices of different shapes compare unequal.
inline bool same_matrix(const RowMatrix& a, const RowMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

}  // namespace foundry
