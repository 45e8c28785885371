#include "foundry/tensor.hpp"

#include <bit>
#include <cstring>

#include "foundry/error.hpp"

namespace foundry {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'N', 'S'};

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get_le(std::string_view bytes, std::size_t& pos) {
    if (bytes.size() - pos < sizeof(T)) throw FormatError("tensor payload truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
    if (t.shape.size() > 8) throw FormatError("tensor rank exceeds 8");
    std::uint64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.data.size()) throw ShapeError("tensor data does not match its shape");
    std::string out(kMagic, 4);
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.shape.size()));
    out.append(2, '\0');
    for (auto d : t.shape) put_le<std::uint64_t>(out, d);
    out.reserve(out.size() + n * (t.dtype == DType::float32 ? 4 : 8));
    for (double v : t.data) {
        if (t.dtype == DType::float32) {
            put_le<float>(out, static_cast<float>(v));
        } else {
            put_le<double>(out, v);
        }
    }
    return out;
}

Tensor decode_tensor(std::string_view bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a tensor payload");
    Tensor t;
    auto dtype = static_cast<std::uint8_t>(bytes[4]);
    if (dtype != 1 && dtype != 2) throw FormatError("unknown tensor dtype " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    auto rank = static_cast<std::uint8_t>(bytes[5]);
    if (rank > 8) throw FormatError("tensor rank exceeds 8");
    std::size_t pos = 8;
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
        t.shape.push_back(get_le<std::uint64_t>(bytes, pos));
        n *= t.shape.back();
    }
    std::size_t width = t.dtype == DType::float32 ? 4 : 8;
    if ((bytes.size() - pos) != n * width) throw FormatError("tensor payload size does not match its shape");
    t.data.resize(n);
    for (auto& v : t.data) v = t.dtype == DType::float32 ? get_le<float>(bytes, pos) : get_le<double>(bytes, pos);
    return t;
}

std::string encode_matrix(const RowMatrix& m, DType dtype) {
    Tensor t{dtype, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
             std::vector<double>(m.data(), m.data() + m.size())};
    return encode_tensor(t);
}

RowMatrix decode_matrix(std::string_view bytes) {
    Tensor t = decode_tensor(bytes);
    Eigen::Index rows = 0, cols = 0;
    if (t.shape.size() == 2) {
        rows = static_cast<Eigen::Index>(t.shape[0]);
        cols = static_cast<Eigen::Index>(t.shape[1]);
    } else if (t.shape.size() == 1) {
        rows = 1;
        cols = static_cast<Eigen::Index>(t.shape[0]);
    } else {
        throw ShapeError("expected a rank-1 or rank-2 tensor, got rank " + std::to_string(t.shape.size()));
    }
    RowMatrix m(rows, cols);
    std::copy(t.data.begin(), t.data.end(), m.data());
    return m;
}

}  // namespace foundry
