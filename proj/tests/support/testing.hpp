#pragma once

// Shared fixtures for the test binaries: scratch directories, seeded random
// inputs and small file helpers.

#include <Eigen/Dense>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "foundry/geometry.hpp"

namespace foundry::testing {

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "foundry-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Haar-ish random rotation: QR of a Gaussian matrix, signs fixed so the
// diagonal of R is positive, then flipped to det +1.
inline Eigen::Matrix3d random_rotation_matrix(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Matrix3d a;
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = g(rng);
    Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
    Eigen::Matrix3d q = qr.householderQ();
    Eigen::Matrix3d r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < 3; ++i) {
        if (r(i, i) < 0) q.col(i) *= -1.0;
    }
    if (q.determinant() < 0) q.col(2) *= -1.0;
    return q;
}

inline geometry::Pose random_pose(std::mt19937_64& rng, double translation_scale = 2.0) {
    std::uniform_real_distribution<double> u(-translation_scale, translation_scale);
    geometry::Pose p;
    p.rotation = geometry::Rotation3::from_matrix(random_rotation_matrix(rng));
    p.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
    return p;
}

}  // namespace foundry::testing
