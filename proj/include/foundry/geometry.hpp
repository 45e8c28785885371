#pragma once

// SE(3) poses, the 6D continuous rotation encoding, and absolute <-> relative
// action conversion. Rotations are full matrices internally; the 6D form only
// exists at serialization boundaries.

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

#include "foundry/error.hpp"

namespace foundry::geometry {

class DegenerateRotationError : public Error {
public:
    using Error::Error;
};

inline constexpr double kOrthonormalTolerance = 1e-9;
inline constexpr double kDegenerateTolerance = 1e-12;

class Rotation3 {
public:
    Rotation3() : m_(Eigen::Matrix3d::Identity()) {}

    // Checks orthonormality and det = +1 within kOrthonormalTolerance.
    static Rotation3 from_matrix(const Eigen::Matrix3d& m);
    // Skips validation; for products of already-valid rotations.
    static Rotation3 unchecked(const Eigen::Matrix3d& m) { return Rotation3(m); }

    static Rotation3 about_axis(const Eigen::Vector3d& axis, double angle_rad);

    const Eigen::Matrix3d& matrix() const { return m_; }

    static bool is_valid(const Eigen::Matrix3d& m, double tol = kOrthonormalTolerance);

private:
    explicit Rotation3(const Eigen::Matrix3d& m) : m_(m) {}
    Eigen::Matrix3d m_;
};

// First two columns of a rotation matrix: a1 = v[0..3], a2 = v[3..6].
using Rotation6 = std::array<double, 6>;

struct Pose {
    Rotation3 rotation;
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // meters

    static Pose identity() { return Pose{}; }
};

Rotation3 gram_schmidt_decode(const Rotation6& r6);
Rotation6 encode_6d(const Rotation3& r);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

// T_ref^-1 * T_t: the pose t_t expressed in the frame of t_ref.
Pose relative_action(const Pose& t_ref, const Pose& t_t);
Pose absolute_from_relative(const Pose& t_ref, const Pose& rel);

// Frobenius distance between two poses' rotation and translation parts.
double pose_distance(const Pose& a, const Pose& b);

// Action vectors: 9 values per pose, [x, y, z, r6[0..6]]. Multi-pose records
// concatenate poses (left arm first for bimanual data).
inline constexpr std::size_t kPoseWidth = 9;

std::vector<double> encode_poses(std::span<const Pose> poses);
std::vector<Pose> decode_poses(std::span<const double> flat);

void encode_pose(const Pose& pose, std::span<double> out);
Pose decode_pose(std::span<const double> in);

}  // namespace foundry::geometry
