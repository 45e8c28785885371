#include "foundry/geometry.hpp"

#include <Eigen/Geometry>

#include <string>

namespace foundry::geometry {

bool Rotation3::is_valid(const Eigen::Matrix3d& m, double tol) {
    if (!m.allFinite()) return false;
    double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).norm();
    double det = m.determinant();
    return ortho < tol && std::abs(det - 1.0) <= tol;
}

Rotation3 Rotation3::from_matrix(const Eigen::Matrix3d& m) {
    if (!is_valid(m)) throw Error("matrix is not a proper rotation (orthonormal with det +1)");
    return Rotation3(m);
}

Rotation3 Rotation3::about_axis(const Eigen::Vector3d& axis, double angle_rad) {
    return Rotation3(Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix());
}

Rotation3 gram_schmidt_decode(const Rotation6& r6) {
    Eigen::Vector3d a1(r6[0], r6[1], r6[2]);
    Eigen::Vector3d a2(r6[3], r6[4], r6[5]);
    if (!a1.allFinite() || !a2.allFinite()) throw DegenerateRotationError("6D rotation has non-finite entries");
    double n1 = a1.norm();
    if (n1 < kDegenerateTolerance) throw DegenerateRotationError("6D rotation: first column has zero norm");
    Eigen::Vector3d b1 = a1 / n1;
    Eigen::Vector3d residual = a2 - b1.dot(a2) * b1;
    double n2 = residual.norm();
    if (n2 < kDegenerateTolerance)
        throw DegenerateRotationError("6D rotation: second column is parallel to the first");
    Eigen::Vector3d b2 = residual / n2;
    Eigen::Matrix3d m;
    m.col(0) = b1;
    m.col(1) = b2;
    m.col(2) = b1.cross(b2);
    return Rotation3::unchecked(m);
}

Rotation6 encode_6d(const Rotation3& r) {
    const auto& m = r.matrix();
    return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Pose compose(const Pose& a, const Pose& b) {
    const auto& ra = a.rotation.matrix();
    return Pose{Rotation3::unchecked(ra * b.rotation.matrix()), ra * b.translation + a.translation};
}

Pose inverse(const Pose& a) {
    Eigen::Matrix3d rt = a.rotation.matrix().transpose();
    return Pose{Rotation3::unchecked(rt), -(rt * a.translation)};
}

Pose relative_action(const Pose& t_ref, const Pose& t_t) {
    Eigen::Matrix3d rt = t_ref.rotation.matrix().transpose();
    // Equal rotations give the identity exactly, not R^T R with rounding noise.
    Eigen::Matrix3d r = t_ref.rotation.matrix() == t_t.rotation.matrix() ? Eigen::Matrix3d::Identity().eval()
                                                                           : (rt * t_t.rotation.matrix()).eval();
    return Pose{Rotation3::unchecked(r), rt * (t_t.translation - t_ref.translation)};
}

Pose absolute_from_relative(const Pose& t_ref, const Pose& rel) { return compose(t_ref, rel); }

double pose_distance(const Pose& a, const Pose& b) {
    double dr = (a.rotation.matrix() - b.rotation.matrix()).squaredNorm();
    double dt = (a.translation - b.translation).squaredNorm();
    return std::sqrt(dr + dt);
}

void encode_pose(const Pose& pose, std::span<double> out) {
    if (out.size() != kPoseWidth) throw ShapeError("pose slot must hold 9 values");
    out[0] = pose.translation.x();
    out[1] = pose.translation.y();
    out[2] = pose.translation.z();
    auto r6 = encode_6d(pose.rotation);
    std::copy(r6.begin(), r6.end(), out.begin() + 3);
}

Pose decode_pose(std::span<const double> in) {
    if (in.size() != kPoseWidth) throw ShapeError("pose slot must hold 9 values");
    Rotation6 r6;
    std::copy(in.begin() + 3, in.end(), r6.begin());
    return Pose{gram_schmidt_decode(r6), Eigen::Vector3d(in[0], in[1], in[2])};
}

std::vector<double> encode_poses(std::span<const Pose> poses) {
    std::vector<double> out(poses.size() * kPoseWidth);
    for (std::size_t i = 0; i < poses.size(); ++i)
        encode_pose(poses[i], std::span<double>(out).subspan(i * kPoseWidth, kPoseWidth));
    return out;
}

std::vector<Pose> decode_poses(std::span<const double> flat) {
    if (flat.size() % kPoseWidth != 0)
        throw ShapeError("action vector length " + std::to_string(flat.size()) + " is not a multiple of 9");
    std::vector<Pose> out;
    out.reserve(flat.size() / kPoseWidth);
    for (std::size_t i = 0; i < flat.size(); i += kPoseWidth) out.push_back(decode_pose(flat.subspan(i, kPoseWidth)));
    return out;
}

}  // namespace foundry::geometry
