#include <doctest.h>

#include <cmath>
#include <random>

#include "foundry/geometry.hpp"
#include "testing.hpp"

using namespace foundry::geometry;
using foundry::testing::random_pose;
using foundry::testing::random_rotation_matrix;

namespace {

double frob(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) { return (a - b).norm(); }

Pose rotz90() {
    Pose p;
    p.rotation = Rotation3::about_axis(Eigen::Vector3d::UnitZ(), M_PI / 2);
    p.translation = {1.0, -2.0, 0.5};
    return p;
}

}  // namespace

TEST_CASE("decode of canonical encodings") {
    CHECK(frob(gram_schmidt_decode({1, 0, 0, 0, 1, 0}).matrix(), Eigen::Matrix3d::Identity()) < 1e-15);

    Eigen::Matrix3d expect;
    expect << 0, -1, 0,
              1, 0, 0,
              0, 0, 1;
    CHECK(frob(gram_schmidt_decode({0, 2, 0, -3, 0, 0}).matrix(), expect) < 1e-15);
}

TEST_CASE("encode takes the first two columns") {
    Rotation6 id = encode_6d(Rotation3());
    CHECK(id == Rotation6{1, 0, 0, 0, 1, 0});
    Rotation6 z = encode_6d(Rotation3::about_axis(Eigen::Vector3d::UnitZ(), M_PI / 2));
    Rotation6 want{0, 1, 0, -1, 0, 0};
    for (int i = 0; i < 6; ++i) CHECK(std::abs(z[i] - want[i]) < 1e-15);
}

TEST_CASE("degenerate encodings are rejected") {
    CHECK_THROWS_AS(gram_schmidt_decode({0, 0, 0, 0, 1, 0}), DegenerateRotationError);
    CHECK_THROWS_AS(gram_schmidt_decode({1, 0, 0, 2, 0, 0}), DegenerateRotationError);
    CHECK_THROWS_AS(gram_schmidt_decode({1e-13, 0, 0, 0, 1, 0}), DegenerateRotationError);
}

TEST_CASE("from_matrix validates") {
    Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
    reflect(2, 2) = -1;
    CHECK_THROWS(Rotation3::from_matrix(reflect));
    CHECK_THROWS(Rotation3::from_matrix(2.0 * Eigen::Matrix3d::Identity()));
    CHECK_NOTHROW(Rotation3::from_matrix(Eigen::Matrix3d::Identity()));
}

TEST_CASE("round trip through 6D on random rotations") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        Eigen::Matrix3d r = random_rotation_matrix(rng);
        auto back = gram_schmidt_decode(encode_6d(Rotation3::from_matrix(r)));
        REQUIRE(frob(back.matrix(), r) < 1e-9);
    }
}

TEST_CASE("decode output is always a proper rotation") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 3.0);
    for (int i = 0; i < 100000; ++i) {
        Rotation6 v;
        for (double& x : v) x = g(rng);
        auto m = gram_schmidt_decode(v).matrix();
        REQUIRE((m.transpose() * m - Eigen::Matrix3d::Identity()).norm() < 1e-9);
        REQUIRE(std::abs(m.determinant() - 1.0) < 1e-9);
    }
}

TEST_CASE("compose and inverse") {
    auto b = rotz90();
    CHECK(pose_distance(compose(Pose::identity(), b), b) == 0.0);
    CHECK(pose_distance(inverse(Pose::identity()), Pose::identity()) == 0.0);

    std::mt19937_64 rng(13);
    for (int i = 0; i < 1000; ++i) {
        auto a = random_pose(rng);
        REQUIRE(pose_distance(compose(inverse(a), a), Pose::identity()) < 1e-9);
        REQUIRE(pose_distance(compose(a, inverse(a)), Pose::identity()) < 1e-9);
    }
}

TEST_CASE("compose follows the group law by hand") {
    auto a = rotz90();
    Pose b;
    b.translation = {1, 0, 0};
    auto c = compose(a, b);
    // R_a * (1,0,0) = (0,1,0), plus t_a.
    CHECK(c.translation.isApprox(Eigen::Vector3d(1.0, -1.0, 0.5), 1e-15));
    CHECK(frob(c.rotation.matrix(), a.rotation.matrix()) < 1e-15);
}

TEST_CASE("relative action") {
    auto t = rotz90();
    CHECK(pose_distance(relative_action(t, t), Pose::identity()) < 1e-12);
    CHECK(pose_distance(relative_action(Pose::identity(), t), t) < 1e-15);
    CHECK(pose_distance(absolute_from_relative(t, Pose::identity()), t) < 1e-15);
    CHECK(pose_distance(absolute_from_relative(Pose::identity(), t), t) < 1e-15);

    std::mt19937_64 rng(14);
    for (int i = 0; i < 1000; ++i) {
        auto ref = random_pose(rng);
        auto tt = random_pose(rng);
        auto rel = relative_action(ref, tt);
        REQUIRE(pose_distance(compose(ref, rel), tt) < 1e-9);
        REQUIRE(pose_distance(absolute_from_relative(ref, rel), tt) < 1e-9);
    }
}

TEST_CASE("relative action of a pose with itself is exactly the identity") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 1000; ++i) {
        auto t = random_pose(rng);
        auto rel = relative_action(t, t);
        REQUIRE(rel.rotation.matrix() == Eigen::Matrix3d::Identity());
        REQUIRE(rel.translation == Eigen::Vector3d::Zero());
    }
}

TEST_CASE("relative action is left-equivariant") {
    std::mt19937_64 rng(15);
    for (int i = 0; i < 1000; ++i) {
        auto g = random_pose(rng), a = random_pose(rng), b = random_pose(rng);
        auto lhs = relative_action(compose(g, a), compose(g, b));
        REQUIRE(pose_distance(lhs, relative_action(a, b)) < 1e-9);
    }
}

TEST_CASE("encoding is continuous") {
    std::mt19937_64 rng(16);
    for (int i = 0; i < 1000; ++i) {
        Eigen::Matrix3d r = random_rotation_matrix(rng);
        Eigen::Vector3d axis = random_rotation_matrix(rng).col(0);
        Eigen::Matrix3d r2 = Rotation3::about_axis(axis, 1e-4).matrix() * r;
        double eps = frob(r, r2);
        auto e1 = encode_6d(Rotation3::from_matrix(r));
        auto e2 = encode_6d(Rotation3::from_matrix(r2));
        double d = 0;
        for (int k = 0; k < 6; ++k) d += (e1[k] - e2[k]) * (e1[k] - e2[k]);
        REQUIRE(std::sqrt(d) <= eps + 1e-15);
    }
}

TEST_CASE("action vector layout") {
    auto p = rotz90();
    auto flat = encode_poses(std::vector<Pose>{Pose::identity(), p});
    REQUIRE(flat.size() == 2 * kPoseWidth);
    std::vector<double> first(flat.begin(), flat.begin() + 9);
    CHECK(first == std::vector<double>{0, 0, 0, 1, 0, 0, 0, 1, 0});
    CHECK(flat[9] == 1.0);
    CHECK(flat[10] == -2.0);
    CHECK(flat[11] == 0.5);

    auto back = decode_poses(flat);
    REQUIRE(back.size() == 2);
    CHECK(pose_distance(back[1], p) < 1e-12);
    CHECK_THROWS(decode_poses(std::vector<double>(10, 0.0)));
}
