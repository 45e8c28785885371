#pragma once

// Synthetic robot episodes and an in-memory converter for pipeline tests.

#include <cstdio>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "foundry/geometry.hpp"
#include "foundry/preprocess.hpp"
#include "testing.hpp"

namespace foundry::testing {

inline std::string episode_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ep%05zu", i);
    return buf;
}

// Fields: eepose (T x 9, a smooth pose trajectory), joints (T x 7),
// gripper (T x 1) and one camera with T tiny fake JPEG payloads.
inline windowing::Episode synthetic_episode(const std::string& id, std::size_t T, std::uint64_t seed,
                                            bool with_images = true) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    windowing::Episode ep;
    ep.id = id;
    ep.task = "task" + std::to_string(seed % 4);
    const auto rows = static_cast<Eigen::Index>(T);

    RowMatrix pose(rows, 9);
    geometry::Pose p = random_pose(rng, 0.5);
    Eigen::Vector3d axis = random_rotation_matrix(rng).col(0);
    for (Eigen::Index t = 0; t < rows; ++t) {
        geometry::encode_pose(p, std::span<double>(pose.row(t).data(), 9));
        geometry::Pose step;
        step.rotation = geometry::Rotation3::about_axis(axis, 0.05);
        step.translation = Eigen::Vector3d(0.01 * g(rng), 0.01 * g(rng), 0.01 * g(rng));
        p = geometry::compose(p, step);
    }
    ep.lowdim["eepose"] = pose;

    RowMatrix joints(rows, 7);
    for (Eigen::Index i = 0; i < joints.size(); ++i) joints.data()[i] = g(rng);
    ep.lowdim["joints"] = joints;

    RowMatrix grip(rows, 1);
    for (Eigen::Index t = 0; t < rows; ++t) grip(t, 0) = (t / 5) % 2 ? 1.0 : 0.0;
    ep.lowdim["gripper"] = grip;

    if (with_images) {
        auto& cam = ep.images["camera1"];
        cam.ext = "jpg";
        for (std::size_t t = 0; t < T; ++t) cam.frames.push_back("\xFF\xD8" + id + "#" + std::to_string(t) + "\xFF\xD9");
    }
    return ep;
}

class MemoryConverter : public shardstore::Converter {
public:
    explicit MemoryConverter(std::vector<windowing::Episode> episodes) {
        for (auto& e : episodes) episodes_.emplace(e.id, std::move(e));
    }
    std::vector<std::string> discover_cameras() const override {
        std::vector<std::string> out;
        if (!episodes_.empty())
            for (const auto& [name, s] : episodes_.begin()->second.images) out.push_back(name);
        return out;
    }
    std::vector<std::string> list_episodes() const override {
        std::vector<std::string> out;
        for (const auto& [id, e] : episodes_) out.push_back(id);
        return out;
    }
    windowing::Episode read_episode(const std::string& id) const override { return episodes_.at(id); }

private:
    std::map<std::string, windowing::Episode> episodes_;
};

// Registry holding a "memory" converter over the given episodes.
inline shardstore::ConverterRegistry memory_registry(std::shared_ptr<const std::vector<windowing::Episode>> eps) {
    shardstore::ConverterRegistry reg;
    reg.register_converter("memory", [eps](const shardstore::ConverterParams&) {
        return std::make_unique<MemoryConverter>(*eps);
    });
    return reg;
}

// `n` episodes with lengths cycling through [min_len, max_len].
inline std::vector<windowing::Episode> synthetic_corpus(std::size_t n, std::size_t min_len, std::size_t max_len,
                                                        std::uint64_t seed, bool with_images = true) {
    std::vector<windowing::Episode> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t T = min_len + (i * 7919 + seed) % (max_len - min_len + 1);
        out.push_back(synthetic_episode(episode_name(i), T, seed * 1000003 + i, with_images));
    }
    return out;
}

}  // namespace foundry::testing
