#include "foundry/preprocess.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <thread>

#include <json.hpp>

#include "foundry/geometry.hpp"
#include "foundry/prng.hpp"

namespace foundry::shardstore {

PoseFieldGroup PoseFieldGroup::parse(std::string_view text) {
    PoseFieldGroup g;
    auto a = text.find(':');
    auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
    if (b == std::string_view::npos || text.find(':', b + 1) != std::string_view::npos)
        throw ConfigError("pose field group '" + std::string(text) + "' is not action:reference:output");
    g.action = text.substr(0, a);
    g.reference = text.substr(a + 1, b - a - 1);
    g.output = text.substr(b + 1);
    if (g.action.empty() || g.reference.empty() || g.output.empty())
        throw ConfigError("pose field group '" + std::string(text) + "' has an empty part");
    return g;
}

void add_relative_fields(windowing::Sample& s, const windowing::Episode& ep, const windowing::WindowSpec& spec,
                         const std::vector<PoseFieldGroup>& groups) {
    if (groups.empty()) return;
    const auto rows = windowing::window_rows(ep.length(), s.anchor_t, spec);
    constexpr auto kW = static_cast<Eigen::Index>(geometry::kPoseWidth);
    for (const auto& g : groups) {
        auto field = [&](const std::string& name) -> const RowMatrix& {
            auto it = ep.lowdim.find(name);
            if (it == ep.lowdim.end()) throw DataError("pose group needs field '" + name + "'");
            if (it->second.cols() == 0 || it->second.cols() % kW != 0)
                throw ShapeError("pose field '" + name + "' width " + std::to_string(it->second.cols()) +
                                 " is not a multiple of 9");
            return it->second;
        };
        const RowMatrix& act = field(g.action);
        const RowMatrix& ref = field(g.reference);
        const Eigen::Index slots = act.cols() / kW;
        const Eigen::Index ref_slots = ref.cols() / kW;
        if (ref_slots != 1 && ref_slots != slots)
            throw ShapeError("reference field '" + g.reference + "' has " + std::to_string(ref_slots) +
                             " poses, action field '" + g.action + "' has " + std::to_string(slots));
        if (s.lowdim.count(g.output)) throw DataError("relative output field '" + g.output + "' already exists");

        const auto anchor = static_cast<Eigen::Index>(s.anchor_t);
        std::vector<geometry::Pose> refs;
        for (Eigen::Index k = 0; k < ref_slots; ++k)
            refs.push_back(geometry::decode_pose(std::span<const double>(ref.row(anchor).data() + k * kW, kW)));

        RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(rows.size()), act.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (!rows[r]) continue;
            const double* src = act.row(static_cast<Eigen::Index>(*rows[r])).data();
            double* dst = out.row(static_cast<Eigen::Index>(r)).data();
            for (Eigen::Index k = 0; k < slots; ++k) {
                auto pose = geometry::decode_pose(std::span<const double>(src + k * kW, kW));
                auto rel = geometry::relative_action(refs[ref_slots == 1 ? 0 : k], pose);
                geometry::encode_pose(rel, std::span<double>(dst + k * kW, kW));
            }
        }
        s.lowdim.emplace(g.output, std::move(out));
    }
}

std::string sample_key(const std::string& episode_id, std::size_t anchor) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%06zu", anchor);
    return episode_id + buf;
}

SampleRecord encode_sample(const windowing::Sample& s, const windowing::Episode& ep) {
    SampleRecord r;
    r.key = sample_key(s.episode_id, s.anchor_t);
    nlohmann::json frames = nlohmann::json::object();
    for (const auto& [cam, idx] : s.image_frames) {
        const auto& stream = ep.images.at(cam);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            std::string field = idx.size() == 1 ? cam : cam + "-" + std::to_string(k);
            r.files.push_back({field, stream.ext, stream.frames.at(idx[k])});
        }
        frames[cam] = idx;
    }
    for (const auto& [name, m] : s.lowdim) r.files.push_back({name, "bin", encode_matrix(m)});
    nlohmann::json meta = {
        {"episode_id", s.episode_id},   {"task", s.task},
        {"anchor_t", s.anchor_t},       {"anchor_relative_idx", s.anchor_relative_idx},
        {"n_past", s.n_past},           {"n_future", s.n_future},
        {"pad_left", s.pad_left},       {"pad_right", s.pad_right},
        {"image_frames", frames},
    };
    r.files.push_back({"meta", "json", meta.dump()});
    for (const auto& f : r.files) {
        if (!valid_field_name(f.field))
            throw DataError("field name '" + f.field + "' must be alphanumeric (no underscore or dot); rename it");
    }
    return r;
}

windowing::Sample decode_sample(const SampleRecord& r) {
    windowing::Sample s;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.at("meta").bytes);
        s.episode_id = meta.at("episode_id").get<std::string>();
        s.task = meta.at("task").get<std::string>();
        s.anchor_t = meta.at("anchor_t").get<std::size_t>();
        s.anchor_relative_idx = meta.at("anchor_relative_idx").get<std::size_t>();
        s.n_past = meta.at("n_past").get<std::size_t>();
        s.n_future = meta.at("n_future").get<std::size_t>();
        s.pad_left = meta.at("pad_left").get<std::size_t>();
        s.pad_right = meta.at("pad_right").get<std::size_t>();
        if (meta.contains("image_frames"))
            s.image_frames = meta["image_frames"].get<std::map<std::string, std::vector<std::size_t>>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("sample '" + r.key + "' meta.json: " + e.what());
    }
    for (const auto& f : r.files) {
        if (f.ext == "bin") s.lowdim.emplace(f.field, decode_matrix(f.bytes));
    }
    return s;
}

std::vector<std::vector<std::string>> group_into_shards(std::vector<std::string> keys, std::size_t shard_size,
                                                        std::uint64_t seed) {
    if (shard_size < 1) throw ConfigError("shard_size must be >= 1");
    std::sort(keys.begin(), keys.end());
    Prng rng(seed, 0, "shards");
    seeded_shuffle(keys, rng);
    std::vector<std::vector<std::string>> out;
    for (std::size_t i = 0; i < keys.size(); i += shard_size)
        out.emplace_back(keys.begin() + static_cast<long>(i),
                         keys.begin() + static_cast<long>(std::min(keys.size(), i + shard_size)));
    return out;
}

namespace {

struct WorkerResult {
    std::map<std::string, stats::FieldAccumulator> accumulators;
    std::vector<std::string> keys;
    std::size_t episodes = 0;
    std::exception_ptr error;
};

void run_worker(const PreprocessSpec& spec, const Converter& conv, const std::vector<std::string>& ids, std::size_t w,
                std::size_t n_workers, Storage& out, WorkerResult& res) {
    const auto window = static_cast<Eigen::Index>(spec.encoding.window.window_length());
    for (std::size_t i = w; i < ids.size(); i += n_workers) {
        const std::string& id = ids[i];
        try {
            windowing::Episode ep = conv.read_episode(id);
            ep.validate();
            for (const auto* list : {&spec.action_fields, &spec.proprioception_fields}) {
                for (const auto& f : *list) {
                    bool generated = std::any_of(spec.encoding.pose_groups.begin(), spec.encoding.pose_groups.end(),
                                                 [&](const PoseFieldGroup& g) { return g.output == f; });
                    if (!generated && !ep.lowdim.count(f)) throw DataError("missing field '" + f + "'");
                }
            }
            auto samples = conv.emit_samples(ep, spec.encoding);
            std::vector<SampleRecord> records;
            records.reserve(samples.size());
            for (const auto& s : samples) {
                for (const auto& [name, m] : s.lowdim) {
                    auto it = res.accumulators.find(name);
                    if (it == res.accumulators.end())
                        it = res.accumulators
                                 .emplace(name, stats::FieldAccumulator(name, window, m.cols(), true,
                                                                        spec.tdigest_compression))
                                 .first;
                    try {
                        it->second.add(m);
                    } catch (const Error& e) {
                        throw DataError("field '" + name + "': " + e.what());
                    }
                }
                records.push_back(encode_sample(s, ep));
                out.write("frames/" + records.back().key + ".tar", write_shard(std::span(&records.back(), 1)));
                res.keys.push_back(records.back().key);
            }
            if (!records.empty()) out.write("episodes/" + id + ".tar", write_shard(records));
            ++res.episodes;
        } catch (const std::exception& e) {
            res.error = std::make_exception_ptr(Error("episode '" + id + "': " + e.what()));
            return;
        }
    }
}

}  // namespace

PreprocessResult preprocess(const PreprocessSpec& spec, Storage& out, const ConverterRegistry& registry) {
    if (spec.shard_size < 1) throw ConfigError("shard_size must be >= 1");
    if (spec.workers < 1) throw ConfigError("workers must be >= 1");
    auto conv = registry.create(spec.converter, spec.input);
    auto ids = conv->list_episodes();
    std::sort(ids.begin(), ids.end());

    const std::size_t n_workers = std::min(spec.workers, std::max<std::size_t>(ids.size(), 1));
    std::vector<WorkerResult> results(n_workers);
    if (n_workers == 1) {
        run_worker(spec, *conv, ids, 0, 1, out, results[0]);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < n_workers; ++w)
            threads.emplace_back(run_worker, std::cref(spec), std::cref(*conv), std::cref(ids), w, n_workers,
                                 std::ref(out), std::ref(results[w]));
        for (auto& t : threads) t.join();
    }
    for (const auto& r : results) {
        if (r.error) std::rethrow_exception(r.error);
    }

    // Reduce: merge worker-local statistics in worker order.
    PreprocessResult result;
    std::map<std::string, stats::FieldAccumulator> merged;
    std::vector<std::string> keys;
    for (auto& r : results) {
        result.episodes += r.episodes;
        keys.insert(keys.end(), r.keys.begin(), r.keys.end());
        for (auto& [name, acc] : r.accumulators) {
            auto it = merged.find(name);
            if (it == merged.end()) {
                merged.emplace(name, std::move(acc));
                continue;
            }
            try {
                it->second.merge(acc);
            } catch (const Error& e) {
                throw ShapeError("field '" + name + "' differs between episodes: " + e.what());
            }
        }
    }
    result.samples = keys.size();
    result.stats.sample_count = keys.size();
    result.stats.scope = stats::Scope::per_timestep;
    result.stats.window = stats::WindowShape{spec.encoding.window.n_past, spec.encoding.window.n_future};
    for (const auto& [name, acc] : merged) result.stats.fields.emplace(name, acc.finalize());

    // Stage 3.
    auto groups = group_into_shards(std::move(keys), spec.shard_size, spec.seed);
    for (std::size_t id = 0; id < groups.size(); ++id) {
        std::vector<SampleRecord> records;
        records.reserve(groups[id].size());
        for (const auto& key : groups[id]) {
            auto one = read_shard(out.read("frames/" + key + ".tar"));
            records.push_back(std::move(one.at(0)));
        }
        out.write("shards/" + shard_file_name(id), write_shard(records));
        result.manifest.push_back({shard_id(id), records.size()});
    }
    out.write("shards/manifest.jsonl", write_manifest(result.manifest));
    out.write("shards/stats.json", stats::serialize_stats(result.stats));
    return result;
}

}  // namespace foundry::shardstore
