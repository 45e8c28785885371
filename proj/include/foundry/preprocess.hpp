#pragma once

// Raw episodes -> window samples -> tar shards.
//
// Output layout under the storage root:
//   frames/{episode}_{anchor:06d}.tar   one sample per tar
//   episodes/{episode}.tar              all samples of an episode
//   shards/shard_{id:08d}.tar           shard_size samples, seeded grouping
//   shards/manifest.jsonl
//   shards/stats.json                   per-timestep statistics

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "foundry/shardstore.hpp"
#include "foundry/stats.hpp"
#include "foundry/windowing.hpp"

namespace foundry::shardstore {

// output = relative_action(reference at the anchor row, action row), slot by
// slot. Fields hold 9-wide pose slots; a single reference slot is shared by
// every action slot.
struct PoseFieldGroup {
    std::string action;
    std::string reference;
    std::string output;

    // "action:reference:output"
    static PoseFieldGroup parse(std::string_view text);
};

struct SampleEncoding {
    windowing::WindowSpec window;
    std::vector<PoseFieldGroup> pose_groups;
};

// Adds the relative fields of `groups` to a window sample.
void add_relative_fields(windowing::Sample& s, const windowing::Episode& ep, const windowing::WindowSpec& spec,
                         const std::vector<PoseFieldGroup>& groups);

std::string sample_key(const std::string& episode_id, std::size_t anchor);

// Images first (sorted by camera), then numeric fields as `.bin`, then
// meta.json. With several image offsets the camera field becomes
// `{camera}-{k}` for the k-th offset.
SampleRecord encode_sample(const windowing::Sample& s, const windowing::Episode& ep);
// Numeric fields and metadata; image bytes stay in the record.
windowing::Sample decode_sample(const SampleRecord& r);

struct ConverterParams {
    std::filesystem::path input;
    std::map<std::string, std::string> options;
};

class Converter {
public:
    virtual ~Converter() = default;
    virtual std::vector<std::string> discover_cameras() const = 0;
    // Episode ids in a stable order.
    virtual std::vector<std::string> list_episodes() const = 0;
    virtual windowing::Episode read_episode(const std::string& id) const = 0;

    std::vector<windowing::Episode> read_episodes() const;
    // Window samples of one episode, relative fields included.
    virtual std::vector<windowing::Sample> emit_samples(const windowing::Episode& ep, const SampleEncoding& enc) const;
};

using ConverterFactory = std::function<std::unique_ptr<Converter>(const ConverterParams&)>;

class ConverterRegistry {
public:
    void register_converter(const std::string& name, ConverterFactory factory);
    std::unique_ptr<Converter> create(const std::string& name, const ConverterParams& params) const;
    std::vector<std::string> names() const;
    bool contains(const std::string& name) const { return factories_.count(name) > 0; }

    // Process-wide registry with the built-in converters registered.
    static ConverterRegistry& global();

private:
    std::map<std::string, ConverterFactory> factories_;
};

void register_builtin_converters(ConverterRegistry& registry);

// generic_episode: <input>/<episode>/episode.json ({"task": ...}),
// <field>.bin numeric files, <camera>/<t:06d>.<ext> frames.
// csv_episode: <input>/<episode>.csv; optional "# task: ..." first line, then
// a header of `field[i]` (or bare `field`) columns and one row per timestep.
std::unique_ptr<Converter> make_generic_episode_converter(const ConverterParams& params);
std::unique_ptr<Converter> make_csv_episode_converter(const ConverterParams& params);

// Writers for the two input formats, used by tests and fixtures.
void write_generic_episode(const std::filesystem::path& root, const windowing::Episode& ep);
void write_csv_episode(const std::filesystem::path& root, const windowing::Episode& ep);

struct PreprocessSpec {
    std::string converter = "generic_episode";
    ConverterParams input;
    SampleEncoding encoding;
    std::vector<std::string> action_fields;
    std::vector<std::string> proprioception_fields;
    std::size_t shard_size = 1024;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    double tdigest_compression = 100.0;
};

struct PreprocessResult {
    std::size_t episodes = 0;
    std::size_t samples = 0;
    std::vector<ManifestEntry> manifest;
    stats::DatasetStats stats;
};

PreprocessResult preprocess(const PreprocessSpec& spec, Storage& out,
                            const ConverterRegistry& registry = ConverterRegistry::global());

// Stage 3 grouping: keys sorted, shuffled with Prng(seed, 0, "shards"),
// then cut into chunks of shard_size.
std::vector<std::vector<std::string>> group_into_shards(std::vector<std::string> keys, std::size_t shard_size,
                                                        std::uint64_t seed);

}  // namespace foundry::shardstore
