#pragma once

// Streaming data pipeline: shard listing, deterministic shuffling,
// node/worker splitting, shard reading, weighted mixing and batching.
//
// Streams are pull functions returning std::nullopt at the end.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "foundry/error.hpp"
#include "foundry/prng.hpp"
#include "foundry/shardstore.hpp"

namespace foundry::mixer {

template <class T>
using Pull = std::function<std::optional<T>()>;

template <class T>
Pull<T> from_vector(std::vector<T> items) {
    return [items = std::move(items), i = std::size_t{0}]() mutable -> std::optional<T> {
        if (i >= items.size()) return std::nullopt;
        return items[i++];
    };
}

template <class T>
std::vector<T> drain(Pull<T> s, std::size_t limit = static_cast<std::size_t>(-1)) {
    std::vector<T> out;
    while (out.size() < limit) {
        auto x = s();
        if (!x) break;
        out.push_back(std::move(*x));
    }
    return out;
}

struct Topology {
    std::size_t node_rank = 0;
    std::size_t num_nodes = 1;
    std::size_t worker_id = 0;
    std::size_t num_workers = 1;
};

void check_topology(const Topology& t);

// Item i goes to node i mod num_nodes; the j-th survivor on a node goes to
// worker j mod num_workers.
template <class T>
std::vector<T> assign_shards(const std::vector<T>& shards, const Topology& t) {
    check_topology(t);
    std::vector<T> out;
    std::size_t j = 0;
    for (std::size_t i = 0; i < shards.size(); ++i) {
        if (i % t.num_nodes != t.node_rank) continue;
        if (j++ % t.num_workers == t.worker_id) out.push_back(shards[i]);
    }
    return out;
}

// Buffered shuffle. The buffer fills to `initial` before the first emission;
// each pull then emits a random slot (swapped with the last and popped) and
// refills. Generator: Prng(seed, epoch, role).
template <class T>
Pull<T> deterministic_shuffle(Pull<T> src, std::size_t bufsize, std::size_t initial, std::uint64_t seed,
                              std::uint64_t epoch, std::string_view role = "shuffle") {
    if (bufsize < 1) throw Error("shuffle buffer size must be >= 1");
    struct State {
        Pull<T> src;
        std::vector<T> buf;
        std::size_t bufsize;
        std::size_t initial;
        Prng rng;
        bool done = false;

        T pick() {
            auto k = static_cast<std::size_t>(rng.below(buf.size()));
            T out = std::move(buf[k]);
            if (k + 1 != buf.size()) buf[k] = std::move(buf.back());
            buf.pop_back();
            return out;
        }
    };
    auto st = std::make_shared<State>(State{std::move(src), {}, bufsize, std::min(initial, bufsize),
                                            Prng(seed, epoch, role)});
    return [st]() -> std::optional<T> {
        while (!st->done) {
            auto x = st->src();
            if (!x) {
                st->done = true;
                break;
            }
            st->buf.push_back(std::move(*x));
            if (st->buf.size() < st->bufsize) {
                if (auto y = st->src()) {
                    st->buf.push_back(std::move(*y));
                } else {
                    st->done = true;
                }
            }
            if (st->buf.size() >= st->initial) return st->pick();
        }
        if (st->buf.empty()) return std::nullopt;
        return st->pick();
    };
}

// Per-element weighted choice among streams. Each draw takes u = uniform()
// scaled by the live weight total and picks the first live stream whose
// cumulative weight exceeds u. A stream that runs dry is rebuilt at its next
// epoch; one that yields nothing even when fresh is dropped from the draw.
template <class T>
class Mixer {
public:
    using Factory = std::function<Pull<T>(std::uint64_t epoch)>;

    Mixer(std::vector<Factory> factories, std::vector<double> weights, std::uint64_t seed, std::uint64_t epoch)
        : factories_(std::move(factories)), weights_(std::move(weights)), rng_(seed, epoch, "mix") {
        if (factories_.empty()) throw Error("mixing needs at least one stream");
        if (factories_.size() != weights_.size())
            throw Error("mixing got " + std::to_string(factories_.size()) + " streams and " +
                        std::to_string(weights_.size()) + " weights");
        for (double w : weights_) {
            if (!(w > 0.0) || !std::isfinite(w)) throw Error("mixing weights must be positive and finite");
        }
        epochs_.assign(factories_.size(), epoch);
        live_.assign(factories_.size(), true);
        for (std::size_t k = 0; k < factories_.size(); ++k) streams_.push_back(factories_[k](epoch));
    }

    // (stream index, element)
    std::pair<std::size_t, T> next() {
        while (true) {
            double total = 0.0;
            for (std::size_t k = 0; k < weights_.size(); ++k) total += live_[k] ? weights_[k] : 0.0;
            if (total <= 0.0) throw DataError("all mixed streams are empty");
            const double u = rng_.uniform() * total;
            std::size_t pick = weights_.size();
            double cum = 0.0;
            for (std::size_t k = 0; k < weights_.size(); ++k) {
                if (!live_[k]) continue;
                cum += weights_[k];
                pick = k;
                if (u < cum) break;
            }
            if (auto x = streams_[pick]()) return {pick, std::move(*x)};
            streams_[pick] = factories_[pick](++epochs_[pick]);
            if (auto x = streams_[pick]()) return {pick, std::move(*x)};
            live_[pick] = false;
        }
    }

    std::uint64_t stream_epoch(std::size_t k) const { return epochs_.at(k); }

private:
    std::vector<Factory> factories_;
    std::vector<double> weights_;
    Prng rng_;
    std::vector<Pull<T>> streams_;
    std::vector<std::uint64_t> epochs_;
    std::vector<bool> live_;
};

// ---- pipeline ----

struct DatasetSpec {
    std::string manifest;
    std::string statistics;
    std::string modality;
    double weight = 1.0;
};

struct MixSpec {
    std::vector<DatasetSpec> datasets;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::size_t shuffle_buffer_size = 1000;
    std::size_t shuffle_initial = 100;

    void validate() const;
};

struct ShardRef {
    std::size_t dataset = 0;
    std::string location;  // shard tar path
    std::string shard;     // 8-digit id
    std::uint64_t num_sequences = 0;
};

struct Element {
    std::size_t dataset = 0;
    std::string modality;
    shardstore::SampleRecord record;
};

struct Batch {
    std::vector<Element> elements;
};

using Item = std::variant<ShardRef, Element, Batch>;
using Stream = Pull<Item>;

enum class ItemKind { shard = 0, element = 1, batch = 2 };
ItemKind kind_of(const Item& item);
std::string_view to_string(ItemKind k);

class StageError : public Error {
public:
    StageError(std::size_t index, const std::string& stage, const std::string& message)
        : Error("stage " + std::to_string(index) + " (" + stage + "): " + message), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

struct StageContext {
    const MixSpec* spec = nullptr;
    Topology topology;
    std::size_t stage_index = 0;
    std::size_t dataset = 0;  // per-dataset stages only
    std::uint64_t epoch = 0;
};

// A pipeline step. Stages before the mix stage run once per dataset; the mix
// stage joins the per-dataset streams; later stages run on the joined stream.
struct Stage {
    std::string name;
    ItemKind input = ItemKind::element;
    ItemKind output = ItemKind::element;
    std::function<Stream(Stream, const StageContext&)> apply;
    // Set only on mix stages: per-dataset stream factories (by epoch) -> joined stream.
    std::function<Stream(std::vector<std::function<Stream(std::uint64_t)>>, const StageContext&)> join;

    bool is_mix() const { return static_cast<bool>(join); }
};

using ShardLoader = std::function<std::vector<shardstore::SampleRecord>(const ShardRef&)>;

std::vector<shardstore::SampleRecord> load_local_shard(const ShardRef& ref);

Stage shuffle_stage(ItemKind kind, std::size_t bufsize, std::size_t initial);
Stage split_by_node_stage();
Stage split_by_worker_stage();
Stage read_shards_stage(ShardLoader loader = load_local_shard);
// Keeps only the listed fields of each record; a missing field is an error.
Stage select_stage(std::vector<std::string> fields);
Stage map_stage(std::string name, std::function<Element(Element)> fn);
Stage passthrough_stage();
Stage mix_stage();
Stage batched_stage(std::size_t batch_size);

// shuffle shards -> split_by_node -> split_by_worker -> read_shards ->
// shuffle samples -> mix -> batched(batch_size)
std::vector<Stage> default_stages(const MixSpec& spec, ShardLoader loader = load_local_shard);

// Shards of a dataset from its manifest; shard files live next to it.
std::vector<ShardRef> list_shards(const DatasetSpec& d, std::size_t dataset_index);

class Pipeline {
public:
    // Shard lists are given explicitly (one per dataset) or read from manifests.
    Pipeline(MixSpec spec, std::vector<Stage> stages, Topology topology = {});
    Pipeline(MixSpec spec, std::vector<Stage> stages, Topology topology, std::vector<std::vector<ShardRef>> shards);

    std::optional<Batch> next();

    struct State {
        std::uint64_t epoch = 0;
        std::uint64_t emitted = 0;
        friend bool operator==(const State&, const State&) = default;
    };
    State state() const { return {epoch_, emitted_}; }
    // Rebuilds the stream at state.epoch and skips state.emitted batches.
    void restore(const State& s);

private:
    struct Plan;
    void build(std::uint64_t epoch);

    std::shared_ptr<const Plan> plan_;
    Stream stream_;
    std::uint64_t epoch_ = 0;
    std::uint64_t emitted_ = 0;
};

}  // namespace foundry::mixer
