#include "foundry/mixer.hpp"

#include <filesystem>
#include <set>

namespace foundry::mixer {

void check_topology(const Topology& t) {
    if (t.num_nodes < 1 || t.num_workers < 1) throw Error("num_nodes and num_workers must be >= 1");
    if (t.node_rank >= t.num_nodes)
        throw Error("node_rank " + std::to_string(t.node_rank) + " out of range for " + std::to_string(t.num_nodes) +
                    " nodes");
    if (t.worker_id >= t.num_workers)
        throw Error("worker_id " + std::to_string(t.worker_id) + " out of range for " +
                    std::to_string(t.num_workers) + " workers");
}

void MixSpec::validate() const {
    if (datasets.empty()) throw ConfigError("no datasets to mix");
    for (const auto& d : datasets) {
        if (!(d.weight > 0.0) || !std::isfinite(d.weight))
            throw ConfigError("dataset weight for '" + d.manifest + "' must be positive");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (shuffle_buffer_size < 1) throw ConfigError("shuffle buffer size must be >= 1");
}

ItemKind kind_of(const Item& item) { return static_cast<ItemKind>(item.index()); }

std::string_view to_string(ItemKind k) {
    switch (k) {
        case ItemKind::shard: return "shard";
        case ItemKind::element: return "sample";
        case ItemKind::batch: return "batch";
    }
    return "?";
}

namespace {

// Wraps the input of stage `index` so items of the wrong kind surface as a
// StageError naming that stage.
Stream checked(Stream src, std::size_t index, const Stage& stage) {
    return [src = std::move(src), index, name = stage.name, want = stage.input]() -> std::optional<Item> {
        auto x = src();
        if (x && kind_of(*x) != want)
            throw StageError(index, name,
                             "expected " + std::string(to_string(want)) + ", got " + std::string(to_string(kind_of(*x))));
        return x;
    };
}

// Failures raised inside stage `index` gain the stage's index and name.
Stream guarded(Stream out, std::size_t index, const Stage& stage) {
    return [out = std::move(out), index, name = stage.name]() -> std::optional<Item> {
        try {
            return out();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(index, name, e.what());
        }
    };
}

template <class F>
Stream filter_by_index(Stream src, F keep) {
    return [src = std::move(src), keep, i = std::size_t{0}]() mutable -> std::optional<Item> {
        while (auto x = src()) {
            if (keep(i++)) return x;
        }
        return std::nullopt;
    };
}

}  // namespace

Stage shuffle_stage(ItemKind kind, std::size_t bufsize, std::size_t initial) {
    Stage s{"shuffle", kind, kind, {}, {}};
    s.apply = [bufsize, initial](Stream src, const StageContext& ctx) {
        std::string role = "shuffle:" + std::to_string(ctx.dataset) + ":" + std::to_string(ctx.stage_index);
        return deterministic_shuffle<Item>(std::move(src), bufsize, initial, ctx.spec->seed, ctx.epoch, role);
    };
    return s;
}

Stage split_by_node_stage() {
    Stage s{"split_by_node", ItemKind::shard, ItemKind::shard, {}, {}};
    s.apply = [](Stream src, const StageContext& ctx) {
        check_topology(ctx.topology);
        auto t = ctx.topology;
        return filter_by_index(std::move(src), [t](std::size_t i) { return i % t.num_nodes == t.node_rank; });
    };
    return s;
}

Stage split_by_worker_stage() {
    Stage s{"split_by_worker", ItemKind::shard, ItemKind::shard, {}, {}};
    s.apply = [](Stream src, const StageContext& ctx) {
        check_topology(ctx.topology);
        auto t = ctx.topology;
        return filter_by_index(std::move(src), [t](std::size_t i) { return i % t.num_workers == t.worker_id; });
    };
    return s;
}

std::vector<shardstore::SampleRecord> load_local_shard(const ShardRef& ref) {
    return shardstore::read_shard(shardstore::read_file(ref.location));
}

Stage read_shards_stage(ShardLoader loader) {
    Stage s{"read_shards", ItemKind::shard, ItemKind::element, {}, {}};
    s.apply = [loader](Stream src, const StageContext& ctx) -> Stream {
        struct State {
            Stream src;
            std::vector<shardstore::SampleRecord> pending;
            std::size_t pos = 0;
            std::size_t dataset = 0;
        };
        auto st = std::make_shared<State>(State{std::move(src), {}, 0, 0});
        const MixSpec* spec = ctx.spec;
        return [st, loader, spec]() -> std::optional<Item> {
            while (st->pos >= st->pending.size()) {
                auto x = st->src();
                if (!x) return std::nullopt;
                const auto& ref = std::get<ShardRef>(*x);
                st->pending = loader(ref);
                st->pos = 0;
                st->dataset = ref.dataset;
            }
            Element e;
            e.dataset = st->dataset;
            if (spec && st->dataset < spec->datasets.size()) e.modality = spec->datasets[st->dataset].modality;
            e.record = std::move(st->pending[st->pos++]);
            return Item(std::move(e));
        };
    };
    return s;
}

Stage select_stage(std::vector<std::string> fields) {
    Stage s{"select", ItemKind::element, ItemKind::element, {}, {}};
    s.apply = [fields](Stream src, const StageContext&) -> Stream {
        return [src = std::move(src), fields]() -> std::optional<Item> {
            auto x = src();
            if (!x) return x;
            auto& e = std::get<Element>(*x);
            std::vector<shardstore::SampleFile> kept;
            for (const auto& f : fields) kept.push_back(e.record.at(f));
            e.record.files = std::move(kept);
            return x;
        };
    };
    return s;
}

Stage map_stage(std::string name, std::function<Element(Element)> fn) {
    Stage s{std::move(name), ItemKind::element, ItemKind::element, {}, {}};
    s.apply = [fn](Stream src, const StageContext&) -> Stream {
        return [src = std::move(src), fn]() -> std::optional<Item> {
            auto x = src();
            if (!x) return x;
            return Item(fn(std::move(std::get<Element>(*x))));
        };
    };
    return s;
}

Stage passthrough_stage() {
    Stage s{"passthrough", ItemKind::element, ItemKind::element, {}, {}};
    s.apply = [](Stream src, const StageContext&) { return src; };
    return s;
}

Stage mix_stage() {
    Stage s{"mix", ItemKind::element, ItemKind::element, {}, {}};
    s.join = [](std::vector<std::function<Stream(std::uint64_t)>> factories, const StageContext& ctx) -> Stream {
        std::vector<double> weights;
        for (const auto& d : ctx.spec->datasets) weights.push_back(d.weight);
        std::vector<Mixer<Item>::Factory> fs(factories.begin(), factories.end());
        auto m = std::make_shared<Mixer<Item>>(std::move(fs), std::move(weights), ctx.spec->seed, ctx.epoch);
        return [m]() -> std::optional<Item> { return m->next().second; };
    };
    return s;
}

Stage batched_stage(std::size_t batch_size) {
    if (batch_size < 1) throw Error("batch size must be >= 1");
    Stage s{"batched", ItemKind::element, ItemKind::batch, {}, {}};
    s.apply = [batch_size](Stream src, const StageContext&) -> Stream {
        return [src = std::move(src), batch_size]() -> std::optional<Item> {
            Batch b;
            b.elements.reserve(batch_size);
            while (b.elements.size() < batch_size) {
                auto x = src();
                if (!x) return std::nullopt;  // partial batches are dropped
                b.elements.push_back(std::move(std::get<Element>(*x)));
            }
            return Item(std::move(b));
        };
    };
    return s;
}

std::vector<Stage> default_stages(const MixSpec& spec, ShardLoader loader) {
    return {
        shuffle_stage(ItemKind::shard, spec.shuffle_buffer_size, spec.shuffle_initial),
        split_by_node_stage(),
        split_by_worker_stage(),
        read_shards_stage(std::move(loader)),
        shuffle_stage(ItemKind::element, spec.shuffle_buffer_size, spec.shuffle_initial),
        mix_stage(),
        batched_stage(spec.batch_size),
    };
}

std::vector<ShardRef> list_shards(const DatasetSpec& d, std::size_t dataset_index) {
    namespace fs = std::filesystem;
    auto entries = shardstore::read_manifest(shardstore::read_file(d.manifest));
    fs::path dir = fs::path(d.manifest).parent_path();
    std::vector<ShardRef> out;
    for (const auto& e : entries) {
        ShardRef r;
        r.dataset = dataset_index;
        r.location = (dir / shardstore::shard_file_name(std::stoull(e.shard))).string();
        r.shard = e.shard;
        r.num_sequences = e.num_sequences;
        out.push_back(std::move(r));
    }
    return out;
}

struct Pipeline::Plan {
    MixSpec spec;
    std::vector<Stage> stages;
    Topology topology;
    std::vector<std::vector<ShardRef>> shards;
    std::size_t mix_index = 0;  // stages.size() when there is no mix stage

    Stream prefix(const std::shared_ptr<const Plan>& self, std::size_t dataset, std::uint64_t epoch) const {
        std::vector<Item> refs(shards[dataset].begin(), shards[dataset].end());
        Stream s = from_vector(std::move(refs));
        for (std::size_t i = 0; i < mix_index; ++i) {
            StageContext ctx{&self->spec, topology, i, dataset, epoch};
            s = guarded(stages[i].apply(checked(std::move(s), i, stages[i]), ctx), i, stages[i]);
        }
        return s;
    }
};

namespace {

std::vector<std::vector<ShardRef>> shards_from_manifests(const MixSpec& spec) {
    std::vector<std::vector<ShardRef>> out;
    for (std::size_t d = 0; d < spec.datasets.size(); ++d) out.push_back(list_shards(spec.datasets[d], d));
    return out;
}

}  // namespace

Pipeline::Pipeline(MixSpec spec, std::vector<Stage> stages, Topology topology)
    : Pipeline(spec, std::move(stages), topology, shards_from_manifests(spec)) {}

Pipeline::Pipeline(MixSpec spec, std::vector<Stage> stages, Topology topology,
                   std::vector<std::vector<ShardRef>> shards) {
    spec.validate();
    check_topology(topology);
    if (stages.empty()) throw Error("pipeline has no stages");
    if (shards.size() != spec.datasets.size())
        throw Error("got shard lists for " + std::to_string(shards.size()) + " datasets, spec has " +
                    std::to_string(spec.datasets.size()));
    auto plan = std::make_shared<Plan>();
    plan->mix_index = stages.size();
    ItemKind current = ItemKind::shard;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const Stage& st = stages[i];
        if (!st.is_mix() && !st.apply) throw StageError(i, st.name, "stage has no body");
        if (st.input != current)
            throw StageError(i, st.name,
                             "expects " + std::string(to_string(st.input)) + " input but receives " +
                                 std::string(to_string(current)));
        if (st.is_mix()) {
            if (plan->mix_index != stages.size()) throw StageError(i, st.name, "only one mix stage is allowed");
            plan->mix_index = i;
        }
        current = st.output;
    }
    if (current != ItemKind::batch)
        throw StageError(stages.size() - 1, stages.back().name, "pipeline must end in a batching stage");
    if (plan->mix_index == stages.size() && spec.datasets.size() != 1)
        throw Error("several datasets need a mix stage");
    epoch_ = spec.epoch;
    plan->spec = std::move(spec);
    plan->stages = std::move(stages);
    plan->topology = topology;
    plan->shards = std::move(shards);
    plan_ = std::move(plan);
    build(epoch_);
}

void Pipeline::build(std::uint64_t epoch) {
    const auto& plan = plan_;
    Stream s;
    std::size_t after = plan->mix_index;
    if (plan->mix_index == plan->stages.size()) {
        s = plan->prefix(plan, 0, epoch);
    } else {
        std::vector<std::function<Stream(std::uint64_t)>> factories;
        for (std::size_t d = 0; d < plan->spec.datasets.size(); ++d)
            factories.push_back([plan, d](std::uint64_t e) { return plan->prefix(plan, d, e); });
        StageContext ctx{&plan->spec, plan->topology, plan->mix_index, 0, epoch};
        s = guarded(plan->stages[plan->mix_index].join(std::move(factories), ctx), plan->mix_index,
                    plan->stages[plan->mix_index]);
        ++after;
    }
    for (std::size_t i = after; i < plan->stages.size(); ++i) {
        StageContext ctx{&plan->spec, plan->topology, i, 0, epoch};
        s = guarded(plan->stages[i].apply(checked(std::move(s), i, plan->stages[i]), ctx), i, plan->stages[i]);
    }
    stream_ = std::move(s);
    epoch_ = epoch;
    emitted_ = 0;
}

std::optional<Batch> Pipeline::next() {
    auto x = stream_();
    if (!x) return std::nullopt;
    ++emitted_;
    return std::get<Batch>(std::move(*x));
}

void Pipeline::restore(const State& s) {
    build(s.epoch);
    for (std::uint64_t i = 0; i < s.emitted; ++i) {
        if (!next()) throw Error("cannot restore: stream ended after " + std::to_string(i) + " batches");
    }
}

}  // namespace foundry::mixer
