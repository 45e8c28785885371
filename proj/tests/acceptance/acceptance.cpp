// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "corpus.hpp"
#include "foundry/config.hpp"
#include "foundry/evalstats.hpp"
#include "foundry/geometry.hpp"
#include "foundry/mixer.hpp"
#include "foundry/normalizer.hpp"
#include "foundry/preprocess.hpp"
#include "foundry/server.hpp"
#include "foundry/shardstore.hpp"
#include "foundry/stats.hpp"
#include "foundry/windowing.hpp"
#include "oracles.hpp"
#include "testing.hpp"

// after Eigen: <resolv.h> defines _res
#include <httplib.h>

using namespace foundry;
using foundry::testing::TempDir;
using nlohmann::json;

namespace {

// Thrown by expect(); the message becomes the FAIL detail.
struct Failure {
    std::string what;
};

void expect(bool ok, const std::string& what) {
    if (!ok) throw Failure{what};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// ---- 1 ----

std::string aggregation_rule() {
    std::map<std::string, std::vector<evalstats::RolloutRecord>> per_task;
    const std::vector<int> trials{50, 49, 50, 50};
    for (std::size_t k = 0; k < trials.size(); ++k) {
        const auto task = "task" + std::to_string(k);
        for (int i = 0; i < trials[k]; ++i)
            per_task[task].push_back({"policy", task, i, i % 2 == 0, static_cast<evalstats::Instant>(i), std::nullopt});
    }
    auto b = evalstats::balanced_counts(per_task);
    expect(b.sufficient, "aggregation refused: " + b.reason);
    std::vector<std::uint64_t> kept;
    for (const auto& [t, c] : b.per_task) kept.push_back(c.trials);
    expect(kept == std::vector<std::uint64_t>{49, 49, 49, 49}, "per-task trials not [49,49,49,49]");
    expect(b.aggregate.trials == 196, "aggregate n = " + std::to_string(b.aggregate.trials));
    return "truncated [49,49,49,49], aggregate n=196";
}

// ---- 2 ----

std::string mixing_ratios() {
    auto forever = [](std::uint64_t) -> mixer::Pull<int> { return [] { return std::optional<int>(0); }; };
    mixer::Mixer<int> m({forever, forever, forever}, {1, 2, 1}, 2024, 0);
    std::vector<double> counts(3, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[m.next().first] += 1;
    const double want[] = {0.25, 0.5, 0.25};
    double worst = 0;
    std::string props;
    for (int k = 0; k < 3; ++k) {
        double p = counts[static_cast<std::size_t>(k)] / n;
        worst = std::max(worst, std::abs(p - want[k]));
        props += (k ? "," : "") + fmt(p);
    }
    expect(worst <= 0.01, "max deviation " + fmt(worst));
    return "proportions [" + props + "], max deviation " + fmt(worst);
}

// ---- 3 ----

std::string manifest_fidelity() {
    const std::string appendix =
        "{\"shard\": \"00000000\", \"num_sequences\": 1024}\n"
        "{\"shard\": \"00000001\", \"num_sequences\": 1024}\n"
        "{\"shard\": \"00000002\", \"num_sequences\": 1024}\n"
        "{\"shard\": \"00000003\", \"num_sequences\": 488}\n";
    // 89 episodes of 40 steps with a single-step window give 3560 samples.
    auto eps = std::make_shared<std::vector<windowing::Episode>>();
    for (std::size_t i = 0; i < 89; ++i) eps->push_back(testing::synthetic_episode(testing::episode_name(i), 40, i, false));
    auto reg = testing::memory_registry(eps);
    shardstore::PreprocessSpec spec;
    spec.converter = "memory";
    spec.shard_size = 1024;
    TempDir dir;
    shardstore::LocalStorage out(dir.path());
    auto r = shardstore::preprocess(spec, out, reg);
    expect(r.samples == 3560, "samples = " + std::to_string(r.samples));
    const auto text = out.read("shards/manifest.jsonl");
    expect(text == appendix, "manifest bytes differ:\n" + text);
    for (const auto& m : r.manifest) {
        auto n = shardstore::read_shard(out.read("shards/shard_" + m.shard + ".tar")).size();
        expect(n == m.num_sequences, "shard " + m.shard + " holds " + std::to_string(n));
    }
    return "3560 samples -> 1024,1024,1024,488, bytes match";
}

// ---- 4 ----

std::string geometry_identities() {
    std::mt19937_64 rng(404);
    double worst_rel = 0, worst_6d = 0;
    for (int i = 0; i < 1000; ++i) {
        auto ref = testing::random_pose(rng);
        auto t = testing::random_pose(rng);
        worst_rel = std::max(worst_rel, geometry::pose_distance(geometry::compose(ref, geometry::relative_action(ref, t)), t));
        auto back = geometry::gram_schmidt_decode(geometry::encode_6d(t.rotation));
        worst_6d = std::max(worst_6d, (back.matrix() - t.rotation.matrix()).norm());
    }
    expect(worst_rel < 1e-9, "compose/relative error " + fmt(worst_rel));
    expect(worst_6d < 1e-9, "6D round-trip error " + fmt(worst_6d));
    return "max errors " + fmt(worst_rel) + " (relative), " + fmt(worst_6d) + " (6D)";
}

// ---- 5 ----

std::string statistics_merging() {
    std::mt19937_64 rng(505);
    std::normal_distribution<double> g(2.0, 3.0);
    std::lognormal_distribution<double> ln(0.0, 1.0);
    std::vector<double> xs(100000);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = i % 3 ? g(rng) : 10.0 + ln(rng);
    const auto whole = oracle::two_pass(xs);
    auto sorted = xs;
    std::sort(sorted.begin(), sorted.end());

    double worst_mean = 0, worst_var = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t parts = 2 + rng() % 7;
        std::vector<std::size_t> owner(xs.size());
        for (auto& o : owner) o = rng() % parts;
        std::vector<std::vector<double>> split(parts);
        for (std::size_t i = 0; i < xs.size(); ++i) split[owner[i]].push_back(xs[i]);

        stats::DatasetStats merged;
        for (const auto& part : split) {
            stats::FieldAccumulator acc("x", 1, 1, false);
            RowMatrix col(static_cast<Eigen::Index>(part.size()), 1);
            for (std::size_t i = 0; i < part.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = part[i];
            if (!part.empty()) acc.add(col);
            stats::DatasetStats s;
            s.sample_count = part.size();
            if (!part.empty()) s.fields.emplace("x", acc.finalize());
            merged = stats::merge_stats(merged, s);
        }
        const auto& f = merged.fields.at("x");
        expect(f.count == xs.size(), "merged count " + std::to_string(f.count));
        double mean = f.mean(0, 0), var = f.std(0, 0) * f.std(0, 0);
        worst_mean = std::max(worst_mean, std::abs(mean - whole.mean) / std::abs(whole.mean));
        worst_var = std::max(worst_var, std::abs(var - whole.var) / whole.var);
        expect(f.percentiles.has_value(), "merged stats lack percentiles");
        const std::pair<double, const RowMatrix*> qs[] = {
            {0.01, &f.percentiles->p1}, {0.05, &f.percentiles->p5}, {0.95, &f.percentiles->p95}, {0.99, &f.percentiles->p99}};
        for (const auto& [q, m] : qs)
            expect(oracle::within_rank_error(sorted, (*m)(0, 0), q, 0.005),
                   "partition " + std::to_string(trial) + ": p" + fmt(q * 100) + " outside rank error 0.005");
    }
    expect(worst_mean <= 1e-9, "mean relative error " + fmt(worst_mean));
    expect(worst_var <= 1e-9, "variance relative error " + fmt(worst_var));
    return "20 partitions, mean err " + fmt(worst_mean) + ", var err " + fmt(worst_var) + ", percentiles within rank 0.005";
}

// ---- 6 ----

std::string normalizer_identities() {
    using normalizer::Method;
    std::mt19937_64 rng(606);
    std::normal_distribution<double> g(0.0, 5.0);
    double worst_trip = 0, worst_end = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index W = 1 + static_cast<Eigen::Index>(rng() % 6), D = 1 + static_cast<Eigen::Index>(rng() % 5);
        stats::FieldAccumulator acc("x", W, D, true);
        for (int s = 0; s < 500; ++s) {
            RowMatrix win(W, D);
            for (Eigen::Index i = 0; i < win.size(); ++i) win.data()[i] = g(rng) * (1 + static_cast<double>(i % 4));
            acc.add(win);
        }
        const auto field = acc.finalize();
        for (Method m : {Method::stddev, Method::minmax, Method::percentile_1_99, Method::percentile_5_95}) {
            for (stats::Scope scope : {stats::Scope::global, stats::Scope::per_timestep}) {
                auto p = normalizer::build(field, {m, scope});
                for (int k = 0; k < 20; ++k) {
                    RowMatrix x(W, D);
                    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 20 * g(rng);
                    auto back = normalizer::denormalize(normalizer::normalize(x, p), p);
                    worst_trip = std::max(worst_trip, (back - x).cwiseAbs().maxCoeff());
                }
                if (m == Method::percentile_1_99 || m == Method::percentile_5_95) {
                    const auto& lo = m == Method::percentile_1_99 ? field.percentiles->p1 : field.percentiles->p5;
                    const auto& hi = m == Method::percentile_1_99 ? field.percentiles->p99 : field.percentiles->p95;
                    if (scope == stats::Scope::per_timestep) {
                        worst_end = std::max(worst_end, (normalizer::normalize(lo, p).array() + 1.0).abs().maxCoeff());
                        worst_end = std::max(worst_end, (normalizer::normalize(hi, p).array() - 1.0).abs().maxCoeff());
                    } else {
                        // Global scope: endpoints of the pooled distribution.
                        auto pooled = stats::collapse_to_global(field);
                        worst_end = std::max(worst_end, (normalizer::normalize(m == Method::percentile_1_99 ? pooled.percentiles->p1 : pooled.percentiles->p5, p).array() + 1.0).abs().maxCoeff());
                        worst_end = std::max(worst_end, (normalizer::normalize(m == Method::percentile_1_99 ? pooled.percentiles->p99 : pooled.percentiles->p95, p).array() - 1.0).abs().maxCoeff());
                    }
                }
            }
        }
    }
    expect(worst_trip <= 1e-9, "round-trip error " + fmt(worst_trip));
    expect(worst_end <= 1e-9, "endpoint error " + fmt(worst_end));
    return "4 methods x 2 scopes, round-trip err " + fmt(worst_trip) + ", endpoint err " + fmt(worst_end);
}

// ---- 7 ----

std::string windowing_oracle() {
    using namespace windowing;
    std::mt19937_64 rng(707);
    const PadStrategy strategies[] = {PadStrategy::copy, PadStrategy::zero, PadStrategy::reflect};
    std::size_t total = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t T = 2 + rng() % 60;
        WindowSpec spec;
        spec.n_past = rng() % 10;
        spec.n_future = rng() % 10;
        spec.pad_strategy = strategies[rng() % 3];
        spec.max_padding_left = rng() % 4 == 0 ? kUnlimitedPadding : rng() % 8;
        spec.max_padding_right = rng() % 4 == 0 ? kUnlimitedPadding : rng() % 8;
        Episode ep;
        ep.id = "ep";
        RowMatrix x(static_cast<Eigen::Index>(T), 2);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i);
        ep.lowdim["x"] = x;

        auto samples = enumerate_samples(ep, spec);
        std::set<std::size_t> got, want;
        for (const auto& s : samples) {
            got.insert(s.anchor_t);
            expect(static_cast<std::size_t>(s.lowdim.at("x").rows()) == spec.n_past + 1 + spec.n_future,
                   "wrong window length in instance " + std::to_string(trial));
            expect(s.anchor_relative_idx == spec.n_past, "wrong anchor_relative_idx in instance " + std::to_string(trial));
        }
        // Brute force: keep t when the left and right padding stay inside their limits.
        for (std::size_t t = 0; t < T; ++t) {
            std::size_t left = spec.n_past > t ? spec.n_past - t : 0;
            std::size_t right = t + spec.n_future >= T ? t + spec.n_future - (T - 1) : 0;
            if (left <= spec.max_padding_left && right <= spec.max_padding_right) want.insert(t);
        }
        expect(got == want, "anchor set mismatch in instance " + std::to_string(trial));
        expect(samples.size() == got.size(), "duplicate anchors in instance " + std::to_string(trial));
        total += samples.size();
    }
    return "200 instances, " + std::to_string(total) + " samples match brute force";
}

// ---- 8 ----

std::string cld_exhaustive() {
    std::size_t matrices = 0;
    for (int n = 1; n <= 5; ++n) {
        std::vector<std::string> names;
        for (int i = 0; i < n; ++i) names.push_back(std::string(1, static_cast<char>('A' + i)));
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < names.size(); ++i)
            for (std::size_t j = i + 1; j < names.size(); ++j) pairs.emplace_back(i, j);
        for (unsigned mask = 0; mask < (1u << pairs.size()); ++mask) {
            evalstats::SignificanceMatrix m;
            m.policies = names;
            m.significant.assign(names.size(), std::vector<bool>(names.size(), false));
            m.prob_greater.assign(names.size(), std::vector<double>(names.size(), 0.5));
            for (std::size_t k = 0; k < pairs.size(); ++k) {
                if (mask & (1u << k)) {
                    m.significant[pairs[k].first][pairs[k].second] = true;
                    m.significant[pairs[k].second][pairs[k].first] = true;
                }
            }
            auto cld = evalstats::compute_cld(m);
            for (const auto& name : names)
                expect(cld.letters.count(name) && !cld.letters.at(name).empty(), "policy without letters");
            for (const auto& [i, j] : pairs) {
                const auto& a = cld.letters.at(names[i]);
                const auto& b = cld.letters.at(names[j]);
                bool share = std::any_of(a.begin(), a.end(), [&](const auto& l) { return std::find(b.begin(), b.end(), l) != b.end(); });
                expect(share != m.significant[i][j], "invariant broken for n=" + std::to_string(n) + " mask " + std::to_string(mask));
            }
            ++matrices;
        }
    }
    return std::to_string(matrices) + " matrices, both invariants hold";
}

// ---- 9 ----

std::string config_precedence() {
    using namespace config;
    std::mt19937_64 rng(909);
    const int keys = 8;
    ConfigSchema schema;
    for (int k = 0; k < keys; ++k) {
        if (k % 2) {
            schema.add("sec.k" + std::to_string(k), TypeTag::integer, k);
        } else {
            schema.add("sec.k" + std::to_string(k), TypeTag::string, "d" + std::to_string(k));
        }
    }
    for (int trial = 0; trial < 200; ++trial) {
        TempDir dir;
        std::string include_text, preset_text;
        std::vector<std::string> cli;
        std::map<std::string, std::pair<std::string, Source>> want;
        for (int k = 0; k < keys; ++k) {
            const auto key = "k" + std::to_string(k);
            const auto path = "sec." + key;
            auto value = [&](const char* layer) {
                return k % 2 ? std::to_string(rng() % 1000) : std::string(layer) + std::to_string(rng() % 1000);
            };
            want[path] = {k % 2 ? std::to_string(k) : "d" + std::to_string(k), Source::default_value};
            if (rng() % 2) {
                auto v = value("inc");
                include_text += key + ": " + v + "\n";
                want[path] = {v, Source::include};
            }
            if (rng() % 2) {
                auto v = value("pre");
                preset_text += "  " + key + ": " + v + "\n";
                want[path] = {v, Source::preset};
            }
            if (rng() % 2) {
                auto v = value("cli");
                cli.push_back(path + "=" + v);
                want[path] = {v, Source::cli};
            }
        }
        std::shuffle(cli.begin(), cli.end(), rng);
        std::string main = "sec:\n";
        if (!include_text.empty()) {
            testing::write_text(dir / "layers/include.yaml", include_text);
            main += "  include: layers/include.yaml\n";
        }
        main += preset_text;
        if (main == "sec:\n") main = "{}\n";
        testing::write_text(dir / "config.yaml", main);

        auto tree = load_tree(dir / "config.yaml");
        auto cfg = resolve(schema, &tree, cli);
        for (const auto& [path, wv] : want) {
            const auto& v = cfg.at(path);
            std::string got = v.is_int() ? std::to_string(v.as_int()) : v.as_string();
            expect(got == wv.first, "trial " + std::to_string(trial) + ": " + path + " = " + got + ", expected " + wv.first);
            expect(cfg.provenance(path) == wv.second, "trial " + std::to_string(trial) + ": wrong provenance for " + path);
        }
        const auto text = emit_resolved(cfg);
        auto again = parse_tree(text);
        auto cfg2 = resolve(schema, &again);
        expect(cfg2.values() == cfg.values(), "trial " + std::to_string(trial) + ": emit/load changed values");
        expect(emit_resolved(cfg2) == text, "trial " + std::to_string(trial) + ": emit is not a fixed point");
    }
    return "200 randomized 4-layer stacks, precedence and emit/load fixed point hold";
}

// ---- 10 ----

std::multiset<std::string> sample_multiset(const shardstore::Storage& out, const std::vector<shardstore::ManifestEntry>& m) {
    std::multiset<std::string> all;
    for (const auto& e : m) {
        for (const auto& r : shardstore::read_shard(out.read("shards/shard_" + e.shard + ".tar"))) {
            std::string blob = r.key;
            for (const auto& f : r.files) blob += "|" + f.field + "." + f.ext + "=" + f.bytes;
            all.insert(std::move(blob));
        }
    }
    return all;
}

std::string rank_detail(const std::vector<double>& v, double x, Eigen::Index cell) {
    double lo = static_cast<double>(std::lower_bound(v.begin(), v.end(), x) - v.begin()) / static_cast<double>(v.size());
    double hi = static_cast<double>(std::upper_bound(v.begin(), v.end(), x) - v.begin()) / static_cast<double>(v.size());
    char buf[200];
    std::snprintf(buf, sizeof buf, " (cell %ld, value %.17g, rank [%.4f, %.4f], range [%.17g, %.17g])", static_cast<long>(cell), x, lo, hi, v.front(), v.back());
    return buf;
}

std::string pipeline_determinism() {
    auto eps = std::make_shared<std::vector<windowing::Episode>>(testing::synthetic_corpus(1000, 20, 40, 1010, false));
    auto reg = testing::memory_registry(eps);
    auto spec_for = [](std::size_t workers) {
        shardstore::PreprocessSpec spec;
        spec.converter = "memory";
        spec.encoding.window.n_past = 1;
        spec.encoding.window.n_future = 2;
        spec.encoding.pose_groups = {shardstore::PoseFieldGroup::parse("eepose:eepose:eeposerel")};
        spec.action_fields = {"eepose", "eeposerel", "gripper"};
        spec.proprioception_fields = {"joints"};
        spec.shard_size = 1024;
        spec.workers = workers;
        spec.seed = 10;
        return spec;
    };
    TempDir d1, d8;
    shardstore::LocalStorage s1(d1.path()), s8(d8.path());
    auto r1 = shardstore::preprocess(spec_for(1), s1, reg);
    auto r8 = shardstore::preprocess(spec_for(8), s8, reg);
    expect(r1.samples == r8.samples, "sample counts differ");
    expect(sample_multiset(s1, r1.manifest) == sample_multiset(s8, r8.manifest), "sample multisets differ");

    // Exact per-cell order statistics from the decoded samples.
    std::map<std::string, std::vector<std::vector<double>>> cells;
    for (const auto& e : r1.manifest) {
        for (const auto& rec : shardstore::read_shard(s1.read("shards/shard_" + e.shard + ".tar"))) {
            auto s = shardstore::decode_sample(rec);
            for (const auto& [name, w] : s.lowdim) {
                auto& c = cells[name];
                c.resize(static_cast<std::size_t>(w.size()));
                for (Eigen::Index i = 0; i < w.size(); ++i) c[static_cast<std::size_t>(i)].push_back(w.data()[i]);
            }
        }
    }
    for (auto& [name, c] : cells)
        for (auto& v : c) std::sort(v.begin(), v.end());

    auto st1 = stats::parse_stats(s1.read("shards/stats.json"));
    auto st8 = stats::parse_stats(s8.read("shards/stats.json"));
    expect(st1.fields.size() == st8.fields.size(), "field sets differ");
    double worst_moment = 0;
    for (const auto& [name, a] : st1.fields) {
        expect(st8.fields.count(name), "field " + name + " missing from the 8-worker stats");
        const auto& b = st8.fields.at(name);
        expect(a.count == b.count, name + ": counts differ");
        expect(a.min == b.min && a.max == b.max, name + ": extrema differ");
        auto rel = [](const RowMatrix& x, const RowMatrix& y) {
            return ((x - y).array().abs() / (1.0 + x.array().abs().max(y.array().abs()))).maxCoeff();
        };
        worst_moment = std::max({worst_moment, rel(a.mean, b.mean), rel(a.std, b.std)});
        expect(cells.count(name), "field " + name + " not found in samples");
        for (const auto* f : {&a, &b}) {
            expect(f->percentiles.has_value(), name + ": no percentiles");
            const std::pair<double, const RowMatrix*> qs[] = {{0.01, &f->percentiles->p1},
                                                              {0.05, &f->percentiles->p5},
                                                              {0.95, &f->percentiles->p95},
                                                              {0.99, &f->percentiles->p99}};
            for (const auto& [q, m] : qs)
                for (Eigen::Index i = 0; i < m->size(); ++i)
                    expect(oracle::within_rank_error(cells.at(name)[static_cast<std::size_t>(i)], m->data()[i], q, 0.01),
                           name + ": percentile " + fmt(q) + " outside rank error 0.01" + rank_detail(cells.at(name)[static_cast<std::size_t>(i)], m->data()[i], i));
        }
    }
    expect(worst_moment <= 1e-9, "moment difference " + fmt(worst_moment));

    // Dataloader: identical (seed, epoch) runs give identical batch sequences.
    mixer::MixSpec mix;
    mix.datasets = {{(d1 / "shards/manifest.jsonl").string(), (d1 / "shards/stats.json").string(), "robotics", 1.0}};
    mix.batch_size = 32;
    mix.seed = 3;
    mix.epoch = 2;
    auto batches = [&] {
        mixer::Pipeline p(mix, mixer::default_stages(mix));
        std::vector<std::string> keys;
        for (int i = 0; i < 200; ++i)
            for (const auto& e : p.next()->elements) keys.push_back(e.record.key);
        return keys;
    };
    expect(batches() == batches(), "dataloader batch sequences differ");
    return std::to_string(r1.samples) + " samples, multisets equal, moment diff " + fmt(worst_moment) +
           ", dataloader reproducible";
}

// ---- 11 ----

pid_t spawn_server(const std::filesystem::path& data, int& port) {
    int fds[2];
    if (pipe(fds) != 0) throw Failure{"pipe failed"};
    pid_t child = fork();
    if (child < 0) throw Failure{"fork failed"};
    if (child == 0) {
        close(fds[0]);
        server::Service svc(data);
        httplib::Server http;
        server::mount_routes(http, svc);
        int p = http.bind_to_any_port("127.0.0.1");
        if (write(fds[1], &p, sizeof p) != sizeof p) _exit(3);
        http.listen_after_bind();
        _exit(0);
    }
    close(fds[1]);
    if (read(fds[0], &port, sizeof port) != sizeof port) throw Failure{"server child did not report a port"};
    close(fds[0]);
    return child;
}

void kill_server(pid_t child) {
    kill(child, SIGKILL);
    int status = 0;
    waitpid(child, &status, 0);
}

std::string fetch(httplib::Client& cli, const std::string& path) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        if (auto res = cli.Get(path)) return res->body;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    throw Failure{"GET " + path + " failed"};
}

std::string server_event_sourcing() {
    TempDir dir;
    const auto data = dir / "data";
    int port = 0;
    pid_t child = spawn_server(data, port);
    std::string id, before;
    std::size_t duplicates = 0;
    try {
        httplib::Client cli("127.0.0.1", port);
        fetch(cli, "/campaigns");
        json body = {{"name", "acceptance"},
                     {"policies", json::array({"A", "B", "C"})},
                     {"tasks", json::array({"t0", "t1", "t2"})},
                     {"target_rollouts", {{"t0", 30}}}};
        auto created = cli.Post("/campaigns", body.dump(), "application/json");
        expect(created && created->status == 201, "campaign creation failed");
        id = json::parse(created->body)["id"].get<std::string>();
        std::mt19937_64 rng(1111);
        std::vector<json> sent;
        for (int i = 0; i < 150; ++i) {
            char ts[40];
            std::snprintf(ts, sizeof ts, "2025-06-01T12:%02d:%02dZ", i / 60, i % 60);
            json r = {{"policy", std::string(1, static_cast<char>('A' + rng() % 3))},
                      {"task", "t" + std::to_string(rng() % 3)},
                      {"seed", static_cast<int>(rng() % 40)},
                      {"success", rng() % 2 == 0},
                      {"timestamp", ts}};
            sent.push_back(r);
            auto res = cli.Post("/campaigns/" + id + "/rollouts", r.dump(), "application/json");
            expect(res && res->status == 200, "ingest failed");
        }
        // Re-post a third of them: acknowledged as duplicates, nothing logged.
        for (std::size_t i = 0; i < sent.size(); i += 3) {
            auto res = cli.Post("/campaigns/" + id + "/rollouts", sent[i].dump(), "application/json");
            expect(res && res->status == 200, "duplicate ingest failed");
            duplicates += json::parse(res->body)["results"][0]["duplicate"].get<bool>();
        }
        expect(duplicates == 50, "only " + std::to_string(duplicates) + " of 50 re-posts flagged as duplicates");
        before = fetch(cli, "/campaigns/" + id + "/summary");
        expect(json::parse(fetch(cli, "/campaigns/" + id + "/rollouts")).size() == 150, "duplicates were stored");
    } catch (...) {
        kill_server(child);
        throw;
    }
    kill_server(child);

    child = spawn_server(data, port);
    std::string after;
    try {
        httplib::Client cli("127.0.0.1", port);
        after = fetch(cli, "/campaigns/" + id + "/summary");
    } catch (...) {
        kill_server(child);
        throw;
    }
    kill_server(child);
    expect(after == before, "summary after kill and replay differs");
    return "150 rollouts, 50 duplicates acknowledged, summary byte-identical after SIGKILL (" +
           std::to_string(before.size()) + " bytes)";
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<std::string()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "aggregation rule", 1, aggregation_rule},
        {2, "mixing ratios", 5, mixing_ratios},
        {3, "manifest fidelity", 30, manifest_fidelity},
        {4, "geometry", 1, geometry_identities},
        {5, "statistics merging", 30, statistics_merging},
        {6, "normalizer", 5, normalizer_identities},
        {7, "windowing oracle", 10, windowing_oracle},
        {8, "CLD", 10, cld_exhaustive},
        {9, "config precedence", 5, config_precedence},
        {10, "pipeline determinism", 120, pipeline_determinism},
        {11, "server event sourcing", 30, server_event_sourcing},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        bool ok = true;
        std::string detail;
        try {
            detail = c.run();
        } catch (const Failure& f) {
            ok = false;
            detail = f.what;
        } catch (const std::exception& e) {
            ok = false;
            detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (ok && secs > c.budget_s) {
            ok = false;
            detail += "; took longer than " + fmt(c.budget_s) + " s";
        }
        failed += !ok;
        char head[96];
        std::snprintf(head, sizeof head, "%s %2d %-22s %7.2fs  ", ok ? "PASS" : "FAIL", c.id, c.name, secs);
        std::cout << head << detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}
