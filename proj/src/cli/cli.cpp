#include "foundry/cli.hpp"

#include <cstdio>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "foundry/evalstats.hpp"
#include "foundry/server.hpp"
#include "foundry/stats.hpp"

namespace foundry::cli {

using config::List;
using config::Map;
using config::TypeTag;
using config::Value;

const config::ConfigSchema& schema() {
    static const config::ConfigSchema s = [] {
        config::ConfigSchema c;
        c.add("model", TypeTag::nested, Map{});
        c.add("hparams", TypeTag::nested, Map{});

        c.add("data.dataset_manifest", TypeTag::list, List{});
        c.add("data.dataset_statistics", TypeTag::list, List{});
        c.add("data.dataset_modality", TypeTag::list, List{});
        c.add("data.dataset_weighting", TypeTag::list, List{});
        c.add("data.batch_size", TypeTag::integer, 1);
        c.add("data.seed", TypeTag::integer, 0);
        c.add("data.epoch", TypeTag::integer, 0);
        c.add("data.shuffle_buffer_size", TypeTag::integer, 1000);
        c.add("data.shuffle_initial", TypeTag::integer, 100);
        c.add("data.normalization.method", TypeTag::string, "stddev");
        c.add("data.normalization.scope", TypeTag::string, "global");
        c.add("data.normalization.epsilon", TypeTag::floating, 1e-8);

        c.add("preprocess.converter", TypeTag::string, "generic_episode");
        c.add("preprocess.input", TypeTag::string, "");
        c.add("preprocess.output", TypeTag::string, "");
        c.add("preprocess.n_past", TypeTag::integer, 0);
        c.add("preprocess.n_future", TypeTag::integer, 0);
        c.add("preprocess.pad_strategy", TypeTag::string, "copy");
        c.add("preprocess.max_padding_left", TypeTag::integer, -1);
        c.add("preprocess.max_padding_right", TypeTag::integer, -1);
        c.add("preprocess.stride", TypeTag::integer, 1);
        c.add("preprocess.image_offsets", TypeTag::list, List{Value("0")});
        c.add("preprocess.action_fields", TypeTag::list, List{});
        c.add("preprocess.proprioception_fields", TypeTag::list, List{});
        c.add("preprocess.pose_field_groups", TypeTag::list, List{});
        c.add("preprocess.shard_size", TypeTag::integer, 1024);
        c.add("preprocess.workers", TypeTag::integer, 1);
        c.add("preprocess.seed", TypeTag::integer, 0);
        c.add("preprocess.tdigest_compression", TypeTag::floating, 100.0);

        c.add("stats.variance_merge", TypeTag::string, "full");
        c.add("eval.alpha_fwer", TypeTag::floating, 0.05);

        c.add("server.host", TypeTag::string, "127.0.0.1");
        c.add("server.port", TypeTag::integer, 8080);
        c.add("server.data_dir", TypeTag::string, "foundry-data");
        c.add("server.snapshot_interval", TypeTag::integer, 0);
        c.add("server.static_dir", TypeTag::string, "");
        return c;
    }();
    return s;
}

config::ResolvedConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    if (config_path.empty()) return config::resolve(schema(), nullptr, overrides);
    auto tree = config::load_tree(config_path);
    return config::resolve(schema(), &tree, overrides);
}

namespace {

std::size_t non_negative(const config::ResolvedConfig& cfg, const char* key) {
    auto v = cfg.get_int(key);
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
}

std::size_t padding_limit(const config::ResolvedConfig& cfg, const char* key) {
    auto v = cfg.get_int(key);
    if (v == -1) return windowing::kUnlimitedPadding;
    if (v < 0) throw ConfigError(std::string(key) + " must be -1 (unlimited) or >= 0");
    return static_cast<std::size_t>(v);
}

}  // namespace

shardstore::PreprocessSpec preprocess_spec(const config::ResolvedConfig& cfg) {
    shardstore::PreprocessSpec spec;
    spec.converter = cfg.get_string("preprocess.converter");
    spec.input.input = cfg.get_string("preprocess.input");
    auto& w = spec.encoding.window;
    w.n_past = non_negative(cfg, "preprocess.n_past");
    w.n_future = non_negative(cfg, "preprocess.n_future");
    w.pad_strategy = windowing::parse_pad_strategy(cfg.get_string("preprocess.pad_strategy"));
    w.max_padding_left = padding_limit(cfg, "preprocess.max_padding_left");
    w.max_padding_right = padding_limit(cfg, "preprocess.max_padding_right");
    w.stride = non_negative(cfg, "preprocess.stride");
    w.image_offsets.clear();
    for (auto v : cfg.get_ints("preprocess.image_offsets")) w.image_offsets.push_back(static_cast<long>(v));
    for (const auto& g : cfg.get_strings("preprocess.pose_field_groups"))
        spec.encoding.pose_groups.push_back(shardstore::PoseFieldGroup::parse(g));
    spec.action_fields = cfg.get_strings("preprocess.action_fields");
    spec.proprioception_fields = cfg.get_strings("preprocess.proprioception_fields");
    spec.shard_size = non_negative(cfg, "preprocess.shard_size");
    spec.workers = non_negative(cfg, "preprocess.workers");
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("preprocess.seed"));
    spec.tdigest_compression = cfg.get_float("preprocess.tdigest_compression");
    return spec;
}

mixer::MixSpec mix_spec(const config::ResolvedConfig& cfg) {
    mixer::MixSpec spec;
    auto manifests = cfg.get_strings("data.dataset_manifest");
    auto statistics = cfg.get_strings("data.dataset_statistics");
    auto modalities = cfg.get_strings("data.dataset_modality");
    auto weights = cfg.get_floats("data.dataset_weighting");
    const std::size_t n = manifests.size();
    if (statistics.size() != n || modalities.size() != n || weights.size() != n)
        throw ConfigError("data.dataset_manifest, dataset_statistics, dataset_modality and dataset_weighting must "
                          "have equal lengths (got " +
                          std::to_string(n) + ", " + std::to_string(statistics.size()) + ", " +
                          std::to_string(modalities.size()) + ", " + std::to_string(weights.size()) + ")");
    for (std::size_t i = 0; i < n; ++i) spec.datasets.push_back({manifests[i], statistics[i], modalities[i], weights[i]});
    spec.batch_size = non_negative(cfg, "data.batch_size");
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("data.seed"));
    spec.epoch = static_cast<std::uint64_t>(cfg.get_int("data.epoch"));
    spec.shuffle_buffer_size = non_negative(cfg, "data.shuffle_buffer_size");
    spec.shuffle_initial = non_negative(cfg, "data.shuffle_initial");
    spec.validate();
    return spec;
}

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// CLI11 leaves unknown flags in remaining(); turn them into "path=value".
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& tok = extras[i];
        if (tok.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + tok + "'");
        std::string body = tok.substr(2);
        if (body.find('=') == std::string::npos) {
            if (i + 1 >= extras.size() || extras[i + 1].rfind("--", 0) == 0)
                throw UsageError("override '" + tok + "' needs a value (--path=value)");
            body += "=" + extras[++i];
        }
        out.push_back(std::move(body));
    }
    return out;
}

struct Common {
    std::string config_path;
    bool resolve_only = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config_path", c.config_path, "YAML configuration file");
    sub->add_flag("--resolve_configs", c.resolve_only, "Print the merged configuration and exit");
    sub->allow_extras();
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

std::string pad_right(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& r : rows) {
        if (widths.size() < r.size()) widths.resize(r.size(), 0);
        for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
    }
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) line += (c ? "  " : "") + (c + 1 < r.size() ? pad_right(r[c], widths[c]) : r[c]);
        out << line << "\n";
    }
}

void print_view(std::ostream& out, const std::string& title, const evalstats::ComparisonView& v) {
    out << title << "\n";
    std::vector<std::vector<std::string>> rows{{"policy", "successes", "trials", "mean", "q05", "q95", "cld"}};
    for (const auto& [name, pv] : v.policies) {
        std::string letters;
        auto it = v.cld.letters.find(name);
        if (it != v.cld.letters.end()) {
            for (const auto& l : it->second) letters += (letters.empty() ? "" : ",") + l;
        }
        rows.push_back({name, std::to_string(pv.counts.successes), std::to_string(pv.counts.trials),
                        fixed(pv.post.mean()), fixed(pv.post.quantile(0.05)), fixed(pv.post.quantile(0.95)),
                        letters.empty() ? "-" : letters});
    }
    print_table(out, rows);
    if (v.significance) {
        const auto& m = *v.significance;
        out << "significance (alpha_fwer=" << m.alpha_fwer << ", * = significant)\n";
        std::vector<std::vector<std::string>> grid{{""}};
        for (const auto& p : m.policies) grid[0].push_back(p);
        for (std::size_t i = 0; i < m.size(); ++i) {
            std::vector<std::string> row{m.policies[i]};
            for (std::size_t j = 0; j < m.size(); ++j) row.push_back(i == j ? "-" : m.significant[i][j] ? "*" : ".");
            grid.push_back(std::move(row));
        }
        print_table(out, grid);
    }
}

int cmd_resolve(const Common& c, const std::vector<std::string>& overrides, std::ostream& out) {
    out << config::emit_resolved(load_config(c.config_path, overrides));
    return 0;
}

int cmd_preprocess(const config::ResolvedConfig& cfg, std::ostream& out, std::ostream& err) {
    auto spec = preprocess_spec(cfg);
    const std::string output = cfg.get_string("preprocess.output");
    if (spec.input.input.empty()) throw ConfigError("preprocess.input is required");
    if (output.empty()) throw ConfigError("preprocess.output is required");
    shardstore::LocalStorage storage(output);
    err << "preprocessing " << spec.input.input.string() << " with " << spec.workers << " worker(s)\n";
    auto r = shardstore::preprocess(spec, storage);
    out << "episodes " << r.episodes << "\n"
        << "samples " << r.samples << "\n"
        << "shards " << r.manifest.size() << "\n";
    return 0;
}

int cmd_stats_merge(const config::ResolvedConfig& cfg, const std::string& a, const std::string& b,
                    const std::string& output, std::ostream& out) {
    auto mode = stats::parse_variance_merge(cfg.get_string("stats.variance_merge"));
    auto sa = stats::parse_stats(shardstore::read_file(a));
    auto sb = stats::parse_stats(shardstore::read_file(b));
    std::string text = stats::serialize_stats(stats::merge_stats(sa, sb, mode));
    if (output.empty()) {
        out << text;
    } else {
        shardstore::write_file(output, text);
    }
    return 0;
}

int cmd_mix_preview(const config::ResolvedConfig& cfg, std::uint64_t draws, std::ostream& out) {
    auto spec = mix_spec(cfg);
    std::vector<mixer::Mixer<std::size_t>::Factory> streams;
    std::vector<double> weights;
    for (std::size_t k = 0; k < spec.datasets.size(); ++k) {
        // Stand-in streams: proportions do not depend on stream contents.
        streams.push_back([](std::uint64_t) -> mixer::Pull<std::size_t> { return [] { return std::optional<std::size_t>(0); }; });
        weights.push_back(spec.datasets[k].weight);
    }
    mixer::Mixer<std::size_t> mix(std::move(streams), weights, spec.seed, spec.epoch);
    std::vector<std::uint64_t> counts(spec.datasets.size(), 0);
    for (std::uint64_t i = 0; i < draws; ++i) ++counts[mix.next().first];
    double total = 0.0;
    for (double w : weights) total += w;
    std::vector<std::vector<std::string>> rows{{"dataset", "modality", "weight", "expected", "observed", "count"}};
    for (std::size_t k = 0; k < counts.size(); ++k) {
        double observed = draws ? static_cast<double>(counts[k]) / static_cast<double>(draws) : 0.0;
        rows.push_back({spec.datasets[k].manifest, spec.datasets[k].modality, config::format_float(weights[k]),
                        fixed(weights[k] / total), fixed(observed), std::to_string(counts[k])});
    }
    print_table(out, rows);
    return 0;
}

int cmd_eval_report(const config::ResolvedConfig& cfg, const std::string& records_path, bool per_task,
                    std::ostream& out) {
    auto records = evalstats::dedup_latest(evalstats::read_records_jsonl(shardstore::read_file(records_path)));
    std::set<std::string> policies, tasks;
    for (const auto& r : records) {
        policies.insert(r.policy);
        tasks.insert(r.task);
    }
    auto s = evalstats::campaign_summary(records, {tasks.begin(), tasks.end()}, {policies.begin(), policies.end()},
                                         cfg.get_float("eval.alpha_fwer"));
    if (per_task) {
        for (const auto& [task, view] : s.per_task) {
            print_view(out, "task " + task, view);
            out << "\n";
        }
    }
    print_view(out, "aggregate (balanced across " + std::to_string(tasks.size()) + " tasks)", s.aggregate);
    for (const auto& [p, b] : s.balanced) {
        if (!b.sufficient) out << "note: " << p << " excluded from aggregate: " << b.reason << "\n";
    }
    return 0;
}

int cmd_serve(const config::ResolvedConfig& cfg, std::ostream& err) {
    server::ServiceOptions opts;
    auto interval = cfg.get_int("server.snapshot_interval");
    if (interval < 0) throw ConfigError("server.snapshot_interval must be >= 0");
    opts.snapshot_interval = static_cast<std::size_t>(interval);
    opts.alpha_fwer = cfg.get_float("eval.alpha_fwer");
    server::Service service(cfg.get_string("server.data_dir"), opts);
    httplib::Server http;
    server::mount_routes(http, service, {cfg.get_string("server.static_dir")});
    const std::string host = cfg.get_string("server.host");
    const auto port = cfg.get_int("server.port");
    err << "listening on " << host << ":" << port << "\n";
    err.flush();
    if (!http.listen(host, static_cast<int>(port))) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"foundry: robot-learning data and evaluation toolkit", "foundry"};
    app.require_subcommand(1);

    Common c_pre, c_resolve, c_merge, c_mix, c_eval, c_serve;
    auto* pre = app.add_subcommand("preprocess", "Convert raw episodes into tar shards");
    add_common(pre, c_pre);

    auto* stats_cmd = app.add_subcommand("stats", "Statistics tools");
    stats_cmd->require_subcommand(1);
    auto* merge = stats_cmd->add_subcommand("merge", "Merge two stats.json files");
    std::string merge_a, merge_b, merge_out;
    merge->add_option("a", merge_a, "First stats.json")->required();
    merge->add_option("b", merge_b, "Second stats.json")->required();
    merge->add_option("-o,--output", merge_out, "Output path (default: stdout)");
    add_common(merge, c_merge);

    auto* resolve_cmd = app.add_subcommand("resolve-config", "Print the merged configuration as YAML");
    add_common(resolve_cmd, c_resolve);

    auto* mix = app.add_subcommand("mix-preview", "Print empirical dataset mixing proportions");
    std::uint64_t draws = 100000;
    mix->add_option("--draws", draws, "Number of draws");
    add_common(mix, c_mix);

    auto* eval = app.add_subcommand("eval", "Evaluation statistics");
    eval->require_subcommand(1);
    auto* report = eval->add_subcommand("report", "Summarize rollout records");
    std::string records_path;
    bool per_task = false;
    report->add_option("--records", records_path, "Rollout records (JSON lines)")->required();
    report->add_flag("--per-task", per_task, "Also print one table per task");
    add_common(report, c_eval);

    auto* serve = app.add_subcommand("serve", "Run the evaluation campaign server");
    add_common(serve, c_serve);

    if (args.empty()) {
        err << "error[usage]: missing subcommand\n" << app.help();
        return 1;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error[usage]: " << e.what() << "\n";
        return 1;
    }

    CLI::App* chosen = nullptr;
    Common* common = nullptr;
    for (auto [sub, com] : std::initializer_list<std::pair<CLI::App*, Common*>>{
             {pre, &c_pre}, {merge, &c_merge}, {resolve_cmd, &c_resolve}, {mix, &c_mix}, {report, &c_eval}, {serve, &c_serve}}) {
        if (sub->parsed()) {
            chosen = sub;
            common = com;
        }
    }
    if (!chosen) {
        err << "error[usage]: missing subcommand\n" << app.help();
        return 1;
    }

    try {
        auto overrides = collect_overrides(chosen->remaining());
        if (chosen == resolve_cmd || common->resolve_only) return cmd_resolve(*common, overrides, out);
        auto cfg = load_config(common->config_path, overrides);
        if (chosen == pre) return cmd_preprocess(cfg, out, err);
        if (chosen == merge) return cmd_stats_merge(cfg, merge_a, merge_b, merge_out, out);
        if (chosen == mix) return cmd_mix_preview(cfg, draws, out);
        if (chosen == report) return cmd_eval_report(cfg, records_path, per_task, out);
        if (chosen == serve) return cmd_serve(cfg, err);
    } catch (const UsageError& e) {
        err << "error[usage]: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        err << "error[data]: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error[data]: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace foundry::cli
