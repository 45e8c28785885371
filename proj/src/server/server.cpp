#include "foundry/server.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <mutex>
#include <random>
#include <set>

#include <httplib.h>

#include "foundry/shardstore.hpp"

namespace foundry::server {

using nlohmann::json;
namespace fs = std::filesystem;

json ApiError::body() const {
    json fields = json::array();
    for (const auto& f : fields_) fields.push_back({{"field", f.field}, {"message", f.message}});
    return {{"error", {{"status", status_}, {"message", what()}, {"fields", std::move(fields)}}}};
}

json Campaign::to_json() const {
    return {{"id", id},
            {"name", name},
            {"policies", policies},
            {"tasks", tasks},
            {"target_rollouts", target_rollouts},
            {"status", stopped ? "stopped" : "active"},
            {"created_at", created_at}};
}

json Event::to_json() const {
    return {{"seq", seq}, {"kind", kind}, {"written_at", written_at}, {"payload", payload}};
}

Event Event::from_json(const json& j) {
    try {
        Event e;
        e.seq = j.at("seq").get<std::uint64_t>();
        e.kind = j.at("kind").get<std::string>();
        e.written_at = j.at("written_at").get<std::string>();
        e.payload = j.at("payload");
        return e;
    } catch (const json::exception& ex) {
        throw FormatError(std::string("malformed event: ") + ex.what());
    }
}

// ---- event log ----

EventLog::EventLog(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::string text = fs::exists(path_) ? shardstore::read_file(path_) : std::string();
    std::size_t keep = text.rfind('\n');
    keep = keep == std::string::npos ? 0 : keep + 1;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < keep) {
        std::size_t nl = text.find('\n', pos);
        std::string_view line(text.data() + pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            loaded_.push_back(Event::from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw FormatError(path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (loaded_.size() > 1 && loaded_.back().seq <= loaded_[loaded_.size() - 2].seq)
            throw FormatError(path_.string() + " line " + std::to_string(line_no) + ": sequence number does not increase");
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open event log '" + path_.string() + "'");
    if (keep < text.size()) {
        // Torn tail from an interrupted append: never acknowledged, drop it.
        if (::ftruncate(fd_, static_cast<off_t>(keep)) != 0) throw Error("cannot truncate torn event log tail");
        ::fsync(fd_);
    }
}

EventLog::~EventLog() {
    if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const Event& e) {
    std::string line = e.to_json().dump() + "\n";
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        ssize_t n = ::write(fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error("event log write failed");
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error("event log fsync failed");
}

// ---- ids ----

std::string UlidGenerator::next(std::int64_t unix_ms) {
    static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
    if (unix_ms <= last_ms_) {
        // Same millisecond (or a clock step back): bump the random part.
        unix_ms = last_ms_;
        for (std::size_t i = last_random_.size(); i-- > 0;) {
            if (++last_random_[i] != 0) break;
        }
    } else {
        static thread_local std::mt19937_64 rng{std::random_device{}()};
        for (auto& b : last_random_) b = static_cast<std::uint8_t>(rng());
        last_ms_ = unix_ms;
    }
    std::string out(26, '0');
    auto ms = static_cast<std::uint64_t>(unix_ms);
    for (int i = 9; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kAlphabet[ms & 31];
        ms >>= 5;
    }
    // 80 random bits -> 16 characters.
    unsigned __int128 r = 0;
    for (auto b : last_random_) r = (r << 8) | b;
    for (int i = 25; i >= 10; --i) {
        out[static_cast<std::size_t>(i)] = kAlphabet[static_cast<unsigned>(r & 31)];
        r >>= 5;
    }
    return out;
}

// ---- service ----

namespace {

evalstats::Instant system_now() {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::vector<std::string> name_list(const json& body, const char* key, std::vector<evalstats::FieldIssue>& issues) {
    std::vector<std::string> out;
    if (!body.contains(key)) {
        issues.push_back({key, "is required"});
        return out;
    }
    const json& v = body[key];
    if (!v.is_array() || v.empty()) {
        issues.push_back({key, "must be a nonempty array of names"});
        return out;
    }
    std::set<std::string> seen;
    for (const auto& x : v) {
        if (!x.is_string() || x.get_ref<const std::string&>().empty()) {
            issues.push_back({key, "entries must be nonempty strings"});
            return {};
        }
        if (!seen.insert(x.get<std::string>()).second) {
            issues.push_back({key, "duplicate entry '" + x.get<std::string>() + "'"});
            return {};
        }
        out.push_back(x.get<std::string>());
    }
    return out;
}

std::map<std::string, std::uint64_t> parse_targets(const json& v, const std::vector<std::string>& tasks,
                                                   std::vector<evalstats::FieldIssue>& issues) {
    std::map<std::string, std::uint64_t> out;
    if (!v.is_object()) {
        issues.push_back({"target_rollouts", "must be an object mapping task to count"});
        return out;
    }
    for (const auto& [task, n] : v.items()) {
        if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
            issues.push_back({"target_rollouts." + task, "is not a task of this campaign"});
        } else if (!n.is_number_integer() || n.get<std::int64_t>() < 0) {
            issues.push_back({"target_rollouts." + task, "must be a non-negative integer"});
        } else {
            out[task] = n.get<std::uint64_t>();
        }
    }
    return out;
}

json state_to_json(std::uint64_t seq, const std::map<std::string, Campaign>& campaigns) {
    json list = json::array();
    for (const auto& [id, c] : campaigns) {
        json j = c.to_json();
        json rs = json::array();
        for (const auto& r : c.rollouts) rs.push_back(evalstats::to_json(r));
        j["rollouts"] = std::move(rs);
        list.push_back(std::move(j));
    }
    return {{"seq", seq}, {"campaigns", std::move(list)}};
}

}  // namespace

Service::Service(fs::path data_dir, ServiceOptions options) : dir_(std::move(data_dir)), options_(std::move(options)) {
    if (!options_.clock) options_.clock = system_now;
    fs::create_directories(dir_);
    const fs::path snap = dir_ / "snapshot.json";
    if (fs::exists(snap)) {
        try {
            json j = json::parse(shardstore::read_file(snap));
            state_.seq = j.at("seq").get<std::uint64_t>();
            for (const auto& cj : j.at("campaigns")) {
                Campaign c;
                c.id = cj.at("id").get<std::string>();
                c.name = cj.at("name").get<std::string>();
                c.policies = cj.at("policies").get<std::vector<std::string>>();
                c.tasks = cj.at("tasks").get<std::vector<std::string>>();
                c.target_rollouts = cj.at("target_rollouts").get<std::map<std::string, std::uint64_t>>();
                c.stopped = cj.at("status").get<std::string>() == "stopped";
                c.created_at = cj.at("created_at").get<std::string>();
                for (const auto& r : cj.at("rollouts")) c.rollouts.push_back(evalstats::record_from_json(r));
                state_.campaigns.emplace(c.id, std::move(c));
            }
        } catch (const std::exception& e) {
            throw FormatError("snapshot '" + snap.string() + "': " + e.what());
        }
    }
    log_ = std::make_unique<EventLog>(dir_ / "events.ndjson");
    const auto& events = log_->loaded();
    if (!events.empty() && state_.seq > events.back().seq)
        throw FormatError("snapshot is newer than the event log");
    for (const auto& e : events) {
        if (e.seq > state_.seq) apply(state_, e);
    }
}

Service::~Service() = default;

void Service::apply(State& s, const Event& e) {
    const json& p = e.payload;
    if (e.kind == "campaign_created") {
        const json& cj = p.at("campaign");
        Campaign c;
        c.id = cj.at("id").get<std::string>();
        c.name = cj.at("name").get<std::string>();
        c.policies = cj.at("policies").get<std::vector<std::string>>();
        c.tasks = cj.at("tasks").get<std::vector<std::string>>();
        c.target_rollouts = cj.at("target_rollouts").get<std::map<std::string, std::uint64_t>>();
        c.created_at = e.written_at;
        s.campaigns.emplace(c.id, std::move(c));
    } else if (e.kind == "rollout_ingested") {
        auto& c = s.campaigns.at(p.at("campaign").get<std::string>());
        for (const auto& r : p.at("records")) c.rollouts.push_back(evalstats::record_from_json(r));
    } else if (e.kind == "target_updated") {
        auto& c = s.campaigns.at(p.at("campaign").get<std::string>());
        for (const auto& [task, n] : p.at("target_rollouts").items()) c.target_rollouts[task] = n.get<std::uint64_t>();
    } else if (e.kind == "campaign_stopped") {
        s.campaigns.at(p.at("campaign").get<std::string>()).stopped = true;
    } else {
        throw FormatError("unknown event kind '" + e.kind + "'");
    }
    s.seq = e.seq;
}

Event Service::make_event(std::string kind, json payload) {
    Event e;
    e.seq = state_.seq + 1;
    e.kind = std::move(kind);
    e.written_at = evalstats::format_rfc3339(options_.clock());
    e.payload = std::move(payload);
    return e;
}

void Service::commit(Event e) {
    // Durable first, then visible.
    log_->append(e);
    apply(state_, e);
    if (options_.snapshot_interval > 0 && state_.seq % options_.snapshot_interval == 0) write_snapshot_locked();
}

const Campaign& Service::find(const std::string& id) const {
    auto it = state_.campaigns.find(id);
    if (it == state_.campaigns.end()) throw ApiError(404, "campaign '" + id + "' not found");
    return it->second;
}

Campaign Service::create_campaign(const json& body) {
    if (!body.is_object()) throw ApiError(422, "campaign body must be a JSON object");
    std::vector<evalstats::FieldIssue> issues;
    if (!body.contains("name") || !body["name"].is_string() || body["name"].get_ref<const std::string&>().empty())
        issues.push_back({"name", "must be a nonempty string"});
    auto policies = name_list(body, "policies", issues);
    auto tasks = name_list(body, "tasks", issues);
    std::map<std::string, std::uint64_t> targets;
    if (body.contains("target_rollouts")) targets = parse_targets(body["target_rollouts"], tasks, issues);
    for (const auto& [k, v] : body.items()) {
        if (k != "name" && k != "policies" && k != "tasks" && k != "target_rollouts")
            issues.push_back({k, "unknown field"});
    }
    if (!issues.empty()) throw ApiError(422, "invalid campaign", std::move(issues));

    std::unique_lock lock(mutex_);
    std::string id = ulids_.next(options_.clock() / 1000);
    json cj = {{"id", id}, {"name", body["name"]}, {"policies", policies}, {"tasks", tasks}, {"target_rollouts", targets}};
    commit(make_event("campaign_created", {{"campaign", std::move(cj)}}));
    return state_.campaigns.at(id);
}

std::vector<Campaign> Service::list_campaigns() const {
    std::shared_lock lock(mutex_);
    std::vector<Campaign> out;
    for (const auto& [id, c] : state_.campaigns) out.push_back(c);
    return out;
}

Campaign Service::get_campaign(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return find(id);
}

IngestResult Service::ingest(const std::string& id, const json& body) {
    std::vector<json> items;
    if (body.is_array()) {
        items.assign(body.begin(), body.end());
    } else {
        items.push_back(body);
    }
    std::unique_lock lock(mutex_);
    const Campaign& c = find(id);
    if (c.stopped) throw ApiError(409, "campaign '" + id + "' is stopped");

    std::vector<evalstats::RolloutRecord> records;
    std::vector<evalstats::FieldIssue> issues;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const std::string prefix = body.is_array() ? "[" + std::to_string(i) + "]." : "";
        try {
            auto r = evalstats::record_from_json(items[i]);
            if (std::find(c.policies.begin(), c.policies.end(), r.policy) == c.policies.end())
                issues.push_back({prefix + "policy", "'" + r.policy + "' is not a policy of this campaign"});
            if (std::find(c.tasks.begin(), c.tasks.end(), r.task) == c.tasks.end())
                issues.push_back({prefix + "task", "'" + r.task + "' is not a task of this campaign"});
            records.push_back(std::move(r));
        } catch (const evalstats::RecordError& e) {
            for (const auto& f : e.issues()) issues.push_back({prefix + f.field, f.message});
        }
    }
    if (items.empty()) issues.push_back({"(body)", "no records"});
    if (!issues.empty()) throw ApiError(422, "invalid rollout record", std::move(issues));

    auto same = [](const evalstats::RolloutRecord& a, const evalstats::RolloutRecord& b) {
        return a.policy == b.policy && a.task == b.task && a.seed == b.seed && a.timestamp == b.timestamp;
    };
    IngestResult result;
    json fresh = json::array();
    std::vector<evalstats::RolloutRecord> accepted;
    for (const auto& r : records) {
        bool dup = std::any_of(c.rollouts.begin(), c.rollouts.end(), [&](const auto& x) { return same(x, r); }) ||
                   std::any_of(accepted.begin(), accepted.end(), [&](const auto& x) { return same(x, r); });
        result.duplicate.push_back(dup);
        if (!dup) {
            fresh.push_back(evalstats::to_json(r));
            accepted.push_back(r);
        }
    }
    result.ingested = accepted.size();
    if (!accepted.empty()) commit(make_event("rollout_ingested", {{"campaign", id}, {"records", std::move(fresh)}}));
    return result;
}

Campaign Service::update_targets(const std::string& id, const json& body) {
    std::unique_lock lock(mutex_);
    const Campaign& c = find(id);
    if (c.stopped) throw ApiError(409, "campaign '" + id + "' is stopped");
    std::vector<evalstats::FieldIssue> issues;
    const json& targets = body.is_object() && body.contains("target_rollouts") ? body["target_rollouts"] : body;
    auto parsed = parse_targets(targets, c.tasks, issues);
    if (!issues.empty()) throw ApiError(422, "invalid targets", std::move(issues));
    commit(make_event("target_updated", {{"campaign", id}, {"target_rollouts", parsed}}));
    return state_.campaigns.at(id);
}

Campaign Service::stop_campaign(const std::string& id) {
    std::unique_lock lock(mutex_);
    const Campaign& c = find(id);
    if (c.stopped) throw ApiError(409, "campaign '" + id + "' is already stopped");
    commit(make_event("campaign_stopped", {{"campaign", id}}));
    return state_.campaigns.at(id);
}

json Service::summary(const std::string& id, const std::string& view) const {
    if (!view.empty() && view != "per_task" && view != "aggregate")
        throw ApiError(422, "view must be per_task or aggregate", {{"view", "unknown view '" + view + "'"}});
    Campaign c;
    {
        std::shared_lock lock(mutex_);
        c = find(id);
    }
    // Computed on a copy so ingestion is never blocked.
    auto records = evalstats::dedup_latest(c.rollouts);
    auto s = evalstats::campaign_summary(records, c.tasks, c.policies, options_.alpha_fwer);
    json progress = json::object();
    for (const auto& p : c.policies) {
        json per = json::object();
        for (const auto& t : c.tasks) {
            std::uint64_t n = 0;
            for (const auto& r : records) n += r.policy == p && r.task == t;
            auto target = c.target_rollouts.find(t);
            per[t] = {{"collected", n},
                      {"target", target == c.target_rollouts.end() ? json(nullptr) : json(target->second)}};
        }
        progress[p] = std::move(per);
    }
    json full = evalstats::to_json(s);
    json out = {{"campaign", c.to_json()}, {"progress", std::move(progress)}, {"alpha_fwer", s.alpha_fwer}};
    if (view.empty() || view == "per_task") out["per_task"] = full["per_task"];
    if (view.empty() || view == "aggregate") out["aggregate"] = full["aggregate"];
    out["view"] = view.empty() ? "all" : view;
    return out;
}

std::vector<evalstats::RolloutRecord> Service::list_rollouts(const std::string& id,
                                                            const std::optional<std::string>& policy,
                                                            const std::optional<std::string>& task) const {
    std::shared_lock lock(mutex_);
    const Campaign& c = find(id);
    std::vector<evalstats::RolloutRecord> out;
    for (const auto& r : c.rollouts) {
        if (policy && r.policy != *policy) continue;
        if (task && r.task != *task) continue;
        out.push_back(r);
    }
    return out;
}

std::uint64_t Service::last_seq() const {
    std::shared_lock lock(mutex_);
    return state_.seq;
}

std::string Service::state_bytes() const {
    std::shared_lock lock(mutex_);
    return state_to_json(state_.seq, state_.campaigns).dump();
}

void Service::write_snapshot() const {
    std::shared_lock lock(mutex_);
    write_snapshot_locked();
}

void Service::write_snapshot_locked() const {
    shardstore::write_file(dir_ / "snapshot.json", state_to_json(state_.seq, state_.campaigns).dump() + "\n");
}

// ---- HTTP ----

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <class F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ApiError& e) {
            send_json(res, e.status(), e.body());
        } catch (const json::exception& e) {
            send_json(res, 422, ApiError(422, std::string("malformed JSON body: ") + e.what()).body());
        } catch (const std::exception& e) {
            send_json(res, 500, ApiError(500, e.what()).body());
        }
    };
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    std::string v = req.get_param_value(key);
    if (v.empty()) return std::nullopt;
    return v;
}

}  // namespace

void mount_routes(httplib::Server& server, Service& service, const HttpOptions& options) {
    const std::string id = "/campaigns/([0-9A-Za-z_-]+)";
    server.Post("/campaigns", guarded([&service](const auto& req, auto& res) {
                    send_json(res, 201, service.create_campaign(parse_body(req)).to_json());
                }));
    server.Get("/campaigns", guarded([&service](const auto&, auto& res) {
                   json out = json::array();
                   for (const auto& c : service.list_campaigns()) out.push_back(c.to_json());
                   send_json(res, 200, out);
               }));
    server.Get(id, guarded([&service](const auto& req, auto& res) {
                   send_json(res, 200, service.get_campaign(req.matches[1]).to_json());
               }));
    server.Post(id + "/rollouts", guarded([&service](const auto& req, auto& res) {
                    auto r = service.ingest(req.matches[1], json::parse(req.body));
                    json results = json::array();
                    for (bool d : r.duplicate) results.push_back({{"duplicate", d}});
                    send_json(res, 200,
                              {{"results", std::move(results)},
                               {"ingested", r.ingested},
                               {"duplicates", r.duplicate.size() - r.ingested}});
                }));
    server.Patch(id + "/targets", guarded([&service](const auto& req, auto& res) {
                     send_json(res, 200, service.update_targets(req.matches[1], parse_body(req)).to_json());
                 }));
    server.Post(id + "/stop", guarded([&service](const auto& req, auto& res) {
                    send_json(res, 200, service.stop_campaign(req.matches[1]).to_json());
                }));
    server.Get(id + "/summary", guarded([&service](const auto& req, auto& res) {
                   send_json(res, 200, service.summary(req.matches[1], query(req, "view").value_or("")));
               }));
    server.Get(id + "/rollouts", guarded([&service](const auto& req, auto& res) {
                   json out = json::array();
                   for (const auto& r : service.list_rollouts(req.matches[1], query(req, "policy"), query(req, "task")))
                       out.push_back(evalstats::to_json(r));
                   send_json(res, 200, out);
               }));
    if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir))
        throw Error("static directory '" + options.static_dir + "' does not exist");
}

}  // namespace foundry::server
