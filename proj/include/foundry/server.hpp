#pragma once

// Evaluation campaign service. State is a fold over an append-only event log
// (data_dir/events.ndjson); an optional snapshot (data_dir/snapshot.json)
// shortens replay.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "foundry/error.hpp"
#include "foundry/evalstats.hpp"

namespace httplib {
class Server;
}

namespace foundry::server {

class ApiError : public Error {
public:
    ApiError(int status, const std::string& message, std::vector<evalstats::FieldIssue> fields = {})
        : Error(message), status_(status), fields_(std::move(fields)) {}
    int status() const { return status_; }
    const std::vector<evalstats::FieldIssue>& fields() const { return fields_; }
    nlohmann::json body() const;

private:
    int status_;
    std::vector<evalstats::FieldIssue> fields_;
};

struct Campaign {
    std::string id;
    std::string name;
    std::vector<std::string> policies;
    std::vector<std::string> tasks;
    std::map<std::string, std::uint64_t> target_rollouts;
    bool stopped = false;
    std::string created_at;
    std::vector<evalstats::RolloutRecord> rollouts;  // ingestion order

    nlohmann::json to_json() const;  // without rollouts
};

struct Event {
    std::uint64_t seq = 0;
    std::string kind;  // campaign_created | rollout_ingested | target_updated | campaign_stopped
    std::string written_at;
    nlohmann::json payload;

    nlohmann::json to_json() const;
    static Event from_json(const nlohmann::json& j);
};

// Newline-delimited events; every append is flushed with fsync before it
// returns. A torn final line (crash mid-write) is discarded on open.
class EventLog {
public:
    explicit EventLog(std::filesystem::path path);
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    const std::vector<Event>& loaded() const { return loaded_; }
    void append(const Event& e);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::vector<Event> loaded_;
};

// 26-character Crockford base32, lexicographically ordered by creation time.
class UlidGenerator {
public:
    std::string next(std::int64_t unix_ms);

private:
    std::int64_t last_ms_ = -1;
    std::array<std::uint8_t, 10> last_random_{};
};

struct ServiceOptions {
    std::size_t snapshot_interval = 0;  // events between snapshots; 0 disables
    std::function<evalstats::Instant()> clock;  // defaults to the system clock
    double alpha_fwer = 0.05;
};

struct IngestResult {
    std::vector<bool> duplicate;  // per posted record
    std::size_t ingested = 0;
};

class Service {
public:
    explicit Service(std::filesystem::path data_dir, ServiceOptions options = {});
    ~Service();

    Campaign create_campaign(const nlohmann::json& body);
    std::vector<Campaign> list_campaigns() const;
    Campaign get_campaign(const std::string& id) const;
    // A single record object or an array; all-or-nothing validation.
    IngestResult ingest(const std::string& id, const nlohmann::json& body);
    Campaign update_targets(const std::string& id, const nlohmann::json& body);
    Campaign stop_campaign(const std::string& id);
    // view: "per_task", "aggregate" or "" for both.
    nlohmann::json summary(const std::string& id, const std::string& view = "") const;
    std::vector<evalstats::RolloutRecord> list_rollouts(const std::string& id, const std::optional<std::string>& policy,
                                                        const std::optional<std::string>& task) const;

    std::uint64_t last_seq() const;
    // Campaign states as stored in snapshots; equal states give equal bytes.
    std::string state_bytes() const;
    void write_snapshot() const;

private:
    struct State {
        std::uint64_t seq = 0;
        std::map<std::string, Campaign> campaigns;
    };
    static void apply(State& s, const Event& e);
    Event make_event(std::string kind, nlohmann::json payload);
    void commit(Event e);
    const Campaign& find(const std::string& id) const;
    void write_snapshot_locked() const;

    std::filesystem::path dir_;
    ServiceOptions options_;
    mutable std::shared_mutex mutex_;
    State state_;
    std::unique_ptr<EventLog> log_;
    UlidGenerator ulids_;
};

struct HttpOptions {
    std::string static_dir;  // served at "/" when set
};

// Registers the JSON API routes on `server`.
void mount_routes(httplib::Server& server, Service& service, const HttpOptions& options = {});

}  // namespace foundry::server
