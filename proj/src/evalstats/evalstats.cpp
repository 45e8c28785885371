#include "foundry/evalstats.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <tuple>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace foundry::evalstats {

// ---- time ----

namespace {

int parse_digits(std::string_view s, std::size_t pos, std::size_t n, std::string_view text) {
    if (pos + n > s.size()) throw FormatError("invalid RFC 3339 timestamp '" + std::string(text) + "'");
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') throw FormatError("invalid RFC 3339 timestamp '" + std::string(text) + "'");
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

}  // namespace

Instant parse_rfc3339(std::string_view text) {
    using namespace std::chrono;
    auto bad = [&]() { return FormatError("invalid RFC 3339 timestamp '" + std::string(text) + "'"); };
    const std::string_view s = text;
    if (s.size() < 20) throw bad();
    int y = parse_digits(s, 0, 4, text);
    if (s[4] != '-') throw bad();
    int mo = parse_digits(s, 5, 2, text);
    if (s[7] != '-') throw bad();
    int d = parse_digits(s, 8, 2, text);
    if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') throw bad();
    int h = parse_digits(s, 11, 2, text);
    if (s[13] != ':') throw bad();
    int mi = parse_digits(s, 14, 2, text);
    if (s[16] != ':') throw bad();
    int sec = parse_digits(s, 17, 2, text);
    std::size_t pos = 19;
    std::int64_t micros = 0;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::size_t start = pos;
        int digits = 0;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            if (digits < 6) {
                micros = micros * 10 + (s[pos] - '0');
                ++digits;
            }
            ++pos;
        }
        if (pos == start) throw bad();
        for (; digits < 6; ++digits) micros *= 10;
    }
    std::int64_t offset_min = 0;
    if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
        ++pos;
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
        int sign = s[pos] == '-' ? -1 : 1;
        int oh = parse_digits(s, pos + 1, 2, text);
        if (pos + 3 >= s.size() || s[pos + 3] != ':') throw bad();
        int om = parse_digits(s, pos + 4, 2, text);
        if (oh > 23 || om > 59) throw bad();
        offset_min = sign * (oh * 60 + om);
        pos += 6;
    } else {
        throw bad();
    }
    if (pos != s.size()) throw bad();
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) throw bad();
    if (sec == 60) sec = 59;  // leap second folds onto :59
    std::int64_t days = sys_days{ymd}.time_since_epoch().count();
    std::int64_t secs = days * 86400 + h * 3600 + mi * 60 + sec - offset_min * 60;
    return secs * 1'000'000 + micros;
}

std::string format_rfc3339(Instant t) {
    using namespace std::chrono;
    std::int64_t secs = t >= 0 ? t / 1'000'000 : -((-t + 999'999) / 1'000'000);
    std::int64_t micros = t - secs * 1'000'000;
    std::int64_t days = secs >= 0 ? secs / 86400 : -((-secs + 86399) / 86400);
    std::int64_t rem = secs - days * 86400;
    year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[64];
    int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld", static_cast<int>(ymd.year()),
                          static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                          static_cast<long long>(rem / 3600), static_cast<long long>(rem / 60 % 60),
                          static_cast<long long>(rem % 60));
    std::string out(buf, static_cast<std::size_t>(n));
    if (micros != 0) {
        std::snprintf(buf, sizeof buf, ".%06lld", static_cast<long long>(micros));
        out += buf;
    }
    return out + "Z";
}

// ---- records ----

namespace {

std::string join_issues(const std::vector<FieldIssue>& issues) {
    std::string out = "invalid rollout record:";
    for (const auto& i : issues) out += " " + i.field + ": " + i.message + ";";
    if (!issues.empty()) out.pop_back();
    return out;
}

}  // namespace

RecordError::RecordError(std::vector<FieldIssue> issues) : Error(join_issues(issues)), issues_(std::move(issues)) {}

nlohmann::json to_json(const RolloutRecord& r) {
    nlohmann::json j = {{"policy", r.policy},   {"task", r.task},
                        {"seed", r.seed},       {"success", r.success},
                        {"timestamp", format_rfc3339(r.timestamp)}};
    if (r.video_uri) j["video_uri"] = *r.video_uri;
    return j;
}

RolloutRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw RecordError(std::vector<FieldIssue>{{"(record)", "must be a JSON object"}});
    std::vector<FieldIssue> issues;
    RolloutRecord r;
    auto str = [&](const char* key, std::string& out) {
        if (!j.contains(key)) return issues.push_back({key, "is required"});
        if (!j[key].is_string() || j[key].get_ref<const std::string&>().empty())
            return issues.push_back({key, "must be a nonempty string"});
        out = j[key].get<std::string>();
    };
    str("policy", r.policy);
    str("task", r.task);
    if (!j.contains("seed")) {
        issues.push_back({"seed", "is required"});
    } else if (!j["seed"].is_number_integer()) {
        issues.push_back({"seed", "must be an integer"});
    } else {
        r.seed = j["seed"].get<std::int64_t>();
    }
    if (!j.contains("success")) {
        issues.push_back({"success", "is required"});
    } else if (!j["success"].is_boolean()) {
        issues.push_back({"success", "must be a boolean"});
    } else {
        r.success = j["success"].get<bool>();
    }
    if (!j.contains("timestamp")) {
        issues.push_back({"timestamp", "is required"});
    } else if (!j["timestamp"].is_string()) {
        issues.push_back({"timestamp", "must be an RFC 3339 string"});
    } else {
        try {
            r.timestamp = parse_rfc3339(j["timestamp"].get<std::string>());
        } catch (const FormatError&) {
            issues.push_back({"timestamp", "must be an RFC 3339 string"});
        }
    }
    if (j.contains("video_uri") && !j["video_uri"].is_null()) {
        if (!j["video_uri"].is_string()) {
            issues.push_back({"video_uri", "must be a string"});
        } else {
            r.video_uri = j["video_uri"].get<std::string>();
        }
    }
    static const std::set<std::string> known = {"policy", "task", "seed", "success", "timestamp", "video_uri"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) issues.push_back({k, "unknown field"});
    }
    if (!issues.empty()) throw RecordError(std::move(issues));
    return r;
}

std::string write_records_jsonl(std::span<const RolloutRecord> records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
}

std::vector<RolloutRecord> read_records_jsonl(std::string_view text) {
    std::vector<RolloutRecord> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("records line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
        } catch (const RecordError& e) {
            throw FormatError("records line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<RolloutRecord> dedup_latest(std::span<const RolloutRecord> records) {
    using Key = std::tuple<std::string_view, std::string_view, std::int64_t>;
    std::map<Key, std::size_t> winner;  // key -> index into records
    std::vector<std::size_t> first_seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        Key k{r.policy, r.task, r.seed};
        auto [it, inserted] = winner.emplace(k, i);
        if (inserted) {
            first_seen.push_back(i);
        } else if (r.timestamp >= records[it->second].timestamp) {
            it->second = i;
        }
    }
    std::vector<RolloutRecord> out;
    out.reserve(first_seen.size());
    for (std::size_t i : first_seen) {
        const auto& r = records[i];
        out.push_back(records[winner.at(Key{r.policy, r.task, r.seed})]);
    }
    return out;
}

Counts count(std::span<const RolloutRecord> records) {
    Counts c;
    for (const auto& r : records) {
        ++c.trials;
        if (r.success) ++c.successes;
    }
    return c;
}

Balanced balanced_counts(const std::map<std::string, std::vector<RolloutRecord>>& per_task) {
    Balanced b;
    if (per_task.empty()) {
        b.reason = "no tasks";
        return b;
    }
    std::uint64_t n_min = std::numeric_limits<std::uint64_t>::max();
    for (const auto& [task, recs] : per_task) {
        n_min = std::min<std::uint64_t>(n_min, recs.size());
        if (recs.empty() && b.reason.empty()) b.reason = "task '" + task + "' has no rollouts";
    }
    if (n_min == 0) return b;
    b.sufficient = true;
    b.n_min = n_min;
    for (const auto& [task, recs] : per_task) {
        std::vector<std::size_t> order(recs.size());
        std::iota(order.begin(), order.end(), 0);
        // Most recent first.
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
            if (recs[a].timestamp != recs[c].timestamp) return recs[a].timestamp > recs[c].timestamp;
            return a > c;
        });
        Counts c;
        for (std::size_t k = 0; k < n_min; ++k) {
            ++c.trials;
            if (recs[order[k]].success) ++c.successes;
        }
        b.per_task[task] = c;
        b.aggregate.successes += c.successes;
        b.aggregate.trials += c.trials;
    }
    return b;
}

// ---- posteriors ----

Posterior::Posterior(std::uint64_t successes, std::uint64_t trials, double prior_a, double prior_b)
    : successes_(successes), trials_(trials) {
    if (successes > trials)
        throw DataError("successes (" + std::to_string(successes) + ") exceed trials (" + std::to_string(trials) + ")");
    if (!(prior_a > 0.0) || !(prior_b > 0.0)) throw DataError("prior parameters must be positive");
    alpha_ = prior_a + static_cast<double>(successes);
    beta_ = prior_b + static_cast<double>(trials - successes);
}

Posterior posterior(std::uint64_t successes, std::uint64_t trials, double prior_a, double prior_b) {
    return Posterior(successes, trials, prior_a, prior_b);
}

double Posterior::mean() const { return alpha_ / (alpha_ + beta_); }

double Posterior::quantile(double q) const {
    if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile level must lie in [0, 1]");
    return boost::math::quantile(boost::math::beta_distribution<double>(alpha_, beta_), q);
}

double Posterior::pdf(double x) const {
    if (x < 0.0 || x > 1.0) return 0.0;
    return boost::math::pdf(boost::math::beta_distribution<double>(alpha_, beta_), x);
}

double Posterior::cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    return boost::math::cdf(boost::math::beta_distribution<double>(alpha_, beta_), x);
}

std::vector<std::pair<double, double>> Posterior::density_points(std::size_t n) const {
    std::vector<std::pair<double, double>> out;
    if (n == 0) return out;
    const double lo = quantile(0.001);
    const double hi = quantile(0.999);
    for (std::size_t i = 0; i < n; ++i) {
        double x = n == 1 ? (lo + hi) / 2 : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        out.emplace_back(x, pdf(x));
    }
    return out;
}

// ---- comparisons ----

bool Comparator::significant(const Posterior& a, const Posterior& b, double alpha_pair) const {
    double p = prob_greater(a, b);
    return std::min(p, 1.0 - p) < alpha_pair / 2.0;
}

double BetaSuperiority::prob_greater(const Posterior& a, const Posterior& b) const {
    // P(p_a > p_b) = integral of f_a(x) F_b(x) over the bulk of f_a, split
    // into pieces so narrow posteriors are resolved.
    const double lo = a.quantile(1e-12);
    const double hi = a.quantile(1.0 - 1e-12);
    constexpr int kPieces = 16;
    auto integrand = [&](double x) { return a.pdf(x) * b.cdf(x); };
    double total = 0.0;
    for (int k = 0; k < kPieces; ++k) {
        double x0 = lo + (hi - lo) * k / kPieces;
        double x1 = lo + (hi - lo) * (k + 1) / kPieces;
        total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, x0, x1, 15, 1e-10);
    }
    return std::clamp(total, 0.0, 1.0);
}

const Comparator& default_comparator() {
    static const BetaSuperiority c;
    return c;
}

SignificanceMatrix pairwise_compare(const std::map<std::string, Counts>& results, double alpha_fwer,
                                    const Comparator& comparator) {
    if (results.size() < 2) throw DataError("pairwise comparison needs at least 2 policies");
    if (!(alpha_fwer > 0.0 && alpha_fwer < 1.0)) throw DataError("alpha_fwer must lie in (0, 1)");
    SignificanceMatrix m;
    m.alpha_fwer = alpha_fwer;
    std::vector<Posterior> posts;
    for (const auto& [name, c] : results) {
        if (c.trials < 1) throw DataError("policy '" + name + "' has no trials");
        m.policies.push_back(name);
        posts.emplace_back(c.successes, c.trials);
    }
    const std::size_t n = posts.size();
    const double alpha_pair = alpha_fwer / (static_cast<double>(n * (n - 1)) / 2.0);
    m.significant.assign(n, std::vector<bool>(n, false));
    m.prob_greater.assign(n, std::vector<double>(n, 0.5));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double p = comparator.prob_greater(posts[i], posts[j]);
            m.prob_greater[i][j] = p;
            m.prob_greater[j][i] = 1.0 - p;
            bool sig = std::min(p, 1.0 - p) < alpha_pair / 2.0;
            m.significant[i][j] = m.significant[j][i] = sig;
        }
    }
    return m;
}

// ---- compact letter display ----

std::string letter_label(std::size_t index) {
    std::string out;
    std::size_t n = index + 1;
    while (n > 0) {
        --n;
        out.insert(out.begin(), static_cast<char>('a' + n % 26));
        n /= 26;
    }
    return out;
}

CLDAssignment compute_cld(const SignificanceMatrix& m) {
    const std::size_t n = m.size();
    if (m.significant.size() != n) throw ShapeError("significance matrix does not match its policy list");
    struct Column {
        std::size_t id;
        std::vector<bool> members;
    };
    std::vector<Column> cols{{0, std::vector<bool>(n, true)}};
    std::size_t next_id = 1;
    auto subset = [](const std::vector<bool>& a, const std::vector<bool>& b) {
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (a[k] && !b[k]) return false;
        }
        return true;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!m.significant[i][j]) continue;
            // Insert: split every column holding both i and j.
            const std::size_t existing = cols.size();
            for (std::size_t c = 0; c < existing; ++c) {
                if (!(cols[c].members[i] && cols[c].members[j])) continue;
                Column copy{next_id++, cols[c].members};
                cols[c].members[j] = false;
                copy.members[i] = false;
                cols.push_back(std::move(copy));
            }
            // Absorb: drop columns contained in another; of equal columns the
            // later one goes.
            std::vector<bool> drop(cols.size(), false);
            for (std::size_t a = 0; a < cols.size(); ++a) {
                for (std::size_t b = 0; b < cols.size() && !drop[a]; ++b) {
                    if (a == b || drop[b]) continue;
                    if (!subset(cols[a].members, cols[b].members)) continue;
                    bool equal = subset(cols[b].members, cols[a].members);
                    if (!equal || cols[a].id > cols[b].id) drop[a] = true;
                }
            }
            std::vector<Column> kept;
            for (std::size_t a = 0; a < cols.size(); ++a) {
                if (!drop[a]) kept.push_back(std::move(cols[a]));
            }
            cols = std::move(kept);
        }
    }
    std::sort(cols.begin(), cols.end(), [](const Column& a, const Column& b) { return a.id < b.id; });
    CLDAssignment out;
    for (const auto& p : m.policies) out.letters[p];
    for (std::size_t c = 0; c < cols.size(); ++c) {
        for (std::size_t k = 0; k < n; ++k) {
            if (cols[c].members[k]) out.letters[m.policies[k]].push_back(letter_label(c));
        }
    }
    return out;
}

// ---- campaign summary ----

namespace {

ComparisonView compare_view(const std::map<std::string, Counts>& counts, double alpha_fwer,
                            const Comparator& comparator) {
    ComparisonView v;
    std::map<std::string, Counts> comparable;
    for (const auto& [p, c] : counts) {
        v.policies[p] = PolicyView{c, Posterior(c.successes, c.trials)};
        if (c.trials > 0) comparable[p] = c;
    }
    if (comparable.size() >= 2) {
        v.significance = pairwise_compare(comparable, alpha_fwer, comparator);
        v.cld = compute_cld(*v.significance);
    } else {
        for (const auto& [p, c] : comparable) v.cld.letters[p] = {"a"};
    }
    return v;
}

}  // namespace

CampaignSummary campaign_summary(std::span<const RolloutRecord> records, const std::vector<std::string>& tasks,
                                 const std::vector<std::string>& policies, double alpha_fwer,
                                 const Comparator& comparator) {
    CampaignSummary s;
    s.policies = policies;
    s.tasks = tasks;
    s.alpha_fwer = alpha_fwer;
    const std::set<std::string> task_set(tasks.begin(), tasks.end());
    const std::set<std::string> policy_set(policies.begin(), policies.end());

    // policy -> task -> records, in input order.
    std::map<std::string, std::map<std::string, std::vector<RolloutRecord>>> grouped;
    for (const auto& p : policies) {
        for (const auto& t : tasks) grouped[p][t];
    }
    for (auto& r : dedup_latest(records)) {
        if (policy_set.count(r.policy) && task_set.count(r.task)) grouped[r.policy][r.task].push_back(std::move(r));
    }

    for (const auto& t : tasks) {
        std::map<std::string, Counts> counts;
        for (const auto& p : policies) counts[p] = count(grouped[p][t]);
        s.per_task.emplace(t, compare_view(counts, alpha_fwer, comparator));
    }
    std::map<std::string, Counts> agg;
    for (const auto& p : policies) {
        Balanced b = balanced_counts(grouped[p]);
        agg[p] = b.sufficient ? b.aggregate : Counts{};
        s.balanced.emplace(p, std::move(b));
    }
    s.aggregate = compare_view(agg, alpha_fwer, comparator);
    return s;
}

// ---- JSON ----

nlohmann::json to_json(const Posterior& p) {
    nlohmann::json density = nlohmann::json::array();
    for (const auto& [x, y] : p.density_points()) density.push_back({x, y});
    return {
        {"successes", p.successes()}, {"trials", p.trials()},         {"alpha", p.alpha()},
        {"beta", p.beta()},           {"mean", p.mean()},             {"q05", p.quantile(0.05)},
        {"q25", p.quantile(0.25)},    {"q50", p.quantile(0.5)},       {"q75", p.quantile(0.75)},
        {"q95", p.quantile(0.95)},    {"density", std::move(density)},
    };
}

nlohmann::json to_json(const SignificanceMatrix& m) {
    return {{"policies", m.policies},
            {"significant", m.significant},
            {"prob_greater", m.prob_greater},
            {"alpha_fwer", m.alpha_fwer}};
}

nlohmann::json to_json(const ComparisonView& v) {
    nlohmann::json pol = nlohmann::json::object();
    for (const auto& [name, pv] : v.policies) pol[name] = to_json(pv.post);
    return {{"policies", std::move(pol)},
            {"significance", v.significance ? to_json(*v.significance) : nlohmann::json(nullptr)},
            {"cld", v.cld.letters}};
}

nlohmann::json to_json(const CampaignSummary& s) {
    nlohmann::json per_task = nlohmann::json::object();
    for (const auto& [t, v] : s.per_task) per_task[t] = to_json(v);
    nlohmann::json balanced = nlohmann::json::object();
    for (const auto& [p, b] : s.balanced) {
        nlohmann::json tasks = nlohmann::json::object();
        for (const auto& [t, c] : b.per_task) tasks[t] = {{"successes", c.successes}, {"trials", c.trials}};
        balanced[p] = {{"sufficient", b.sufficient},
                       {"reason", b.reason},
                       {"n_min", b.n_min},
                       {"per_task", std::move(tasks)},
                       {"aggregate", {{"successes", b.aggregate.successes}, {"trials", b.aggregate.trials}}}};
    }
    nlohmann::json aggregate = to_json(s.aggregate);
    aggregate["balanced"] = std::move(balanced);
    return {{"alpha_fwer", s.alpha_fwer},
            {"policies", s.policies},
            {"tasks", s.tasks},
            {"per_task", std::move(per_task)},
            {"aggregate", std::move(aggregate)}};
}

}  // namespace foundry::evalstats
